//! QA record schema, answer labeling, seeded splits and record validation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dialogue::{BackendError, ChatBackend, ChatRequest, DecodingConfig, DialogueTranscript, Message, RetryPolicy};
use crate::error::{Error, Result};
use crate::rng;
use crate::scoring::{FeatureRecord, TurnScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QAItem {
    pub item_id: String,
    pub domain_id: String,
    /// Any supporting context is already concatenated in.
    pub question: String,
    pub reference_answers: Vec<String>,
    pub generated_answer: String,
    /// 1 = hallucinated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_logprobs: Option<Vec<f64>>,
    /// Items sharing a group (e.g. a passage) never straddle a split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub item_id: String,
    pub label: u8,
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Longest reference (in tokens) for which containment counts as a match.
pub const CONTAINMENT_MAX_TOKENS: usize = 5;

fn canonical_number(tok: &str) -> Option<String> {
    let plain: String = tok.chars().filter(|c| *c != ',').collect();
    if !plain.chars().any(|c| c.is_ascii_digit()) || plain.parse::<f64>().is_err() {
        return None;
    }
    let mut s = plain.trim_start_matches('+').to_string();
    if s.contains('.') && !s.contains(['e', 'E']) {
        s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    let neg = s.starts_with('-');
    let digits = s.trim_start_matches('-');
    let digits = match digits.trim_start_matches('0') {
        "" => "0",
        d if d.starts_with('.') => &digits[digits.len() - d.len() - 1..],
        d => d,
    };
    Some(if neg && digits != "0" { format!("-{digits}") } else { digits.to_string() })
}

/// Lowercases, canonicalizes numbers, strips punctuation and drops
/// articles; returns the remaining tokens.
pub fn normalize_answer(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .filter_map(|raw| {
            let tok = raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '-' && c != '+');
            let tok = canonical_number(tok)
                .unwrap_or_else(|| tok.chars().filter(|c| c.is_alphanumeric()).collect());
            (!tok.is_empty() && !ARTICLES.contains(&tok.as_str())).then_some(tok)
        })
        .collect()
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// 0 when the normalized answer equals, or for short references contains,
/// any normalized reference; otherwise 1.
pub fn fallback_label(answer: &str, references: &[String]) -> Result<u8> {
    if references.is_empty() {
        return Err(Error::Labeling("no reference answers".into()));
    }
    let a = normalize_answer(answer);
    let hit = references.iter().any(|r| {
        let r = normalize_answer(r);
        !r.is_empty() && (a == r || (r.len() <= CONTAINMENT_MAX_TOKENS && contains_run(&a, &r)))
    });
    Ok(u8::from(!hit))
}

pub trait Judge: Send + Sync {
    /// Returns 1 when `answer` is hallucinated with respect to `references`.
    fn judge(&self, question: &str, references: &[String], answer: &str) -> std::result::Result<u8, BackendError>;
}

pub const DEFAULT_JUDGE_PROMPT: &str = "You are grading a question-answering system. \
Decide whether the candidate answer is consistent with at least one of the reference answers. \
Reply with a single character: 0 if it is consistent, 1 if it is not.\n\n\
Question: {question}\nReference answers: {references}\nCandidate answer: {answer}";

/// A judge backed by a chat model that must reply "0" or "1".
pub struct ChatJudge<B: ChatBackend> {
    pub backend: B,
    pub prompt_template: String,
    pub retry: RetryPolicy,
}

impl<B: ChatBackend> ChatJudge<B> {
    pub fn new(backend: B) -> Self {
        Self { backend, prompt_template: DEFAULT_JUDGE_PROMPT.to_string(), retry: RetryPolicy::default() }
    }

    pub fn render(&self, question: &str, references: &[String], answer: &str) -> String {
        self.prompt_template
            .replace("{question}", question)
            .replace("{references}", &references.join(" | "))
            .replace("{answer}", answer)
    }
}

pub fn parse_verdict(text: &str) -> std::result::Result<u8, BackendError> {
    match text.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(BackendError::Malformed(format!("judge replied {other:?}, expected \"0\" or \"1\""))),
    }
}

impl<B: ChatBackend> Judge for ChatJudge<B> {
    fn judge(&self, question: &str, references: &[String], answer: &str) -> std::result::Result<u8, BackendError> {
        let request = ChatRequest {
            messages: vec![Message::user(self.render(question, references, answer))],
            decoding: DecodingConfig { temperature: 0.0, top_p: 1.0, max_answer_tokens: 1, turn_budget: 1 },
            logprobs: false,
        };
        self.retry.run(|| parse_verdict(&self.backend.chat_complete(&request)?.text))
    }
}

/// Uses the judge when given; a judge failure falls back to string matching
/// only if `allow_fallback` is set.
pub fn label_answer(item: &QAItem, judge: Option<&dyn Judge>, allow_fallback: bool) -> Result<u8> {
    if item.reference_answers.is_empty() {
        return Err(Error::Labeling(format!("item {} has no reference answers", item.item_id)));
    }
    match judge {
        None => fallback_label(&item.generated_answer, &item.reference_answers),
        Some(j) => match j.judge(&item.question, &item.reference_answers, &item.generated_answer) {
            Ok(v) => Ok(v),
            Err(_) if allow_fallback => fallback_label(&item.generated_answer, &item.reference_answers),
            Err(e) => Err(Error::Labeling(format!("item {}: {e}", item.item_id))),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StratumField {
    Label,
    Stratum,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub stratify: Option<StratumField>,
    /// Keep every `group` wholly on one side. Sizes then become upper bounds.
    pub group_disjoint: bool,
}

fn stratum_of(item: &QAItem, field: StratumField) -> String {
    match field {
        StratumField::Label => item.label.map(|l| l.to_string()).unwrap_or_else(|| "unlabeled".into()),
        StratumField::Stratum => item.stratum.clone().unwrap_or_default(),
    }
}

/// Largest-remainder apportionment of `total` over `sizes`.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let mut quota: Vec<usize> = sizes.iter().map(|s| s * total / n).collect();
    let mut rema: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, s)| (s * total % n, i)).collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - quota.iter().sum::<usize>();
    for &(_, i) in rema.iter().take(short) {
        quota[i] += 1;
    }
    quota
}

/// Seeded disjoint train/test samples.
pub fn sample_split(
    items: &[QAItem],
    train_n: usize,
    test_n: usize,
    seed: u64,
    opts: SplitOptions,
) -> Result<(Vec<QAItem>, Vec<QAItem>)> {
    if train_n + test_n > items.len() {
        return Err(Error::InsufficientItems(format!(
            "requested {train_n} + {test_n} items but only {} available",
            items.len()
        )));
    }
    let mut r = rng::stream(seed, 0x5917);
    let take = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();

    if opts.group_disjoint {
        if opts.stratify.is_some() {
            return Err(Error::Config("stratified and group-disjoint splits cannot be combined".into()));
        }
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, it) in items.iter().enumerate() {
            let key = it.group.clone().unwrap_or_else(|| format!("\u{0}{}", it.item_id));
            groups.entry(key).or_default().push(i);
        }
        let mut order: Vec<Vec<usize>> = groups.into_values().collect();
        order.shuffle(&mut r);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for g in order {
            if train.len() + g.len() <= train_n {
                train.extend(g);
            } else if test.len() + g.len() <= test_n {
                test.extend(g);
            }
        }
        if (train_n > 0 && train.is_empty()) || (test_n > 0 && test.is_empty()) {
            return Err(Error::InsufficientItems("groups too large for the requested split sizes".into()));
        }
        return Ok((take(&train), take(&test)));
    }

    match opts.stratify {
        None => {
            let mut idx: Vec<usize> = (0..items.len()).collect();
            idx.shuffle(&mut r);
            Ok((take(&idx[..train_n]), take(&idx[train_n..train_n + test_n])))
        }
        Some(field) => {
            let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (i, it) in items.iter().enumerate() {
                strata.entry(stratum_of(it, field)).or_default().push(i);
            }
            let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
            let tr = apportion(&sizes, train_n);
            let te = apportion(&sizes, test_n);
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (((name, mut idx), a), b) in strata.into_iter().zip(tr).zip(te) {
                if a + b > idx.len() {
                    return Err(Error::InsufficientItems(format!(
                        "stratum {name:?} has {} items but needs {}",
                        idx.len(),
                        a + b
                    )));
                }
                idx.shuffle(&mut r);
                train.extend_from_slice(&idx[..a]);
                test.extend_from_slice(&idx[a..a + b]);
            }
            Ok((take(&train), take(&test)))
        }
    }
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            reason: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_jsonl(rows)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordSchema {
    Qa,
    Transcript,
    Feature,
    Score,
    Label,
}

impl std::str::FromStr for RecordSchema {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qa" => Ok(Self::Qa),
            "transcript" => Ok(Self::Transcript),
            "feature" => Ok(Self::Feature),
            "score" => Ok(Self::Score),
            "label" => Ok(Self::Label),
            other => Err(Error::InvalidArgument(format!("unknown schema {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema: RecordSchema,
    pub lines: usize,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

fn check_line(schema: RecordSchema, v: Value, dims: &mut Option<usize>) -> std::result::Result<Option<String>, String> {
    let err = |e: serde_json::Error| e.to_string();
    match schema {
        RecordSchema::Qa => {
            let q: QAItem = serde_json::from_value(v).map_err(err)?;
            if q.reference_answers.is_empty() {
                return Err("field `reference_answers` is empty".into());
            }
            if q.label.is_some_and(|l| l > 1) {
                return Err("field `label` must be 0 or 1".into());
            }
            if let Some(lp) = &q.answer_logprobs {
                if lp.iter().any(|x| !x.is_finite() || *x > 0.0) {
                    return Err("field `answer_logprobs` must hold finite values <= 0".into());
                }
            }
            Ok(Some(q.item_id))
        }
        RecordSchema::Transcript => {
            let t: DialogueTranscript = serde_json::from_value(v).map_err(err)?;
            for (i, turn) in t.turns.iter().enumerate() {
                if turn.turn != i + 2 {
                    return Err(format!("field `turns[{i}].turn` is {}, expected {}", turn.turn, i + 2));
                }
            }
            Ok(Some(t.item_id))
        }
        RecordSchema::Feature => {
            let f: FeatureRecord = serde_json::from_value(v).map_err(err)?;
            if f.turn == 0 {
                return Err("field `turn` must be >= 1".into());
            }
            if f.vector.len() != f.meta.hidden_dim {
                return Err(format!(
                    "field `vector` has length {} but meta.hidden_dim is {}",
                    f.vector.len(),
                    f.meta.hidden_dim
                ));
            }
            if let Some(d) = *dims {
                if d != f.vector.len() {
                    return Err(format!("field `vector` has length {}, earlier records have {d}", f.vector.len()));
                }
            }
            *dims = Some(f.vector.len());
            if f.vector.iter().any(|x| !x.is_finite()) {
                return Err("field `vector` contains a non-finite value".into());
            }
            Ok(Some(format!("{}\u{0}{}", f.item_id, f.turn)))
        }
        RecordSchema::Score => {
            match v.get("value") {
                Some(Value::Array(a)) => return Err(format!("field `value` must be one score, got {} values", a.len())),
                Some(Value::Number(_)) | None => {}
                Some(other) => return Err(format!("field `value` must be a number, got {other}")),
            }
            let s: TurnScore = serde_json::from_value(v).map_err(err)?;
            if s.turn == 0 {
                return Err("field `turn` must be >= 1".into());
            }
            Ok(Some(format!("{}\u{0}{}\u{0}{}", s.item_id, s.turn, s.backbone_id)))
        }
        RecordSchema::Label => {
            let l: LabelRecord = serde_json::from_value(v).map_err(err)?;
            if l.label > 1 {
                return Err("field `label` must be 0 or 1".into());
            }
            Ok(Some(l.item_id))
        }
    }
}

/// Per-line schema check. Only an unreadable file is an error; everything
/// else is reported as an issue.
pub fn validate_records(path: &Path, schema: RecordSchema) -> Result<ValidationReport> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut issues = Vec::new();
    let mut keys: HashMap<String, usize> = HashMap::new();
    let mut dims = None;
    let mut lines = 0;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        let parsed = serde_json::from_str::<Value>(&line)
            .map_err(|e| format!("not valid JSON: {e}"))
            .and_then(|v| check_line(schema, v, &mut dims));
        match parsed {
            Ok(Some(key)) => {
                if let Some(first) = keys.insert(key, n) {
                    issues.push(Issue { line: n, reason: format!("duplicate key, first seen on line {first}") });
                }
            }
            Ok(None) => {}
            Err(reason) => issues.push(Issue { line: n, reason }),
        }
    }
    Ok(ValidationReport { schema, lines, issues })
}

/// Items whose ids repeat, in first-repeat order.
pub fn duplicate_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dup = Vec::new();
    for id in ids {
        if !seen.insert(id) && !dup.iter().any(|d| d == id) {
            dup.push(id.to_string());
        }
    }
    dup
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, group: Option<&str>, label: u8) -> QAItem {
        QAItem {
            item_id: id.into(),
            domain_id: "d".into(),
            question: "q".into(),
            reference_answers: vec!["r".into()],
            generated_answer: "a".into(),
            label: Some(label),
            answer_logprobs: None,
            group: group.map(str::to_string),
            stratum: None,
        }
    }

    #[test]
    fn fallback_examples() {
        assert_eq!(fallback_label("The Atlas", &["atlas".into()]).unwrap(), 0);
        assert_eq!(fallback_label("Saturday", &["Sunday".into()]).unwrap(), 1);
        assert_eq!(fallback_label("Paris", &["Paris".into()]).unwrap(), 0);
        assert_eq!(fallback_label("It is 1,000.50 dollars.", &["1000.5".into()]).unwrap(), 0);
        assert_eq!(fallback_label("I think it's Paris, France!", &["paris".into()]).unwrap(), 0);
        assert!(fallback_label("x", &[]).is_err());
    }

    #[test]
    fn long_references_need_equality() {
        let reference = "the first president of the united states of america".to_string();
        assert_eq!(fallback_label(&format!("Well, {reference}."), std::slice::from_ref(&reference)).unwrap(), 1);
        assert_eq!(fallback_label(&reference.to_uppercase(), &[reference]).unwrap(), 0);
    }

    #[test]
    fn number_canonicalization() {
        assert_eq!(normalize_answer("1,000"), vec!["1000"]);
        assert_eq!(normalize_answer("3.50"), vec!["3.5"]);
        assert_eq!(normalize_answer("007"), vec!["7"]);
        assert_eq!(normalize_answer("0.50"), vec!["0.5"]);
        assert_eq!(normalize_answer("2.0"), vec!["2"]);
        assert_eq!(normalize_answer("-0"), vec!["0"]);
    }

    struct Fixed(std::result::Result<u8, BackendError>);
    impl Judge for Fixed {
        fn judge(&self, _: &str, _: &[String], _: &str) -> std::result::Result<u8, BackendError> {
            self.0.clone()
        }
    }

    #[test]
    fn judge_and_fallback() {
        let mut it = item("i", None, 0);
        it.generated_answer = "r".into();
        assert_eq!(label_answer(&it, Some(&Fixed(Ok(1))), false).unwrap(), 1);
        let down = Fixed(Err(BackendError::Timeout));
        assert!(matches!(label_answer(&it, Some(&down), false), Err(Error::Labeling(_))));
        assert_eq!(label_answer(&it, Some(&down), true).unwrap(), 0);
        assert_eq!(parse_verdict(" 1\n").unwrap(), 1);
        assert!(parse_verdict("yes").is_err());
    }

    #[test]
    fn full_partition() {
        let items: Vec<QAItem> = (0..3000).map(|i| item(&i.to_string(), None, (i % 4 == 0) as u8)).collect();
        let (tr, te) = sample_split(&items, 2000, 1000, 5, SplitOptions::default()).unwrap();
        assert_eq!((tr.len(), te.len()), (2000, 1000));
        let ids: HashSet<&str> = tr.iter().chain(&te).map(|i| i.item_id.as_str()).collect();
        assert_eq!(ids.len(), 3000);
        assert_eq!(sample_split(&items, 2000, 1000, 5, SplitOptions::default()).unwrap(), (tr, te));
        assert!(sample_split(&items, 2000, 1001, 5, SplitOptions::default()).is_err());
    }

    #[test]
    fn stratified_keeps_proportions() {
        let items: Vec<QAItem> = (0..1000).map(|i| item(&i.to_string(), None, (i % 4 == 0) as u8)).collect();
        let opts = SplitOptions { stratify: Some(StratumField::Label), group_disjoint: false };
        let (tr, te) = sample_split(&items, 400, 200, 1, opts).unwrap();
        assert_eq!(tr.iter().filter(|i| i.label == Some(1)).count(), 100);
        assert_eq!(te.iter().filter(|i| i.label == Some(1)).count(), 50);
    }

    #[test]
    fn groups_never_straddle() {
        let items: Vec<QAItem> =
            (0..300).map(|i| item(&i.to_string(), Some(&format!("p{}", i / 5)), 0)).collect();
        let opts = SplitOptions { stratify: None, group_disjoint: true };
        let (tr, te) = sample_split(&items, 200, 100, 3, opts).unwrap();
        let g = |v: &[QAItem]| v.iter().map(|i| i.group.clone().unwrap()).collect::<HashSet<_>>();
        assert!(g(&tr).is_disjoint(&g(&te)));
        assert_eq!((tr.len(), te.len()), (200, 100));
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(apportion(&[750, 250], 400), vec![300, 100]);
    }

    #[test]
    fn validation_reports() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.jsonl");
        std::fs::write(&good, r#"{"item_id":"a","turn":1,"value":0.5,"backbone_id":"b"}"#).unwrap();
        assert!(validate_records(&good, RecordSchema::Score).unwrap().is_valid());

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(
            &bad,
            "{\"turn\":1,\"value\":0.5,\"backbone_id\":\"b\"}\n{\"item_id\":\"a\",\"turn\":1,\"value\":[0.5,0.1],\"backbone_id\":\"b\"}\n",
        )
        .unwrap();
        let r = validate_records(&bad, RecordSchema::Score).unwrap();
        assert_eq!(r.issues.len(), 2);
        assert_eq!(r.issues[0].line, 1);
        assert!(r.issues[0].reason.contains("item_id"));
        assert!(r.issues[1].reason.contains("2 values"));
    }
}
