//! Turn-level scoring backbones.
//!
//! Every backbone emits one value per turn (turn 1 is the initial answer),
//! oriented so that higher means more hallucination-suspect. Rows are then
//! grouped into [`ScoreSequence`]s for the trajectory metrics.

pub mod probe;

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dialogue::DialogueTranscript;
use crate::error::{Error, Result};
use crate::trajectory::ScoreSequence;

pub use probe::{train_probe, train_probe_with, Objective, ProbeHyper, ProbeModel};

pub const SIM_BACKBONE: &str = "sim";
pub const PERPLEXITY_BACKBONE: &str = "perplexity";
pub const PROBE_BACKBONE: &str = "probe";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenPosition {
    Last,
    Penultimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMeta {
    pub layer_policy: String,
    pub token_position: TokenPosition,
    pub hidden_dim: usize,
}

impl FeatureMeta {
    pub fn mean_last_five(token_position: TokenPosition, hidden_dim: usize) -> Self {
        Self { layer_policy: "mean of last 5 layers".into(), token_position, hidden_dim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub item_id: String,
    pub turn: usize,
    pub vector: Vec<f64>,
    pub meta: FeatureMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnScore {
    pub item_id: String,
    pub turn: usize,
    pub value: f64,
    pub backbone_id: String,
}

/// Feature vectors keyed by `(item_id, turn)`.
pub type FeatureIndex = HashMap<(String, usize), Vec<f64>>;

pub fn index_features(records: &[FeatureRecord]) -> FeatureIndex {
    records
        .iter()
        .map(|r| ((r.item_id.clone(), r.turn), r.vector.clone()))
        .collect()
}

/// Length-normalised mean negative log-likelihood of an answer.
pub fn perplexity_score(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::NoTokens);
    }
    if let Some(bad) = token_logprobs.iter().find(|v| !v.is_finite() || **v > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "log-probabilities must be finite and <= 0, got {bad}"
        )));
    }
    Ok(-token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64)
}

pub enum Backbone<'a> {
    /// Reads the simulator's hidden per-turn instability.
    Simulator,
    Perplexity,
    Probe {
        model: &'a ProbeModel,
        features: &'a FeatureIndex,
    },
}

impl Backbone<'_> {
    pub fn id(&self) -> &'static str {
        match self {
            Backbone::Simulator => SIM_BACKBONE,
            Backbone::Perplexity => PERPLEXITY_BACKBONE,
            Backbone::Probe { .. } => PROBE_BACKBONE,
        }
    }
}

/// Scores every turn of a transcript, starting with the initial answer.
/// A missing per-turn input fails the whole item.
pub fn score_transcript(t: &DialogueTranscript, backbone: &Backbone<'_>) -> Result<Vec<TurnScore>> {
    let missing = |turn: usize, reason: &str| Error::MissingInput {
        item_id: t.item_id.clone(),
        turn,
        reason: reason.to_string(),
    };
    let value_at = |turn: usize| -> Result<f64> {
        match backbone {
            Backbone::Simulator => {
                let latent = if turn == 1 {
                    t.initial_latent
                } else {
                    t.turns[turn - 2].latent
                };
                latent.ok_or_else(|| missing(turn, "no simulator latent recorded"))
            }
            Backbone::Perplexity => {
                let lp = if turn == 1 {
                    t.initial_logprobs.as_ref()
                } else {
                    t.turns[turn - 2].logprobs.as_ref()
                };
                let lp = lp.ok_or_else(|| missing(turn, "no token log-probabilities recorded"))?;
                perplexity_score(lp).map_err(|e| missing(turn, &e.to_string()))
            }
            Backbone::Probe { model, features } => {
                let v = features
                    .get(&(t.item_id.clone(), turn))
                    .ok_or_else(|| missing(turn, "no feature record"))?;
                model.score(v)
            }
        }
    };
    (1..=t.len())
        .map(|turn| {
            Ok(TurnScore {
                item_id: t.item_id.clone(),
                turn,
                value: value_at(turn)?,
                backbone_id: backbone.id().to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    HigherIsHallucination,
    LowerIsHallucination,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternalLine {
    item_id: String,
    turn: usize,
    value: Value,
    backbone_id: String,
    #[serde(default)]
    orientation: Option<Orientation>,
}

/// Reads externally computed per-turn scores, one JSON object per line.
/// Lines declaring `lower_is_hallucination` (or all lines, when that is the
/// default) are negated so every score shares the same orientation.
pub fn ingest_external_scores(reader: impl BufRead, default: Orientation) -> Result<Vec<TurnScore>> {
    let mut out = Vec::new();
    let mut seen: HashMap<(String, usize, String), usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::MalformedLine { line: n, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExternalLine = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedLine { line: n, reason: e.to_string() })?;
        let value = match &rec.value {
            Value::Number(x) => x.as_f64().unwrap_or(f64::NAN),
            Value::String(s) => s.trim().parse::<f64>().map_err(|_| Error::MalformedLine {
                line: n,
                reason: format!("value {s:?} is not a number"),
            })?,
            other => {
                return Err(Error::MalformedLine { line: n, reason: format!("value {other} is not a number") })
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("line {n}: value {value}")));
        }
        if rec.turn == 0 {
            return Err(Error::MalformedLine { line: n, reason: "turn must be >= 1".into() });
        }
        let key = (rec.item_id.clone(), rec.turn, rec.backbone_id.clone());
        if seen.insert(key, n).is_some() {
            return Err(Error::DuplicateKey {
                line: n,
                item_id: rec.item_id,
                turn: rec.turn,
                backbone_id: rec.backbone_id,
            });
        }
        let value = match rec.orientation.unwrap_or(default) {
            Orientation::HigherIsHallucination => value,
            Orientation::LowerIsHallucination => -value,
        };
        out.push(TurnScore { item_id: rec.item_id, turn: rec.turn, value, backbone_id: rec.backbone_id });
    }
    Ok(out)
}

#[derive(Debug, Default)]
pub struct Assembled {
    pub sequences: Vec<ScoreSequence>,
    /// Items that could not be assembled, e.g. because of missing turns.
    pub errors: Vec<Error>,
}

/// Groups rows by `(item, backbone)` in first-appearance order and sorts
/// each group by turn. Turns must run contiguously from 1.
pub fn assemble_sequences(turn_scores: &[TurnScore]) -> Assembled {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<(usize, f64)>> = HashMap::new();
    for s in turn_scores {
        let key = (s.item_id.clone(), s.backbone_id.clone());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push((s.turn, s.value));
    }
    let mut out = Assembled::default();
    for key in order {
        let mut rows = groups.remove(&key).expect("grouped");
        rows.sort_by_key(|r| r.0);
        let present: HashSet<usize> = rows.iter().map(|r| r.0).collect();
        let max_turn = rows.last().map(|r| r.0).unwrap_or(0);
        let missing: Vec<usize> = (1..=max_turn).filter(|t| !present.contains(t)).collect();
        let duplicated = present.len() != rows.len();
        if !missing.is_empty() || duplicated {
            out.errors.push(if duplicated && missing.is_empty() {
                Error::DuplicateId(format!("item {} has repeated turns", key.0))
            } else {
                Error::MissingTurns { item_id: key.0, backbone_id: key.1, missing }
            });
            continue;
        }
        match ScoreSequence::new(key.0, key.1, rows.into_iter().map(|r| r.1).collect()) {
            Ok(seq) => out.sequences.push(seq),
            Err(e) => out.errors.push(e),
        }
    }
    out
}
