//! Cross-domain evaluation: AUROC, mixture pools, separability statistics,
//! truncation sweeps, peak-turn aggregation and the leave-one-out report.

pub mod metrics;
pub mod plots;
pub mod stats;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{auroc, auroc_of, pairwise_auc, LabeledScore};
pub use plots::{export_plot_data, PlotSelector};
pub use stats::{
    cantelli_bound, default_theorem_grid, monte_carlo_theorem_check, separability_stats, Family,
    MonteCarloConfig, MonteCarloResult, ObservationChecks, SeparabilityStats,
};

use crate::detector::{calibrate_threshold, flag_rate, Threshold};
use crate::error::{Error, Result};
use crate::rng;
use crate::scoring::{FeatureIndex, Objective, ProbeHyper, ProbeModel};
use crate::trajectory::{coefficient_of_variation, spike_with_turn, truncate_sequence, ScoreSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub sequence: ScoreSequence,
    pub domain_id: String,
    pub label: u8,
}

/// Equal-weight mixture: every domain is subsampled without replacement to
/// the smallest domain's size. Selected items keep their source order.
pub fn mixture_pool(
    per_domain: &BTreeMap<String, Vec<LabeledScore>>,
    seed: u64,
) -> Result<Vec<LabeledScore>> {
    if per_domain.is_empty() {
        return Err(Error::InvalidArgument("mixture needs at least one domain".into()));
    }
    if let Some((d, _)) = per_domain.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::InvalidArgument(format!("domain {d} is empty")));
    }
    let m = per_domain.values().map(Vec::len).min().expect("non-empty");
    let mut pool = Vec::with_capacity(m * per_domain.len());
    for (domain, scores) in per_domain {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        let mut r = rng::stream_for(seed, &format!("mixture/{domain}"));
        let (chosen, _) = idx.partial_shuffle(&mut r, m);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        pool.extend(chosen.into_iter().map(|i| scores[i].clone()));
    }
    Ok(pool)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub auroc: f64,
}

/// AUROC of SpikeScore after truncating every sequence to each K.
pub fn step_sweep(sequences: &[LabeledSequence], k_values: &[usize]) -> Result<Vec<SweepRow>> {
    let min_len = sequences.iter().map(|s| s.sequence.len()).min().unwrap_or(0);
    let labels: Vec<u8> = sequences.iter().map(|s| s.label).collect();
    k_values
        .iter()
        .map(|&k| {
            if k < 3 || k > min_len {
                return Err(Error::out_of_range("K", k, 3, min_len));
            }
            let spikes = sequences
                .iter()
                .map(|s| Ok(spike_with_turn(&truncate_sequence(&s.sequence, k)?.scores)?.0))
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow { k, auroc: auroc_of(&spikes, &labels)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakTurnSummary {
    /// turn → number of items peaking there.
    pub histogram: BTreeMap<usize, usize>,
    /// Most frequent peak turn, smallest turn on ties.
    pub dominant: Option<usize>,
    pub n_valid: usize,
    pub n_skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn aggregate_peak_turn<'a>(sequences: impl IntoIterator<Item = &'a ScoreSequence>) -> PeakTurnSummary {
    let mut histogram = BTreeMap::new();
    let mut n_skipped = 0;
    for s in sequences {
        match spike_with_turn(&s.scores) {
            Ok((_, turn)) => *histogram.entry(turn).or_insert(0) += 1,
            Err(_) => n_skipped += 1,
        }
    }
    let n_valid = histogram.values().sum();
    // BTreeMap iterates ascending, so a strict > keeps the smallest tied turn.
    let mut dominant: Option<(usize, usize)> = None;
    for (&turn, &count) in &histogram {
        if dominant.is_none_or(|(_, c)| count > c) {
            dominant = Some((turn, count));
        }
    }
    PeakTurnSummary {
        histogram,
        dominant: dominant.map(|d| d.0),
        n_valid,
        n_skipped,
        note: (n_valid == 0).then(|| "no valid items".to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub target_fpr: f64,
    pub mixture_seed: u64,
    /// Seed for the in-domain half split used by trained backbones.
    pub split_seed: u64,
    pub k_sweep: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { target_fpr: crate::detector::DEFAULT_TARGET_FPR, mixture_seed: 0, split_seed: 0, k_sweep: (3..=20).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub item_id: String,
    pub domain_id: String,
    pub label: u8,
    /// Number of turns to score, counting the initial answer.
    pub turns: usize,
}

/// Training inputs for a probe backbone: features for every `(item, turn)`
/// and, for the regression objective, a per-item target.
pub struct ProbeSource<'a> {
    pub items: &'a [LabeledItem],
    pub features: &'a FeatureIndex,
    pub objective: Objective,
    pub hyper: ProbeHyper,
    pub targets: Option<&'a HashMap<String, f64>>,
}

pub enum ScoreSource<'a> {
    /// Per-turn scores that need no training (simulator, perplexity, external).
    Sequences(&'a [LabeledSequence]),
    /// A probe retrained on each train domain's initial-answer features.
    Probe(ProbeSource<'a>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub train_domain: String,
    pub test_domain: String,
    pub auroc: f64,
    pub in_domain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDomainSummary {
    pub train_domain: String,
    /// Mean AUROC over held-out domains; the train domain is excluded.
    pub mean_heldout_auroc: f64,
    pub mixture_size: usize,
    pub mixture_auroc: f64,
    pub mixture_cv_auroc: Option<f64>,
    pub separability: Option<SeparabilityStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separability_error: Option<String>,
    pub threshold: Threshold,
    pub calibration_fpr: f64,
    pub mixture_fpr: f64,
    pub mixture_tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_domain: Option<String>,
    pub item_id: String,
    pub domain_id: String,
    pub label: u8,
    pub spike: f64,
    pub peak_turn: usize,
    pub cv: Option<f64>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub item_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backbone_id: String,
    pub domains: Vec<String>,
    pub auroc_matrix: Vec<MatrixCell>,
    pub train_domains: Vec<TrainDomainSummary>,
    pub sweep: Vec<SweepRow>,
    pub peak_turns: PeakTurnSummary,
    pub items: Vec<ItemRow>,
    pub skipped: Vec<SkippedItem>,
    pub options: EvalOptions,
    /// Free-form run snapshot (seeds, configuration, hash) supplied by the caller.
    pub run: serde_json::Value,
}

impl EvalReport {
    pub fn cell(&self, train: &str, test: &str) -> Option<&MatrixCell> {
        self.auroc_matrix.iter().find(|c| c.train_domain == train && c.test_domain == test)
    }
}

/// Spike-level view of one item under one scoring.
#[derive(Debug, Clone)]
struct Scored {
    item_id: String,
    domain_id: String,
    label: u8,
    spike: f64,
    peak_turn: usize,
    cv: Option<f64>,
    scores: Vec<f64>,
}

fn score_item(seq: &ScoreSequence, domain_id: &str, label: u8) -> Result<Scored> {
    if label > 1 {
        return Err(Error::InvalidArgument(format!("label {label} is not 0/1")));
    }
    let (spike, peak_turn) = spike_with_turn(&seq.scores)?;
    Ok(Scored {
        item_id: seq.item_id.clone(),
        domain_id: domain_id.to_string(),
        label,
        spike,
        peak_turn,
        cv: coefficient_of_variation(&seq.scores).ok(),
        scores: seq.scores.clone(),
    })
}

fn group_by_domain<'a>(items: impl IntoIterator<Item = &'a Scored>) -> BTreeMap<String, Vec<&'a Scored>> {
    let mut out: BTreeMap<String, Vec<&Scored>> = BTreeMap::new();
    for s in items {
        out.entry(s.domain_id.clone()).or_default().push(s);
    }
    out
}

fn spikes_auroc(items: &[&Scored]) -> Result<f64> {
    let v: Vec<f64> = items.iter().map(|s| s.spike).collect();
    let l: Vec<u8> = items.iter().map(|s| s.label).collect();
    auroc_of(&v, &l)
}

/// Row of the report for one train domain given spikes for every item.
/// `diagonal` is the in-domain AUROC, which trained backbones compute on a
/// held-out half.
fn summarize_train_domain(
    train: &str,
    scored: &[Scored],
    diagonal: f64,
    opts: &EvalOptions,
) -> Result<(Vec<MatrixCell>, TrainDomainSummary)> {
    let by_domain = group_by_domain(scored);
    let mut cells = Vec::new();
    let mut heldout = Vec::new();
    for (domain, items) in &by_domain {
        let in_domain = domain == train;
        let a = if in_domain { diagonal } else { spikes_auroc(items)? };
        if !in_domain {
            heldout.push(a);
        }
        cells.push(MatrixCell { train_domain: train.into(), test_domain: domain.clone(), auroc: a, in_domain });
    }

    let as_labeled = |s: &Scored, value: f64| LabeledScore {
        item_id: s.item_id.clone(),
        domain_id: s.domain_id.clone(),
        label: s.label,
        value,
    };
    let others: BTreeMap<String, Vec<LabeledScore>> = by_domain
        .iter()
        .filter(|(d, _)| d.as_str() != train)
        .map(|(d, items)| (d.clone(), items.iter().map(|s| as_labeled(s, s.spike)).collect()))
        .collect();
    let pool = mixture_pool(&others, opts.mixture_seed)?;
    let mixture_auroc = auroc(&pool)?;

    let lookup: HashMap<&str, &Scored> = scored.iter().map(|s| (s.item_id.as_str(), s)).collect();
    let cv_pool: Option<Vec<LabeledScore>> = pool
        .iter()
        .map(|p| lookup[p.item_id.as_str()].cv.map(|cv| LabeledScore { value: cv, ..p.clone() }))
        .collect();
    let mixture_cv_auroc = cv_pool.and_then(|p| auroc(&p).ok());

    let hall: Vec<f64> = pool.iter().filter(|p| p.label == 1).map(|p| p.value).collect();
    let fact: Vec<f64> = pool.iter().filter(|p| p.label == 0).map(|p| p.value).collect();
    let (separability, separability_error) = match separability_stats(&hall, &fact) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let calib: Vec<f64> = by_domain
        .get(train)
        .map(|v| v.iter().filter(|s| s.label == 0).map(|s| s.spike).collect())
        .unwrap_or_default();
    let threshold = calibrate_threshold(&calib, opts.target_fpr, train)?;
    let summary = TrainDomainSummary {
        train_domain: train.into(),
        mean_heldout_auroc: heldout.iter().sum::<f64>() / heldout.len() as f64,
        mixture_size: pool.len(),
        mixture_auroc,
        mixture_cv_auroc,
        separability,
        separability_error,
        calibration_fpr: flag_rate(&calib, &threshold),
        mixture_fpr: flag_rate(&fact, &threshold),
        mixture_tpr: flag_rate(&hall, &threshold),
        threshold,
    };
    Ok((cells, summary))
}

fn row(s: &Scored, train: Option<&str>) -> ItemRow {
    ItemRow {
        train_domain: train.map(str::to_string),
        item_id: s.item_id.clone(),
        domain_id: s.domain_id.clone(),
        label: s.label,
        spike: s.spike,
        peak_turn: s.peak_turn,
        cv: s.cv,
        scores: s.scores.clone(),
    }
}

fn as_sequences(scored: &[Scored], backbone_id: &str) -> Vec<LabeledSequence> {
    scored
        .iter()
        .map(|s| LabeledSequence {
            sequence: ScoreSequence {
                item_id: s.item_id.clone(),
                backbone_id: backbone_id.to_string(),
                scores: s.scores.clone(),
            },
            domain_id: s.domain_id.clone(),
            label: s.label,
        })
        .collect()
}

fn sweep_within(sequences: &[LabeledSequence], k_sweep: &[usize]) -> Result<Vec<SweepRow>> {
    let min_len = sequences.iter().map(|s| s.sequence.len()).min().unwrap_or(0);
    let ks: Vec<usize> = k_sweep.iter().copied().filter(|&k| k >= 3 && k <= min_len).collect();
    step_sweep(sequences, &ks)
}

fn check_domains(domains: &[String]) -> Result<()> {
    if domains.len() < 2 {
        return Err(Error::InsufficientItems(format!(
            "leave-one-out needs at least 2 domains, got {}",
            domains.len()
        )));
    }
    Ok(())
}

/// Leave-one-out evaluation across every domain present in `source`.
pub fn run_leave_one_out(
    source: &ScoreSource<'_>,
    opts: &EvalOptions,
    run: serde_json::Value,
) -> Result<EvalReport> {
    match source {
        ScoreSource::Sequences(seqs) => loo_fixed(seqs, opts, run),
        ScoreSource::Probe(p) => loo_probe(p, opts, run),
    }
}

fn loo_fixed(seqs: &[LabeledSequence], opts: &EvalOptions, run: serde_json::Value) -> Result<EvalReport> {
    let mut scored = Vec::with_capacity(seqs.len());
    let mut skipped = Vec::new();
    for s in seqs {
        match score_item(&s.sequence, &s.domain_id, s.label) {
            Ok(x) => scored.push(x),
            Err(e) => skipped.push(SkippedItem { item_id: s.sequence.item_id.clone(), reason: e.to_string() }),
        }
    }
    let domains: Vec<String> = group_by_domain(&scored).into_keys().collect();
    check_domains(&domains)?;
    let by_domain = group_by_domain(&scored);
    let mut matrix = Vec::new();
    let mut summaries = Vec::new();
    for d in &domains {
        let diagonal = spikes_auroc(&by_domain[d])?;
        let (cells, summary) = summarize_train_domain(d, &scored, diagonal, opts)?;
        matrix.extend(cells);
        summaries.push(summary);
    }
    let backbone_id = seqs.first().map(|s| s.sequence.backbone_id.clone()).unwrap_or_default();
    let valid = as_sequences(&scored, &backbone_id);
    Ok(EvalReport {
        backbone_id,
        domains,
        auroc_matrix: matrix,
        train_domains: summaries,
        sweep: sweep_within(&valid, &opts.k_sweep)?,
        peak_turns: aggregate_peak_turn(seqs.iter().map(|s| &s.sequence)),
        items: scored.iter().map(|s| row(s, None)).collect(),
        skipped,
        options: opts.clone(),
        run,
    })
}

fn train_on(p: &ProbeSource<'_>, items: &[&LabeledItem]) -> Result<ProbeModel> {
    let mut xs = Vec::with_capacity(items.len());
    let mut ys = Vec::with_capacity(items.len());
    for it in items {
        let x = p.features.get(&(it.item_id.clone(), 1)).ok_or_else(|| Error::MissingInput {
            item_id: it.item_id.clone(),
            turn: 1,
            reason: "no feature record for probe training".into(),
        })?;
        let y = match (p.objective, p.targets) {
            (Objective::HuberRegression, Some(t)) => *t.get(&it.item_id).ok_or_else(|| Error::MissingInput {
                item_id: it.item_id.clone(),
                turn: 1,
                reason: "no regression target".into(),
            })?,
            _ => f64::from(it.label),
        };
        xs.push(x.clone());
        ys.push(y);
    }
    crate::scoring::train_probe(&xs, &ys, p.objective, &p.hyper)
}

fn score_with(p: &ProbeSource<'_>, model: &ProbeModel, items: &[&LabeledItem]) -> (Vec<Scored>, Vec<SkippedItem>) {
    let mut scored = Vec::new();
    let mut skipped = Vec::new();
    for it in items {
        let seq = (1..=it.turns)
            .map(|turn| {
                let x = p.features.get(&(it.item_id.clone(), turn)).ok_or_else(|| Error::MissingInput {
                    item_id: it.item_id.clone(),
                    turn,
                    reason: "no feature record".into(),
                })?;
                model.score(x)
            })
            .collect::<Result<Vec<f64>>>()
            .and_then(|scores| ScoreSequence::new(it.item_id.clone(), crate::scoring::PROBE_BACKBONE, scores))
            .and_then(|seq| score_item(&seq, &it.domain_id, it.label));
        match seq {
            Ok(s) => scored.push(s),
            Err(e) => skipped.push(SkippedItem { item_id: it.item_id.clone(), reason: e.to_string() }),
        }
    }
    (scored, skipped)
}

struct ProbeCell {
    cells: Vec<MatrixCell>,
    summary: TrainDomainSummary,
    scored: Vec<Scored>,
    skipped: Vec<SkippedItem>,
}

fn loo_probe(p: &ProbeSource<'_>, opts: &EvalOptions, run: serde_json::Value) -> Result<EvalReport> {
    let mut by_domain: BTreeMap<String, Vec<&LabeledItem>> = BTreeMap::new();
    for it in p.items {
        by_domain.entry(it.domain_id.clone()).or_default().push(it);
    }
    let domains: Vec<String> = by_domain.keys().cloned().collect();
    check_domains(&domains)?;
    let all: Vec<&LabeledItem> = p.items.iter().collect();

    let cells = domains
        .par_iter()
        .map(|d| -> Result<ProbeCell> {
            let own = &by_domain[d];
            let mut shuffled = own.clone();
            shuffled.shuffle(&mut rng::stream_for(opts.split_seed, &format!("split/{d}")));
            let (fit_half, eval_half) = shuffled.split_at(shuffled.len() / 2);
            let half_model = train_on(p, fit_half)?;
            let (eval_scored, _) = score_with(p, &half_model, eval_half);
            let diagonal = spikes_auroc(&eval_scored.iter().collect::<Vec<_>>())?;

            let model = train_on(p, own)?;
            let (scored, skipped) = score_with(p, &model, &all);
            let (cells, summary) = summarize_train_domain(d, &scored, diagonal, opts)?;
            Ok(ProbeCell { cells, summary, scored, skipped })
        })
        .collect::<Result<Vec<_>>>()?;

    let first = &cells[0];
    let heldout: Vec<Scored> = first.scored.iter().filter(|s| s.domain_id != domains[0]).cloned().collect();
    let heldout_seqs = as_sequences(&heldout, crate::scoring::PROBE_BACKBONE);
    let mut skipped: Vec<SkippedItem> = Vec::new();
    for c in &cells {
        for s in &c.skipped {
            if !skipped.contains(s) {
                skipped.push(s.clone());
            }
        }
    }
    Ok(EvalReport {
        backbone_id: crate::scoring::PROBE_BACKBONE.into(),
        sweep: sweep_within(&heldout_seqs, &opts.k_sweep)?,
        peak_turns: aggregate_peak_turn(heldout_seqs.iter().map(|s| &s.sequence)),
        items: cells
            .iter()
            .zip(&domains)
            .flat_map(|(c, d)| c.scored.iter().map(move |s| row(s, Some(d))))
            .collect(),
        auroc_matrix: cells.iter().flat_map(|c| c.cells.clone()).collect(),
        train_domains: cells.into_iter().map(|c| c.summary).collect(),
        domains,
        skipped,
        options: opts.clone(),
        run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(domain: &str, i: usize, label: u8, value: f64) -> LabeledScore {
        LabeledScore { item_id: format!("{domain}-{i}"), domain_id: domain.into(), label, value }
    }

    #[test]
    fn mixture_equalizes_counts() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), (0..100).map(|i| ls("a", i, (i % 2) as u8, i as f64)).collect());
        m.insert("b".to_string(), (0..300).map(|i| ls("b", i, (i % 3 == 0) as u8, i as f64)).collect());
        let pool = mixture_pool(&m, 7).unwrap();
        assert_eq!(pool.len(), 200);
        assert_eq!(pool.iter().filter(|p| p.domain_id == "a").count(), 100);
        assert_eq!(pool, mixture_pool(&m, 7).unwrap());
        assert_ne!(pool, mixture_pool(&m, 8).unwrap());
        let one: BTreeMap<_, _> = m.iter().take(1).map(|(k, v)| (k.clone(), v.clone())).collect();
        assert_eq!(mixture_pool(&one, 1).unwrap(), one["a"]);
        m.insert("c".to_string(), vec![]);
        assert!(mixture_pool(&m, 1).is_err());
    }

    fn seq(id: &str, scores: Vec<f64>) -> ScoreSequence {
        ScoreSequence::new(id, "t", scores).unwrap()
    }

    #[test]
    fn peak_turn_modes() {
        let s = |p: usize| {
            let mut v = vec![0.0; 6];
            v[p - 1] = 1.0;
            seq("x", v)
        };
        let all4 = [s(4), s(4), s(4)];
        assert_eq!(aggregate_peak_turn(&all4).dominant, Some(4));
        let mixed = [s(3), s(3), s(4)];
        assert_eq!(aggregate_peak_turn(&mixed).dominant, Some(3));
        let tie = [s(5), s(3)];
        assert_eq!(aggregate_peak_turn(&tie).dominant, Some(3));
        let short = [seq("y", vec![0.1, 0.2])];
        let r = aggregate_peak_turn(&short);
        assert_eq!(r.dominant, None);
        assert_eq!(r.note.as_deref(), Some("no valid items"));
        assert_eq!(r.n_skipped, 1);
    }

    #[test]
    fn sweep_full_length_is_untruncated_auroc() {
        let seqs: Vec<LabeledSequence> = (0..10)
            .map(|i| {
                let bump = if i % 2 == 0 { 1.0 } else { 0.2 + 0.01 * i as f64 };
                LabeledSequence {
                    sequence: seq(&i.to_string(), vec![0.1, 0.1, bump, 0.1, 0.1 * i as f64]),
                    domain_id: "d".into(),
                    label: (i % 2 == 0) as u8,
                }
            })
            .collect();
        let spikes: Vec<f64> = seqs.iter().map(|s| crate::trajectory::spike_score(&s.sequence.scores).unwrap()).collect();
        let labels: Vec<u8> = seqs.iter().map(|s| s.label).collect();
        let rows = step_sweep(&seqs, &[5]).unwrap();
        assert_eq!(rows, vec![SweepRow { k: 5, auroc: auroc_of(&spikes, &labels).unwrap() }]);
        assert!(step_sweep(&seqs, &[2]).is_err());
        assert!(step_sweep(&seqs, &[6]).is_err());
    }

    fn synthetic_domain(domain: &str, n: usize, seed: u64) -> Vec<LabeledSequence> {
        use rand::Rng;
        let mut r = rng::stream_for(seed, &format!("mixture/{domain}"));
        (0..n)
            .map(|i| {
                let label = (i % 3 == 0) as u8;
                let amp = if label == 1 { r.random_range(0.3..0.5) } else { r.random_range(0.05..0.35) };
                let mut scores: Vec<f64> = (0..8).map(|_| 0.2 + r.random_range(0.0..0.01)).collect();
                scores[3] += amp;
                LabeledSequence { sequence: seq(&format!("{domain}-{i}"), scores), domain_id: domain.into(), label }
            })
            .collect()
    }

    #[test]
    fn leave_one_out_shape_and_means() {
        let mut seqs = Vec::new();
        for d in ["a", "b", "c"] {
            seqs.extend(synthetic_domain(d, 60, 1));
        }
        seqs.push(LabeledSequence { sequence: seq("short", vec![0.1, 0.2]), domain_id: "a".into(), label: 0 });
        let opts = EvalOptions { k_sweep: vec![3, 5, 8], ..Default::default() };
        let r = run_leave_one_out(&ScoreSource::Sequences(&seqs), &opts, serde_json::Value::Null).unwrap();
        assert_eq!(r.auroc_matrix.len(), 9);
        assert_eq!(r.skipped.len(), 1);
        for t in &r.train_domains {
            let off: Vec<f64> = r
                .auroc_matrix
                .iter()
                .filter(|c| c.train_domain == t.train_domain && !c.in_domain)
                .map(|c| c.auroc)
                .collect();
            assert_eq!(off.len(), 2);
            assert_eq!(t.mean_heldout_auroc, off.iter().sum::<f64>() / 2.0);
            assert!(r.cell(&t.train_domain, &t.train_domain).unwrap().in_domain);
            assert!(t.calibration_fpr <= opts.target_fpr);
        }
        assert_eq!(r.sweep.iter().map(|s| s.k).collect::<Vec<_>>(), vec![3, 5, 8]);
    }

    #[test]
    fn duplicate_domains_match_in_domain() {
        let a = synthetic_domain("a", 200, 3);
        let b: Vec<LabeledSequence> = a
            .iter()
            .map(|s| LabeledSequence {
                sequence: seq(&format!("b{}", s.sequence.item_id), s.sequence.scores.clone()),
                domain_id: "b".into(),
                label: s.label,
            })
            .collect();
        let all: Vec<LabeledSequence> = a.into_iter().chain(b).collect();
        let r = run_leave_one_out(&ScoreSource::Sequences(&all), &EvalOptions { k_sweep: vec![], ..Default::default() }, serde_json::Value::Null).unwrap();
        assert_eq!(r.cell("a", "b").unwrap().auroc, r.cell("a", "a").unwrap().auroc);
    }

    #[test]
    fn needs_two_domains() {
        let seqs = synthetic_domain("a", 20, 1);
        assert!(matches!(
            run_leave_one_out(&ScoreSource::Sequences(&seqs), &EvalOptions::default(), serde_json::Value::Null),
            Err(Error::InsufficientItems(_))
        ));
    }
}
