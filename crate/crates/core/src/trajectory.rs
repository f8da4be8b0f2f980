//! Per-item score trajectories and the metrics computed over them.
//!
//! A [`ScoreSequence`] holds one backbone score per dialogue turn, turn 1
//! being the initial answer. [`spike_score`] is the detection signal: the
//! largest absolute second-order difference over every interior turn.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSequence {
    pub item_id: String,
    pub backbone_id: String,
    pub scores: Vec<f64>,
}

impl ScoreSequence {
    /// Builds a sequence, rejecting empty or non-finite score lists.
    pub fn new(
        item_id: impl Into<String>,
        backbone_id: impl Into<String>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        let item_id = item_id.into();
        if scores.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "empty score sequence for item {item_id}"
            )));
        }
        if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!(
                "item {item_id} turn {}: {}",
                pos + 1,
                scores[pos]
            )));
        }
        Ok(Self {
            item_id,
            backbone_id: backbone_id.into(),
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Iterates `(turn, |s[k+1] - 2 s[k] + s[k-1]|)` over interior turns,
/// with 1-indexed turn numbers `2..=K-1`.
fn second_differences(scores: &[f64]) -> impl Iterator<Item = (usize, f64)> + '_ {
    scores
        .windows(3)
        .enumerate()
        .map(|(i, w)| (i + 2, (w[2] - 2.0 * w[1] + w[0]).abs()))
}

/// Maximum absolute second-order difference over all interior turns.
pub fn spike_score(scores: &[f64]) -> Result<f64> {
    Ok(spike_with_turn(scores)?.0)
}

/// Interior turn (1-indexed) attaining the maximum second difference.
/// Ties resolve to the smallest turn.
pub fn peak_turn(scores: &[f64]) -> Result<usize> {
    Ok(spike_with_turn(scores)?.1)
}

/// SpikeScore together with its peak turn, computed in a single pass.
pub fn spike_with_turn(scores: &[f64]) -> Result<(f64, usize)> {
    if scores.len() < 3 {
        return Err(Error::SequenceTooShort(scores.len()));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (turn, d) in second_differences(scores) {
        if d > best.0 {
            best = (d, turn);
        }
    }
    Ok(best)
}

/// Sample standard deviation (n-1 denominator) divided by the sample mean.
pub fn coefficient_of_variation(scores: &[f64]) -> Result<f64> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::VarianceUndefined(n));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return Err(Error::NonPositiveMean(mean));
    }
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(var.sqrt() / mean)
}

/// Keeps the first `k_prime` turns.
pub fn truncate_sequence(seq: &ScoreSequence, k_prime: usize) -> Result<ScoreSequence> {
    if k_prime < 1 || k_prime > seq.len() {
        return Err(Error::out_of_range("k_prime", k_prime, 1, seq.len()));
    }
    Ok(ScoreSequence {
        item_id: seq.item_id.clone(),
        backbone_id: seq.backbone_id.clone(),
        scores: seq.scores[..k_prime].to_vec(),
    })
}
