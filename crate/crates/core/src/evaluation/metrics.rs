//! AUROC and the pairwise separability estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledScore {
    pub item_id: String,
    pub domain_id: String,
    /// 1 = hallucinated.
    pub label: u8,
    pub value: f64,
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counted
/// as one half.
pub fn auroc(scores: &[LabeledScore]) -> Result<f64> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in scores {
        match s.label {
            1 => pos.push(s.value),
            0 => neg.push(s.value),
            l => return Err(Error::InvalidArgument(format!("label {l} for item {} is not 0/1", s.item_id))),
        }
    }
    pairwise_auc(&pos, &neg)
}

/// Mann-Whitney estimate of P(X > Y) + 0.5·P(X = Y) over all pairs.
pub fn pairwise_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::AurocUndefined);
    }
    if pos.iter().chain(neg).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("AUROC input contains a non-finite value".into()));
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Twice the U statistic, kept integral so the ratio is exact.
    let mut twice_u: u128 = 0;
    for &p in pos {
        let below = sorted.partition_point(|&n| n < p);
        let not_above = sorted.partition_point(|&n| n <= p);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice_u as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

pub fn auroc_of(values: &[f64], labels: &[u8]) -> Result<f64> {
    if values.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: values.len(), actual: labels.len() });
    }
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (&v, &l) in values.iter().zip(labels) {
        if l == 1 { pos.push(v) } else { neg.push(v) }
    }
    pairwise_auc(&pos, &neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(label: u8, value: f64) -> LabeledScore {
        LabeledScore { item_id: String::new(), domain_id: String::new(), label, value }
    }

    #[test]
    fn examples() {
        let s = [ls(1, 0.9), ls(1, 0.7), ls(0, 0.8), ls(0, 0.1)];
        assert_eq!(auroc(&s).unwrap(), 0.75);
        assert_eq!(pairwise_auc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(pairwise_auc(&[0.1, 0.5, 0.5], &[0.5, 0.1, 0.5]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(auroc(&[ls(1, 0.3), ls(1, 0.4)]), Err(Error::AurocUndefined)));
        assert!(matches!(auroc(&[]), Err(Error::AurocUndefined)));
    }

    #[test]
    fn negation_complements_without_ties() {
        let pos = [0.3, 0.9, 0.55];
        let neg = [0.1, 0.6, 0.2, 0.95];
        let a = pairwise_auc(&pos, &neg).unwrap();
        let np: Vec<f64> = pos.iter().map(|v| -v).collect();
        let nn: Vec<f64> = neg.iter().map(|v| -v).collect();
        assert_eq!(a + pairwise_auc(&np, &nn).unwrap(), 1.0);
    }
}
