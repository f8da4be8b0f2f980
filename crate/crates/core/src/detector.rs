//! Thresholded decision rule over SpikeScore and its calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TARGET_FPR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationMeta {
    pub source_domain: String,
    pub target_fpr: f64,
    pub n_calibration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_meta: Option<CalibrationMeta>,
}

impl Threshold {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("threshold must be positive and finite, got {lambda}")));
        }
        Ok(Self { lambda, calibration_meta: None })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.lambda).map(|_| ())
    }
}

/// 1 (hallucinated) iff `spike >= lambda`.
pub fn decide(spike: f64, threshold: &Threshold) -> u8 {
    u8::from(spike >= threshold.lambda)
}

/// Picks λ from factual spikes so that at most `floor(target_fpr * n)`
/// calibration items reach it.
///
/// The cut sits one ulp above the nearest-rank `(1 - target_fpr)` quantile,
/// since under the `>=` rule a cut placed exactly on the quantile would also
/// flag every item tied with it.
pub fn calibrate_threshold(
    factual_spikes: &[f64],
    target_fpr: f64,
    source_domain: &str,
) -> Result<Threshold> {
    if factual_spikes.is_empty() {
        return Err(Error::InvalidArgument("no factual spikes to calibrate on".into()));
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::InvalidArgument(format!("target_fpr {target_fpr} must be in (0, 1)")));
    }
    if let Some(v) = factual_spikes.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::NonFinite(format!("spike {v} is not a finite non-negative value")));
    }
    let mut sorted = factual_spikes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let allowed = ((target_fpr * n as f64) + 1e-9).floor() as usize;
    let rank = n - allowed.min(n - 1);
    let lambda = sorted[rank - 1].next_up();
    Ok(Threshold {
        lambda,
        calibration_meta: Some(CalibrationMeta {
            source_domain: source_domain.to_string(),
            target_fpr,
            n_calibration: n,
        }),
    })
}

/// Fraction of `spikes` flagged under `threshold`.
pub fn flag_rate(spikes: &[f64], threshold: &Threshold) -> f64 {
    if spikes.is_empty() {
        return 0.0;
    }
    spikes.iter().filter(|s| decide(**s, threshold) == 1).count() as f64 / spikes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(l: f64) -> Threshold {
        Threshold::new(l).unwrap()
    }

    #[test]
    fn decide_examples() {
        assert_eq!(decide(0.3, &t(0.5)), 0);
        assert_eq!(decide(0.5, &t(0.5)), 1);
        assert_eq!(decide(1.6, &t(0.5)), 1);
    }

    #[test]
    fn threshold_must_be_positive() {
        assert!(Threshold::new(0.0).is_err());
        assert!(Threshold::new(f64::NAN).is_err());
        assert!(Threshold::new(f64::INFINITY).is_err());
    }

    #[test]
    fn decile_calibration() {
        let spikes: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let th = calibrate_threshold(&spikes, 0.1, "d").unwrap();
        assert_eq!(th.lambda, 0.9f64.next_up());
        assert_eq!(flag_rate(&spikes, &th), 0.1);
        assert_eq!(th.calibration_meta.as_ref().unwrap().n_calibration, 10);
    }

    #[test]
    fn median_on_symmetric_set() {
        let spikes = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let th = calibrate_threshold(&spikes, 0.5, "d").unwrap();
        assert_eq!(th.lambda, 0.3f64.next_up());
        assert_eq!(flag_rate(&spikes, &th), 0.5);
    }

    #[test]
    fn constant_spikes() {
        for fpr in [0.01, 0.3, 0.9] {
            let th = calibrate_threshold(&[0.2; 7], fpr, "d").unwrap();
            assert_eq!(th.lambda, 0.2f64.next_up());
            assert_eq!(flag_rate(&[0.2; 7], &th), 0.0);
        }
        let th = calibrate_threshold(&[0.0; 3], 0.05, "d").unwrap();
        assert!(th.lambda > 0.0);
    }

    #[test]
    fn calibration_errors() {
        assert!(calibrate_threshold(&[], 0.05, "d").is_err());
        assert!(calibrate_threshold(&[0.1], 0.0, "d").is_err());
        assert!(calibrate_threshold(&[0.1], 1.0, "d").is_err());
        assert!(calibrate_threshold(&[f64::NAN], 0.1, "d").is_err());
    }
}
