//! Separability statistics, the Cantelli lower bound and its Monte Carlo check.

use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use super::metrics::pairwise_auc;
use crate::error::{Error, Result};
use crate::rng;

/// Reference CV used to express `c` as a scale level `t = c / 0.1`.
pub const CV_UNIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationChecks {
    /// `delta > 2`
    pub mean_ratio: bool,
    /// `1 < r <= 2.5`
    pub std_ratio: bool,
    /// `c <= 0.2`
    pub factual_cv: bool,
}

impl ObservationChecks {
    pub fn evaluate(delta: f64, r: f64, c: f64) -> Self {
        Self { mean_ratio: delta > 2.0, std_ratio: r > 1.0 && r <= 2.5, factual_cv: c <= 0.2 }
    }

    pub fn all(&self) -> bool {
        self.mean_ratio && self.std_ratio && self.factual_cv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityStats {
    pub n_h: usize,
    pub n_t: usize,
    pub mean_h: f64,
    pub mean_t: f64,
    pub std_h: f64,
    pub std_t: f64,
    pub delta: f64,
    pub r: f64,
    pub c: f64,
    pub t_level: f64,
    pub empirical_p: f64,
    /// `None` when `delta <= 1`, where the bound says nothing.
    pub cantelli_lb: Option<f64>,
    pub checks: ObservationChecks,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Moments use the sample (n − 1) standard deviation.
pub fn separability_stats(hall: &[f64], fact: &[f64]) -> Result<SeparabilityStats> {
    if hall.len() < 2 || fact.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 values per class, got {} hallucinated and {} factual",
            hall.len(),
            fact.len()
        )));
    }
    let (mean_h, std_h) = mean_std(hall);
    let (mean_t, std_t) = mean_std(fact);
    if mean_t.is_nan() || mean_t <= 0.0 {
        return Err(Error::NonPositiveMean(mean_t));
    }
    if std_t.is_nan() || std_t <= 0.0 {
        return Err(Error::Degenerate("factual values are constant".into()));
    }
    let delta = mean_h / mean_t;
    let r = std_h / std_t;
    let c = std_t / mean_t;
    Ok(SeparabilityStats {
        n_h: hall.len(),
        n_t: fact.len(),
        mean_h,
        mean_t,
        std_h,
        std_t,
        delta,
        r,
        c,
        t_level: c / CV_UNIT,
        empirical_p: pairwise_auc(hall, fact)?,
        cantelli_lb: cantelli_bound(delta, r, c).ok(),
        checks: ObservationChecks::evaluate(delta, r, c),
    })
}

/// Lower bound on P(X > Y) for independent X, Y with E[X] = δ·E[Y],
/// Std X = r·Std Y and Std Y = c·E[Y]:
/// `(δ−1)² / ((r²+1)·c² + (δ−1)²)`.
pub fn cantelli_bound(delta: f64, r: f64, c: f64) -> Result<f64> {
    if !(delta.is_finite() && r.is_finite() && c.is_finite()) {
        return Err(Error::NonFinite(format!("bound parameters ({delta}, {r}, {c})")));
    }
    if delta <= 1.0 {
        return Err(Error::InvalidArgument(format!("delta {delta} must exceed 1")));
    }
    if r < 0.0 || c < 0.0 {
        return Err(Error::InvalidArgument(format!("r {r} and c {c} must be non-negative")));
    }
    let d2 = (delta - 1.0).powi(2);
    Ok(d2 / ((r * r + 1.0) * c * c + d2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    TruncatedNormal,
    LogNormal,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::TruncatedNormal => "truncated_normal",
            Family::LogNormal => "log_normal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub family: Family,
    pub delta: f64,
    pub r: f64,
    pub c: f64,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub config: MonteCarloConfig,
    pub empirical_p: f64,
    pub standard_error: f64,
    pub bound: f64,
    pub holds: bool,
}

/// A non-negative distribution with a prescribed mean and standard deviation.
enum Sampler {
    Trunc(Normal<f64>),
    Log(LogNormal<f64>),
}

impl Sampler {
    fn new(family: Family, mean: f64, sd: f64) -> Result<Self> {
        let unreachable = |reason: String| Error::UnreachableMoments { family: family.to_string(), reason };
        if !(sd > 0.0 && mean > 0.0) {
            return Err(unreachable(format!("mean {mean} and sd {sd} must be positive")));
        }
        match family {
            Family::LogNormal => {
                let s2 = (1.0 + (sd / mean).powi(2)).ln();
                let mu = mean.ln() - s2 / 2.0;
                LogNormal::new(mu, s2.sqrt()).map(Sampler::Log).map_err(|e| unreachable(e.to_string()))
            }
            Family::TruncatedNormal => {
                let (mu, sigma) = truncated_normal_parent(mean, sd).map_err(unreachable)?;
                Normal::new(mu, sigma).map(Sampler::Trunc).map_err(|e| unreachable(e.to_string()))
            }
        }
    }

    fn sample(&self, r: &mut rng::StageRng) -> f64 {
        match self {
            Sampler::Log(d) => d.sample(r),
            Sampler::Trunc(d) => loop {
                let x = d.sample(r);
                if x > 0.0 {
                    break x;
                }
            },
        }
    }
}

/// Mean and sd of N(mu, sigma²) conditioned on being positive.
pub fn truncated_moments(mu: f64, sigma: f64) -> (f64, f64) {
    let z = StdNormal::new(0.0, 1.0).expect("standard normal");
    let alpha = -mu / sigma;
    let tail = 1.0 - z.cdf(alpha);
    let lam = z.pdf(alpha) / tail;
    let mean = mu + sigma * lam;
    let var = sigma * sigma * (1.0 + alpha * lam - lam * lam);
    (mean, var.max(0.0).sqrt())
}

/// Parent parameters whose positive truncation has the requested moments.
fn truncated_normal_parent(mean: f64, sd: f64) -> std::result::Result<(f64, f64), String> {
    // The half-normal (mu = 0) has the largest CV a positive truncation can reach.
    if sd / mean >= 0.75 {
        return Err(format!("coefficient of variation {} is out of reach", sd / mean));
    }
    let (mut mu, mut sigma) = (mean, sd);
    for _ in 0..500 {
        let (m, s) = truncated_moments(mu, sigma);
        if (m - mean).abs() <= 1e-12 * mean && (s - sd).abs() <= 1e-12 * sd {
            return Ok((mu, sigma));
        }
        mu += mean - m;
        sigma *= sd / s;
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
            break;
        }
    }
    Err("moment matching did not converge".into())
}

/// True when `(delta, r, c)` lies in the regime the bound is checked on.
pub fn in_observation_regime(delta: f64, r: f64, c: f64) -> bool {
    delta > 2.0 && r > 1.0 && r <= 2.5 && c > 0.0 && c <= 0.2
}

/// Samples independent X (mean δ, sd r·c) and Y (mean 1, sd c) and checks
/// the empirical P(X > Y) against the bound with a 3-standard-error margin.
pub fn monte_carlo_theorem_check(config: &MonteCarloConfig) -> Result<MonteCarloResult> {
    let MonteCarloConfig { family, delta, r, c, n_samples, seed } = *config;
    if c <= 0.0 {
        return Err(Error::UnreachableMoments { family: family.to_string(), reason: "c must be positive".into() });
    }
    if !in_observation_regime(delta, r, c) {
        return Err(Error::InvalidArgument(format!(
            "({delta}, {r}, {c}) is outside delta > 2, 1 < r <= 2.5, c <= 0.2"
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let x = Sampler::new(family, delta, r * c)?;
    let y = Sampler::new(family, 1.0, c)?;
    let mut rng = rng::stream(seed, 0x3c);
    let mut wins = 0.0;
    for _ in 0..n_samples {
        let (a, b) = (x.sample(&mut rng), y.sample(&mut rng));
        wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
    }
    let p = wins / n_samples as f64;
    let se = (p * (1.0 - p) / n_samples as f64).sqrt();
    let bound = cantelli_bound(delta, r, c)?;
    Ok(MonteCarloResult { config: *config, empirical_p: p, standard_error: se, bound, holds: p >= bound - 3.0 * se })
}

/// The default grid: 5 mean ratios × 4 sd ratios × 4 CVs × 2 families.
pub fn default_theorem_grid(n_samples: usize, seed: u64) -> Vec<MonteCarloConfig> {
    let mut out = Vec::new();
    for family in [Family::TruncatedNormal, Family::LogNormal] {
        for delta in [2.01, 2.25, 2.5, 3.0, 4.0] {
            for r in [1.01, 1.5, 2.0, 2.5] {
                for c in [0.05, 0.1, 0.15, 0.2] {
                    let seed = seed.wrapping_add(out.len() as u64);
                    out.push(MonteCarloConfig { family, delta, r, c, n_samples, seed });
                }
            }
        }
    }
    out
}

/// Draws `n` values with the given mean and sd from `family`; used to build
/// synthetic lists with prescribed moments.
pub fn sample_family(family: Family, mean: f64, sd: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let s = Sampler::new(family, mean, sd)?;
    let mut r = rng::stream(seed, 0x5a);
    Ok((0..n).map(|_| s.sample(&mut r)).collect())
}
