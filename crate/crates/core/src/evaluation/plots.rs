//! Tab-separated plot data derived from an [`EvalReport`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::EvalReport;
use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotSelector {
    Trajectories,
    SpikeHistograms,
    Sweep,
    Stats,
}

impl FromStr for PlotSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trajectories" => Ok(Self::Trajectories),
            "spike_histograms" => Ok(Self::SpikeHistograms),
            "sweep" => Ok(Self::Sweep),
            "stats" => Ok(Self::Stats),
            other => Err(Error::InvalidArgument(format!(
                "unknown plot selector {other:?} (expected trajectories, spike_histograms, sweep or stats)"
            ))),
        }
    }
}

/// Fixed-width histogram with `bins` bins spanning `[lo, hi]`; the last bin
/// is closed on the right. Returns `(bin_center, count)` rows.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, usize)> {
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (lo + (i as f64 + 0.5) * width, c)).collect()
}

fn write(dir: &Path, name: &str, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the selected table(s) into `dir` and returns the paths written.
/// With `item` set, trajectories are restricted to that item and written as
/// `(turn, score)` rows.
pub fn export_plot_data(
    report: &EvalReport,
    what: PlotSelector,
    dir: &Path,
    item: Option<&str>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    // Trained backbones list items once per train domain; plot the first.
    let first_train = report.items.first().and_then(|r| r.train_domain.clone());
    let rows = report.items.iter().filter(|r| r.train_domain == first_train);
    match what {
        PlotSelector::Trajectories => match item {
            Some(id) => {
                let r = report
                    .items
                    .iter()
                    .find(|r| r.item_id == id)
                    .ok_or_else(|| Error::InvalidArgument(format!("item {id} not in report")))?;
                let mut s = String::from("turn\tscore\n");
                for (i, v) in r.scores.iter().enumerate() {
                    writeln!(s, "{}\t{v}", i + 1).unwrap();
                }
                write(dir, &format!("trajectory_{id}.tsv"), &s, &mut written)?;
            }
            None => {
                let mut s = String::from("item_id\tdomain_id\tlabel\tturn\tscore\n");
                for r in rows {
                    for (i, v) in r.scores.iter().enumerate() {
                        writeln!(s, "{}\t{}\t{}\t{}\t{v}", r.item_id, r.domain_id, r.label, i + 1).unwrap();
                    }
                }
                write(dir, "trajectories.tsv", &s, &mut written)?;
            }
        },
        PlotSelector::SpikeHistograms => {
            let rows: Vec<_> = rows.collect();
            let lo = rows.iter().map(|r| r.spike).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.spike).fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
            for (label, name) in [(0u8, "factual"), (1u8, "hallucinated")] {
                let vals: Vec<f64> = rows.iter().filter(|r| r.label == label).map(|r| r.spike).collect();
                let mut s = String::from("bin_center\tcount\n");
                for (c, n) in histogram(&vals, lo, hi, HISTOGRAM_BINS) {
                    writeln!(s, "{c}\t{n}").unwrap();
                }
                write(dir, &format!("spike_histogram_{name}.tsv"), &s, &mut written)?;
            }
        }
        PlotSelector::Sweep => {
            let mut s = String::from("K\tauroc\n");
            for r in &report.sweep {
                writeln!(s, "{}\t{}", r.k, r.auroc).unwrap();
            }
            write(dir, "sweep.tsv", &s, &mut written)?;
        }
        PlotSelector::Stats => {
            let mut s = String::from(
                "train_domain\tmean_h\tmean_t\tstd_h\tstd_t\tdelta\tr\tc\tt_level\tempirical_p\tcantelli_lb\tmixture_auroc\tmixture_cv_auroc\n",
            );
            for t in &report.train_domains {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
                match &t.separability {
                    Some(st) => writeln!(
                        s,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        t.train_domain, st.mean_h, st.mean_t, st.std_h, st.std_t, st.delta, st.r, st.c,
                        st.t_level, st.empirical_p, opt(st.cantelli_lb), t.mixture_auroc, opt(t.mixture_cv_auroc)
                    ),
                    None => writeln!(
                        s,
                        "{}\tNA\tNA\tNA\tNA\tNA\tNA\tNA\tNA\tNA\tNA\t{}\t{}",
                        t.train_domain, t.mixture_auroc, opt(t.mixture_cv_auroc)
                    ),
                }
                .unwrap();
            }
            write(dir, "stats.tsv", &s, &mut written)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_value() {
        let v: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let h = histogram(&v, 0.0, 1.0, 50);
        assert_eq!(h.len(), 50);
        assert_eq!(h.iter().map(|r| r.1).sum::<usize>(), 101);
        assert!((h[0].0 - 0.01).abs() < 1e-12);
        assert_eq!(h[49].1, 3);
    }

    #[test]
    fn selector_parsing() {
        assert_eq!("sweep".parse::<PlotSelector>().unwrap(), PlotSelector::Sweep);
        assert!("kde".parse::<PlotSelector>().is_err());
    }
}
