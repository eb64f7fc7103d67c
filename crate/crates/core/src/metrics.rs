//! GCP and inter-prism evaluation metrics.
//!
//! Both metrics are summarized by their median and interquartile range.
//! Quantiles use linear interpolation between order statistics on the
//! inclusive rank scale `h = (n - 1) p` (the same convention as Excel's
//! `QUARTILE.INC` and NumPy's default).

use std::fmt;
use std::io::Write;

use nalgebra::Vector3;

use crate::calibrate::inter_prism::apparent_distance_residuals;
use crate::ingest::InterPrismDistances;
use crate::preprocess::SyncedTrajectories;
use crate::se3::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Gcp,
    InterPrism,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Gcp => "gcp",
            MetricKind::InterPrism => "inter_prism",
        })
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcp" => Ok(MetricKind::Gcp),
            "inter_prism" => Ok(MetricKind::InterPrism),
            other => Err(format!("unknown metric '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub kind: MetricKind,
    /// Non-negative distances, meters.
    pub samples: Vec<f64>,
    pub median: f64,
    pub iqr: f64,
    pub count: usize,
}

impl MetricReport {
    /// Builds a report from raw samples. Empty input yields NaN statistics.
    pub fn from_samples(kind: MetricKind, samples: Vec<f64>) -> Self {
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let (median, iqr) = if sorted.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                quantile_sorted(&sorted, 0.5),
                quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
            )
        };
        Self {
            kind,
            count: samples.len(),
            samples,
            median,
            iqr,
        }
    }
}

/// Quantile `p` of ascending `sorted` data by linear interpolation on rank
/// `(n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.5)
}

/// The three observations of one GCP, already mapped into the common frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GcpTriplet {
    pub label: String,
    pub observations: [Option<Vector3<f64>>; 3],
}

/// Pairwise distances among each GCP's three transformed observations.
///
/// GCPs missing an observation are skipped with a warning.
pub fn gcp_metric(triplets: &[GcpTriplet]) -> MetricReport {
    let mut samples = Vec::with_capacity(3 * triplets.len());
    for t in triplets {
        match t.observations {
            [Some(a), Some(b), Some(c)] => {
                samples.push((a - b).norm());
                samples.push((a - c).norm());
                samples.push((b - c).norm());
            }
            _ => log::warn!("GCP '{}' is not observed by all three stations; skipped", t.label),
        }
    }
    MetricReport::from_samples(MetricKind::Gcp, samples)
}

/// Absolute differences between apparent and premeasured inter-prism
/// distances, three per synchronized sample.
pub fn inter_prism_metric(
    synced: &SyncedTrajectories,
    t_12: &RigidTransform,
    t_13: &RigidTransform,
    delta: &InterPrismDistances,
) -> MetricReport {
    let residuals = apparent_distance_residuals(
        synced,
        (&t_12.rotation, &t_12.translation),
        (&t_13.rotation, &t_13.translation),
        delta,
    );
    MetricReport::from_samples(
        MetricKind::InterPrism,
        residuals.into_iter().map(f64::abs).collect(),
    )
}

/// Writes raw samples as `metric,index,value_m` CSV for plotting.
pub fn write_metric_samples<W: Write>(report: &MetricReport, mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "metric,index,value_m")?;
    for (i, v) in report.samples.iter().enumerate() {
        writeln!(sink, "{},{},{}", report.kind, i, crate::ingest::fmt_f64(*v))?;
    }
    Ok(())
}
