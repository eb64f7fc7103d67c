//! Turns raw per-station polar logs into synchronized Cartesian trajectories.
//!
//! The pipeline has four blocks, applied in order:
//!
//! 1. [`outlier_filter`] (optional): drops records whose range, elevation or
//!    azimuth rate exceeds its threshold, then converts to Cartesian.
//! 2. [`split_intervals`]: cuts each station's stream at gaps longer than
//!    `tau_s` and keeps the intersection of the three stations' runs.
//! 3. [`filter_intervals`] (optional): drops intervals shorter than `tau_l`.
//! 4. Interpolation ([`interpolate_linear`] or [`interpolate_gp`]) onto a
//!    uniform grid anchored at each interval start.

mod intervals;
mod interpolate;
mod outlier;

use std::ops::Range;

use nalgebra::Vector3;
use thiserror::Error;

use crate::ingest::MeasurementLog;
use crate::se3::{CartesianPoint, Frame, Se3Error};

pub use intervals::{filter_intervals, split_intervals, IntervalSupport};
pub use interpolate::{interpolate_gp, interpolate_linear, GpParams, MAX_CONDITION_ESTIMATE};
pub use outlier::{filter_outlier_records, outlier_filter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("station {station}: need at least {needed} records, found {found}")]
    TooFewRecords { station: u8, needed: usize, found: usize },
    #[error("station {0}: log unusable after outlier filtering")]
    UnusableLog(u8),
    #[error("expected logs for stations 1, 2 and 3 in order")]
    StationSet,
    #[error("the three stations have no common uninterrupted coverage")]
    NoCommonCoverage,
    #[error("every interval is shorter than tau_l = {0} s")]
    AllIntervalsFiltered(f64),
    #[error("query time {t} outside support [{start}, {end}]")]
    Extrapolation { t: f64, start: f64, end: f64 },
    #[error("kernel matrix ill-conditioned (estimate {0:.3e}); increase the GP noise sigma")]
    IllConditioned(f64),
    #[error(transparent)]
    Measurement(#[from] Se3Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpolationKind {
    Linear,
    GaussianProcess,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Range-rate threshold, m/s.
    pub tau_r: f64,
    /// Elevation-rate threshold, rad/s.
    pub tau_e: f64,
    /// Azimuth-rate threshold, rad/s.
    pub tau_a: f64,
    /// Largest gap inside an interval, s.
    pub tau_s: f64,
    /// Shortest interval kept by the interval filter, s.
    pub tau_l: f64,
    pub interpolation: InterpolationKind,
    pub gp: GpParams,
    /// Resampling grid rate, Hz.
    pub output_rate: f64,
    pub enable_outlier_filter: bool,
    pub enable_interval_filter: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau_r: 2.0,
            tau_e: 1f64.to_radians(),
            tau_a: 1f64.to_radians(),
            tau_s: 1.0,
            tau_l: 6.0,
            interpolation: InterpolationKind::Linear,
            gp: GpParams::default(),
            output_rate: 10.0,
            enable_outlier_filter: true,
            enable_interval_filter: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let checks = [
            ("tau_r", self.tau_r),
            ("tau_e", self.tau_e),
            ("tau_a", self.tau_a),
            ("tau_s", self.tau_s),
            ("tau_l", self.tau_l),
            ("output_rate", self.output_rate),
            ("gp.length_scale", self.gp.length_scale),
            ("gp.sigma", self.gp.sigma),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(PipelineError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gp.noise_sigma.is_finite() && self.gp.noise_sigma >= 0.0) {
            return Err(PipelineError::InvalidConfig("gp.noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// Time-ordered Cartesian positions in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frame: Frame,
    pub times: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Positions of the three stations' prisms on one shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncedTrajectories {
    pub times: Vec<f64>,
    /// `positions[i][j]` is station `i + 1`'s position at `times[j]`, in its own frame.
    pub positions: [Vec<Vector3<f64>>; 3],
    /// Index ranges of `times` belonging to each contiguous interval.
    pub segments: Vec<Range<usize>>,
    pub intervals: Vec<TimeInterval>,
}

impl SyncedTrajectories {
    /// Wraps already-aligned samples as a single contiguous segment.
    pub fn from_parts(times: Vec<f64>, positions: [Vec<Vector3<f64>>; 3]) -> Self {
        assert!(positions.iter().all(|p| p.len() == times.len()), "misaligned trajectories");
        let intervals = match (times.first(), times.last()) {
            (Some(&start), Some(&end)) => vec![TimeInterval { start, end }],
            _ => vec![],
        };
        Self {
            segments: vec![0..times.len()],
            times,
            positions,
            intervals,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn trajectory(&self, station: usize) -> Trajectory {
        Trajectory {
            frame: Frame::Station(station as u8 + 1),
            times: self.times.clone(),
            positions: self.positions[station].clone(),
        }
    }

    /// Samples at `indices` (ascending). Segment structure is not carried over.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let times = indices.iter().map(|&j| self.times[j]).collect();
        let pick = |s: usize| indices.iter().map(|&j| self.positions[s][j]).collect();
        Self::from_parts(times, [pick(0), pick(1), pick(2)])
    }
}

/// Bookkeeping from one pipeline run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineStats {
    pub raw_records: [usize; 3],
    pub after_outlier_filter: [usize; 3],
    pub intervals_found: usize,
    pub intervals_kept: usize,
    pub grid_points: usize,
}

/// Uniform grid at `rate` Hz anchored at `interval.start`.
pub fn interval_grid(interval: &TimeInterval, rate: f64) -> Vec<f64> {
    let steps = (interval.duration() * rate + 1e-9).floor() as usize;
    (0..=steps)
        .map(|k| (interval.start + k as f64 / rate).min(interval.end))
        .collect()
}

pub fn run_pipeline(logs: &[MeasurementLog; 3], cfg: &PipelineConfig) -> Result<SyncedTrajectories, PipelineError> {
    run_pipeline_with_stats(logs, cfg).map(|(s, _)| s)
}

pub fn run_pipeline_with_stats(
    logs: &[MeasurementLog; 3],
    cfg: &PipelineConfig,
) -> Result<(SyncedTrajectories, PipelineStats), PipelineError> {
    cfg.validate()?;
    if logs.iter().enumerate().any(|(i, l)| l.station_id as usize != i + 1) {
        return Err(PipelineError::StationSet);
    }
    let mut stats = PipelineStats::default();

    let mut points: [Vec<CartesianPoint>; 3] = Default::default();
    for (i, log) in logs.iter().enumerate() {
        stats.raw_records[i] = log.records.len();
        points[i] = if cfg.enable_outlier_filter {
            outlier_filter(log, cfg)?
        } else {
            log.records
                .iter()
                .map(crate::se3::polar_to_cartesian)
                .collect::<Result<_, _>>()?
        };
        stats.after_outlier_filter[i] = points[i].len();
    }

    let mut supports = split_intervals(&points, cfg.tau_s)?;
    stats.intervals_found = supports.len();
    if cfg.enable_interval_filter {
        let intervals: Vec<TimeInterval> = supports.iter().map(|s| s.interval).collect();
        let kept = filter_intervals(&intervals, cfg.tau_l)?;
        supports.retain(|s| kept.contains(&s.interval));
    }
    stats.intervals_kept = supports.len();

    let mut times = Vec::new();
    let mut positions: [Vec<Vector3<f64>>; 3] = Default::default();
    let mut segments = Vec::new();
    let mut intervals = Vec::new();
    for support in &supports {
        let grid = interval_grid(&support.interval, cfg.output_rate);
        let mut per_station = Vec::with_capacity(3);
        for pts in &support.points {
            let traj = match cfg.interpolation {
                InterpolationKind::Linear => interpolate_linear(pts, &grid)?,
                InterpolationKind::GaussianProcess => interpolate_gp(pts, &grid, &cfg.gp)?,
            };
            per_station.push(traj.positions);
        }
        let start = times.len();
        times.extend_from_slice(&grid);
        for (dst, src) in positions.iter_mut().zip(per_station) {
            dst.extend(src);
        }
        segments.push(start..times.len());
        intervals.push(support.interval);
    }
    stats.grid_points = times.len();
    log::debug!("pipeline: {stats:?}");
    Ok((
        SyncedTrajectories {
            times,
            positions,
            segments,
            intervals,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::PolarMeasurement;

    pub(crate) fn straight_log(station: u8, times: &[f64]) -> MeasurementLog {
        // prism moving at 0.5 m/s along +x, 60 m north of the station
        MeasurementLog {
            station_id: station,
            records: times
                .iter()
                .map(|&t| {
                    let p = Vector3::new(-10.0 + 0.5 * t, 60.0, 1.0);
                    let (azimuth, elevation, range) = crate::se3::cartesian_to_polar(&p);
                    PolarMeasurement { time: t, azimuth, elevation, range, station_id: station, prism_id: station }
                })
                .collect(),
        }
    }

    fn grid_times(start: f64, end: f64, dt: f64) -> Vec<f64> {
        let n = ((end - start) / dt).round() as usize;
        (0..=n).map(|k| start + k as f64 * dt).collect()
    }

    #[test]
    fn clean_logs_cover_full_overlap() {
        let t = grid_times(0.0, 40.0, 0.4);
        let logs = [straight_log(1, &t), straight_log(2, &t), straight_log(3, &t)];
        let (synced, stats) = run_pipeline_with_stats(&logs, &PipelineConfig::default()).unwrap();
        assert_eq!(synced.intervals, vec![TimeInterval { start: 0.0, end: 40.0 }]);
        assert_eq!(synced.len(), 401);
        assert_eq!(stats.after_outlier_filter, [101, 101, 101]);
        assert!((synced.times[400] - 40.0).abs() < 1e-12);
        // linear motion reconstructs exactly
        for (j, &t) in synced.times.iter().enumerate() {
            let expected = Vector3::new(-10.0 + 0.5 * t, 60.0, 1.0);
            assert!((synced.positions[1][j] - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn output_timestamps_identical_across_stations() {
        let t1 = grid_times(0.0, 30.0, 0.4);
        let t2: Vec<f64> = grid_times(0.13, 30.13, 0.4);
        let t3: Vec<f64> = grid_times(0.29, 30.29, 0.4);
        let logs = [straight_log(1, &t1), straight_log(2, &t2), straight_log(3, &t3)];
        let synced = run_pipeline(&logs, &PipelineConfig::default()).unwrap();
        assert_eq!(synced.intervals[0].start, 0.29);
        assert_eq!(synced.intervals[0].end, 30.0);
        assert!(synced.positions.iter().all(|p| p.len() == synced.times.len()));
        assert!(synced.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn wrong_station_order_rejected() {
        let t = grid_times(0.0, 10.0, 0.4);
        let logs = [straight_log(2, &t), straight_log(1, &t), straight_log(3, &t)];
        assert_eq!(run_pipeline(&logs, &PipelineConfig::default()), Err(PipelineError::StationSet));
    }

    #[test]
    fn config_validation() {
        let cfg = PipelineConfig { tau_s: 0.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(PipelineError::InvalidConfig(_))));
        let cfg = PipelineConfig { output_rate: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn grid_anchored_at_interval_start() {
        let g = interval_grid(&TimeInterval { start: 1.25, end: 2.0 }, 10.0);
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], 1.25);
        assert!((g[7] - 1.95).abs() < 1e-12);
    }
}
