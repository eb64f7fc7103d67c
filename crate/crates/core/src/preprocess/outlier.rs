use std::f64::consts::PI;

use crate::ingest::MeasurementLog;
use crate::se3::{polar_to_cartesian, CartesianPoint};

use super::{PipelineConfig, PipelineError};

fn wrapped_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

/// Rate-threshold outlier rejection on the raw polar records.
///
/// Each record is compared against the last record that was kept (backward
/// difference on raw timestamps). If any of `|dr/dt|`, `|del/dt|` or
/// `|daz/dt|` (azimuth difference wrapped to `(-pi, pi]`) exceeds its
/// threshold, the record is dropped. The first record is always kept.
pub fn filter_outlier_records(log: &MeasurementLog, cfg: &PipelineConfig) -> Result<MeasurementLog, PipelineError> {
    if log.records.len() < 2 {
        return Err(PipelineError::TooFewRecords {
            station: log.station_id,
            needed: 2,
            found: log.records.len(),
        });
    }
    let mut kept = Vec::with_capacity(log.records.len());
    kept.push(log.records[0]);
    for m in &log.records[1..] {
        let last = kept.last().expect("first record always kept");
        let dt = m.time - last.time;
        if dt <= 0.0 {
            continue;
        }
        let range_rate = (m.range - last.range).abs() / dt;
        let elevation_rate = (m.elevation - last.elevation).abs() / dt;
        let azimuth_rate = wrapped_diff(m.azimuth, last.azimuth).abs() / dt;
        if range_rate <= cfg.tau_r && elevation_rate <= cfg.tau_e && azimuth_rate <= cfg.tau_a {
            kept.push(*m);
        }
    }
    if kept.len() < 2 {
        return Err(PipelineError::UnusableLog(log.station_id));
    }
    Ok(MeasurementLog {
        station_id: log.station_id,
        records: kept,
    })
}

/// Block 1: drops rate outliers and converts the survivors to Cartesian.
pub fn outlier_filter(log: &MeasurementLog, cfg: &PipelineConfig) -> Result<Vec<CartesianPoint>, PipelineError> {
    let kept = filter_outlier_records(log, cfg)?;
    Ok(kept
        .records
        .iter()
        .map(polar_to_cartesian)
        .collect::<Result<_, _>>()?)
}
