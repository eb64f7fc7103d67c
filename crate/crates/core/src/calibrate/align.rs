//! Closed-form point-to-point alignment and the GCP-based methods.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::ingest::GcpSet;
use crate::metrics::GcpTriplet;
use crate::se3::{log_map, rot_z, Frame, RigidTransform, Twist};

use super::{CalibrateError, CalibrationResult, Method};

/// Smallest horizontal separation accepted by the two-point resection, meters.
pub const MIN_RESECTION_BASELINE: f64 = 0.01;

/// Least-squares rigid transform `T` minimizing `sum ||reference_k - T measured_k||^2`.
///
/// With `yaw_only` the rotation is restricted to the vertical axis: the yaw
/// comes from a 2-D Procrustes fit of the horizontal components and the
/// vertical offset from the mean height difference. Otherwise the full
/// rotation comes from an SVD of the cross-covariance, with the sign of the
/// last singular direction corrected to keep `det R = +1`.
pub fn point_to_point_align(
    reference: &[Vector3<f64>],
    measured: &[Vector3<f64>],
    yaw_only: bool,
    from: Frame,
    to: Frame,
) -> Result<RigidTransform, CalibrateError> {
    let needed = if yaw_only { 2 } else { 3 };
    if reference.len() != measured.len() {
        return Err(CalibrateError::LengthMismatch(reference.len(), measured.len()));
    }
    if reference.len() < needed {
        return Err(CalibrateError::TooFewPoints {
            needed,
            found: reference.len(),
        });
    }
    if reference.iter().chain(measured).any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(CalibrateError::NonFinite);
    }
    let n = reference.len() as f64;
    let c_ref = reference.iter().sum::<Vector3<f64>>() / n;
    let c_mea = measured.iter().sum::<Vector3<f64>>() / n;

    let rotation = if yaw_only {
        let mut h = Matrix2::zeros();
        let mut spread: f64 = 0.0;
        for (r, m) in reference.iter().zip(measured) {
            let a = Vector2::new(m.x - c_mea.x, m.y - c_mea.y);
            let b = Vector2::new(r.x - c_ref.x, r.y - c_ref.y);
            h += a * b.transpose();
            spread = spread.max(a.norm()).max(b.norm());
        }
        // maximize trace(R2 H): atan2(sum a x b, sum a . b)
        let sin_part = h[(0, 1)] - h[(1, 0)];
        let cos_part = h[(0, 0)] + h[(1, 1)];
        if spread < 1e-9 || sin_part.hypot(cos_part) < 1e-12 * spread.max(1.0) {
            return Err(CalibrateError::Degenerate(
                "points coincide in the horizontal plane".into(),
            ));
        }
        rot_z(sin_part.atan2(cos_part))
    } else {
        let mut h = Matrix3::zeros();
        for (r, m) in reference.iter().zip(measured) {
            h += (m - c_mea) * (r - c_ref).transpose();
        }
        let svd = h.svd(true, true);
        let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        let mut sv = svd.singular_values;
        // order is not guaranteed: sort descending to inspect the rank
        let mut s = [sv[0], sv[1], sv[2]];
        s.sort_by(|a, b| b.total_cmp(a));
        if s[0] <= 0.0 || s[1] <= 1e-9 * s[0] {
            return Err(CalibrateError::Degenerate("points are collinear".into()));
        }
        let v = v_t.transpose();
        let d = (v * u.transpose()).determinant();
        sv.fill(1.0);
        let mut correction = Matrix3::identity();
        if d < 0.0 {
            // flip the direction associated with the smallest singular value
            let imin = (0..3)
                .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
                .unwrap();
            correction[(imin, imin)] = -1.0;
        }
        v * correction * u.transpose()
    };
    let translation = if yaw_only {
        let horiz = c_ref - rotation * c_mea;
        Vector3::new(horiz.x, horiz.y, c_ref.z - c_mea.z)
    } else {
        c_ref - rotation * c_mea
    };
    Ok(RigidTransform {
        rotation,
        translation,
        from,
        to,
    })
}

/// Correspondence distances `||reference_k - T measured_k||`.
pub fn alignment_residuals(t: &RigidTransform, reference: &[Vector3<f64>], measured: &[Vector3<f64>]) -> Vec<f64> {
    reference.iter().zip(measured).map(|(r, m)| (r - t.apply(m)).norm()).collect()
}

/// 4-DOF station localization from two points of known relative position.
pub fn two_point_resection(
    known: &GcpSet,
    measured: &GcpSet,
) -> Result<RigidTransform, CalibrateError> {
    let (reference, observed, _) = common_points(known, measured);
    if reference.len() != 2 {
        return Err(CalibrateError::TooFewPoints {
            needed: 2,
            found: reference.len(),
        });
    }
    let baseline = |p: &[Vector3<f64>]| (p[0] - p[1]).xy().norm();
    if baseline(&reference) < MIN_RESECTION_BASELINE || baseline(&observed) < MIN_RESECTION_BASELINE {
        return Err(CalibrateError::Degenerate(format!(
            "GCPs closer than {MIN_RESECTION_BASELINE} m horizontally"
        )));
    }
    point_to_point_align(&reference, &observed, true, measured.frame, known.frame)
}

/// Points of `measured` whose labels also appear in `reference`, in
/// `reference` order, with their labels.
pub fn common_points(reference: &GcpSet, measured: &GcpSet) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, Vec<String>) {
    let mut r = Vec::new();
    let mut m = Vec::new();
    let mut labels = Vec::new();
    for p in &reference.points {
        if let Some(q) = measured.get(&p.label) {
            r.push(p.position);
            m.push(*q);
            labels.push(p.label.clone());
        }
    }
    (r, m, labels)
}

fn relative_pair(
    w1: &RigidTransform,
    wi: &RigidTransform,
) -> Result<RigidTransform, CalibrateError> {
    Ok(w1.inverse().compose(wi)?)
}

/// Twist of the yaw-only part; full-SE(3) estimates keep their matrix in the
/// result but are summarized by heading and translation.
fn yaw_twist(t: &RigidTransform) -> Result<Twist, CalibrateError> {
    let projected = RigidTransform::from_yaw(t.yaw(), t.translation, t.from, t.to);
    Ok(log_map(&projected)?)
}

fn result_from_transforms(
    method: Method,
    t_12: RigidTransform,
    t_13: RigidTransform,
    residuals: Vec<f64>,
) -> Result<CalibrationResult, CalibrateError> {
    let cost = if residuals.is_empty() {
        0.0
    } else {
        residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64
    };
    Ok(CalibrationResult {
        method,
        xi_12: yaw_twist(&t_12)?,
        xi_13: yaw_twist(&t_13)?,
        t_12,
        t_13,
        cost,
        residuals,
        iterations: 0,
        converged: true,
        validation: None,
        cost_history: vec![cost],
    })
}

/// Two-point resection of every station against two world GCPs.
pub fn two_point_calibrate(world: &GcpSet, stations: &[GcpSet; 3]) -> Result<CalibrationResult, CalibrateError> {
    let mut poses = Vec::with_capacity(3);
    for s in stations {
        let mut pair = world.clone();
        pair.points.retain(|p| s.get(&p.label).is_some());
        pair.points.truncate(2);
        poses.push(two_point_resection(&pair, s)?);
    }
    let t_12 = relative_pair(&poses[0], &poses[1])?;
    let t_13 = relative_pair(&poses[0], &poses[2])?;
    let residuals = gcp_pair_residuals(stations, &t_12, &t_13);
    result_from_transforms(Method::TwoPoint, t_12, t_13, residuals)
}

/// Residuals of stations 2 and 3 against station 1 over common labels.
fn gcp_pair_residuals(stations: &[GcpSet; 3], t_12: &RigidTransform, t_13: &RigidTransform) -> Vec<f64> {
    let mut out = Vec::new();
    for (set, t) in [(&stations[1], t_12), (&stations[2], t_13)] {
        let (r, m, _) = common_points(&stations[0], set);
        out.extend(alignment_residuals(t, &r, &m));
    }
    out
}

/// Static GCP calibration.
///
/// With a world set each station is aligned to the world and the relative
/// transforms follow by composition; without one, stations 2 and 3 are
/// aligned directly onto station 1.
pub fn static_gcp_calibrate(
    stations: &[GcpSet; 3],
    world: Option<&GcpSet>,
    yaw_only: bool,
) -> Result<CalibrationResult, CalibrateError> {
    let align = |reference: &GcpSet, measured: &GcpSet| -> Result<RigidTransform, CalibrateError> {
        let (r, m, _) = common_points(reference, measured);
        if r.len() < 3 {
            return Err(CalibrateError::TooFewPoints { needed: 3, found: r.len() });
        }
        point_to_point_align(&r, &m, yaw_only, measured.frame, reference.frame)
    };
    let (t_12, t_13) = match world {
        Some(w) => {
            let poses = [align(w, &stations[0])?, align(w, &stations[1])?, align(w, &stations[2])?];
            (relative_pair(&poses[0], &poses[1])?, relative_pair(&poses[0], &poses[2])?)
        }
        None => (align(&stations[0], &stations[1])?, align(&stations[0], &stations[2])?),
    };
    let residuals = gcp_pair_residuals(stations, &t_12, &t_13);
    result_from_transforms(Method::StaticGcp, t_12, t_13, residuals)
}

/// Dynamic GCP calibration: all three stations tracked the same prism, so
/// synchronized samples are direct correspondences.
pub fn dynamic_gcp_calibrate(
    synced: &crate::preprocess::SyncedTrajectories,
    yaw_only: bool,
) -> Result<CalibrationResult, CalibrateError> {
    const MIN_SAMPLES: usize = 10;
    if synced.len() < MIN_SAMPLES {
        return Err(CalibrateError::TooFewPoints {
            needed: MIN_SAMPLES,
            found: synced.len(),
        });
    }
    let [q1, q2, q3] = &synced.positions;
    let t_12 = point_to_point_align(q1, q2, yaw_only, Frame::Station(2), Frame::Station(1))?;
    let t_13 = point_to_point_align(q1, q3, yaw_only, Frame::Station(3), Frame::Station(1))?;
    let mut residuals = alignment_residuals(&t_12, q1, q2);
    residuals.extend(alignment_residuals(&t_13, q1, q3));
    result_from_transforms(Method::DynamicGcp, t_12, t_13, residuals)
}

/// GCP observations mapped into frame 1 with the given transforms, grouped by label.
pub fn gcp_triplets(stations: &[GcpSet; 3], t_12: &RigidTransform, t_13: &RigidTransform) -> Vec<GcpTriplet> {
    let mut labels: Vec<&str> = Vec::new();
    for s in stations {
        for p in &s.points {
            if !labels.contains(&p.label.as_str()) {
                labels.push(&p.label);
            }
        }
    }
    labels
        .into_iter()
        .map(|label| GcpTriplet {
            label: label.to_string(),
            observations: [
                stations[0].get(label).copied(),
                stations[1].get(label).map(|p| t_12.apply(p)),
                stations[2].get(label).map(|p| t_13.apply(p)),
            ],
        })
        .collect()
}
