//! Velocity-threshold prior search and convergence validation for the
//! inter-prism method.

use nalgebra::{Matrix3, Matrix3x4, SymmetricEigen, Vector3};

use crate::ingest::InterPrismDistances;
use crate::metrics::inter_prism_metric;
use crate::preprocess::{SyncedTrajectories, Trajectory};
use crate::se3::{exp_map, log_map, transform_delta, Frame, RigidTransform, Twist};

use super::align::point_to_point_align;
use super::inter_prism::{inter_prism_calibrate, normal_equations, LmOptions};
use super::{CalibrateError, CalibrationResult, PriorSearchDiagnostics, SweepEntry, Validation};

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSearchConfig {
    /// First speed threshold, m/s.
    pub tau_v_start: f64,
    /// Threshold increment, m/s.
    pub tau_v_step: f64,
    /// Last threshold tried, m/s.
    pub robot_speed_max: f64,
    /// Smallest subset worth a solver run.
    pub min_points: usize,
    /// Two solutions are similar when both transforms differ by less than this, m.
    pub similar_translation: f64,
    /// Rotation counterpart of `similar_translation`, rad.
    pub similar_rotation: f64,
    /// Similar solutions required for a validated result.
    pub min_similar: usize,
    /// Multiple of the predicted standard deviation compared against the
    /// similarity window; a wider spread marks the problem as degenerate.
    pub uncertainty_sigmas: f64,
    /// Lower bound on the residual standard deviation used for the
    /// predicted uncertainty, m.
    pub noise_floor: f64,
    /// Smallest arc of body headings, rad, for a well-excited data set.
    pub min_heading_coverage: f64,
    /// Also try the vertically mirrored step-1 solution.
    pub mirror_check: bool,
    pub lm: LmOptions,
}

impl Default for PriorSearchConfig {
    fn default() -> Self {
        Self {
            tau_v_start: 0.01,
            tau_v_step: 0.1,
            robot_speed_max: 2.0,
            min_points: 10,
            similar_translation: 0.05,
            similar_rotation: 0.5f64.to_radians(),
            min_similar: 3,
            uncertainty_sigmas: 3.0,
            noise_floor: 0.002,
            min_heading_coverage: std::f64::consts::PI,
            mirror_check: true,
            lm: LmOptions::default(),
        }
    }
}

impl PriorSearchConfig {
    pub fn validate(&self) -> Result<(), CalibrateError> {
        let positive = [
            ("tau_v_start", self.tau_v_start),
            ("tau_v_step", self.tau_v_step),
            ("robot_speed_max", self.robot_speed_max),
            ("similar_translation", self.similar_translation),
            ("similar_rotation", self.similar_rotation),
            ("uncertainty_sigmas", self.uncertainty_sigmas),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CalibrateError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.min_heading_coverage >= 0.0 && self.min_heading_coverage <= 2.0 * std::f64::consts::PI) {
            return Err(CalibrateError::InvalidConfig("min_heading_coverage must lie in [0, 2 pi]".into()));
        }
        if !(self.noise_floor.is_finite() && self.noise_floor >= 0.0) {
            return Err(CalibrateError::InvalidConfig("noise_floor must be non-negative".into()));
        }
        if self.min_points < super::MIN_INTER_PRISM_SAMPLES {
            return Err(CalibrateError::InvalidConfig(format!(
                "min_points must be at least {}",
                super::MIN_INTER_PRISM_SAMPLES
            )));
        }
        Ok(())
    }

    /// The threshold sequence `start, start + step, ...` up to `robot_speed_max`.
    pub fn thresholds(&self) -> Vec<f64> {
        let count = ((self.robot_speed_max - self.tau_v_start) / self.tau_v_step + 1e-9).floor();
        (0..=count.max(0.0) as usize)
            .map(|k| self.tau_v_start + k as f64 * self.tau_v_step)
            .collect()
    }
}

/// Per-point speed by central differences, one-sided at both ends.
pub fn point_speeds(traj: &Trajectory) -> Vec<f64> {
    speeds_of(&traj.times, &traj.positions)
}

fn speeds_of(times: &[f64], positions: &[Vector3<f64>]) -> Vec<f64> {
    let n = times.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|j| {
            let (a, b) = (j.saturating_sub(1), (j + 1).min(n - 1));
            (positions[b] - positions[a]).norm() / (times[b] - times[a])
        })
        .collect()
}

/// Speed of every synchronized sample: the largest of the three prisms'
/// speeds, differenced within each contiguous segment.
pub fn synced_speeds(synced: &SyncedTrajectories) -> Vec<f64> {
    let mut out = vec![0.0f64; synced.len()];
    for seg in &synced.segments {
        let times = &synced.times[seg.clone()];
        for positions in &synced.positions {
            for (k, v) in speeds_of(times, &positions[seg.clone()]).into_iter().enumerate() {
                out[seg.start + k] = out[seg.start + k].max(v);
            }
        }
    }
    out
}

fn to_pair(r: &CalibrationResult) -> (Twist, Twist) {
    (r.xi_12, r.xi_13)
}

fn metric_median(synced: &SyncedTrajectories, r: &CalibrationResult, delta: &InterPrismDistances) -> f64 {
    inter_prism_metric(synced, &r.t_12, &r.t_13, delta).median
}

/// Coarse prior treating the three prisms as one point: each station's
/// synchronized samples are aligned onto station 1's.
fn colocated_prior(synced: &SyncedTrajectories) -> Result<(Twist, Twist), CalibrateError> {
    let [q1, q2, q3] = &synced.positions;
    let t_12 = point_to_point_align(q1, q2, true, Frame::Station(2), Frame::Station(1))?;
    let t_13 = point_to_point_align(q1, q3, true, Frame::Station(3), Frame::Station(1))?;
    Ok((log_map(&t_12)?, log_map(&t_13)?))
}

/// Reflects both solutions through the mean vertical offset between the
/// prisms, the one symmetry the distance cost cannot resolve on level motion.
fn mirrored(synced: &SyncedTrajectories, r: &CalibrationResult) -> (Twist, Twist) {
    let n = synced.len() as f64;
    let [q1, q2, q3] = &synced.positions;
    let mean_dz = |t: &RigidTransform, q: &[Vector3<f64>]| {
        q1.iter().zip(q).map(|(a, b)| a.z - t.apply(b).z).sum::<f64>() / n
    };
    let mut xi_12 = r.xi_12;
    let mut xi_13 = r.xi_13;
    xi_12.rho.z += 2.0 * mean_dz(&r.t_12, q2);
    xi_13.rho.z += 2.0 * mean_dz(&r.t_13, q3);
    (xi_12, xi_13)
}

fn argmin_metric(entries: &[SweepEntry], step: u8) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate().filter(|(_, e)| e.step == step) {
        // strict comparison keeps the lower threshold on ties
        if best.is_none_or(|b| e.metric_median < entries[b].metric_median) {
            best = Some(i);
        }
    }
    best
}

fn similar(a: (&Twist, &Twist), b: (&Twist, &Twist), cfg: &PriorSearchConfig) -> Result<bool, CalibrateError> {
    for (x, y, from) in [(a.0, b.0, Frame::Station(2)), (a.1, b.1, Frame::Station(3))] {
        let (dt, dr) = transform_delta(&exp_map(x, from, Frame::Station(1)), &exp_map(y, from, Frame::Station(1)))?;
        if dt >= cfg.similar_translation || dr >= cfg.similar_rotation {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Two-step velocity sweep. Returns the prior for the final solve.
///
/// Step 1 seeds each threshold with the previous threshold's solution,
/// starting from the co-located alignment. Step 2 seeds every threshold with
/// the step-1 best. Entries are ranked by the inter-prism metric median over
/// the full data set.
pub fn search_prior(
    synced: &SyncedTrajectories,
    delta: &InterPrismDistances,
    cfg: &PriorSearchConfig,
) -> Result<((Twist, Twist), PriorSearchDiagnostics), CalibrateError> {
    cfg.validate()?;
    if synced.len() < cfg.min_points {
        return Err(CalibrateError::TooFewPoints {
            needed: cfg.min_points,
            found: synced.len(),
        });
    }
    let speeds = synced_speeds(synced);
    let subsets: Vec<(f64, Vec<usize>)> = cfg
        .thresholds()
        .into_iter()
        .map(|tau| (tau, (0..synced.len()).filter(|&j| speeds[j] <= tau).collect::<Vec<_>>()))
        .skip_while(|(_, idx)| idx.len() < cfg.min_points)
        .collect();
    let Some(start_tau_v) = subsets.first().map(|(tau, _)| *tau) else {
        return Err(CalibrateError::Degenerate(format!(
            "fewer than {} samples below {} m/s",
            cfg.min_points, cfg.robot_speed_max
        )));
    };

    let run = |entries: &mut Vec<SweepEntry>, step: u8, tau: f64, idx: &[usize], seed: (Twist, Twist)| {
        let r = inter_prism_calibrate(&synced.subset(idx), delta, seed, &cfg.lm)?;
        entries.push(SweepEntry {
            step,
            tau_v: tau,
            subset_size: idx.len(),
            cost: r.cost,
            metric_median: metric_median(synced, &r, delta),
            converged: r.converged,
            iterations: r.iterations,
            xi_12: r.xi_12,
            xi_13: r.xi_13,
        });
        Ok::<_, CalibrateError>(to_pair(&r))
    };

    let mut entries = Vec::new();
    let mut seed = match colocated_prior(synced) {
        Err(CalibrateError::Degenerate(_)) => (Twist::zero(), Twist::zero()),
        other => other?,
    };
    for (tau, idx) in &subsets {
        seed = run(&mut entries, 1, *tau, idx, seed)?;
    }
    let best_step1 = argmin_metric(&entries, 1);
    let best1 = &entries[best_step1.expect("step 1 ran at least once")];
    let mut seed2 = (best1.xi_12, best1.xi_13);

    let mut mirror_replaced = false;
    if cfg.mirror_check {
        let direct = inter_prism_calibrate(synced, delta, seed2, &cfg.lm)?;
        let flipped = inter_prism_calibrate(synced, delta, mirrored(synced, &direct), &cfg.lm)?;
        if metric_median(synced, &flipped, delta) < metric_median(synced, &direct, delta) {
            seed2 = to_pair(&flipped);
            mirror_replaced = true;
        }
    }

    for (tau, idx) in &subsets {
        run(&mut entries, 2, *tau, idx, seed2)?;
    }
    let best_step2 = argmin_metric(&entries, 2);
    let b = best_step2.expect("step 2 ran at least once");

    // one representative per distinct subset
    let mut representatives: Vec<usize> = Vec::new();
    for (i, e) in entries.iter().enumerate().filter(|(_, e)| e.step == 2) {
        if !representatives.iter().any(|&r| entries[r].subset_size == e.subset_size) {
            representatives.push(i);
        }
    }
    let effective_entries = representatives.len();
    let mut similar_convergence_count = 0;
    for &i in &representatives {
        if entries[i].subset_size == entries[b].subset_size {
            continue;
        }
        if similar((&entries[i].xi_12, &entries[i].xi_13), (&entries[b].xi_12, &entries[b].xi_13), cfg)? {
            similar_convergence_count += 1;
        }
    }

    let prior = (entries[b].xi_12, entries[b].xi_13);
    Ok((
        prior,
        PriorSearchDiagnostics {
            entries,
            best_step1,
            best_step2,
            similar_convergence_count,
            start_tau_v,
            effective_entries,
            insufficient_diversity: effective_entries < 2,
            mirror_replaced,
            predicted_sd: (f64::NAN, f64::NAN),
            heading_coverage: f64::NAN,
        },
    ))
}

fn dyaw(phi: f64) -> Matrix3<f64> {
    let (s, c) = phi.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Predicted standard deviations `(translation m, yaw rad)` of the estimate,
/// from the Gauss-Newton covariance in translation/yaw coordinates. The
/// residual scale is bounded below by `noise_floor`. Returns infinities when
/// the normal matrix is numerically singular.
pub fn predicted_uncertainty(
    synced: &SyncedTrajectories,
    result: &CalibrationResult,
    delta: &InterPrismDistances,
    noise_floor: f64,
) -> (f64, f64) {
    let m = 3 * synced.len();
    if m <= 8 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let (r12, r13) = (dyaw(result.t_12.yaw()), dyaw(result.t_13.yaw()));
    let deriv = |k: usize, q: &Vector3<f64>| {
        let rq = if k == 0 { r12 * q } else { r13 * q };
        let mut d = Matrix3x4::zeros();
        d.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
        d.set_column(3, &rq);
        d
    };
    let (sum_sq, jtj, _) = normal_equations(
        synced,
        (&result.t_12.rotation, &result.t_12.translation),
        (&result.t_13.rotation, &result.t_13.translation),
        delta,
        deriv,
    );
    let variance = (sum_sq / (m - 8) as f64).max(noise_floor * noise_floor);
    let eig = SymmetricEigen::new(jtj);
    let max_ev = eig.eigenvalues.max();
    if !(max_ev > 0.0) || eig.eigenvalues.min() <= 1e-12 * max_ev {
        return (f64::INFINITY, f64::INFINITY);
    }
    let inv = eig.eigenvectors
        * nalgebra::SMatrix::<f64, 8, 8>::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v))
        * eig.eigenvectors.transpose();
    let cov = inv * variance;
    let block_sd = |o: usize| {
        let b: Matrix3<f64> = cov.fixed_view::<3, 3>(o, o).into();
        SymmetricEigen::new(b).eigenvalues.max().max(0.0).sqrt()
    };
    (
        block_sd(0).max(block_sd(4)),
        cov[(3, 3)].max(cov[(7, 7)]).max(0.0).sqrt(),
    )
}

/// Arc of the circle covered by the horizontal direction from prism 2 to
/// prism 1 (a fixed offset from the body heading), expressed in frame 1
/// with `t_12`: the full turn minus the largest empty gap.
pub fn heading_coverage(synced: &SyncedTrajectories, t_12: &RigidTransform) -> f64 {
    let [q1, q2, _] = &synced.positions;
    let mut angles: Vec<f64> = q1
        .iter()
        .zip(q2)
        .filter_map(|(a, b)| {
            let d = a - t_12.apply(b);
            (d.xy().norm() > 1e-3).then(|| d.y.atan2(d.x))
        })
        .collect();
    if angles.is_empty() {
        return 0.0;
    }
    angles.sort_by(f64::total_cmp);
    let wrap_gap = angles[0] + 2.0 * std::f64::consts::PI - angles[angles.len() - 1];
    let max_gap = angles.windows(2).map(|w| w[1] - w[0]).fold(wrap_gap, f64::max);
    2.0 * std::f64::consts::PI - max_gap
}

/// Prior search followed by the final solve on all samples, with the
/// validation verdict attached.
///
/// The result is degenerate when the sweep saw fewer than two distinct
/// subsets, when the body headings span less than `min_heading_coverage`, or
/// when the predicted uncertainty is wider than the similarity window;
/// otherwise it is validated when enough other sweep entries agree
/// with the best one.
pub fn dynamic_inter_prism_calibrate(
    synced: &SyncedTrajectories,
    delta: &InterPrismDistances,
    cfg: &PriorSearchConfig,
) -> Result<(CalibrationResult, PriorSearchDiagnostics), CalibrateError> {
    let (prior, mut diag) = search_prior(synced, delta, cfg)?;
    let mut result = inter_prism_calibrate(synced, delta, prior, &cfg.lm)?;
    diag.predicted_sd = predicted_uncertainty(synced, &result, delta, cfg.noise_floor);
    let (sd_t, sd_r) = diag.predicted_sd;
    let too_uncertain = cfg.uncertainty_sigmas * sd_t > cfg.similar_translation
        || cfg.uncertainty_sigmas * sd_r > cfg.similar_rotation;
    diag.heading_coverage = heading_coverage(synced, &result.t_12);
    let poorly_excited = diag.heading_coverage < cfg.min_heading_coverage;
    result.validation = Some(if diag.insufficient_diversity || poorly_excited || too_uncertain {
        Validation::Degenerate
    } else if diag.similar_convergence_count >= cfg.min_similar {
        Validation::Validated
    } else {
        Validation::Unvalidated
    });
    Ok((result, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::inter_prism::tests::{default_poses, scene};
    use crate::preprocess::TimeInterval;

    fn line_traj(times: Vec<f64>, f: impl Fn(f64) -> Vector3<f64>) -> Trajectory {
        Trajectory {
            frame: Frame::Station(1),
            positions: times.iter().map(|&t| f(t)).collect(),
            times,
        }
    }

    #[test]
    fn static_trajectory_has_zero_speed() {
        let traj = line_traj((0..20).map(|k| k as f64 * 0.1).collect(), |_| Vector3::new(1.0, 2.0, 3.0));
        assert!(point_speeds(&traj).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_velocity_line() {
        let traj = line_traj((0..50).map(|k| k as f64 * 0.4).collect(), |t| Vector3::new(0.6 * t, 0.8 * t, 0.0));
        assert!(point_speeds(&traj).iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn sinusoid_speed_is_second_order() {
        // x = sin(t): central difference error is |sin(h)/h - 1| |cos t| <= h^2/6
        let h = 0.05;
        let times: Vec<f64> = (0..200).map(|k| k as f64 * h).collect();
        let traj = line_traj(times.clone(), |t| Vector3::new(t.sin(), 0.0, 0.0));
        let v = point_speeds(&traj);
        for j in 1..times.len() - 1 {
            assert!((v[j] - times[j].cos().abs()).abs() <= h * h / 6.0 + 1e-12);
        }
    }

    #[test]
    fn speeds_do_not_cross_segments() {
        let times = vec![0.0, 0.1, 0.2, 10.0, 10.1, 10.2];
        let p: Vec<Vector3<f64>> = [0.0, 0.1, 0.2, 50.0, 50.0, 50.0].iter().map(|&x| Vector3::new(x, 0.0, 0.0)).collect();
        let mut s = SyncedTrajectories::from_parts(times, [p.clone(), p.clone(), p]);
        s.segments = vec![0..3, 3..6];
        s.intervals = vec![TimeInterval { start: 0.0, end: 0.2 }, TimeInterval { start: 10.0, end: 10.2 }];
        let v = synced_speeds(&s);
        assert!(v[..3].iter().all(|&x| (x - 1.0).abs() < 1e-9));
        assert!(v[3..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn heading_coverage_of_turns() {
        let ring = |arc: f64| {
            let n = 200;
            let mut p: [Vec<Vector3<f64>>; 3] = Default::default();
            for k in 0..n {
                let h = arc * k as f64 / (n - 1) as f64;
                p[0].push(Vector3::new(h.cos(), h.sin(), 0.0));
                p[1].push(Vector3::zeros());
                p[2].push(Vector3::zeros());
            }
            SyncedTrajectories::from_parts((0..n).map(|k| k as f64).collect(), p)
        };
        let id = RigidTransform::identity(Frame::Station(2), Frame::Station(1));
        assert!(heading_coverage(&ring(0.0), &id).abs() < 1e-12);
        assert!((heading_coverage(&ring(1.0), &id) - 1.0).abs() < 1e-12);
        let full = heading_coverage(&ring(2.0 * std::f64::consts::PI * 0.999), &id);
        assert!(full > 6.2);
    }

    #[test]
    fn thresholds_follow_step() {
        let cfg = PriorSearchConfig { robot_speed_max: 0.5, ..Default::default() };
        let t = cfg.thresholds();
        assert_eq!(t.len(), 5);
        assert!((t[4] - 0.41).abs() < 1e-12);
        assert!(t.windows(2).all(|w| (w[1] - w[0] - 0.1).abs() < 1e-12));
    }

    #[test]
    fn figure_eight_validates_near_truth() {
        let s = scene(600, default_poses(), 0.002, 21);
        let (r, diag) = dynamic_inter_prism_calibrate(&s.synced, &s.delta, &PriorSearchConfig::default()).unwrap();
        assert_eq!(r.validation, Some(Validation::Validated), "{diag:?}");
        for (t, xi) in [(&r.t_12, &s.xi_12), (&r.t_13, &s.xi_13)] {
            let (dt, dr) = transform_delta(t, &exp_map(xi, t.from, t.to)).unwrap();
            assert!(dt < 0.02 && dr < 0.2f64.to_radians(), "{dt} {dr}");
        }
        assert!(diag.entries.windows(2).all(|w| w[0].step != w[1].step || w[1].tau_v > w[0].tau_v));
    }

    #[test]
    fn static_scene_lacks_diversity() {
        let mut s = scene(100, default_poses(), 0.0, 0);
        for q in s.synced.positions.iter_mut() {
            let first = q[0];
            q.iter_mut().for_each(|p| *p = first);
        }
        let (r, diag) = dynamic_inter_prism_calibrate(&s.synced, &s.delta, &PriorSearchConfig::default()).unwrap();
        assert_eq!(diag.effective_entries, 1);
        assert!(diag.insufficient_diversity);
        assert_eq!(r.validation, Some(Validation::Degenerate));
    }
}
