use nalgebra::{DMatrix, DVector, Vector3};

use crate::se3::{CartesianPoint, Frame};

use super::{PipelineError, Trajectory};

/// Kernel matrices whose condition estimate exceeds this are rejected.
pub const MAX_CONDITION_ESTIMATE: f64 = 1e12;

/// Query times may overshoot the support by this much (grid rounding).
const TIME_SLACK: f64 = 1e-9;

/// Hyperparameters of the squared-exponential kernel
/// `k(t, t') = sigma^2 exp(-(t - t')^2 / (2 l^2))` with `noise_sigma^2` on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpParams {
    /// Seconds.
    pub length_scale: f64,
    /// Meters.
    pub sigma: f64,
    /// Meters.
    pub noise_sigma: f64,
}

impl Default for GpParams {
    fn default() -> Self {
        Self {
            length_scale: 1.0,
            sigma: 1.0,
            noise_sigma: 0.002,
        }
    }
}

fn frame_of(points: &[CartesianPoint]) -> Frame {
    points.first().map(|p| p.frame).unwrap_or(Frame::World)
}

fn check_span(points: &[CartesianPoint], query_times: &[f64]) -> Result<(), PipelineError> {
    let start = points.first().map(|p| p.time).unwrap_or(f64::NAN);
    let end = points.last().map(|p| p.time).unwrap_or(f64::NAN);
    for &t in query_times {
        if !(t >= start - TIME_SLACK && t <= end + TIME_SLACK) {
            return Err(PipelineError::Extrapolation { t, start, end });
        }
    }
    Ok(())
}

/// Per-axis piecewise-linear interpolation of time-sorted `points`.
pub fn interpolate_linear(points: &[CartesianPoint], query_times: &[f64]) -> Result<Trajectory, PipelineError> {
    if points.len() < 2 {
        return Err(PipelineError::TooFewRecords {
            station: 0,
            needed: 2,
            found: points.len(),
        });
    }
    check_span(points, query_times)?;
    let positions = query_times
        .iter()
        .map(|&t| {
            let k = points.partition_point(|p| p.time <= t).clamp(1, points.len() - 1);
            let (a, b) = (&points[k - 1], &points[k]);
            let w = ((t - a.time) / (b.time - a.time)).clamp(0.0, 1.0);
            a.position + (b.position - a.position) * w
        })
        .collect();
    Ok(Trajectory {
        frame: frame_of(points),
        times: query_times.to_vec(),
        positions,
    })
}

/// Gaussian-process posterior mean, computed independently per axis.
///
/// Each axis uses a constant prior mean equal to its sample mean. The kernel
/// matrix is factored once and shared by the three axes. The condition
/// estimate is the Gershgorin bound on the largest eigenvalue divided by the
/// smallest Cholesky pivot.
pub fn interpolate_gp(
    points: &[CartesianPoint],
    query_times: &[f64],
    params: &GpParams,
) -> Result<Trajectory, PipelineError> {
    if points.len() < 3 {
        return Err(PipelineError::TooFewRecords {
            station: 0,
            needed: 3,
            found: points.len(),
        });
    }
    check_span(points, query_times)?;
    let n = points.len();
    let s2 = params.sigma * params.sigma;
    let inv_two_l2 = 1.0 / (2.0 * params.length_scale * params.length_scale);
    let kernel = |a: f64, b: f64| s2 * (-(a - b) * (a - b) * inv_two_l2).exp();

    let noise = params.noise_sigma * params.noise_sigma;
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel(points[i].time, points[j].time) + if i == j { noise } else { 0.0 }
    });
    let row_bound = k.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let chol = k.cholesky().ok_or(PipelineError::IllConditioned(f64::INFINITY))?;
    let min_pivot = chol.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
    let estimate = row_bound / min_pivot;
    if !(estimate <= MAX_CONDITION_ESTIMATE) {
        return Err(PipelineError::IllConditioned(estimate));
    }

    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.position) / n as f64;
    let mut weights = Vec::with_capacity(3);
    for axis in 0..3 {
        let y = DVector::from_iterator(n, points.iter().map(|p| p.position[axis] - mean[axis]));
        weights.push(chol.solve(&y));
    }
    let positions = query_times
        .iter()
        .map(|&t| {
            let ks = DVector::from_iterator(n, points.iter().map(|p| kernel(t, p.time)));
            Vector3::new(
                mean.x + ks.dot(&weights[0]),
                mean.y + ks.dot(&weights[1]),
                mean.z + ks.dot(&weights[2]),
            )
        })
        .collect();
    Ok(Trajectory {
        frame: frame_of(points),
        times: query_times.to_vec(),
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Frame;

    fn pts(times: &[f64], f: impl Fn(f64) -> Vector3<f64>) -> Vec<CartesianPoint> {
        times
            .iter()
            .map(|&t| CartesianPoint { time: t, position: f(t), frame: Frame::Station(2) })
            .collect()
    }

    fn uniform(start: f64, end: f64, dt: f64) -> Vec<f64> {
        let n = ((end - start) / dt).round() as usize;
        (0..=n).map(|k| start + k as f64 * dt).collect()
    }

    #[test]
    fn linear_exact_on_constant_velocity() {
        let f = |t: f64| Vector3::new(3.0 + 0.7 * t, -2.0 - 0.1 * t, 0.5 + 0.01 * t);
        let support = pts(&uniform(0.0, 20.0, 0.4), f);
        let q = uniform(0.05, 19.95, 0.1);
        let traj = interpolate_linear(&support, &q).unwrap();
        for (t, p) in q.iter().zip(&traj.positions) {
            assert!((p - f(*t)).norm() < 1e-12);
        }
        assert_eq!(traj.frame, Frame::Station(2));
    }

    #[test]
    fn linear_midpoint_is_mean() {
        let support = pts(&[1.0, 2.0], |t| Vector3::new(t * t, 4.0 * t, -t));
        let traj = interpolate_linear(&support, &[1.5]).unwrap();
        assert_eq!(traj.positions[0], Vector3::new(2.5, 6.0, -1.5));
    }

    #[test]
    fn linear_error_within_second_derivative_bound() {
        // x(t) = A sin(w t): |x''| <= A w^2, linear error <= h^2 M / 8
        let (amp, w) = (5.0, 0.8);
        let f = |t: f64| Vector3::new(amp * (w * t).sin(), 0.0, 0.0);
        let h = 0.4;
        let support = pts(&uniform(0.0, 30.0, h), f);
        let q = uniform(0.0, 30.0, 0.1);
        let traj = interpolate_linear(&support, &q).unwrap();
        let bound = h * h * amp * w * w / 8.0;
        let worst = q.iter().zip(&traj.positions).map(|(t, p)| (p - f(*t)).norm()).fold(0.0, f64::max);
        assert!(worst <= bound + 1e-12, "worst {worst} > bound {bound}");
        assert!(worst > 0.5 * bound, "bound should be nearly tight");
    }

    #[test]
    fn extrapolation_rejected() {
        let support = pts(&[0.0, 1.0, 2.0], |t| Vector3::new(t, 0.0, 0.0));
        assert!(matches!(interpolate_linear(&support, &[2.5]), Err(PipelineError::Extrapolation { .. })));
        assert!(matches!(
            interpolate_gp(&support, &[-0.1], &GpParams::default()),
            Err(PipelineError::Extrapolation { .. })
        ));
    }

    #[test]
    fn gp_recovers_support_values_with_small_noise() {
        let f = |t: f64| Vector3::new(10.0 * (0.3 * t).sin(), 2.0 * t, 1.0);
        let times = uniform(0.0, 8.0, 0.4);
        let support = pts(&times, f);
        let params = GpParams { noise_sigma: 1e-5, ..Default::default() };
        let traj = interpolate_gp(&support, &times, &params).unwrap();
        for (t, p) in times.iter().zip(&traj.positions) {
            assert!((p - f(*t)).norm() < 1e-5, "{}", (p - f(*t)).norm());
        }
    }

    #[test]
    fn gp_constant_path() {
        let c = Vector3::new(12.0, -40.0, 3.5);
        let support = pts(&uniform(0.0, 10.0, 0.4), |_| c);
        let traj = interpolate_gp(&support, &uniform(0.0, 10.0, 0.1), &GpParams::default()).unwrap();
        assert!(traj.positions.iter().all(|p| (p - c).norm() < 1e-9));
    }

    /// Textbook GP regression written out directly: explicit inverse of the
    /// kernel matrix via LU, constant prior mean per axis.
    fn gp_oracle(times: &[f64], values: &[f64], q: f64, p: &GpParams) -> f64 {
        let n = times.len();
        let m = values.iter().sum::<f64>() / n as f64;
        let k = |a: f64, b: f64| p.sigma.powi(2) * (-(a - b).powi(2) / (2.0 * p.length_scale.powi(2))).exp();
        let mut kmat = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                kmat[(i, j)] = k(times[i], times[j]);
            }
            kmat[(i, i)] += p.noise_sigma.powi(2);
        }
        let inv = kmat.lu().try_inverse().unwrap();
        let y = DVector::from_iterator(n, values.iter().map(|v| v - m));
        let kstar = DVector::from_iterator(n, times.iter().map(|&t| k(q, t)));
        m + (kstar.transpose() * inv * y)[(0, 0)]
    }

    #[test]
    fn gp_matches_dense_oracle() {
        let f = |t: f64| Vector3::new(6.0 * (0.5 * t).sin(), 3.0 * (0.2 * t).cos(), 0.1 * t);
        let times = uniform(0.0, 12.0, 0.4);
        let support = pts(&times, f);
        let params = GpParams::default();
        let q = uniform(0.0, 12.0, 0.1);
        let traj = interpolate_gp(&support, &q, &params).unwrap();
        for axis in 0..3 {
            let vals: Vec<f64> = support.iter().map(|p| p.position[axis]).collect();
            for (t, p) in q.iter().zip(&traj.positions) {
                let expected = gp_oracle(&times, &vals, *t, &params);
                assert!((p[axis] - expected).abs() < 1e-9, "axis {axis} t {t}: {} vs {expected}", p[axis]);
            }
        }
    }

    #[test]
    fn gp_tends_to_linear_as_length_scale_grows() {
        // collinear support: the deviation from the chord shrinks like (span / l)^2
        let support = pts(&[2.0, 5.0, 8.0], |t| Vector3::new(1.0 + 0.5 * t, 3.0 - t, 0.25 * t));
        let q = uniform(2.0, 8.0, 0.25);
        let lin = interpolate_linear(&support, &q).unwrap();
        let deviation = |l: f64| {
            let params = GpParams { length_scale: l, sigma: 1.0, noise_sigma: 0.0 };
            let gp = interpolate_gp(&support, &q, &params).unwrap();
            gp.positions.iter().zip(&lin.positions).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (deviation(60.0), deviation(600.0));
        assert!(fine < 2e-5, "{fine}");
        let ratio = coarse / fine;
        assert!((80.0..120.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn gp_rejects_ill_conditioned_kernel() {
        let support = pts(&[0.0, 0.5, 1.0], |t| Vector3::new(t, 0.0, 0.0));
        let params = GpParams { length_scale: 1e6, sigma: 1.0, noise_sigma: 0.0 };
        assert!(matches!(
            interpolate_gp(&support, &[0.5], &params),
            Err(PipelineError::IllConditioned(_))
        ));
    }

    #[test]
    fn gp_needs_three_points() {
        let support = pts(&[0.0, 1.0], |t| Vector3::new(t, 0.0, 0.0));
        assert!(interpolate_gp(&support, &[0.5], &GpParams::default()).is_err());
    }
}
