//! Rigid-body inter-prism distance objective and its damped least-squares solver.

use nalgebra::{Matrix3, Matrix3x4, SMatrix, SVector, Vector3};

use crate::ingest::InterPrismDistances;
use crate::preprocess::SyncedTrajectories;
use crate::se3::{
    exp_map, exp_parts, log_map, yaw_jacobian_coeffs_derivative, yaw_left_jacobian, Frame, Twist,
};

use super::{CalibrateError, CalibrationResult, Method};

pub const MIN_INTER_PRISM_SAMPLES: usize = 10;

/// Distances below this are treated as coincident in the Jacobian.
const MIN_DISTANCE: f64 = 1e-12;

pub(crate) type Matrix8 = SMatrix<f64, 8, 8>;
pub(crate) type Vector8 = SVector<f64, 8>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the parameter step norm falls below this.
    pub step_tolerance: f64,
    /// Stop when an accepted step changes the cost by less than this fraction.
    pub relative_cost_tolerance: f64,
    /// Costs at or below this (m^2) count as an exact fit.
    pub cost_floor: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-10,
            relative_cost_tolerance: 1e-12,
            cost_floor: 1e-24,
        }
    }
}

/// Signed residuals `apparent - premeasured`, three per sample in the order
/// (1-2, 1-3, 2-3).
pub fn apparent_distance_residuals(
    synced: &SyncedTrajectories,
    pose_12: (&Matrix3<f64>, &Vector3<f64>),
    pose_13: (&Matrix3<f64>, &Vector3<f64>),
    delta: &InterPrismDistances,
) -> Vec<f64> {
    let [q1, q2, q3] = &synced.positions;
    let mut out = Vec::with_capacity(3 * synced.len());
    for j in 0..synced.len() {
        let a = pose_12.0 * q2[j] + pose_12.1;
        let b = pose_13.0 * q3[j] + pose_13.1;
        out.push((q1[j] - a).norm() - delta.alpha);
        out.push((q1[j] - b).norm() - delta.beta);
        out.push((a - b).norm() - delta.gamma);
    }
    out
}

/// Mean of the squared residuals over all `3n` terms.
pub fn inter_prism_cost(xi_12: &Twist, xi_13: &Twist, synced: &SyncedTrajectories, delta: &InterPrismDistances) -> f64 {
    if synced.is_empty() {
        return 0.0;
    }
    let p12 = exp_parts(xi_12);
    let p13 = exp_parts(xi_13);
    let r = apparent_distance_residuals(synced, (&p12.0, &p12.1), (&p13.0, &p13.1), delta);
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

fn dyaw(phi: f64) -> Matrix3<f64> {
    let (s, c) = phi.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Derivative of `exp(xi) q` with respect to `(rho, phi)`.
struct TwistDerivative {
    v: Matrix3<f64>,
    dr: Matrix3<f64>,
    dv_rho: Vector3<f64>,
}

impl TwistDerivative {
    fn new(xi: &Twist) -> Self {
        let (da, db) = yaw_jacobian_coeffs_derivative(xi.phi);
        let dv = Matrix3::new(da, -db, 0.0, db, da, 0.0, 0.0, 0.0, 0.0);
        Self {
            v: yaw_left_jacobian(xi.phi),
            dr: dyaw(xi.phi),
            dv_rho: dv * xi.rho,
        }
    }

    fn at(&self, q: &Vector3<f64>) -> Matrix3x4<f64> {
        let mut d = Matrix3x4::zeros();
        d.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.v);
        d.set_column(3, &(self.dr * q + self.dv_rho));
        d
    }
}

/// Sum of squared residuals with the Gauss-Newton normal equations `J^T J`
/// and `J^T r`. `deriv(k, q)` gives the 3x4 derivative of the transformed
/// point for transform `k` (0 for 1-2, 1 for 1-3).
pub(crate) fn normal_equations<F>(
    synced: &SyncedTrajectories,
    pose_12: (&Matrix3<f64>, &Vector3<f64>),
    pose_13: (&Matrix3<f64>, &Vector3<f64>),
    delta: &InterPrismDistances,
    deriv: F,
) -> (f64, Matrix8, Vector8)
where
    F: Fn(usize, &Vector3<f64>) -> Matrix3x4<f64>,
{
    let [q1, q2, q3] = &synced.positions;
    let mut jtj = Matrix8::zeros();
    let mut jtr = Vector8::zeros();
    let mut sum_sq = 0.0;
    let mut add_row = |row: &Vector8, r: f64| {
        jtj.ger(1.0, row, row, 1.0);
        jtr.axpy(r, row, 1.0);
    };
    for j in 0..synced.len() {
        let a = pose_12.0 * q2[j] + pose_12.1;
        let b = pose_13.0 * q3[j] + pose_13.1;
        let da = deriv(0, &q2[j]);
        let db = deriv(1, &q3[j]);

        let e1 = q1[j] - a;
        let e2 = q1[j] - b;
        let e3 = a - b;
        let (n1, n2, n3) = (e1.norm(), e2.norm(), e3.norm());
        let r = [n1 - delta.alpha, n2 - delta.beta, n3 - delta.gamma];
        sum_sq += r.iter().map(|v| v * v).sum::<f64>();

        if n1 >= MIN_DISTANCE {
            let g = -(e1 / n1).transpose() * da;
            let mut row = Vector8::zeros();
            row.fixed_rows_mut::<4>(0).copy_from(&g.transpose());
            add_row(&row, r[0]);
        }
        if n2 >= MIN_DISTANCE {
            let g = -(e2 / n2).transpose() * db;
            let mut row = Vector8::zeros();
            row.fixed_rows_mut::<4>(4).copy_from(&g.transpose());
            add_row(&row, r[1]);
        }
        if n3 >= MIN_DISTANCE {
            let u = e3 / n3;
            let mut row = Vector8::zeros();
            row.fixed_rows_mut::<4>(0).copy_from(&(u.transpose() * da).transpose());
            row.fixed_rows_mut::<4>(4).copy_from(&(-(u.transpose() * db)).transpose());
            add_row(&row, r[2]);
        }
    }
    (sum_sq, jtj, jtr)
}

fn twist_normal_equations(
    x: &Vector8,
    synced: &SyncedTrajectories,
    delta: &InterPrismDistances,
) -> (f64, Matrix8, Vector8) {
    let (xi_12, xi_13) = split(x);
    let p12 = exp_parts(&xi_12);
    let p13 = exp_parts(&xi_13);
    let d = [TwistDerivative::new(&xi_12), TwistDerivative::new(&xi_13)];
    normal_equations(synced, (&p12.0, &p12.1), (&p13.0, &p13.1), delta, |k, q| d[k].at(q))
}

fn split(x: &Vector8) -> (Twist, Twist) {
    (
        Twist { rho: Vector3::new(x[0], x[1], x[2]), phi: x[3] },
        Twist { rho: Vector3::new(x[4], x[5], x[6]), phi: x[7] },
    )
}

fn join(a: &Twist, b: &Twist) -> Vector8 {
    Vector8::from_iterator(a.to_array().into_iter().chain(b.to_array()))
}

/// Gradient of [`inter_prism_cost`] with respect to
/// `(rho_12, phi_12, rho_13, phi_13)` from the analytic Jacobian.
pub fn inter_prism_gradient(
    xi_12: &Twist,
    xi_13: &Twist,
    synced: &SyncedTrajectories,
    delta: &InterPrismDistances,
) -> [f64; 8] {
    if synced.is_empty() {
        return [0.0; 8];
    }
    let (_, _, jtr) = twist_normal_equations(&join(xi_12, xi_13), synced, delta);
    let g = jtr * (2.0 / (3 * synced.len()) as f64);
    g.into()
}

/// Keeps the yaw in `(-pi, pi]` without changing the transform.
fn normalize(xi: Twist) -> Result<Twist, CalibrateError> {
    if xi.phi.abs() <= std::f64::consts::PI {
        return Ok(xi);
    }
    Ok(log_map(&exp_map(&xi, Frame::Station(2), Frame::Station(1)))?)
}

/// Damped least-squares minimization of the inter-prism cost over both
/// twists, starting from `prior`.
pub fn inter_prism_calibrate(
    synced: &SyncedTrajectories,
    delta: &InterPrismDistances,
    prior: (Twist, Twist),
    opts: &LmOptions,
) -> Result<CalibrationResult, CalibrateError> {
    if synced.len() < MIN_INTER_PRISM_SAMPLES {
        return Err(CalibrateError::TooFewPoints {
            needed: MIN_INTER_PRISM_SAMPLES,
            found: synced.len(),
        });
    }
    if !(prior.0.is_finite() && prior.1.is_finite()) {
        return Err(CalibrateError::NonFinite);
    }
    let m = (3 * synced.len()) as f64;
    let mut x = join(&normalize(prior.0)?, &normalize(prior.1)?);
    let (mut s, mut jtj, mut jtr) = twist_normal_equations(&x, synced, delta);
    if !s.is_finite() {
        return Err(CalibrateError::NonFiniteResidual(0));
    }
    let mut history = vec![s / m];
    let mut converged = s / m <= opts.cost_floor;
    let mut iterations = 0;
    let max_diag = |a: &Matrix8| a.diagonal().max();
    let mut lambda = 1e-3 * max_diag(&jtj).max(1e-12);

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let floor = 1e-12 * max_diag(&jtj).max(1e-300);
        let mut a = jtj;
        for i in 0..8 {
            a[(i, i)] += lambda * jtj[(i, i)].max(floor);
        }
        let Some(chol) = a.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let step = chol.solve(&(-jtr));
        if step.norm() < opts.step_tolerance {
            converged = true;
            break;
        }
        let (c12, c13) = split(&(x + step));
        let candidate = join(&normalize(c12)?, &normalize(c13)?);
        let (s_new, jtj_new, jtr_new) = twist_normal_equations(&candidate, synced, delta);
        if !s_new.is_finite() {
            return Err(CalibrateError::NonFiniteResidual(iterations));
        }
        if s_new <= s {
            let relative = (s - s_new) / s.max(f64::MIN_POSITIVE);
            x = candidate;
            s = s_new;
            jtj = jtj_new;
            jtr = jtr_new;
            history.push(s / m);
            lambda = (lambda / 3.0).max(1e-15);
            if relative < opts.relative_cost_tolerance || s / m <= opts.cost_floor {
                converged = true;
            }
        } else {
            lambda *= 4.0;
        }
    }

    let (xi_12, xi_13) = split(&x);
    let t_12 = exp_map(&xi_12, Frame::Station(2), Frame::Station(1));
    let t_13 = exp_map(&xi_13, Frame::Station(3), Frame::Station(1));
    let residuals = apparent_distance_residuals(
        synced,
        (&t_12.rotation, &t_12.translation),
        (&t_13.rotation, &t_13.translation),
        delta,
    );
    Ok(CalibrationResult {
        method: Method::InterPrism,
        cost: inter_prism_cost(&xi_12, &xi_13, synced, delta),
        t_12,
        t_13,
        xi_12,
        xi_13,
        residuals,
        iterations,
        converged,
        validation: None,
        cost_history: history,
    })
}
