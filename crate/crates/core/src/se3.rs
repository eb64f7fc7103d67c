//! Coordinate conventions and the yaw-constrained SE(3) algebra.
//!
//! # Conventions
//!
//! Every station frame is right-handed with `z` pointing up. Azimuth is
//! measured clockwise from `+y` ("north") in the horizontal plane and
//! elevation upward from the horizontal plane, so a polar reading
//! `(az, el, r)` lands at
//!
//! ```text
//! x = r cos(el) sin(az)
//! y = r cos(el) cos(az)
//! z = r sin(el)
//! ```
//!
//! Stations are assumed leveled. The transforms between them therefore only
//! carry a rotation about `z`, which [`Twist`] encodes structurally with a
//! single angle.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

/// Tolerance used to decide whether a rotation leaves the z-axis fixed.
pub const YAW_ONLY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid polar measurement: {0}")]
    InvalidMeasurement(String),
    #[error("rotation is not about the vertical axis (unleveled transform, deviation {0:.3e})")]
    Unleveled(f64),
    #[error("frame mismatch: expected {expected}, found {found}")]
    FrameMismatch { expected: String, found: String },
}

/// Tag naming the coordinate frame a point or transform is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Frame {
    World,
    Station(u8),
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::World => write!(f, "world"),
            Frame::Station(id) => write!(f, "station{id}"),
        }
    }
}

impl std::str::FromStr for Frame {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "world" {
            return Ok(Frame::World);
        }
        s.strip_prefix("station")
            .and_then(|id| id.parse::<u8>().ok())
            .map(Frame::Station)
            .ok_or_else(|| format!("unknown frame tag '{s}'"))
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Wraps an angle to `[0, 2pi)`.
pub fn wrap_angle_positive(angle: f64) -> f64 {
    let a = angle.rem_euclid(2.0 * PI);
    // rem_euclid can round up to exactly 2pi for tiny negative inputs
    if a >= 2.0 * PI {
        0.0
    } else {
        a
    }
}

/// One timestamped reading of a station tracking a prism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarMeasurement {
    /// Seconds on the common clock.
    pub time: f64,
    /// Radians, `[0, 2pi)`.
    pub azimuth: f64,
    /// Radians, `(-pi/2, pi/2)`.
    pub elevation: f64,
    /// Meters, strictly positive.
    pub range: f64,
    pub station_id: u8,
    pub prism_id: u8,
}

impl PolarMeasurement {
    pub fn validate(&self) -> Result<(), Se3Error> {
        if !(self.time.is_finite()
            && self.azimuth.is_finite()
            && self.elevation.is_finite()
            && self.range.is_finite())
        {
            return Err(Se3Error::NonFinite("polar measurement"));
        }
        if self.range <= 0.0 {
            return Err(Se3Error::InvalidMeasurement(format!(
                "range must be positive, got {}",
                self.range
            )));
        }
        if self.elevation.abs() >= PI / 2.0 {
            return Err(Se3Error::InvalidMeasurement(format!(
                "elevation {} outside (-pi/2, pi/2)",
                self.elevation
            )));
        }
        if !(0.0..2.0 * PI).contains(&self.azimuth) {
            return Err(Se3Error::InvalidMeasurement(format!(
                "azimuth {} outside [0, 2pi)",
                self.azimuth
            )));
        }
        Ok(())
    }
}

/// A Cartesian position tagged with its time and frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianPoint {
    pub time: f64,
    pub position: Vector3<f64>,
    pub frame: Frame,
}

pub fn polar_to_cartesian(m: &PolarMeasurement) -> Result<CartesianPoint, Se3Error> {
    m.validate()?;
    let (sa, ca) = m.azimuth.sin_cos();
    let (se, ce) = m.elevation.sin_cos();
    Ok(CartesianPoint {
        time: m.time,
        position: Vector3::new(m.range * ce * sa, m.range * ce * ca, m.range * se),
        frame: Frame::Station(m.station_id),
    })
}

/// Exact inverse of [`polar_to_cartesian`], returning `(azimuth, elevation, range)`.
pub fn cartesian_to_polar(p: &Vector3<f64>) -> (f64, f64, f64) {
    let horizontal = p.x.hypot(p.y);
    let azimuth = wrap_angle_positive(p.x.atan2(p.y));
    let elevation = p.z.atan2(horizontal);
    (azimuth, elevation, p.norm())
}

/// Rotation by `yaw` radians about `+z`.
pub fn rot_z(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// A proper rigid transform mapping points from `from` into `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub from: Frame,
    pub to: Frame,
}

impl RigidTransform {
    pub fn identity(from: Frame, to: Frame) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            from,
            to,
        }
    }

    pub fn from_yaw(yaw: f64, translation: Vector3<f64>, from: Frame, to: Frame) -> Self {
        Self {
            rotation: rot_z(yaw),
            translation,
            from,
            to,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            from: self.to,
            to: self.from,
        }
    }

    /// Returns `self * other`, i.e. apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Result<RigidTransform, Se3Error> {
        if other.to != self.from {
            return Err(Se3Error::FrameMismatch {
                expected: self.from.to_string(),
                found: other.to.to_string(),
            });
        }
        Ok(RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            from: other.from,
            to: self.to,
        })
    }

    /// Largest deviation of the rotation from a pure rotation about `z`.
    pub fn leveling_error(&self) -> f64 {
        let r = &self.rotation;
        [r[(0, 2)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)] - 1.0]
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_yaw_only(&self) -> bool {
        self.leveling_error() < YAW_ONLY_TOL
    }

    /// Yaw angle in `(-pi, pi]`. Only meaningful for yaw-only transforms.
    pub fn yaw(&self) -> f64 {
        wrap_angle(self.rotation[(1, 0)].atan2(self.rotation[(0, 0)]))
    }

    /// `‖RᵀR − I‖` (Frobenius) and `det R`.
    pub fn orthonormality(&self) -> (f64, f64) {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        (err, self.rotation.determinant())
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix4(m: &Matrix4<f64>, from: Frame, to: Frame) -> Self {
        Self {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
            from,
            to,
        }
    }
}

/// se(3) parameters of a yaw-only transform: translation part `rho` and a
/// single rotation angle `phi` about `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: f64,
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: f64) -> Self {
        Self {
            rho,
            phi: wrap_angle(phi),
        }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.rho.iter().all(|v| v.is_finite())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.rho.x, self.rho.y, self.rho.z, self.phi]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), v[3])
    }
}

/// Coefficients `(sin(phi)/phi, (1 - cos(phi))/phi)` of the left Jacobian of
/// a rotation about `z`.
pub(crate) fn yaw_jacobian_coeffs(phi: f64) -> (f64, f64) {
    if phi.abs() < 1e-4 {
        let p2 = phi * phi;
        (
            1.0 - p2 / 6.0 + p2 * p2 / 120.0,
            phi / 2.0 - phi * p2 / 24.0 + phi * p2 * p2 / 720.0,
        )
    } else {
        (phi.sin() / phi, (1.0 - phi.cos()) / phi)
    }
}

/// Derivatives of [`yaw_jacobian_coeffs`] with respect to `phi`.
pub(crate) fn yaw_jacobian_coeffs_derivative(phi: f64) -> (f64, f64) {
    if phi.abs() < 1e-4 {
        let p2 = phi * phi;
        (
            -phi / 3.0 + phi * p2 / 30.0,
            0.5 - p2 / 8.0 + p2 * p2 / 144.0,
        )
    } else {
        let (s, c) = phi.sin_cos();
        let p2 = phi * phi;
        ((phi * c - s) / p2, (phi * s - 1.0 + c) / p2)
    }
}

/// The SE(3) left Jacobian restricted to rotations about `z`.
pub fn yaw_left_jacobian(phi: f64) -> Matrix3<f64> {
    let (a, b) = yaw_jacobian_coeffs(phi);
    Matrix3::new(a, -b, 0.0, b, a, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation and translation of `exp(xi^)` without frame tags.
pub(crate) fn exp_parts(xi: &Twist) -> (Matrix3<f64>, Vector3<f64>) {
    (rot_z(xi.phi), yaw_left_jacobian(xi.phi) * xi.rho)
}

pub fn exp_map(xi: &Twist, from: Frame, to: Frame) -> RigidTransform {
    let (rotation, translation) = exp_parts(xi);
    RigidTransform {
        rotation,
        translation,
        from,
        to,
    }
}

pub fn log_map(t: &RigidTransform) -> Result<Twist, Se3Error> {
    if !(t.rotation.iter().all(|v| v.is_finite()) && t.translation.iter().all(|v| v.is_finite())) {
        return Err(Se3Error::NonFinite("rigid transform"));
    }
    let dev = t.leveling_error();
    if dev >= YAW_ONLY_TOL {
        return Err(Se3Error::Unleveled(dev));
    }
    let phi = t.yaw();
    let (a, b) = yaw_jacobian_coeffs(phi);
    // inverse of [[a, -b], [b, a]]; a^2 + b^2 > 0 for phi in (-pi, pi]
    let det = a * a + b * b;
    let (tx, ty) = (t.translation.x, t.translation.y);
    let rho = Vector3::new((a * tx + b * ty) / det, (-b * tx + a * ty) / det, t.translation.z);
    Ok(Twist { rho, phi })
}

/// Translation distance and rotation angle between two transforms over the
/// same frame pair.
pub fn transform_delta(a: &RigidTransform, b: &RigidTransform) -> Result<(f64, f64), Se3Error> {
    if a.from != b.from || a.to != b.to {
        return Err(Se3Error::FrameMismatch {
            expected: format!("{}->{}", a.from, a.to),
            found: format!("{}->{}", b.from, b.to),
        });
    }
    let trans = (a.translation - b.translation).norm();
    Ok((trans, rotation_angle(&(a.rotation.transpose() * b.rotation))))
}

/// Angle of a rotation matrix, robust near zero and pi.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let sin_part = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
    .norm()
        / 2.0;
    let cos_part = (r.trace() - 1.0) / 2.0;
    sin_part.atan2(cos_part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn meas(az: f64, el: f64, r: f64) -> PolarMeasurement {
        PolarMeasurement {
            time: 1.0,
            azimuth: az,
            elevation: el,
            range: r,
            station_id: 2,
            prism_id: 3,
        }
    }

    /// 4x4 matrix exponential by scaling and squaring of a Taylor series.
    fn expm4(a: &Matrix4<f64>) -> Matrix4<f64> {
        let scaled = a / 1024.0;
        let mut term = Matrix4::identity();
        let mut sum = Matrix4::identity();
        for k in 1..30 {
            term = term * scaled / k as f64;
            sum += term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn polar_axis_cases() {
        let p = polar_to_cartesian(&meas(0.0, 0.0, 10.0)).unwrap();
        assert_abs_diff_eq!(p.position, Vector3::new(0.0, 10.0, 0.0), epsilon = 1e-12);
        let p = polar_to_cartesian(&meas(PI / 2.0, 0.0, 5.0)).unwrap();
        assert_abs_diff_eq!(p.position, Vector3::new(5.0, 0.0, 0.0), epsilon = 1e-12);
        assert_eq!(p.time, 1.0);
        assert_eq!(p.frame, Frame::Station(2));
    }

    #[test]
    fn polar_oblique_case() {
        // computed independently: 25*cos(0.2)*sin(0.3), 25*cos(0.2)*cos(0.3), 25*sin(0.2)
        let p = polar_to_cartesian(&meas(0.3, 0.2, 25.0)).unwrap();
        assert_abs_diff_eq!(p.position.x, 7.240_736_940_637_888_5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.position.y, 23.407_334_089_604_98, epsilon = 1e-12);
        assert_abs_diff_eq!(p.position.z, 4.966_733_269_876_530_5, epsilon = 1e-12);
    }

    #[test]
    fn polar_rejects_bad_input() {
        assert!(polar_to_cartesian(&meas(f64::NAN, 0.0, 1.0)).is_err());
        assert!(polar_to_cartesian(&meas(0.0, 0.0, 0.0)).is_err());
        assert!(polar_to_cartesian(&meas(0.0, PI / 2.0, 1.0)).is_err());
        assert!(polar_to_cartesian(&meas(7.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn polar_round_trip() {
        let p = Vector3::new(-3.0, 12.5, 1.2);
        let (az, el, r) = cartesian_to_polar(&p);
        let back = polar_to_cartesian(&meas(az, el, r)).unwrap();
        assert_abs_diff_eq!(back.position, p, epsilon = 1e-12);
    }

    #[test]
    fn exp_trivial_cases() {
        let t = exp_map(&Twist::zero(), Frame::Station(2), Frame::Station(1));
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vector3::zeros());

        let t = exp_map(
            &Twist::new(Vector3::new(1.0, 2.0, 3.0), 0.0),
            Frame::Station(2),
            Frame::Station(1),
        );
        assert_abs_diff_eq!(t.rotation, Matrix3::identity(), epsilon = 1e-15);
        assert_abs_diff_eq!(t.translation, Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-15);
    }

    #[test]
    fn exp_matches_matrix_exponential() {
        let mut hat = Matrix4::zeros();
        hat[(0, 1)] = -PI / 2.0;
        hat[(1, 0)] = PI / 2.0;
        hat[(0, 3)] = 1.0;
        let oracle = expm4(&hat);
        // closed form: V(pi/2) (1,0,0) = (2/pi, 2/pi, 0)
        assert_abs_diff_eq!(oracle[(0, 3)], 2.0 / PI, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle[(1, 3)], 2.0 / PI, epsilon = 1e-12);

        let xi = Twist::new(Vector3::new(1.0, 0.0, 0.0), PI / 2.0);
        let t = exp_map(&xi, Frame::Station(2), Frame::Station(1));
        assert_abs_diff_eq!(t.to_matrix4(), oracle, epsilon = 1e-12);

        let back = log_map(&t).unwrap();
        assert_abs_diff_eq!(back.rho, xi.rho, epsilon = 1e-12);
        assert_abs_diff_eq!(back.phi, xi.phi, epsilon = 1e-12);
    }

    #[test]
    fn log_trivial_cases() {
        let id = RigidTransform::identity(Frame::Station(2), Frame::Station(1));
        assert_eq!(log_map(&id).unwrap(), Twist::zero());
        let mut t = id;
        t.translation = Vector3::new(1.0, 2.0, 3.0);
        let xi = log_map(&t).unwrap();
        assert_abs_diff_eq!(xi.rho, Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-15);
        assert_eq!(xi.phi, 0.0);
    }

    #[test]
    fn log_rejects_unleveled() {
        let mut t = RigidTransform::identity(Frame::Station(2), Frame::Station(1));
        let (s, c) = 0.01_f64.sin_cos();
        t.rotation = Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c);
        assert!(matches!(log_map(&t), Err(Se3Error::Unleveled(_))));
    }

    #[test]
    fn delta_cases() {
        let a = RigidTransform::from_yaw(0.3, Vector3::new(1.0, 2.0, 3.0), Frame::Station(2), Frame::Station(1));
        assert_eq!(transform_delta(&a, &a).unwrap(), (0.0, 0.0));

        let id = RigidTransform::identity(Frame::Station(2), Frame::Station(1));
        let half_deg = RigidTransform::from_yaw(0.5_f64.to_radians(), Vector3::zeros(), Frame::Station(2), Frame::Station(1));
        let (dt, dr) = transform_delta(&id, &half_deg).unwrap();
        assert_eq!(dt, 0.0);
        assert_abs_diff_eq!(dr, 0.008_726_646_259_971_648, epsilon = 1e-15);

        let other = RigidTransform::identity(Frame::Station(3), Frame::Station(1));
        assert!(transform_delta(&id, &other).is_err());
    }

    #[test]
    fn delta_matches_relative_transform_oracle() {
        let a = RigidTransform::from_yaw(1.2, Vector3::new(4.0, -1.0, 0.5), Frame::Station(3), Frame::Station(1));
        let b = RigidTransform::from_yaw(-2.9, Vector3::new(1.0, 3.0, -0.5), Frame::Station(3), Frame::Station(1));
        // relative rotation about z: -2.9 - 1.2 = -4.1 -> wrapped |2pi - 4.1|
        let expected_angle = (2.0 * PI - 4.1_f64).abs();
        let expected_trans = (9.0_f64 + 16.0 + 1.0).sqrt();
        let (dt, dr) = transform_delta(&a, &b).unwrap();
        assert_abs_diff_eq!(dt, expected_trans, epsilon = 1e-12);
        assert_abs_diff_eq!(dr, expected_angle, epsilon = 1e-12);
    }

    #[test]
    fn compose_checks_frames() {
        let a = RigidTransform::identity(Frame::Station(2), Frame::Station(1));
        let b = RigidTransform::identity(Frame::Station(3), Frame::Station(2));
        let c = a.compose(&b).unwrap();
        assert_eq!((c.from, c.to), (Frame::Station(3), Frame::Station(1)));
        assert!(b.compose(&b).is_err());
    }

    #[test]
    fn frame_tags_parse() {
        assert_eq!("world".parse::<Frame>().unwrap(), Frame::World);
        assert_eq!("station3".parse::<Frame>().unwrap(), Frame::Station(3));
        assert!("stationx".parse::<Frame>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn exp_log_round_trip(x in -100.0..100.0f64, y in -100.0..100.0f64, z in -10.0..10.0f64, phi in -PI..PI) {
                let xi = Twist::new(Vector3::new(x, y, z), phi);
                let back = log_map(&exp_map(&xi, Frame::Station(2), Frame::Station(1))).unwrap();
                prop_assert!((back.rho - xi.rho).norm() < 1e-9);
                prop_assert!(wrap_angle(back.phi - xi.phi).abs() < 1e-9);
            }

            #[test]
            fn polar_preserves_range(az in 0.0..(2.0 * PI), el in -1.5..1.5f64, r in 0.1..2000.0f64) {
                let p = polar_to_cartesian(&meas(az, el, r)).unwrap();
                prop_assert!((p.position.norm() - r).abs() <= 1e-12 * r);
            }

            #[test]
            fn yaw_only_closed_under_composition(y1 in -PI..PI, y2 in -PI..PI, tx in -50.0..50.0f64) {
                let a = RigidTransform::from_yaw(y1, Vector3::new(tx, 1.0, 2.0), Frame::Station(2), Frame::Station(1));
                let b = RigidTransform::from_yaw(y2, Vector3::new(-1.0, tx, 0.0), Frame::Station(3), Frame::Station(2));
                prop_assert!(a.compose(&b).unwrap().is_yaw_only());
                prop_assert!(a.inverse().is_yaw_only());
            }
        }
    }

    #[test]
    fn orthonormality_after_many_compositions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut acc = RigidTransform::identity(Frame::Station(1), Frame::Station(1));
        for _ in 0..10_000 {
            let step = RigidTransform::from_yaw(
                rng.random_range(-PI..PI),
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0),
                Frame::Station(1),
                Frame::Station(1),
            );
            acc = acc.compose(&step).unwrap();
        }
        let (err, det) = acc.orthonormality();
        assert!(err < 1e-9, "orthonormality error {err}");
        assert!((det - 1.0).abs() < 1e-9);
        assert!(acc.is_yaw_only());
    }
}
