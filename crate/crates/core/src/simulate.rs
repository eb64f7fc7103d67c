//! Synthetic scenes: a rigid body carrying three prisms drives a parametric
//! path over gently undulating ground while three leveled stations track
//! their assigned prisms.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::calibrate::CalibrationResult;
use crate::ingest::{GcpPoint, GcpSet, InterPrismDistances, MeasurementLog};
use crate::se3::{cartesian_to_polar, transform_delta, wrap_angle_positive, Frame, PolarMeasurement, RigidTransform, Se3Error};

/// One arcsecond in radians.
pub const ARCSECOND: f64 = 4.85e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("invalid scene: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] Se3Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    FigureEight,
    StraightLine,
    LShape,
    Static,
    /// Horizontal polyline vertices, meters.
    Waypoints(Vec<Vector2<f64>>),
}

impl TrajectoryKind {
    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryKind::FigureEight => "figure_eight",
            TrajectoryKind::StraightLine => "straight_line",
            TrajectoryKind::LShape => "l_shape",
            TrajectoryKind::Static => "static",
            TrajectoryKind::Waypoints(_) => "waypoints",
        }
    }
}

/// Speed oscillating between `min` and `max` with the given period:
/// `v(t) = min + (max - min) (1 - cos(2 pi t / period)) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedProfile {
    pub min: f64,
    pub max: f64,
    pub period: f64,
}

impl SpeedProfile {
    pub fn speed(&self, t: f64) -> f64 {
        self.min + (self.max - self.min) * (1.0 - (2.0 * PI * t / self.period).cos()) / 2.0
    }

    /// Distance covered after `t` seconds of motion.
    pub fn distance(&self, t: f64) -> f64 {
        self.min * t + (self.max - self.min) / 2.0 * (t - self.period / (2.0 * PI) * (2.0 * PI * t / self.period).sin())
    }
}

/// Ground height `amplitude sin(2 pi x / wavelength) sin(2 pi y / wavelength)`.
/// The body's vertical axis follows the ground normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terrain {
    pub amplitude: f64,
    pub wavelength: f64,
}

impl Terrain {
    pub const FLAT: Terrain = Terrain { amplitude: 0.0, wavelength: 1.0 };

    fn height_and_gradient(&self, x: f64, y: f64) -> (f64, Vector2<f64>) {
        let k = 2.0 * PI / self.wavelength;
        let (sx, cx) = (k * x).sin_cos();
        let (sy, cy) = (k * y).sin_cos();
        let a = self.amplitude;
        (a * sx * sy, Vector2::new(a * k * cx * sy, a * k * sx * cy))
    }
}

/// Samples of `station` within `[start, end)` are removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub station: u8,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Pose of each station in the world frame (station i to world).
    pub station_poses: [RigidTransform; 3],
    /// Prism positions in the body frame, meters.
    pub prism_offsets: [Vector3<f64>; 3],
    /// Index of the prism each station tracks.
    pub prism_assignment: [usize; 3],
    pub trajectory: TrajectoryKind,
    /// Half-extents of the figure-eight, meters.
    pub figure_eight_size: Vector2<f64>,
    /// Heading of straight and L-shaped paths, rad.
    pub path_heading: f64,
    /// Time spent motionless before moving, s.
    pub static_lead: f64,
    /// Total duration, s.
    pub duration: f64,
    pub speed: SpeedProfile,
    /// Measurement rate per station, Hz.
    pub rate: f64,
    /// Start time of each station's sampling clock, s.
    pub time_offsets: [f64; 3],
    /// Range noise standard deviation, m.
    pub range_noise: f64,
    /// Angle noise standard deviation, rad.
    pub angle_noise: f64,
    pub dropouts: Vec<Dropout>,
    /// Probability that a record's angles are corrupted.
    pub outlier_rate: f64,
    pub terrain: Terrain,
    /// Static control points in the world frame.
    pub gcp_pillars: Vec<Vector3<f64>>,
    /// Seed for measurement noise and outliers.
    pub seed: u64,
}

/// Default body-frame prism layout (pairwise distances above 0.8 m, distinct heights).
pub fn default_prism_offsets() -> [Vector3<f64>; 3] {
    [
        Vector3::new(0.6, 0.0, 0.75),
        Vector3::new(-0.45, 0.5, 0.55),
        Vector3::new(-0.45, -0.5, 0.65),
    ]
}

/// Compact layout with 0.35 m horizontal spacing.
pub fn compact_prism_offsets() -> [Vector3<f64>; 3] {
    let r = 0.35 / 3f64.sqrt();
    [
        Vector3::new(r, 0.0, 0.55),
        Vector3::new(-r / 2.0, 0.175, 0.5),
        Vector3::new(-r / 2.0, -0.175, 0.6),
    ]
}

/// Seed for Monte-Carlo run `index` derived from `base`: the first output
/// of a ChaCha8 generator seeded with `base` on stream `index`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

impl SceneConfig {
    /// Figure-eight scene with station layout, path orientation and pillars
    /// drawn from `geometry_seed`; noise seed set to the same value.
    pub fn figure_eight(geometry_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(geometry_seed);
        let angle = rng.random_range(-PI..PI);
        let mut station_poses = Vec::with_capacity(3);
        for i in 0..3 {
            let bearing = angle + i as f64 * 2.0 * PI / 3.0 + rng.random_range(-0.35..0.35);
            let dist = rng.random_range(60.0..80.0);
            let pos = Vector3::new(dist * bearing.cos(), dist * bearing.sin(), rng.random_range(-1.0..1.0));
            let yaw = rng.random_range(-PI..PI);
            station_poses.push(RigidTransform::from_yaw(yaw, pos, Frame::Station(i as u8 + 1), Frame::World));
        }
        let gcp_pillars = (0..4)
            .map(|k| {
                let b = angle + PI / 4.0 + k as f64 * PI / 2.0 + rng.random_range(-0.2..0.2);
                let d = rng.random_range(25.0..35.0);
                Vector3::new(d * b.cos(), d * b.sin(), rng.random_range(0.3..1.5))
            })
            .collect();
        let path_heading = rng.random_range(-PI..PI);
        Self {
            station_poses: [station_poses[0], station_poses[1], station_poses[2]],
            prism_offsets: default_prism_offsets(),
            prism_assignment: [0, 1, 2],
            trajectory: TrajectoryKind::FigureEight,
            figure_eight_size: Vector2::new(18.0, 9.0),
            path_heading,
            static_lead: 30.0,
            duration: 330.0,
            speed: SpeedProfile { min: 0.15, max: 0.55, period: 60.0 },
            rate: 2.5,
            time_offsets: [0.0, 0.13, 0.27],
            range_noise: 0.002,
            angle_noise: ARCSECOND,
            dropouts: Vec::new(),
            outlier_rate: 0.0,
            terrain: Terrain { amplitude: 0.15, wavelength: 12.0 },
            gcp_pillars,
            seed: geometry_seed,
        }
    }

    /// Same site as [`SceneConfig::figure_eight`] driving one straight line.
    pub fn straight_line(geometry_seed: u64) -> Self {
        Self {
            trajectory: TrajectoryKind::StraightLine,
            duration: 150.0,
            ..Self::figure_eight(geometry_seed)
        }
    }

    /// Same site driving two perpendicular legs joined by a tight turn.
    pub fn l_shape(geometry_seed: u64) -> Self {
        Self {
            trajectory: TrajectoryKind::LShape,
            duration: 150.0,
            ..Self::figure_eight(geometry_seed)
        }
    }

    /// All stations track the first prism.
    pub fn shared_prism(mut self) -> Self {
        self.prism_assignment = [0, 0, 0];
        self
    }

    /// No noise, no outliers, synchronous clocks.
    pub fn noise_free(mut self) -> Self {
        self.range_noise = 0.0;
        self.angle_noise = 0.0;
        self.outlier_rate = 0.0;
        self.time_offsets = [0.0; 3];
        self
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        let bad = |m: &str| Err(SimulateError::InvalidConfig(m.to_string()));
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return bad("rate must be positive");
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad("duration must be positive");
        }
        if !(self.static_lead.is_finite() && self.static_lead >= 0.0) {
            return bad("static lead must be non-negative");
        }
        let s = &self.speed;
        if !(s.min >= 0.0 && s.max >= s.min && s.max.is_finite() && s.period > 0.0) {
            return bad("speed profile needs 0 <= min <= max and a positive period");
        }
        if self.trajectory != TrajectoryKind::Static && s.max <= 0.0 {
            return bad("moving trajectory needs a positive speed");
        }
        if !(self.range_noise >= 0.0 && self.angle_noise >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad("outlier rate must lie in [0, 1]");
        }
        if self.prism_assignment.iter().any(|&p| p > 2) {
            return bad("prism assignment must index one of three prisms");
        }
        if self.time_offsets.iter().any(|t| !t.is_finite()) {
            return bad("time offsets must be finite");
        }
        let o = &self.prism_offsets;
        if (o[1] - o[0]).cross(&(o[2] - o[0])).norm() < 1e-6 {
            return bad("prism offsets are collinear");
        }
        self.true_distances()
            .map_err(|_| SimulateError::InvalidConfig("prism distances violate the triangle inequality".into()))?;
        for (i, p) in self.station_poses.iter().enumerate() {
            if p.from != Frame::Station(i as u8 + 1) || p.to != Frame::World || !p.is_yaw_only() {
                return bad("station poses must be leveled station-to-world transforms");
            }
        }
        if self.terrain.amplitude != 0.0 && !(self.terrain.wavelength > 0.0) {
            return bad("terrain wavelength must be positive");
        }
        for d in &self.dropouts {
            if !(1..=3).contains(&d.station) || !(d.end > d.start) {
                return bad("dropouts need a station in 1..=3 and end > start");
            }
        }
        if let TrajectoryKind::Waypoints(w) = &self.trajectory {
            if w.len() < 2 || w.windows(2).any(|p| (p[1] - p[0]).norm() < 1e-9) {
                return bad("waypoints need at least two distinct consecutive points");
            }
        }
        Ok(())
    }

    pub fn true_distances(&self) -> Result<InterPrismDistances, crate::ingest::IngestError> {
        let o = &self.prism_offsets;
        InterPrismDistances::new((o[0] - o[1]).norm(), (o[0] - o[2]).norm(), (o[1] - o[2]).norm())
    }

    /// Distance travelled at time `t`.
    fn arclength(&self, t: f64) -> f64 {
        if self.trajectory == TrajectoryKind::Static || t <= self.static_lead {
            0.0
        } else {
            self.speed.distance(t - self.static_lead)
        }
    }
}

/// Horizontal path parameterized by arclength.
enum Path {
    FigureEight { size: Vector2<f64>, rotation: f64, table: Vec<(f64, f64)>, loop_length: f64 },
    Polyline { points: Vec<Vector2<f64>>, cumulative: Vec<f64> },
    Static { heading: f64 },
}

fn rotate2(v: Vector2<f64>, angle: f64) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

impl Path {
    fn new(cfg: &SceneConfig) -> Self {
        let total = cfg.arclength(cfg.duration);
        let h = cfg.path_heading;
        match &cfg.trajectory {
            TrajectoryKind::FigureEight => {
                // Gerono lemniscate (a sin u, b sin u cos u) with a dense arclength table
                let (a, b) = (cfg.figure_eight_size.x, cfg.figure_eight_size.y);
                let n = 8192;
                let speed = |u: f64| (a * u.cos()).hypot(b * (2.0 * u).cos());
                let mut table = Vec::with_capacity(n + 1);
                let mut s = 0.0;
                table.push((0.0, 0.0));
                for k in 1..=n {
                    let (u0, u1) = (2.0 * PI * (k - 1) as f64 / n as f64, 2.0 * PI * k as f64 / n as f64);
                    // Simpson on each cell
                    s += (u1 - u0) / 6.0 * (speed(u0) + 4.0 * speed((u0 + u1) / 2.0) + speed(u1));
                    table.push((s, u1));
                }
                Path::FigureEight { size: cfg.figure_eight_size, rotation: h, loop_length: s, table }
            }
            TrajectoryKind::StraightLine => {
                let d = Vector2::new(h.cos(), h.sin());
                let len = total.max(1e-6);
                Path::polyline(vec![-d * len / 2.0, d * len / 2.0])
            }
            TrajectoryKind::LShape => {
                // two legs joined by a quarter turn of radius 1.5 m, centered on the origin
                let rc = 1.5f64;
                let leg = ((total - PI * rc / 2.0) / 2.0).max(0.1);
                let mut pts = vec![Vector2::new(-leg - rc, 0.0), Vector2::new(-rc, 0.0)];
                for k in 1..=16 {
                    let a = -PI / 2.0 + (PI / 2.0) * k as f64 / 16.0;
                    pts.push(Vector2::new(-rc + rc * a.cos(), rc + rc * a.sin()));
                }
                pts.push(Vector2::new(0.0, rc + leg));
                let shift = Vector2::new((leg + rc) / 2.0, -(leg + rc) / 2.0);
                Path::polyline(pts.into_iter().map(|p| rotate2(p + shift, h)).collect())
            }
            TrajectoryKind::Waypoints(w) => Path::polyline(w.clone()),
            TrajectoryKind::Static => Path::Static { heading: h },
        }
    }

    fn polyline(points: Vec<Vector2<f64>>) -> Self {
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            cumulative.push(cumulative.last().unwrap() + (w[1] - w[0]).norm());
        }
        Path::Polyline { points, cumulative }
    }

    /// Horizontal position and heading at arclength `s`.
    fn at(&self, s: f64) -> (Vector2<f64>, f64) {
        match self {
            Path::FigureEight { size, rotation, table, loop_length } => {
                let laps = (s / loop_length).floor();
                let r = s - laps * loop_length;
                let k = table.partition_point(|(si, _)| *si <= r).clamp(1, table.len() - 1);
                let ((s0, u0), (s1, u1)) = (table[k - 1], table[k]);
                let u = u0 + (u1 - u0) * (r - s0) / (s1 - s0) + laps * 2.0 * PI;
                let p = Vector2::new(size.x * u.sin(), size.y * u.sin() * u.cos());
                let d = Vector2::new(size.x * u.cos(), size.y * (2.0 * u).cos());
                (rotate2(p, *rotation), d.y.atan2(d.x) + rotation)
            }
            Path::Polyline { points, cumulative } => {
                let total = *cumulative.last().unwrap();
                let s = s.clamp(0.0, total);
                let k = cumulative.partition_point(|&c| c <= s).clamp(1, points.len() - 1);
                let d = points[k] - points[k - 1];
                let w = (s - cumulative[k - 1]) / (cumulative[k] - cumulative[k - 1]);
                (points[k - 1] + d * w, d.y.atan2(d.x))
            }
            Path::Static { heading } => (Vector2::zeros(), *heading),
        }
    }
}

/// Body pose in the world: position and rotation (body to world).
fn body_pose(path: &Path, cfg: &SceneConfig, t: f64) -> (Vector3<f64>, Matrix3<f64>) {
    let (xy, heading) = path.at(cfg.arclength(t));
    let (z, grad) = cfg.terrain.height_and_gradient(xy.x, xy.y);
    let up = Vector3::new(-grad.x, -grad.y, 1.0).normalize();
    let forward = Vector3::new(heading.cos(), heading.sin(), 0.0);
    let x = (forward - up * forward.dot(&up)).normalize();
    let y = up.cross(&x);
    (Vector3::new(xy.x, xy.y, z), Matrix3::from_columns(&[x, y, up]))
}

/// Oracle record of a generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub t_12: RigidTransform,
    pub t_13: RigidTransform,
    pub station_poses: [RigidTransform; 3],
    pub delta: InterPrismDistances,
    /// `(station id, time)` of every corrupted record still in the logs.
    pub outliers: Vec<(u8, f64)>,
    /// Dense sample times of the world trajectories, s.
    pub times: Vec<f64>,
    /// World positions of the three prisms at `times`.
    pub prism_positions: [Vec<Vector3<f64>>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub logs: [MeasurementLog; 3],
    pub truth: GroundTruth,
    pub delta: InterPrismDistances,
    /// Each station's noisy observation of every pillar, in its own frame.
    pub gcps: [GcpSet; 3],
    /// Surveyed pillar positions in the world frame.
    pub world_gcps: GcpSet,
}

/// Dense truth sampling rate, Hz.
const TRUTH_RATE: f64 = 10.0;

fn observe(
    local: &Vector3<f64>,
    noise: (&Normal<f64>, &Normal<f64>),
    rng: &mut ChaCha8Rng,
) -> (f64, f64, f64) {
    let (az, el, r) = cartesian_to_polar(local);
    (
        az + noise.1.sample(rng),
        el + noise.1.sample(rng),
        r + noise.0.sample(rng),
    )
}

/// Generates logs, GCP observations and ground truth. Deterministic in `cfg`.
///
/// Each station draws from its own ChaCha8 stream (`seed`, stream = station id),
/// and the pillars from stream 4.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene, SimulateError> {
    cfg.validate()?;
    let path = Path::new(cfg);
    let delta = cfg.true_distances().expect("validated");
    let range_noise = Normal::new(0.0, cfg.range_noise).map_err(|e| SimulateError::InvalidConfig(e.to_string()))?;
    let angle_noise = Normal::new(0.0, cfg.angle_noise).map_err(|e| SimulateError::InvalidConfig(e.to_string()))?;

    let prism_world = |t: f64, prism: usize| {
        let (p, r) = body_pose(&path, cfg, t);
        p + r * cfg.prism_offsets[prism]
    };

    let count = (cfg.duration * cfg.rate - 1e-9).ceil().max(0.0) as usize;
    let mut logs: Vec<MeasurementLog> = Vec::with_capacity(3);
    let mut outliers = Vec::new();
    for (i, pose) in cfg.station_poses.iter().enumerate() {
        let station_id = i as u8 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(station_id as u64);
        let to_local = pose.inverse();
        let prism = cfg.prism_assignment[i];
        let mut records = Vec::with_capacity(count);
        for k in 0..count {
            let t = cfg.time_offsets[i] + k as f64 / cfg.rate;
            let local = to_local.apply(&prism_world(t, prism));
            let (mut az, mut el, r) = observe(&local, (&range_noise, &angle_noise), &mut rng);
            // draws happen for every record so dropouts do not shift the noise sequence
            let corrupt = rng.random::<f64>() < cfg.outlier_rate && k > 0;
            let offsets: [f64; 2] = std::array::from_fn(|_| {
                let mag = rng.random_range(0.5f64..2.0).to_radians();
                if rng.random::<bool>() { mag } else { -mag }
            });
            if cfg.dropouts.iter().any(|d| d.station == station_id && t >= d.start && t < d.end) {
                continue;
            }
            if corrupt {
                az += offsets[0];
                el += offsets[1];
                outliers.push((station_id, t));
            }
            records.push(PolarMeasurement {
                time: t,
                azimuth: wrap_angle_positive(az),
                elevation: el.clamp(-PI / 2.0, PI / 2.0),
                range: r.max(1e-6),
                station_id,
                prism_id: prism as u8 + 1,
            });
        }
        logs.push(MeasurementLog { station_id, records });
    }

    let world_gcps = GcpSet {
        frame: Frame::World,
        points: cfg
            .gcp_pillars
            .iter()
            .enumerate()
            .map(|(k, p)| GcpPoint { label: format!("P{}", k + 1), position: *p })
            .collect(),
    };
    let mut pillar_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pillar_rng.set_stream(4);
    let gcps: Vec<GcpSet> = cfg
        .station_poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let to_local = pose.inverse();
            let points = world_gcps
                .points
                .iter()
                .map(|g| {
                    let (az, el, r) = observe(&to_local.apply(&g.position), (&range_noise, &angle_noise), &mut pillar_rng);
                    let m = PolarMeasurement { time: 0.0, azimuth: az, elevation: el, range: r, station_id: i as u8 + 1, prism_id: 0 };
                    GcpPoint { label: g.label.clone(), position: crate::se3::polar_to_cartesian(&m).expect("finite").position }
                })
                .collect();
            GcpSet { frame: Frame::Station(i as u8 + 1), points }
        })
        .collect();

    let dense = (cfg.duration * TRUTH_RATE).floor() as usize + 1;
    let times: Vec<f64> = (0..dense).map(|k| k as f64 / TRUTH_RATE).collect();
    let prism_positions = std::array::from_fn(|p| times.iter().map(|&t| prism_world(t, p)).collect());

    let w1 = cfg.station_poses[0].inverse();
    let truth = GroundTruth {
        t_12: w1.compose(&cfg.station_poses[1])?,
        t_13: w1.compose(&cfg.station_poses[2])?,
        station_poses: cfg.station_poses,
        delta,
        outliers,
        times,
        prism_positions,
    };
    let [l1, l2, l3]: [MeasurementLog; 3] = logs.try_into().expect("three stations");
    let [g1, g2, g3]: [GcpSet; 3] = gcps.try_into().expect("three stations");
    Ok(Scene { logs: [l1, l2, l3], truth, delta, gcps: [g1, g2, g3], world_gcps })
}

/// `(translation m, rotation rad)` errors of `T_12` and `T_13` against the truth.
pub fn evaluate_against_truth(result: &CalibrationResult, truth: &GroundTruth) -> Result<[(f64, f64); 2], Se3Error> {
    Ok([transform_delta(&result.t_12, &truth.t_12)?, transform_delta(&result.t_13, &truth.t_13)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::polar_to_cartesian;

    #[test]
    fn static_noise_free_round_trip() {
        let mut cfg = SceneConfig::figure_eight(3).noise_free();
        cfg.trajectory = TrajectoryKind::Static;
        let scene = generate_scene(&cfg).unwrap();
        for (i, log) in scene.logs.iter().enumerate() {
            let prism = &scene.truth.prism_positions[cfg.prism_assignment[i]][0];
            for m in &log.records {
                let p = polar_to_cartesian(m).unwrap().position;
                let world = cfg.station_poses[i].apply(&p);
                assert!((world - prism).norm() < 1e-12, "{}", (world - prism).norm());
            }
        }
    }

    #[test]
    fn record_count_follows_rate() {
        let mut cfg = SceneConfig::figure_eight(1);
        cfg.duration = 100.0;
        cfg.static_lead = 0.0;
        let scene = generate_scene(&cfg).unwrap();
        for log in &scene.logs {
            assert_eq!(log.records.len(), 250);
            assert!(log.records.windows(2).all(|w| w[1].time > w[0].time));
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig { outlier_rate: 0.05, ..SceneConfig::figure_eight(8) };
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        let other = SceneConfig { seed: 9, ..cfg.clone() };
        assert_ne!(generate_scene(&cfg).unwrap().logs, generate_scene(&other).unwrap().logs);
    }

    #[test]
    fn apparent_distances_match_offsets() {
        let cfg = SceneConfig::figure_eight(5).noise_free();
        let scene = generate_scene(&cfg).unwrap();
        let d = &scene.delta;
        let [a, b, c] = &scene.truth.prism_positions;
        for j in 0..a.len() {
            assert!(((a[j] - b[j]).norm() - d.alpha).abs() < 1e-12);
            assert!(((a[j] - c[j]).norm() - d.beta).abs() < 1e-12);
            assert!(((b[j] - c[j]).norm() - d.gamma).abs() < 1e-12);
        }
    }

    #[test]
    fn dropouts_leave_gaps() {
        let mut cfg = SceneConfig::figure_eight(2);
        cfg.dropouts = vec![Dropout { station: 2, start: 100.0, end: 112.5 }];
        let scene = generate_scene(&cfg).unwrap();
        let times: Vec<f64> = scene.logs[1].records.iter().map(|m| m.time).collect();
        assert!(times.iter().all(|&t| !(100.0..112.5).contains(&t)));
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 0.5).collect();
        assert_eq!(gaps.len(), 1);
        assert!((gaps[0] - 12.8).abs() < 1e-9);
        assert_eq!(scene.logs[0].records.len(), (cfg.duration * cfg.rate) as usize);
    }

    #[test]
    fn outliers_are_recorded_and_offset() {
        let cfg = SceneConfig { outlier_rate: 0.02, ..SceneConfig::figure_eight(4).noise_free() };
        let clean = generate_scene(&SceneConfig { outlier_rate: 0.0, ..cfg.clone() }).unwrap();
        let dirty = generate_scene(&cfg).unwrap();
        assert!(!dirty.truth.outliers.is_empty());
        for &(s, t) in &dirty.truth.outliers {
            let i = (s - 1) as usize;
            let a = clean.logs[i].records.iter().find(|m| m.time == t).unwrap();
            let b = dirty.logs[i].records.iter().find(|m| m.time == t).unwrap();
            let daz = crate::se3::wrap_angle(b.azimuth - a.azimuth).abs().to_degrees();
            let del = (b.elevation - a.elevation).abs().to_degrees();
            assert!((0.5..=2.0).contains(&daz) && (0.5..=2.0).contains(&del), "{daz} {del}");
        }
    }

    #[test]
    fn station_angular_rates_stay_below_filter_thresholds() {
        for seed in 0..10 {
            for cfg in [SceneConfig::figure_eight(seed), SceneConfig::straight_line(seed), SceneConfig::l_shape(seed)] {
                let scene = generate_scene(&cfg.noise_free()).unwrap();
                for log in &scene.logs {
                    for w in log.records.windows(2) {
                        let dt = w[1].time - w[0].time;
                        let daz = crate::se3::wrap_angle(w[1].azimuth - w[0].azimuth).abs() / dt;
                        assert!(daz.to_degrees() < 1.0, "seed {seed}: {}", daz.to_degrees());
                    }
                }
            }
        }
    }

    #[test]
    fn evaluation_of_truth_is_zero() {
        let scene = generate_scene(&SceneConfig::figure_eight(0)).unwrap();
        let t = &scene.truth;
        let result = CalibrationResult {
            method: crate::calibrate::Method::StaticGcp,
            t_12: t.t_12,
            t_13: t.t_13,
            xi_12: crate::se3::log_map(&t.t_12).unwrap(),
            xi_13: crate::se3::log_map(&t.t_13).unwrap(),
            cost: 0.0,
            residuals: vec![],
            iterations: 0,
            converged: true,
            validation: None,
            cost_history: vec![0.0],
        };
        assert_eq!(evaluate_against_truth(&result, t).unwrap(), [(0.0, 0.0); 2]);
        let mut shifted = result.clone();
        shifted.t_13.translation += Vector3::new(0.03, 0.04, 0.0);
        let e = evaluate_against_truth(&shifted, t).unwrap();
        assert!((e[1].0 - 0.05).abs() < 1e-12 && e[1].1 == 0.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = SceneConfig::figure_eight(0);
        let collinear = SceneConfig {
            prism_offsets: [Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0],
            ..base.clone()
        };
        assert!(generate_scene(&collinear).is_err());
        assert!(generate_scene(&SceneConfig { rate: 0.0, ..base.clone() }).is_err());
        assert!(generate_scene(&SceneConfig { outlier_rate: 1.5, ..base }).is_err());
    }
}
