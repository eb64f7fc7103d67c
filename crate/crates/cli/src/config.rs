//! TOML run configuration. Every section is optional; missing keys take the
//! library defaults. Angles are given in degrees, durations in seconds.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use rts_calib::calibrate::{LmOptions, Method, PriorSearchConfig};
use rts_calib::preprocess::{GpParams, InterpolationKind, PipelineConfig};
use rts_calib::simulate::{compact_prism_offsets, default_prism_offsets, Dropout, SceneConfig, SpeedProfile, Terrain, TrajectoryKind, ARCSECOND};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Root seed; every random draw derives from it.
    pub seed: u64,
    pub scene: SceneSection,
    pub pipeline: PipelineSection,
    pub calibrate: CalibrateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    /// figure_eight, straight_line, l_shape, static or waypoints.
    pub kind: String,
    /// Station layout seed; the root seed when absent.
    pub geometry_seed: Option<u64>,
    pub duration_s: Option<f64>,
    pub static_lead_s: Option<f64>,
    pub rate_hz: f64,
    pub range_noise_m: f64,
    pub angle_noise_arcsec: f64,
    pub outlier_rate: f64,
    /// default or compact.
    pub prism_layout: String,
    /// All stations track prism 1.
    pub shared_prism: bool,
    /// All station clocks start together.
    pub synchronous: bool,
    pub speed_min_m_s: f64,
    pub speed_max_m_s: f64,
    pub speed_period_s: f64,
    pub terrain_amplitude_m: f64,
    pub terrain_wavelength_m: f64,
    pub waypoints: Vec<[f64; 2]>,
    pub dropouts: Vec<DropoutSection>,
}

impl Default for SceneSection {
    fn default() -> Self {
        let d = SceneConfig::figure_eight(0);
        Self {
            kind: "figure_eight".into(),
            geometry_seed: None,
            duration_s: None,
            static_lead_s: None,
            rate_hz: d.rate,
            range_noise_m: d.range_noise,
            angle_noise_arcsec: 1.0,
            outlier_rate: d.outlier_rate,
            prism_layout: "default".into(),
            shared_prism: false,
            synchronous: false,
            speed_min_m_s: d.speed.min,
            speed_max_m_s: d.speed.max,
            speed_period_s: d.speed.period,
            terrain_amplitude_m: d.terrain.amplitude,
            terrain_wavelength_m: d.terrain.wavelength,
            waypoints: Vec::new(),
            dropouts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutSection {
    pub station: u8,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub tau_r_m_s: f64,
    pub tau_e_deg_s: f64,
    pub tau_a_deg_s: f64,
    pub tau_s_s: f64,
    pub tau_l_s: f64,
    /// linear or gp.
    pub interpolation: String,
    pub gp_length_scale_s: f64,
    pub gp_sigma_m: f64,
    pub gp_noise_m: f64,
    pub output_rate_hz: f64,
    pub outlier_filter: bool,
    pub interval_filter: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            tau_r_m_s: p.tau_r,
            tau_e_deg_s: p.tau_e.to_degrees(),
            tau_a_deg_s: p.tau_a.to_degrees(),
            tau_s_s: p.tau_s,
            tau_l_s: p.tau_l,
            interpolation: "linear".into(),
            gp_length_scale_s: p.gp.length_scale,
            gp_sigma_m: p.gp.sigma,
            gp_noise_m: p.gp.noise_sigma,
            output_rate_hz: p.output_rate,
            outlier_filter: p.enable_outlier_filter,
            interval_filter: p.enable_interval_filter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    /// two_point, static_gcp, dynamic_gcp or inter_prism.
    pub method: String,
    /// Solve the static GCP alignment over full SE(3) instead of yaw only.
    pub static_full_se3: bool,
    pub tau_v_start_m_s: f64,
    pub tau_v_step_m_s: f64,
    pub robot_speed_max_m_s: f64,
    pub min_points: usize,
    pub similar_translation_m: f64,
    pub similar_rotation_deg: f64,
    pub min_similar: usize,
    pub uncertainty_sigmas: f64,
    pub noise_floor_m: f64,
    pub min_heading_coverage_deg: f64,
    pub mirror_check: bool,
    pub max_iterations: usize,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        let p = PriorSearchConfig::default();
        Self {
            method: Method::InterPrism.to_string(),
            static_full_se3: false,
            tau_v_start_m_s: p.tau_v_start,
            tau_v_step_m_s: p.tau_v_step,
            robot_speed_max_m_s: p.robot_speed_max,
            min_points: p.min_points,
            similar_translation_m: p.similar_translation,
            similar_rotation_deg: p.similar_rotation.to_degrees(),
            min_similar: p.min_similar,
            uncertainty_sigmas: p.uncertainty_sigmas,
            noise_floor_m: p.noise_floor,
            min_heading_coverage_deg: p.min_heading_coverage.to_degrees(),
            mirror_check: p.mirror_check,
            max_iterations: p.lm.max_iterations,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn scene_config(&self) -> Result<SceneConfig, CliError> {
        let s = &self.scene;
        let geometry_seed = s.geometry_seed.unwrap_or(self.seed);
        let mut cfg = match s.kind.as_str() {
            "figure_eight" => SceneConfig::figure_eight(geometry_seed),
            "straight_line" => SceneConfig::straight_line(geometry_seed),
            "l_shape" => SceneConfig::l_shape(geometry_seed),
            "static" => SceneConfig { trajectory: TrajectoryKind::Static, ..SceneConfig::figure_eight(geometry_seed) },
            "waypoints" => {
                if s.waypoints.len() < 2 {
                    return Err(CliError::Config("scene.waypoints needs at least two points".into()));
                }
                SceneConfig {
                    trajectory: TrajectoryKind::Waypoints(s.waypoints.iter().map(|w| Vector2::new(w[0], w[1])).collect()),
                    ..SceneConfig::figure_eight(geometry_seed)
                }
            }
            other => return Err(CliError::Config(format!("scene.kind: unknown trajectory '{other}'"))),
        };
        cfg.seed = self.seed;
        if let Some(d) = s.duration_s {
            cfg.duration = d;
        }
        if let Some(l) = s.static_lead_s {
            cfg.static_lead = l;
        }
        cfg.rate = s.rate_hz;
        cfg.range_noise = s.range_noise_m;
        cfg.angle_noise = s.angle_noise_arcsec * ARCSECOND;
        cfg.outlier_rate = s.outlier_rate;
        cfg.prism_offsets = match s.prism_layout.as_str() {
            "default" => default_prism_offsets(),
            "compact" => compact_prism_offsets(),
            other => return Err(CliError::Config(format!("scene.prism_layout: unknown layout '{other}'"))),
        };
        if s.shared_prism {
            cfg = cfg.shared_prism();
        }
        if s.synchronous {
            cfg.time_offsets = [0.0; 3];
        }
        cfg.speed = SpeedProfile { min: s.speed_min_m_s, max: s.speed_max_m_s, period: s.speed_period_s };
        cfg.terrain = Terrain { amplitude: s.terrain_amplitude_m, wavelength: s.terrain_wavelength_m };
        cfg.dropouts = s
            .dropouts
            .iter()
            .map(|d| Dropout { station: d.station, start: d.start_s, end: d.end_s })
            .collect();
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, CliError> {
        let p = &self.pipeline;
        let interpolation = match p.interpolation.as_str() {
            "linear" => InterpolationKind::Linear,
            "gp" => InterpolationKind::GaussianProcess,
            other => return Err(CliError::Config(format!("pipeline.interpolation: unknown kind '{other}'"))),
        };
        let cfg = PipelineConfig {
            tau_r: p.tau_r_m_s,
            tau_e: p.tau_e_deg_s.to_radians(),
            tau_a: p.tau_a_deg_s.to_radians(),
            tau_s: p.tau_s_s,
            tau_l: p.tau_l_s,
            interpolation,
            gp: GpParams { length_scale: p.gp_length_scale_s, sigma: p.gp_sigma_m, noise_sigma: p.gp_noise_m },
            output_rate: p.output_rate_hz,
            enable_outlier_filter: p.outlier_filter,
            enable_interval_filter: p.interval_filter,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn method(&self) -> Result<Method, CliError> {
        self.calibrate.method.parse().map_err(|e: String| CliError::Config(format!("calibrate.method: {e}")))
    }

    pub fn prior_config(&self) -> Result<PriorSearchConfig, CliError> {
        let c = &self.calibrate;
        let cfg = PriorSearchConfig {
            tau_v_start: c.tau_v_start_m_s,
            tau_v_step: c.tau_v_step_m_s,
            robot_speed_max: c.robot_speed_max_m_s,
            min_points: c.min_points,
            similar_translation: c.similar_translation_m,
            similar_rotation: c.similar_rotation_deg.to_radians(),
            min_similar: c.min_similar,
            uncertainty_sigmas: c.uncertainty_sigmas,
            noise_floor: c.noise_floor_m,
            min_heading_coverage: c.min_heading_coverage_deg.to_radians(),
            mirror_check: c.mirror_check,
            lm: LmOptions { max_iterations: c.max_iterations, ..LmOptions::default() },
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Prism offsets as written into the truth file.
pub fn offsets_table(offsets: &[Vector3<f64>; 3]) -> Vec<[f64; 3]> {
    offsets.iter().map(|o| [o.x, o.y, o.z]).collect()
}
