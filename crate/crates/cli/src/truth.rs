//! Ground-truth file written by `simulate` and read by `evaluate`.

use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use rts_calib::se3::{Frame, RigidTransform};
use rts_calib::simulate::{GroundTruth, SceneConfig};

use crate::config::offsets_table;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformEntry {
    pub from: String,
    pub to: String,
    pub yaw_rad: f64,
    /// Row-major homogeneous matrix.
    pub matrix: [[f64; 4]; 4],
}

impl TransformEntry {
    pub fn new(t: &RigidTransform) -> Self {
        let m = t.to_matrix4();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        Self { from: t.from.to_string(), to: t.to.to_string(), yaw_rad: t.yaw(), matrix: rows }
    }

    pub fn transform(&self) -> Result<RigidTransform, String> {
        let from: Frame = self.from.parse()?;
        let to: Frame = self.to.parse()?;
        let m = Matrix4::from_fn(|r, c| self.matrix[r][c]);
        Ok(RigidTransform::from_matrix4(&m, from, to))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierEntry {
    pub station: u8,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub trajectory: String,
    pub distances_m: [f64; 3],
    pub prism_offsets_m: Vec<[f64; 3]>,
    pub prism_assignment: [usize; 3],
    pub t_12: TransformEntry,
    pub t_13: TransformEntry,
    pub station_poses: Vec<TransformEntry>,
    pub outliers: Vec<OutlierEntry>,
}

impl TruthFile {
    pub fn new(cfg: &SceneConfig, truth: &GroundTruth) -> Self {
        Self {
            trajectory: cfg.trajectory.name().to_string(),
            distances_m: truth.delta.as_array(),
            prism_offsets_m: offsets_table(&cfg.prism_offsets),
            prism_assignment: cfg.prism_assignment,
            t_12: TransformEntry::new(&truth.t_12),
            t_13: TransformEntry::new(&truth.t_13),
            station_poses: truth.station_poses.iter().map(TransformEntry::new).collect(),
            outliers: truth.outliers.iter().map(|&(station, time_s)| OutlierEntry { station, time_s }).collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("truth is always serializable")
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e.message())))
    }

    pub fn transforms(&self) -> Result<(RigidTransform, RigidTransform), CliError> {
        let get = |e: &TransformEntry| e.transform().map_err(CliError::Io);
        Ok((get(&self.t_12)?, get(&self.t_13)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rts_calib::simulate::generate_scene;

    #[test]
    fn transforms_survive_toml_bit_for_bit() {
        let cfg = SceneConfig { duration: 60.0, ..SceneConfig::figure_eight(5) };
        let scene = generate_scene(&cfg).unwrap();
        let file = TruthFile::new(&cfg, &scene.truth);
        let back: TruthFile = toml::from_str(&file.to_toml()).unwrap();
        assert_eq!(back, file);
        let (t12, t13) = back.transforms().unwrap();
        assert_eq!(t12, scene.truth.t_12);
        assert_eq!(t13, scene.truth.t_13);
    }
}
