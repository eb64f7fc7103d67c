//! Extrinsic calibration methods. Every method estimates `T_12` and `T_13`,
//! mapping points of stations 2 and 3 into the frame of station 1.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::se3::{RigidTransform, Se3Error, Twist};

mod align;
pub mod inter_prism;
mod prior;

pub use align::{
    alignment_residuals, common_points, dynamic_gcp_calibrate, gcp_triplets, point_to_point_align,
    static_gcp_calibrate, two_point_calibrate, two_point_resection, MIN_RESECTION_BASELINE,
};
pub use inter_prism::{
    inter_prism_calibrate, inter_prism_cost, inter_prism_gradient, LmOptions, MIN_INTER_PRISM_SAMPLES,
};
pub use prior::{
    dynamic_inter_prism_calibrate, heading_coverage, point_speeds, predicted_uncertainty, search_prior, synced_speeds,
    PriorSearchConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrateError {
    #[error("point lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("non-finite residual at iteration {0}")]
    NonFiniteResidual(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] Se3Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    TwoPoint,
    StaticGcp,
    DynamicGcp,
    InterPrism,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::TwoPoint, Method::StaticGcp, Method::DynamicGcp, Method::InterPrism];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::TwoPoint => "two_point",
            Method::StaticGcp => "static_gcp",
            Method::DynamicGcp => "dynamic_gcp",
            Method::InterPrism => "inter_prism",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

/// Outcome of the prior-search convergence check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    Validated,
    Unvalidated,
    Degenerate,
}

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Validation::Validated => "validated",
            Validation::Unvalidated => "unvalidated",
            Validation::Degenerate => "degenerate",
        })
    }
}

impl FromStr for Validation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "validated" => Ok(Validation::Validated),
            "unvalidated" => Ok(Validation::Unvalidated),
            "degenerate" => Ok(Validation::Degenerate),
            _ => Err(format!("unknown validation state '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub method: Method,
    /// Station 2 to station 1.
    pub t_12: RigidTransform,
    /// Station 3 to station 1.
    pub t_13: RigidTransform,
    pub xi_12: Twist,
    pub xi_13: Twist,
    /// Mean squared residual, m^2.
    pub cost: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Only set by the inter-prism method.
    pub validation: Option<Validation>,
    /// Cost before the first iteration followed by the cost after every accepted step.
    pub cost_history: Vec<f64>,
}

/// One run of the velocity-threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    /// 1 or 2.
    pub step: u8,
    pub tau_v: f64,
    pub subset_size: usize,
    /// Cost on the speed-filtered subset.
    pub cost: f64,
    /// Inter-prism metric median on the full data set.
    pub metric_median: f64,
    pub converged: bool,
    pub iterations: usize,
    pub xi_12: Twist,
    pub xi_13: Twist,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSearchDiagnostics {
    pub entries: Vec<SweepEntry>,
    /// Index into `entries`.
    pub best_step1: Option<usize>,
    /// Index into `entries`.
    pub best_step2: Option<usize>,
    pub similar_convergence_count: usize,
    /// First threshold with enough points.
    pub start_tau_v: f64,
    /// Number of distinct speed-filtered subsets in step 2.
    pub effective_entries: usize,
    pub insufficient_diversity: bool,
    /// Whether the vertically mirrored solution replaced the step-1 best.
    pub mirror_replaced: bool,
    /// Predicted standard deviations (translation m, yaw rad) of the final estimate.
    pub predicted_sd: (f64, f64),
    /// Arc of body headings seen over the data set, rad.
    pub heading_coverage: f64,
}
