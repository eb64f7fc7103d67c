pub mod calibrate;
pub mod ingest;
pub mod metrics;
pub mod preprocess;
pub mod se3;
pub mod simulate;
