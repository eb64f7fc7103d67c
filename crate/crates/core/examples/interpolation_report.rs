//! Linear vs GP interpolation as the support gets sparser. Scores the
//! synchronized trajectories with the inter-prism metric under the true
//! transforms, averaged over 20 figure-eight scenes per rate.
//!
//! cargo run --release -p rts-calib --example interpolation_report

use rts_calib::metrics::inter_prism_metric;
use rts_calib::preprocess::{run_pipeline, InterpolationKind, PipelineConfig};
use rts_calib::simulate::{generate_scene, SceneConfig};

const SEEDS: u64 = 20;

fn main() {
    println!("rate_hz  linear_median_mm  linear_iqr_mm  gp_median_mm  gp_iqr_mm");
    for rate in [2.5, 1.0, 0.5] {
        let mut acc = [[0.0; 2]; 2];
        for seed in 0..SEEDS {
            let scene = generate_scene(&SceneConfig { rate, ..SceneConfig::figure_eight(seed) }).unwrap();
            for (k, interpolation) in [InterpolationKind::Linear, InterpolationKind::GaussianProcess].into_iter().enumerate() {
                // gaps of a few samples must not split the run at low rates
                let cfg = PipelineConfig { interpolation, tau_s: 3.0 / rate, ..PipelineConfig::default() };
                let synced = run_pipeline(&scene.logs, &cfg).unwrap();
                let m = inter_prism_metric(&synced, &scene.truth.t_12, &scene.truth.t_13, &scene.delta);
                acc[k][0] += m.median * 1e3 / SEEDS as f64;
                acc[k][1] += m.iqr * 1e3 / SEEDS as f64;
            }
        }
        println!(
            "{rate:>7}  {:>16.3}  {:>13.3}  {:>12.3}  {:>9.3}",
            acc[0][0], acc[0][1], acc[1][0], acc[1][1]
        );
    }
}
