//! Posterior-mode sampling: a normalised VJP nudge before each reverse step.

use nvs_core::experiment::{synthesize, ExperimentConfig};

fn main() -> nvs_core::Result<()> {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "scene": {"synthetic": {"id": "plane", "width": 24, "height": 24}},
            "trajectory": {"kind": "line", "frames": 3, "extent": 0.2, "direction": [1, 0, 0]},
            "schedule": {"steps": 20},
            "guidance": {"mode": "posterior"},
            "seed": 1
        }"#,
    )?;
    let result = synthesize(&cfg)?;
    println!("denoiser calls: {}", result.report.denoiser_calls);
    println!("MSE vs ground truth: {:.3e}", result.mse.unwrap_or(f64::NAN));
    for r in result.report.lambda_trace.records.iter().step_by(20).take(4) {
        println!("{r:?}");
    }
    Ok(())
}
