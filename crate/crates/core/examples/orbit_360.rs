//! Chains guided stages around a full circle from one input view.

use nvs_core::experiment::{synthesize, ExperimentConfig};

fn main() -> nvs_core::Result<()> {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "scene": {"synthetic": {"id": "spheres", "width": 16, "height": 16}},
            "trajectory": {"kind": "line", "frames": 1, "extent": 0, "direction": [1, 0, 0]},
            "schedule": {"steps": 8},
            "chain_360": {"radius": 3.0, "frames": 10},
            "gmm": {"orbit_components": 12}
        }"#,
    )?;
    let result = synthesize(&cfg)?;
    for stage in &result.report.stages {
        println!(
            "stage {} {}: {:.0} to {:.0} deg, {} prompts",
            stage.stage,
            stage.name,
            stage.from_deg,
            stage.to_deg,
            stage.prompts.len()
        );
    }
    println!("{} frames in the loop", result.report.output.len());
    Ok(())
}
