//! Renders a scene directory, then runs a multi-view experiment from it and
//! writes frames, the guidance trace and report.json.

use nvs_core::experiment::{render_synthetic_cmd, run_synthesize, ExperimentConfig};
use nvs_core::geometry::SyntheticScene;
use nvs_core::solver::TrajectorySpec;

fn main() -> nvs_core::Result<()> {
    let root = std::env::temp_dir().join("nvs-run-experiment");
    let views = TrajectorySpec::Line {
        frames: 3,
        extent: 0.4,
        direction: [1.0, 0.0, 0.0],
    };
    render_synthetic_cmd(SyntheticScene::BoxRoom, 24, 24, &views, &root.join("scene"))?;
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{
            "scene": {{"directory": {{"path": {:?}, "kind": "multi_view"}}}},
            "trajectory": {{"kind": "line", "frames": 4, "extent": 0.4, "direction": [1, 0, 0]}},
            "schedule": {{"steps": 15}},
            "guidance": {{"v1": 1e-6, "v2": 0.7, "v3": 0.01}},
            "seed": 5
        }}"#,
        root.join("scene")
    ))?;
    let out = root.join("out");
    let result = run_synthesize(&cfg, &out)?;
    println!("{} frames, sources {:?}", result.report.output.len(), result.report.source_indices);
    println!("wrote {}", out.display());
    Ok(())
}
