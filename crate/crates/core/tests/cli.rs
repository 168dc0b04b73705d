use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_nvs");

const PLANE: &str = r#"{
    "scene": {"synthetic": {"id": "plane", "width": 24, "height": 24}},
    "trajectory": {"kind": "line", "frames": 3, "extent": 0.2, "direction": [1, 0, 0]},
    "schedule": {"steps": 25},
    "seed": 7
}"#;

fn nvs(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synthesize_writes_outputs_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), PLANE).unwrap();
    for out in ["a", "b"] {
        let o = nvs(&["synthesize", "--config", "cfg.json", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = dir.path().join("a");
    for f in ["report.json", "lambda_trace.csv", "timings.json", "frames/frame_000.png"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    assert_eq!(
        fs::read(a.join("report.json")).unwrap(),
        fs::read(dir.path().join("b/report.json")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), PLANE).unwrap();
    nvs(&["synthesize", "--config", "cfg.json", "--out", "a"], dir.path());
    let o = nvs(&["synthesize", "--config", "cfg.json", "--out", "b", "--seed", "8"], dir.path());
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("b/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 8);
    assert_ne!(
        fs::read(dir.path().join("a/report.json")).unwrap(),
        fs::read(dir.path().join("b/report.json")).unwrap()
    );
}

#[test]
fn stdio_denoiser_gives_the_same_frames() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), PLANE).unwrap();
    let o = nvs(&["synthesize", "--config", "cfg.json", "--out", "local"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let uri = format!("stdio://{BIN} serve --config cfg.json");
    let o = nvs(&["synthesize", "--config", "cfg.json", "--out", "remote", "--denoiser", &uri], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 0..3 {
        let f = format!("frames/frame_{i:03}.png");
        assert_eq!(
            fs::read(dir.path().join("local").join(&f)).unwrap(),
            fs::read(dir.path().join("remote").join(&f)).unwrap(),
            "{f}"
        );
    }
    let read = |d: &str| -> serde_json::Value {
        serde_json::from_slice(&fs::read(dir.path().join(d).join("report.json")).unwrap()).unwrap()
    };
    let (a, b) = (read("local"), read("remote"));
    let (ma, mb) = (
        a["config"]["mse_vs_ground_truth"].as_f64().unwrap(),
        b["config"]["mse_vs_ground_truth"].as_f64().unwrap(),
    );
    assert!((ma - mb).abs() <= 1e-6 * ma, "{ma} vs {mb}");
}

#[test]
fn missing_depth_exits_2_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvs(&["render-synthetic", "--scene", "plane", "--width", "16", "--height", "16", "--out", "scene"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    fs::remove_file(dir.path().join("scene/view_002.depth.raw")).unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"scene": {"directory": {"path": "scene", "kind": "multi_view"}},
            "trajectory": {"kind": "line", "frames": 2, "extent": 0.1, "direction": [1, 0, 0]}}"#,
    )
    .unwrap();
    let o = nvs(&["synthesize", "--config", "cfg.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "invalid_input");
    assert!(err["message"].as_str().unwrap().contains("view 2: missing depth"));
}

#[test]
fn unknown_config_field_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), PLANE.replace("\"seed\"", "\"sed\"")).unwrap();
    let o = nvs(&["synthesize", "--config", "cfg.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("\"error\":\"json\""));
}

#[test]
fn sweep_at_zero_q() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvs(
        &[
            "lambda-sweep", "--v1", "1e-6", "--v2", "1", "--v3", "1",
            "--sigma-range", "0.5", "0.5", "--pose-range", "0.5", "0.5",
            "--sigma-points", "1", "--pose-points", "1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let adaptive = rows
        .records()
        .map(|r| r.unwrap())
        .find(|r| &r[0] == "adaptive")
        .unwrap();
    let num = |i: usize| adaptive[i].parse::<f64>().unwrap();
    assert_eq!(num(3), 0.0);
    assert_eq!(num(4), -1.0);
    assert_eq!(num(5), 1e-4);
    assert!((num(6) - 1.0).abs() < 1e-6);
}

#[test]
fn sweep_rejects_bad_range() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvs(&["lambda-sweep", "--sigma-range", "-1", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn verify_wire_passes_and_writes_junit() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvs(&["verify", "--suite", "wire", "--out", "junit"], dir.path());
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("[PASS] criterion 10"));
    let xml = fs::read_to_string(dir.path().join("junit/verify-wire.xml")).unwrap();
    assert!(xml.contains("failures=\"0\""));
}

#[test]
fn verify_names_the_violated_criterion() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tol.json"), r#"{"ep_pearson": 1.5}"#).unwrap();
    let o = nvs(&["verify", "--suite", "geometry", "--config", "tol.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("[FAIL] criterion  4"));
    assert!(stderr(&o).contains("criterion 4"));
    assert!(stdout(&o).contains("failures=\"1\""));
}

#[test]
fn nvs_log_controls_logging() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), PLANE).unwrap();
    let o = Command::new(BIN)
        .args(["synthesize", "--config", "cfg.json", "--out", "a"])
        .env("NVS_LOG", "info")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(stderr(&o).contains("INFO"));
    let o = Command::new(BIN)
        .args(["synthesize", "--config", "cfg.json", "--out", "b"])
        .env("NVS_LOG", "error")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!stderr(&o).contains("INFO"));
}
