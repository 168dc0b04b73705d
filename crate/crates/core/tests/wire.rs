use std::sync::Arc;

use nvs_core::denoiser::{Capabilities, Denoiser, EchoDenoiser, LatentVideo};
use nvs_core::experiment::{build_denoiser, load_scene, ExperimentConfig};
use nvs_core::guidance::{GuidanceConfig, SamplingMode};
use nvs_core::schedule::NoiseSchedule;
use nvs_core::solver::{make_trajectory, solve};
use nvs_core::wire::{fuzz, RemoteDenoiser, WireServer};
use nvs_core::Result;

/// What the wire does to a denoiser: f32 in, f32 out.
struct F32Rounded(Box<dyn Denoiser>);

fn round(v: &LatentVideo) -> LatentVideo {
    v.map(|x| x as f32 as f64)
}

impl Denoiser for F32Rounded {
    fn capabilities(&self) -> Capabilities {
        self.0.capabilities()
    }

    fn denoise(&self, x: &LatentVideo, sigma: f64) -> Result<LatentVideo> {
        Ok(round(&self.0.denoise(&round(x), sigma)?))
    }

    fn vjp(&self, x: &LatentVideo, sigma: f64, cotangent: &LatentVideo) -> Result<LatentVideo> {
        Ok(round(&self.0.vjp(&round(x), sigma, &round(cotangent))?))
    }
}

fn config(mode: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "scene": {{"synthetic": {{"id": "plane", "width": 16, "height": 16}}}},
            "trajectory": {{"kind": "line", "frames": 3, "extent": 0.2, "direction": [1, 0, 0]}},
            "schedule": {{"steps": 8}},
            "guidance": {{"mode": "{mode}"}},
            "seed": 2
        }}"#
    ))
    .unwrap()
}

#[test]
fn guided_solve_over_tcp_matches_in_process() {
    for mode in ["dgs", "posterior"] {
        let cfg = config(mode);
        let scene = load_scene(&cfg.scene).unwrap();
        let traj = make_trajectory(&cfg.trajectory, &scene.input.views[0].pose).unwrap();
        let schedule = NoiseSchedule::from_params(cfg.schedule).unwrap();
        let local = F32Rounded(build_denoiser(&cfg, &scene, Some(&traj), traj.len()).unwrap());
        let served = build_denoiser(&cfg, &scene, Some(&traj), traj.len()).unwrap();
        let (addr, _handle) = WireServer::new(Arc::from(served)).spawn_tcp("127.0.0.1:0").unwrap();
        let remote = RemoteDenoiser::connect(&format!("tcp://{addr}")).unwrap();
        let a = solve(&scene.input, &traj, &local, &schedule, &cfg.guidance, cfg.seed).unwrap();
        let b = solve(&scene.input, &traj, &remote, &schedule, &cfg.guidance, cfg.seed).unwrap();
        assert_eq!(a.output, b.output, "{mode}");
        assert_eq!(a.denoiser_calls, b.denoiser_calls);
    }
}

#[test]
fn posterior_mode_refused_without_remote_vjp() {
    let cfg = config("posterior");
    let scene = load_scene(&cfg.scene).unwrap();
    let traj = make_trajectory(&cfg.trajectory, &scene.input.views[0].pose).unwrap();
    let echo = EchoDenoiser {
        frame_count: 3,
        channels: 3,
        supports_vjp: false,
    };
    let (addr, _handle) = WireServer::new(Arc::new(echo)).spawn_tcp("127.0.0.1:0").unwrap();
    let remote = RemoteDenoiser::connect(&format!("tcp://{addr}")).unwrap();
    assert!(!remote.capabilities().supports_vjp);
    let guidance = GuidanceConfig {
        mode: SamplingMode::Posterior,
        ..cfg.guidance.clone()
    };
    let schedule = NoiseSchedule::from_params(cfg.schedule).unwrap();
    let err = solve(&scene.input, &traj, &remote, &schedule, &guidance, 0).unwrap_err();
    assert!(err.to_string().contains("vector-Jacobian"), "{err}");
}

#[test]
fn seeded_fuzz_corpus_is_survived() {
    let corpus = fuzz::corpus(0x5eed, 2_000);
    assert_eq!(corpus, fuzz::corpus(0x5eed, 2_000));
    assert!(corpus.iter().all(|frame| fuzz::survives(frame)));
}
