//! Acceptance criteria, runnable from the CLI and the test suite.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{gmm_denoise, gmm_vjp, Denoiser, GmmFrameDenoiser, GmmPrior, LatentVideo};
use crate::error::{Error, Result};
use crate::experiment::{ground_truth, mean_mse, run_synthesize, shifted_gmm, BuiltinGmm, ExperimentConfig};
use crate::geometry::{
    forward_warp, pose_distance, render_synthetic, reproject_pixels, Camera, CameraIntrinsics, Pose, SyntheticScene,
};
use crate::guidance::{
    lambda_numeric_oracle, lambda_objective, lambda_raw, posterior_update, step_ratio, step_ratio_bound,
    GuidanceConfig, Modulation, Weights,
};
use crate::image::{ImageGrid, Shape};
use crate::schedule::NoiseSchedule;
use crate::solver::{
    make_trajectory, sample_unguided, solve, solve_from, initial_latent, SceneInput, SceneKind, Trajectory,
    TrajectorySpec,
};
use crate::wire::{fuzz, RemoteDenoiser, TensorFrame, WireServer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Geometry,
    Schedule,
    Denoiser,
    Guidance,
    Solver,
    Wire,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "geometry" => Suite::Geometry,
            "schedule" => Suite::Schedule,
            "denoiser" => Suite::Denoiser,
            "guidance" => Suite::Guidance,
            "solver" => Suite::Solver,
            "wire" => Suite::Wire,
            "all" => Suite::All,
            other => return Err(Error::invalid(format!("unknown suite `{other}`"))),
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("suite serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

/// Thresholds and sample sizes. Overridable from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub lambda_draws: usize,
    pub lambda_rel_err: f64,
    pub oracle_instances: usize,
    pub oracle_probes: usize,
    pub oracle_slack: f64,
    pub oracle_q0: f64,
    pub warp_pairs: usize,
    pub warp_max_pose_dist: f64,
    pub warp_mae: f64,
    pub warp_coverage: f64,
    pub ep_points: usize,
    pub ep_depth_scale: f64,
    pub ep_pearson: f64,
    pub unguided_samples: usize,
    pub unguided_mean: f64,
    pub unguided_weight: f64,
    pub saturation: f64,
    pub guidance_trials: usize,
    pub guidance_wins: usize,
    pub vjp_instances: usize,
    pub vjp_rel_err: f64,
    pub kappa_rel_err: f64,
    pub step_seeds: usize,
    pub step_fraction: f64,
    pub wire_tensors: usize,
    pub fuzz_frames: usize,
    pub fuzz_seed: u64,
    /// Multiplies every runtime budget.
    pub time_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            lambda_draws: 10_000,
            lambda_rel_err: 1e-12,
            oracle_instances: 1_000,
            oracle_probes: 100,
            oracle_slack: 1e-9,
            oracle_q0: 1e-6,
            warp_pairs: 20,
            warp_max_pose_dist: 0.3,
            warp_mae: 2e-2,
            warp_coverage: 0.6,
            ep_points: 10,
            ep_depth_scale: 1.1,
            ep_pearson: 0.9,
            unguided_samples: 10_000,
            unguided_mean: 0.05,
            unguided_weight: 0.03,
            saturation: 1e-3,
            guidance_trials: 100,
            guidance_wins: 95,
            vjp_instances: 100,
            vjp_rel_err: 1e-4,
            kappa_rel_err: 1e-12,
            step_seeds: 20,
            step_fraction: 0.9,
            wire_tensors: 1_000,
            fuzz_frames: 10_000,
            fuzz_seed: 0x5eed,
            time_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub suite: Suite,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {:>2} {:<28} {} ({:.2}s of {:.0}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds,
            self.budget_seconds
        )
    }
}

struct Criterion {
    id: u8,
    name: &'static str,
    suite: Suite,
    budget: f64,
    run: fn(&Tolerances) -> Result<(bool, String)>,
}

const CRITERIA: [Criterion; 11] = [
    Criterion {
        id: 1,
        name: "lambda closed form",
        suite: Suite::Guidance,
        budget: 5.0,
        run: lambda_fidelity,
    },
    Criterion {
        id: 2,
        name: "lambda oracle optimality",
        suite: Suite::Guidance,
        budget: 30.0,
        run: oracle_optimality,
    },
    Criterion {
        id: 3,
        name: "warp/render equivalence",
        suite: Suite::Geometry,
        budget: 20.0,
        run: warp_render,
    },
    Criterion {
        id: 4,
        name: "prior error linearity",
        suite: Suite::Geometry,
        budget: 20.0,
        run: prior_error_linearity,
    },
    Criterion {
        id: 5,
        name: "unguided sampling",
        suite: Suite::Schedule,
        budget: 60.0,
        run: unguided_sampling,
    },
    Criterion {
        id: 6,
        name: "dgs saturation",
        suite: Suite::Solver,
        budget: 10.0,
        run: dgs_saturation,
    },
    Criterion {
        id: 7,
        name: "guidance helps",
        suite: Suite::Solver,
        budget: 120.0,
        run: guidance_helps,
    },
    Criterion {
        id: 8,
        name: "posterior machinery",
        suite: Suite::Denoiser,
        budget: 30.0,
        run: posterior_machinery,
    },
    Criterion {
        id: 9,
        name: "step-count monotonicity",
        suite: Suite::Solver,
        budget: 120.0,
        run: step_count,
    },
    Criterion {
        id: 10,
        name: "wire protocol",
        suite: Suite::Wire,
        budget: 60.0,
        run: wire_protocol,
    },
    Criterion {
        id: 11,
        name: "end-to-end determinism",
        suite: Suite::Solver,
        budget: 30.0,
        run: determinism,
    },
];

pub fn criterion_ids(suite: Suite) -> Vec<u8> {
    CRITERIA
        .iter()
        .filter(|c| suite == Suite::All || c.suite == suite)
        .map(|c| c.id)
        .collect()
}

/// Runs one criterion. Errors count as failures.
pub fn run_criterion(id: u8, tol: &Tolerances) -> Result<CriterionResult> {
    let c = CRITERIA
        .iter()
        .find(|c| c.id == id)
        .ok_or_else(|| Error::invalid(format!("no criterion {id}")))?;
    let started = Instant::now();
    let (ok, detail) = match (c.run)(tol) {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let seconds = started.elapsed().as_secs_f64();
    let budget = c.budget * tol.time_factor;
    let in_time = seconds <= budget;
    Ok(CriterionResult {
        id: c.id,
        name: c.name,
        suite: c.suite,
        passed: ok && in_time,
        detail: if in_time { detail } else { format!("{detail}; over time budget") },
        seconds,
        budget_seconds: budget,
    })
}

pub fn run_suite(suite: Suite, tol: &Tolerances) -> Vec<CriterionResult> {
    criterion_ids(suite)
        .into_iter()
        .map(|id| {
            let r = run_criterion(id, tol).expect("listed criterion exists");
            log::info!("{r}");
            r
        })
        .collect()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// JUnit-style XML, one test case per criterion.
pub fn junit_xml(suite: Suite, results: &[CriterionResult]) -> String {
    let failures = results.iter().filter(|r| !r.passed).count();
    let total: f64 = results.iter().map(|r| r.seconds).sum();
    let mut out = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<testsuite name=\"nvs-{suite}\" tests=\"{}\" failures=\"{failures}\" time=\"{total:.3}\">\n",
        results.len()
    );
    for r in results {
        out.push_str(&format!(
            "  <testcase classname=\"{}\" name=\"criterion_{:02} {}\" time=\"{:.3}\"",
            r.suite,
            r.id,
            xml_escape(r.name),
            r.seconds
        ));
        if r.passed {
            out.push_str(&format!(">\n    <system-out>{}</system-out>\n  </testcase>\n", xml_escape(&r.detail)));
        } else {
            out.push_str(&format!(
                ">\n    <failure message=\"{}\"/>\n  </testcase>\n",
                xml_escape(&r.detail)
            ));
        }
    }
    out.push_str("</testsuite>\n");
    out
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn random_weights(rng: &mut ChaCha8Rng) -> Weights {
    Weights::new(
        log_uniform(rng, 1e-8, 1e-2),
        rng.random_range(0.05..2.0),
        rng.random_range(1e-3..0.5),
    )
}

fn lambda_fidelity(tol: &Tolerances) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut drawn = 0;
    while accepted < tol.lambda_draws {
        drawn += 1;
        let w = random_weights(&mut rng);
        let sigma = log_uniform(&mut rng, 1e-3, 1e3);
        let d = rng.random_range(0.0..2.0);
        let Some(exact) = nvs_oracle::lambda_formula(w.v1, w.v2, w.v3, sigma, d) else {
            continue;
        };
        if exact <= 0.0 {
            continue;
        }
        accepted += 1;
        let got = lambda_raw(w, sigma, d).ok_or_else(|| Error::invalid("closed form refused a valid draw"))?;
        worst = worst.max(nvs_oracle::relative_error(got, exact));
    }
    Ok((
        worst <= tol.lambda_rel_err,
        format!("max rel err {worst:.2e} over {accepted} draws ({drawn} drawn)"),
    ))
}

fn oracle_optimality(tol: &Tolerances) -> Result<(bool, String)> {
    let worst = (0..tol.oracle_instances)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
            let w = random_weights(&mut rng);
            let sigma = log_uniform(&mut rng, 1e-3, 1e3);
            let d = rng.random_range(0.0..2.0);
            let lam = lambda_numeric_oracle(w, sigma, d);
            let best = lambda_objective(lam, w, sigma, d)?;
            let mut excess = f64::NEG_INFINITY;
            for _ in 0..tol.oracle_probes {
                let probe = log_uniform(&mut rng, 1e-8, 1e12);
                excess = excess.max(best - lambda_objective(probe, w, sigma, d)?);
            }
            Ok(excess)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut q0 = 0.0f64;
    for _ in 0..100 {
        let w = random_weights(&mut rng);
        let d = rng.random_range(0.01..2.0);
        let sigma = w.v3 * d / w.v2;
        if crate::guidance::lambda_q(w, sigma, d) != 0.0 {
            continue;
        }
        q0 = q0.max((lambda_numeric_oracle(w, sigma, d) - 1.0).abs());
    }
    Ok((
        worst <= tol.oracle_slack && q0 <= tol.oracle_q0,
        format!("worst probe gain {worst:.2e}, |lambda(Q=0) - 1| <= {q0:.2e}"),
    ))
}

fn random_pose_near(rng: &mut ChaCha8Rng, max_t: f64, max_angle: f64) -> Pose {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let t = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize()
        * rng.random_range(0.0..max_t);
    Pose::from_axis_angle(axis, rng.random_range(0.0..max_angle), t)
}

fn warp_render(tol: &Tolerances) -> Result<(bool, String)> {
    let k = CameraIntrinsics::canonical(64, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_mae = 0.0f64;
    let mut worst_cov = 1.0f64;
    for scene in [SyntheticScene::Plane, SyntheticScene::BoxRoom] {
        for _ in 0..tol.warp_pairs {
            let source = random_pose_near(&mut rng, 0.1, 0.1);
            let target = loop {
                let delta = random_pose_near(&mut rng, tol.warp_max_pose_dist, 0.1);
                let t = source.compose(&delta);
                if pose_distance(&source, &t) <= tol.warp_max_pose_dist {
                    break t;
                }
            };
            let (img, depth) = render_synthetic(scene, &Camera::new(k, source))?;
            let (truth, _) = render_synthetic(scene, &Camera::new(k, target))?;
            let reproj = reproject_pixels(&k, &depth, &Pose::relative(&source, &target))?;
            let warp = forward_warp(&img, &reproj)?;
            worst_cov = worst_cov.min(warp.coverage);
            let c = truth.channels();
            let (mut sum, mut n) = (0.0, 0usize);
            for (p, ok) in warp.validity.iter().enumerate() {
                if *ok {
                    for ch in 0..c {
                        sum += (warp.image.pixel(p)[ch] - truth.pixel(p)[ch]).abs();
                    }
                    n += c;
                }
            }
            worst_mae = worst_mae.max(sum / n.max(1) as f64);
        }
    }
    Ok((
        worst_mae <= tol.warp_mae && worst_cov >= tol.warp_coverage,
        format!("worst pair MAE {worst_mae:.4}, min coverage {worst_cov:.3}"),
    ))
}

fn prior_error_linearity(tol: &Tolerances) -> Result<(bool, String)> {
    let k = CameraIntrinsics::canonical(64, 64);
    let (img, depth) = render_synthetic(SyntheticScene::Plane, &Camera::canonical())?;
    let depth = depth.scaled(tol.ep_depth_scale)?;
    let mut dists = Vec::new();
    let mut errs = Vec::new();
    for i in 1..=tol.ep_points {
        let d = 0.3 * i as f64 / tol.ep_points as f64;
        let target = Pose::from_translation(Vector3::new(d, 0.0, 0.0));
        let (truth, _) = render_synthetic(SyntheticScene::Plane, &Camera::new(k, target))?;
        let warp = forward_warp(&img, &reproject_pixels(&k, &depth, &Pose::relative(&Pose::identity(), &target))?)?;
        let mut sq = 0.0;
        for (p, ok) in warp.validity.iter().enumerate() {
            if *ok {
                for (a, b) in warp.image.pixel(p).iter().zip(truth.pixel(p)) {
                    sq += (a - b) * (a - b);
                }
            }
        }
        dists.push(d);
        errs.push(sq.sqrt());
    }
    let r = nvs_oracle::pearson(&dists, &errs);
    Ok((
        r >= tol.ep_pearson,
        format!("pearson {r:.4} over {} translations", dists.len()),
    ))
}

fn unguided_sampling(tol: &Tolerances) -> Result<(bool, String)> {
    let means = vec![vec![-2.0, 0.0], vec![2.0, 1.0], vec![0.0, -2.5]];
    let weights = vec![0.2, 0.5, 0.3];
    let prior = GmmPrior::new(weights.clone(), means.clone(), vec![0.1, 0.2, 0.15])?;
    let n = tol.unguided_samples;
    let den = GmmFrameDenoiser::new(prior.clone(), Shape::new(1, 2, 1), n)?;
    let schedule = NoiseSchedule::build(700.0, 0.002, 7.0, 100)?;
    let out = sample_unguided(&den, &schedule, Shape::new(1, 2, 1), 5)?;
    let mut sums = [[0.0; 2]; 3];
    let mut counts = [0usize; 3];
    for f in out.frames() {
        let x = f.as_slice();
        let r = prior.responsibilities(x, 0.0);
        let k = (0..3).max_by(|&a, &b| r[a].total_cmp(&r[b])).expect("three components");
        counts[k] += 1;
        sums[k][0] += x[0];
        sums[k][1] += x[1];
    }
    let mut mean_err = 0.0f64;
    let mut weight_err = 0.0f64;
    for k in 0..3 {
        let c = counts[k].max(1) as f64;
        mean_err = mean_err
            .max((sums[k][0] / c - means[k][0]).abs())
            .max((sums[k][1] / c - means[k][1]).abs());
        weight_err = weight_err.max((counts[k] as f64 / n as f64 - weights[k]).abs());
    }
    Ok((
        mean_err <= tol.unguided_mean && weight_err <= tol.unguided_weight,
        format!("max mean err {mean_err:.4}, max weight err {weight_err:.4} over {n} samples"),
    ))
}

fn plane_scene(size: usize) -> Result<SceneInput> {
    let k = CameraIntrinsics::canonical(size, size);
    let (image, depth) = render_synthetic(SyntheticScene::Plane, &Camera::new(k, Pose::identity()))?;
    SceneInput::new(
        vec![crate::geometry::SourceView {
            image,
            depth,
            pose: Pose::identity(),
        }],
        k,
        SceneKind::SingleView,
    )
}

fn dgs_saturation(tol: &Tolerances) -> Result<(bool, String)> {
    let scene = plane_scene(64)?;
    let traj = Trajectory::new(vec![Pose::identity(); 4])?;
    let gmm = BuiltinGmm {
        mean_shift: 0.2,
        ..Default::default()
    };
    let prior = shifted_gmm(&[scene.views[0].image.clone()], &gmm)?;
    let den = GmmFrameDenoiser::new(prior, scene.frame_shape(), 4)?;
    let schedule = NoiseSchedule::build(700.0, 0.002, 7.0, 25)?;
    let config = GuidanceConfig {
        lambda_min: 1e12,
        lambda_max: 1e12,
        modulation: Modulation::WeightedAverage,
        ..Default::default()
    };
    let report = solve(&scene, &traj, &den, &schedule, &config, 6)?;
    let mut worst = 0.0f64;
    for f in report.output.frames() {
        worst = worst.max(f.max_abs_diff(&scene.views[0].image)?);
    }
    Ok((worst <= tol.saturation, format!("max |x - prior| {worst:.2e}")))
}

/// Plane scene, four poses sliding right, mixture prior whose components
/// are the true views shifted by 0.05.
struct GuidedSetup {
    scene: SceneInput,
    traj: Trajectory,
    truth: Vec<ImageGrid>,
    denoiser: GmmFrameDenoiser,
}

impl GuidedSetup {
    fn new() -> Result<Self> {
        Self::with_gmm(&BuiltinGmm::default())
    }

    fn with_gmm(settings: &BuiltinGmm) -> Result<Self> {
        let scene = plane_scene(32)?;
        let spec = TrajectorySpec::Line {
            frames: 4,
            extent: 0.3,
            direction: [1.0, 0.0, 0.0],
        };
        let traj = make_trajectory(&spec, &Pose::identity())?;
        let truth = ground_truth(SyntheticScene::Plane, scene.intrinsics, &traj.poses)?;
        let prior = shifted_gmm(&truth, settings)?;
        let denoiser = GmmFrameDenoiser::new(prior, scene.frame_shape(), traj.len())?;
        Ok(Self {
            scene,
            traj,
            truth,
            denoiser,
        })
    }

    fn guided_mse(&self, steps: usize, seed: u64) -> Result<f64> {
        let schedule = NoiseSchedule::build(700.0, 0.002, 7.0, steps)?;
        let init = initial_latent(self.scene.frame_shape(), self.traj.len(), schedule.sigma_max(), seed)?;
        let report = solve_from(&self.scene, &self.traj, &self.denoiser, &schedule, &GuidanceConfig::default(), init)?;
        mean_mse(report.output.frames(), &self.truth)
    }

    fn unguided_mse(&self, steps: usize, seed: u64) -> Result<f64> {
        let schedule = NoiseSchedule::build(700.0, 0.002, 7.0, steps)?;
        let out = sample_unguided(&self.denoiser, &schedule, self.scene.frame_shape(), seed)?;
        mean_mse(out.frames(), &self.truth)
    }
}

fn guidance_helps(tol: &Tolerances) -> Result<(bool, String)> {
    let setup = GuidedSetup::new()?;
    let pairs = (0..tol.guidance_trials as u64)
        .into_par_iter()
        .map(|seed| Ok((setup.guided_mse(25, seed)?, setup.unguided_mse(25, seed)?)))
        .collect::<Result<Vec<_>>>()?;
    let wins = pairs.iter().filter(|(g, u)| g < u).count();
    let mean_g = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let mean_u = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    Ok((
        wins >= tol.guidance_wins,
        format!(
            "guided < unguided in {wins}/{} trials (mean MSE {mean_g:.2e} vs {mean_u:.2e})",
            pairs.len()
        ),
    ))
}

fn step_count(tol: &Tolerances) -> Result<(bool, String)> {
    let setup = GuidedSetup::new()?;
    let pairs = (0..tol.step_seeds as u64)
        .into_par_iter()
        .map(|seed| Ok((setup.guided_mse(100, seed)?, setup.guided_mse(25, seed)?)))
        .collect::<Result<Vec<_>>>()?;
    let ok = pairs.iter().filter(|(a, b)| a <= b).count();
    let needed = (tol.step_fraction * pairs.len() as f64).ceil() as usize;
    let mean_100 = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let mean_25 = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    Ok((
        ok >= needed,
        format!(
            "MSE(100) <= MSE(25) in {ok}/{} seeds (mean {mean_100:.3e} vs {mean_25:.3e})",
            pairs.len()
        ),
    ))
}

fn posterior_machinery(tol: &Tolerances) -> Result<(bool, String)> {
    let mut worst_vjp = 0.0f64;
    for i in 0..tol.vjp_instances {
        let mut rng = ChaCha8Rng::seed_from_u64(8000 + i as u64);
        let dim = rng.random_range(2..6);
        let k = rng.random_range(1..4);
        let means: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let variances = (0..k).map(|_| rng.random_range(0.05..0.5)).collect();
        let prior = GmmPrior::new(weights.iter().map(|w| w / total).collect(), means, variances)?;
        let sigma = log_uniform(&mut rng, 0.05, 5.0);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = gmm_vjp(&prior, &x, sigma, &c)?;
        let jac = nvs_oracle::jacobian(|y| gmm_denoise(&prior, y, sigma).expect("finite input"), &x, 1e-5);
        let want = nvs_oracle::transpose_apply(&jac, &c);
        worst_vjp = worst_vjp.max(nvs_oracle::vector_relative_error(&got, &want, 1e-8));
    }

    // update norm equals kappa
    let shape = Shape::new(4, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let means = (0..2).map(|_| (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let den = GmmFrameDenoiser::new(GmmPrior::uniform(means, 0.1)?, shape, 3)?;
    let kappa_scale = GuidanceConfig::default().kappa_scale;
    let mut worst_kappa = 0.0f64;
    for sigma in [10.0, 1.0, 0.3, 0.01] {
        let x = LatentVideo::new(
            (0..3)
                .map(|_| ImageGrid::from_fn(shape, |_, _, _| rng.random_range(-2.0..2.0)))
                .collect(),
        )?;
        let mu = den.denoise(&x, sigma)?;
        let target = mu.map(|v| v + 0.3);
        let out = posterior_update(&x, &den, &mu, &target, sigma, kappa_scale)?;
        let moved = out.latent.zip_map(&x, |a, b| a - b)?.norm();
        worst_kappa = worst_kappa.max(nvs_oracle::relative_error(moved, out.kappa));
        worst_kappa = worst_kappa.max(nvs_oracle::relative_error(out.kappa, kappa_scale * sigma.sqrt()));
    }

    let schedule = NoiseSchedule::build(700.0, 0.002, 7.0, 100)?;
    let bound = step_ratio_bound(kappa_scale);
    let worst_ratio = schedule
        .sigmas()
        .iter()
        .map(|&s| step_ratio(kappa_scale, s))
        .fold(0.0f64, f64::max);
    let ok = worst_vjp <= tol.vjp_rel_err && worst_kappa <= tol.kappa_rel_err && worst_ratio <= bound;
    Ok((
        ok,
        format!(
            "VJP rel err {worst_vjp:.2e}, |update| vs kappa {worst_kappa:.1e}, step ratio {worst_ratio:.4e} <= {bound:.4e}"
        ),
    ))
}

fn wire_protocol(tol: &Tolerances) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatched = 0;
    for _ in 0..tol.wire_tensors {
        let rank = rng.random_range(0..5);
        let dims: Vec<u32> = (0..rank).map(|_| rng.random_range(1..6)).collect();
        let n: u32 = dims.iter().product();
        let t = TensorFrame::new(dims, (0..n).map(|_| f32::from_bits(rng.random())).collect())?;
        let bytes = t.encode();
        if TensorFrame::decode(&bytes)?.encode() != bytes {
            mismatched += 1;
        }
    }
    let corpus = fuzz::corpus(tol.fuzz_seed, tol.fuzz_frames);
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let crashes = corpus.par_iter().filter(|b| !fuzz::survives(b)).count();
    std::panic::set_hook(hook);

    let shape = Shape::new(64, 64, 4);
    let means = (0..3).map(|_| (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let local = GmmFrameDenoiser::new(GmmPrior::uniform(means, 0.05)?, shape, 3)?;
    let (addr, _) = WireServer::new(Arc::new(local.clone())).spawn_tcp("127.0.0.1:0")?;
    let remote = RemoteDenoiser::connect(&format!("tcp://{addr}"))?;
    let mut differing = 0;
    for sigma in [700.0f64, 10.0, 0.5, 0.002] {
        let x = LatentVideo::new(
            (0..3)
                .map(|_| ImageGrid::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0) * sigma.max(1.0)))
                .collect(),
        )?;
        let xq = x.map(|v| v as f32 as f64);
        let want = TensorFrame::from_latent(&local.denoise(&xq, sigma)?);
        let got = TensorFrame::from_latent(&remote.denoise(&x, sigma)?);
        if want.encode() != got.encode() {
            differing += 1;
        }
    }
    Ok((
        mismatched == 0 && crashes == 0 && differing == 0,
        format!(
            "{mismatched}/{} round-trip mismatches, {crashes}/{} fuzz crashes, {differing}/4 loopback differences",
            tol.wire_tensors, tol.fuzz_frames
        ),
    ))
}

fn scratch_dir(tag: &str) -> PathBuf {
    static COUNTER: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
    let n = COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    std::env::temp_dir().join(format!("nvs-verify-{}-{tag}-{n}", std::process::id()))
}

/// Config used by the determinism check and the examples.
pub fn smoke_config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
            "scene": {"synthetic": {"id": "plane", "width": 32, "height": 32}},
            "trajectory": {"kind": "line", "frames": 4, "extent": 0.3, "direction": [1, 0, 0]},
            "schedule": {"sigma_max": 700, "sigma_min": 0.002, "rho": 7, "steps": 25},
            "seed": 11
        }"#,
    )
    .expect("smoke config is valid")
}

fn determinism(_tol: &Tolerances) -> Result<(bool, String)> {
    let cfg = smoke_config();
    let mut sums = Vec::new();
    for run in 0..2 {
        let dir = scratch_dir(&format!("run{run}"));
        let result = run_synthesize(&cfg, &dir);
        let sum = result.and_then(|r| {
            Ok((
                crate::solver::file_sha256(&dir.join("report.json"))?,
                r.report.frame_checksums(),
            ))
        });
        let _ = std::fs::remove_dir_all(&dir);
        sums.push(sum?);
    }
    let same = sums[0] == sums[1];
    Ok((
        same,
        format!(
            "report.json sha256 {} ({})",
            &sums[0].0[..16],
            if same { "identical" } else { "differs" }
        ),
    ))
}

/// Wall-clock budget of a criterion, before `time_factor`.
pub fn budget(id: u8) -> Option<Duration> {
    CRITERIA
        .iter()
        .find(|c| c.id == id)
        .map(|c| Duration::from_secs_f64(c.budget))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_partition_criteria() {
        let mut all: Vec<u8> = [
            Suite::Geometry,
            Suite::Schedule,
            Suite::Denoiser,
            Suite::Guidance,
            Suite::Solver,
            Suite::Wire,
        ]
        .iter()
        .flat_map(|s| criterion_ids(*s))
        .collect();
        all.sort();
        assert_eq!(all, (1..=11).collect::<Vec<_>>());
        assert_eq!(criterion_ids(Suite::All).len(), 11);
        assert_eq!("wire".parse::<Suite>().unwrap(), Suite::Wire);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn injected_violation_fails_named_criterion() {
        let tol = Tolerances {
            warp_mae: 1e-9,
            ..Default::default()
        };
        let r = run_criterion(3, &tol).unwrap();
        assert!(!r.passed);
        assert_eq!(r.name, "warp/render equivalence");
        let xml = junit_xml(Suite::Geometry, &[r]);
        assert!(xml.contains("failures=\"1\""));
        assert!(xml.contains("<failure message=\"worst pair MAE"));
    }

    #[test]
    fn tolerances_json_overrides() {
        let t: Tolerances = serde_json::from_str(r#"{"warp_mae": 0.5}"#).unwrap();
        assert_eq!(t.warp_mae, 0.5);
        assert_eq!(t.lambda_draws, 10_000);
        assert!(serde_json::from_str::<Tolerances>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn xml_escapes() {
        assert_eq!(xml_escape("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;");
    }
}

