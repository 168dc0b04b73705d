//! Experiment configs and the work behind each CLI subcommand.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::denoiser::{Denoiser, EchoDenoiser, GmmFrameDenoiser, GmmPrior};
use crate::error::{Error, Result};
use crate::geometry::{render_synthetic, Camera, CameraIntrinsics, DepthMap, Pose, SourceView, SyntheticScene};
use crate::guidance::{blend_ratio, lambda_numeric_oracle, lambda_q, lambda_raw, GuidanceConfig, WeightFn, Weights};
use crate::image::ImageGrid;
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::solver::{
    make_trajectory, orbit, solve, solve_360, Chain360, SceneInput, SceneKind, SolveReport, SyntheticDepth,
    Trajectory, TrajectorySpec,
};
use crate::wire::RemoteDenoiser;

pub const SWEEP_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    /// Procedural scene rendered from the identity pose.
    Synthetic {
        id: SyntheticScene,
        #[serde(default = "default_size")]
        width: usize,
        #[serde(default = "default_size")]
        height: usize,
    },
    /// Directory written by `render-synthetic` or by hand; see [`load_scene_dir`].
    Directory {
        path: PathBuf,
        #[serde(default)]
        kind: SceneKind,
    },
}

fn default_size() -> usize {
    64
}

/// Settings of the built-in mixture denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuiltinGmm {
    /// Added to every component mean so the prior is biased away from the truth.
    pub mean_shift: f64,
    pub variance: f64,
    /// Components spread around the full circle for 360 runs.
    pub orbit_components: usize,
}

impl Default for BuiltinGmm {
    fn default() -> Self {
        Self {
            mean_shift: 0.05,
            variance: 1e-3,
            orbit_components: 24,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub schedule: ScheduleParams,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    /// `builtin:gmm`, `builtin:echo`, `tcp://host:port` or `stdio://command args`.
    #[serde(default = "default_denoiser")]
    pub denoiser: String,
    #[serde(default)]
    pub gmm: BuiltinGmm,
    /// When set, runs the 360-degree chain instead of `trajectory`.
    #[serde(default)]
    pub chain_360: Option<Chain360>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_denoiser() -> String {
    "builtin:gmm".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.guidance.validate()?;
        NoiseSchedule::from_params(self.schedule)?;
        if let SceneSource::Synthetic { width, height, .. } = self.scene {
            if width == 0 || height == 0 {
                return Err(Error::invalid("synthetic scene size must be positive"));
            }
        }
        if !(self.gmm.variance.is_finite() && self.gmm.variance > 0.0 && self.gmm.mean_shift.is_finite()) {
            return Err(Error::invalid("gmm variance must be positive and mean_shift finite"));
        }
        if self.chain_360.is_some() && self.gmm.orbit_components == 0 {
            return Err(Error::invalid("gmm.orbit_components must be positive"));
        }
        let known = ["builtin:gmm", "builtin:echo"];
        if !(known.contains(&self.denoiser.as_str())
            || self.denoiser.starts_with("tcp://")
            || self.denoiser.starts_with("stdio://"))
        {
            return Err(Error::invalid(format!("unknown denoiser uri `{}`", self.denoiser)));
        }
        Ok(())
    }

    /// Every effective parameter, defaults filled in. The output directory
    /// is left out so that reports from different locations compare equal.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("out");
        }
        v
    }
}

/// Scene plus the ground-truth renderer when the scene is procedural.
pub struct LoadedScene {
    pub input: SceneInput,
    pub synthetic: Option<SyntheticScene>,
}

pub fn load_scene(source: &SceneSource) -> Result<LoadedScene> {
    match source {
        SceneSource::Synthetic { id, width, height } => {
            let k = CameraIntrinsics::canonical(*width, *height);
            let (image, depth) = render_synthetic(*id, &Camera::new(k, Pose::identity()))?;
            let view = SourceView {
                image,
                depth,
                pose: Pose::identity(),
            };
            Ok(LoadedScene {
                input: SceneInput::new(vec![view], k, SceneKind::SingleView)?,
                synthetic: Some(*id),
            })
        }
        SceneSource::Directory { path, kind } => Ok(LoadedScene {
            input: load_scene_dir(path, *kind)?,
            synthetic: None,
        }),
    }
}

fn view_paths(dir: &Path, i: usize) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("view_{i:03}.png")),
        dir.join(format!("view_{i:03}.depth.raw")),
        dir.join(format!("view_{i:03}.depth.json")),
    )
}

/// Reads `intrinsics.json`, `poses.json` (one pose per view) and for each
/// view `view_NNN.png`, `view_NNN.depth.raw`, `view_NNN.depth.json`.
pub fn load_scene_dir(dir: &Path, kind: SceneKind) -> Result<SceneInput> {
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::file(&p, e))
    };
    let intrinsics: CameraIntrinsics = serde_json::from_str(&read("intrinsics.json")?)?;
    let poses: Vec<Pose> = serde_json::from_str(&read("poses.json")?)?;
    let views = poses
        .into_iter()
        .enumerate()
        .map(|(i, pose)| {
            let (png, raw, header) = view_paths(dir, i);
            if !raw.exists() || !header.exists() {
                return Err(Error::invalid(format!(
                    "view {i}: missing depth ({} / {})",
                    raw.display(),
                    header.display()
                )));
            }
            Ok(SourceView {
                image: ImageGrid::read_png(&png)?,
                depth: DepthMap::read(&raw, &header)?,
                pose,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SceneInput::new(views, intrinsics, kind)
}

/// Writes the views in the directory layout read by [`load_scene_dir`].
pub fn save_scene_dir(dir: &Path, intrinsics: &CameraIntrinsics, views: &[SourceView]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    crate::solver::write_json(&dir.join("intrinsics.json"), &serde_json::to_value(intrinsics)?)?;
    let poses: Vec<Pose> = views.iter().map(|v| v.pose).collect();
    crate::solver::write_json(&dir.join("poses.json"), &serde_json::to_value(&poses)?)?;
    for (i, v) in views.iter().enumerate() {
        let (png, raw, header) = view_paths(dir, i);
        v.image.write_png(&png)?;
        v.depth.write(&raw, &header)?;
    }
    Ok(())
}

/// Renders `scene` at every trajectory pose into a scene directory.
pub fn render_scene_dir(scene: SyntheticScene, intrinsics: CameraIntrinsics, traj: &Trajectory, dir: &Path) -> Result<()> {
    let views = traj
        .poses
        .iter()
        .map(|p| {
            let (image, depth) = render_synthetic(scene, &Camera::new(intrinsics, *p))?;
            Ok(SourceView { image, depth, pose: *p })
        })
        .collect::<Result<Vec<_>>>()?;
    save_scene_dir(dir, &intrinsics, &views)
}

pub fn ground_truth(scene: SyntheticScene, intrinsics: CameraIntrinsics, poses: &[Pose]) -> Result<Vec<ImageGrid>> {
    poses
        .iter()
        .map(|p| Ok(render_synthetic(scene, &Camera::new(intrinsics, *p))?.0))
        .collect()
}

/// Equal-weight mixture whose components are `images` shifted by `settings.mean_shift`.
pub fn shifted_gmm(images: &[ImageGrid], settings: &BuiltinGmm) -> Result<GmmPrior> {
    let means = images
        .iter()
        .map(|g| g.as_slice().iter().map(|v| v + settings.mean_shift).collect())
        .collect();
    GmmPrior::uniform(means, settings.variance)
}

/// The denoiser a config asks for, sized for `frames` frames.
pub fn build_denoiser(
    cfg: &ExperimentConfig,
    scene: &LoadedScene,
    traj: Option<&Trajectory>,
    frames: usize,
) -> Result<Box<dyn Denoiser>> {
    let shape = scene.input.frame_shape();
    match cfg.denoiser.as_str() {
        "builtin:gmm" => {
            let images = match (scene.synthetic, &cfg.chain_360) {
                (Some(id), Some(chain)) => {
                    let anchor = scene.input.views[0].pose;
                    let n = cfg.gmm.orbit_components;
                    let ring = orbit(&anchor, chain.radius, std::f64::consts::TAU * (n - 1) as f64 / n as f64, n)?;
                    ground_truth(id, scene.input.intrinsics, &ring.poses)?
                }
                (Some(id), None) => {
                    let traj = traj.ok_or_else(|| Error::invalid("builtin:gmm needs a trajectory"))?;
                    ground_truth(id, scene.input.intrinsics, &traj.poses)?
                }
                (None, _) => scene.input.views.iter().map(|v| v.image.clone()).collect(),
            };
            Ok(Box::new(GmmFrameDenoiser::new(shifted_gmm(&images, &cfg.gmm)?, shape, frames)?))
        }
        "builtin:echo" => Ok(Box::new(EchoDenoiser {
            frame_count: frames,
            channels: shape.channels,
            supports_vjp: true,
        })),
        uri => Ok(Box::new(RemoteDenoiser::connect(uri)?)),
    }
}

pub struct Synthesis {
    pub report: SolveReport,
    /// Mean squared error against renders at the output poses (synthetic scenes).
    pub mse: Option<f64>,
}

pub fn mean_mse(frames: &[ImageGrid], truth: &[ImageGrid]) -> Result<f64> {
    if frames.len() != truth.len() || frames.is_empty() {
        return Err(Error::shape(truth.len(), frames.len()));
    }
    let mut total = 0.0;
    for (f, t) in frames.iter().zip(truth) {
        total += f.mse(t)?;
    }
    Ok(total / frames.len() as f64)
}

pub fn synthesize(cfg: &ExperimentConfig) -> Result<Synthesis> {
    cfg.validate()?;
    let scene = load_scene(&cfg.scene)?;
    let schedule = NoiseSchedule::from_params(cfg.schedule)?;
    let report = match &cfg.chain_360 {
        Some(chain) => {
            let den = build_denoiser(cfg, &scene, None, chain.frames)?;
            let id = scene
                .synthetic
                .ok_or_else(|| Error::invalid("360 chaining needs a synthetic scene for prompt depth"))?;
            let depth = SyntheticDepth {
                scene: id,
                intrinsics: scene.input.intrinsics,
            };
            solve_360(&scene.input, den.as_ref(), &schedule, &cfg.guidance, cfg.seed, chain, &depth)?
        }
        None => {
            let anchor = scene.input.views[0].pose;
            let traj = make_trajectory(&cfg.trajectory, &anchor)?;
            let den = build_denoiser(cfg, &scene, Some(&traj), traj.len())?;
            solve(&scene.input, &traj, den.as_ref(), &schedule, &cfg.guidance, cfg.seed)?
        }
    };
    let mse = match scene.synthetic {
        Some(id) if report.output.frame_shape() == scene.input.frame_shape() => {
            let truth = ground_truth(id, scene.input.intrinsics, &report.poses)?;
            Some(mean_mse(report.output.frames(), &truth)?)
        }
        _ => None,
    };
    Ok(Synthesis { report, mse })
}

/// Runs [`synthesize`] and writes everything under `out`.
pub fn run_synthesize(cfg: &ExperimentConfig, out: &Path) -> Result<Synthesis> {
    let result = synthesize(cfg)?;
    let mut echo = cfg.echo();
    echo["mse_vs_ground_truth"] = json!(result.mse);
    result.report.save(out, &echo)?;
    log::info!(
        "wrote {} frames to {} ({} denoiser calls)",
        result.report.output.len(),
        out.display(),
        result.report.denoiser_calls
    );
    Ok(result)
}

/// Grid for `lambda-sweep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub weights: Weights,
    pub sigma_range: [f64; 2],
    pub pose_range: [f64; 2],
    pub sigma_points: usize,
    pub pose_points: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub constant: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        let g = GuidanceConfig::default();
        Self {
            weights: g.weights(),
            sigma_range: [0.002, 700.0],
            pose_range: [0.0, 1.0],
            sigma_points: 50,
            pose_points: 11,
            lambda_min: g.lambda_min,
            lambda_max: g.lambda_max,
            constant: 1.0,
        }
    }
}

/// `lo` when `n == 1`, otherwise `n` points from `hi` down to `lo`,
/// geometric when both ends are positive.
fn descending_grid(lo: f64, hi: f64, n: usize, geometric: bool) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            if i == 0 {
                hi
            } else if i == n - 1 {
                lo
            } else if geometric {
                (hi.ln() + (lo.ln() - hi.ln()) * f).exp()
            } else {
                hi + (lo - hi) * f
            }
        })
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 8] = [
    "weight_fn",
    "sigma",
    "pose_dist",
    "Q",
    "lambda_formula_raw",
    "lambda_clamped",
    "lambda_oracle",
    "ratio",
];

fn weight_fn_name(w: &WeightFn) -> &'static str {
    match w {
        WeightFn::Adaptive => "adaptive",
        WeightFn::Constant(_) => "constant",
        WeightFn::Linear => "linear",
        WeightFn::Exponential => "exponential",
        WeightFn::OracleNumeric => "oracle_numeric",
    }
}

/// Writes the sweep as CSV. Sigma runs from high to low like a schedule;
/// the linear and exponential modes treat grid position `i` of `n` as
/// remaining fraction `(n - i) / n`.
pub fn lambda_sweep(params: &SweepParams, out: impl Write) -> Result<()> {
    let [s_lo, s_hi] = params.sigma_range;
    let [p_lo, p_hi] = params.pose_range;
    if !(s_lo.is_finite() && s_hi.is_finite() && s_lo >= 0.0 && s_lo <= s_hi) {
        return Err(Error::invalid(format!("bad sigma range {:?}", params.sigma_range)));
    }
    if !(p_lo.is_finite() && p_hi.is_finite() && p_lo >= 0.0 && p_lo <= p_hi) {
        return Err(Error::invalid(format!("bad pose range {:?}", params.pose_range)));
    }
    if params.sigma_points == 0 || params.pose_points == 0 {
        return Err(Error::invalid("grid sizes must be positive"));
    }
    let w = params.weights;
    let base = GuidanceConfig {
        lambda_min: params.lambda_min,
        lambda_max: params.lambda_max,
        ..GuidanceConfig::with_weights(w)
    };
    base.validate()?;
    let sigmas = descending_grid(s_lo, s_hi, params.sigma_points, s_lo > 0.0);
    let poses = descending_grid(p_lo, p_hi, params.pose_points, false);
    let modes = [
        WeightFn::Adaptive,
        WeightFn::Constant(params.constant),
        WeightFn::Linear,
        WeightFn::Exponential,
        WeightFn::OracleNumeric,
    ];
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(SWEEP_COLUMNS).map_err(csv_err)?;
    let n = sigmas.len();
    for mode in modes {
        let cfg = GuidanceConfig {
            weight_fn: mode,
            ..base.clone()
        };
        cfg.validate()?;
        for &pose in poses.iter().rev() {
            for (i, &sigma) in sigmas.iter().enumerate() {
                let t = (n - i) as f64 / n as f64;
                let eval = cfg.weight(sigma, pose, t);
                let raw = match mode {
                    WeightFn::Adaptive => lambda_raw(w, sigma, pose),
                    _ => eval.raw,
                };
                csv.write_record([
                    weight_fn_name(&mode).to_string(),
                    fmt(sigma),
                    fmt(pose),
                    fmt(lambda_q(w, sigma, pose)),
                    raw.map(fmt).unwrap_or_default(),
                    fmt(eval.clamped),
                    fmt(lambda_numeric_oracle(w, sigma, pose)),
                    fmt(blend_ratio(eval.clamped)),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

/// `render-synthetic`: a scene directory with one view per trajectory pose.
pub fn render_synthetic_cmd(
    scene: SyntheticScene,
    width: usize,
    height: usize,
    spec: &TrajectorySpec,
    out: &Path,
) -> Result<Trajectory> {
    let k = CameraIntrinsics::new(width as f64, width as f64, width as f64 / 2.0, height as f64 / 2.0, width, height)?;
    let traj = make_trajectory(spec, &Pose::identity())?;
    render_scene_dir(scene, k, &traj, out)?;
    Ok(traj)
}
