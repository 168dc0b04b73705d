//! The guided reverse loop: prior preparation, DGS / posterior stepping,
//! trajectories and 360-degree chaining.

mod chain;
mod report;
mod trajectory;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, LatentVideo};
use crate::error::{Error, Result};
use crate::geometry::{pose_distance_weighted, warp_prior, CameraIntrinsics, PriorWarp, SourceView, WarpStrategy};
use crate::guidance::{
    blend_ratio, dgs_step, modulate_mean, posterior_update, GuidanceConfig, LambdaRecord, LambdaTrace, SamplingMode,
};
use crate::image::{ImageGrid, Shape};
use crate::schedule::{ve_step, NoiseSchedule, NoiseSource};

pub use chain::{solve_360, Chain360, DepthProvider, StageInfo, SyntheticDepth};
pub use report::FrameChecksum;
pub(crate) use report::{file_sha256, write_json};
pub use trajectory::{make_trajectory, orbit, orbit_between, Trajectory, TrajectorySpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    #[default]
    SingleView,
    MultiView,
    MonocularVideo,
}

impl SceneKind {
    pub fn strategy(self) -> WarpStrategy {
        match self {
            SceneKind::SingleView => WarpStrategy::Single,
            SceneKind::MultiView => WarpStrategy::NearestMulti,
            SceneKind::MonocularVideo => WarpStrategy::PerTimestamp,
        }
    }
}

/// Input views with depth and pose.
#[derive(Clone, Debug)]
pub struct SceneInput {
    pub views: Vec<SourceView>,
    pub intrinsics: CameraIntrinsics,
    pub kind: SceneKind,
}

impl SceneInput {
    pub fn new(views: Vec<SourceView>, intrinsics: CameraIntrinsics, kind: SceneKind) -> Result<Self> {
        let scene = Self {
            views,
            intrinsics,
            kind,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let first = self
            .views
            .first()
            .ok_or_else(|| Error::invalid("scene needs at least one view"))?;
        if self.kind == SceneKind::SingleView && self.views.len() != 1 {
            return Err(Error::invalid(format!(
                "single_view scene given {} views",
                self.views.len()
            )));
        }
        let shape = first.image.shape();
        let k = &self.intrinsics;
        for (i, v) in self.views.iter().enumerate() {
            if v.image.shape() != shape || v.image.width() != k.width || v.image.height() != k.height {
                return Err(Error::shape((k.height, k.width, shape.channels), (i, v.image.shape())));
            }
            if v.depth.width() != k.width || v.depth.height() != k.height {
                return Err(Error::shape(
                    (k.height, k.width),
                    (i, v.depth.height(), v.depth.width()),
                ));
            }
        }
        Ok(())
    }

    pub fn frame_shape(&self) -> Shape {
        self.views[0].image.shape()
    }
}

/// One warped prior per trajectory pose.
pub fn prepare_priors(scene: &SceneInput, traj: &Trajectory) -> Result<Vec<PriorWarp>> {
    scene.validate()?;
    let strategy = scene.kind.strategy();
    if strategy == WarpStrategy::PerTimestamp && scene.views.len() != traj.len() {
        return Err(Error::invalid(format!(
            "monocular_video needs one view per target pose ({} views, {} poses)",
            scene.views.len(),
            traj.len()
        )));
    }
    traj.poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| warp_prior(&scene.views, pose, &scene.intrinsics, strategy, i, traj.len()))
        .collect()
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub output: LatentVideo,
    pub poses: Vec<crate::geometry::Pose>,
    pub lambda_trace: LambdaTrace,
    pub coverage: Vec<f64>,
    pub source_indices: Vec<usize>,
    pub pose_distances: Vec<f64>,
    pub step_seconds: Vec<f64>,
    pub denoiser_calls: usize,
    /// Filled by [`solve_360`].
    pub stages: Vec<StageInfo>,
}

fn check_capabilities(denoiser: &dyn Denoiser, frames: usize, channels: usize, config: &GuidanceConfig) -> Result<()> {
    let caps = denoiser.capabilities();
    if caps.frame_count != frames {
        return Err(Error::Capability(format!(
            "denoiser serves {} frames, trajectory has {frames}",
            caps.frame_count
        )));
    }
    if caps.channels != channels {
        return Err(Error::Capability(format!(
            "denoiser serves {} channels, scene has {channels}",
            caps.channels
        )));
    }
    if config.mode == SamplingMode::Posterior && !caps.supports_vjp {
        return Err(Error::Capability(
            "posterior mode needs a denoiser with vector-Jacobian products".into(),
        ));
    }
    Ok(())
}

/// `sigma_max * eps` for every frame, frames drawn in order from one stream.
pub fn initial_latent(shape: Shape, frames: usize, sigma_max: f64, seed: u64) -> Result<LatentVideo> {
    let mut noise = NoiseSource::new(seed);
    let frames = (0..frames)
        .map(|_| {
            let mut g = ImageGrid::zeros(shape);
            noise.fill(g.as_mut_slice());
            g.as_mut_slice().iter_mut().for_each(|v| *v *= sigma_max);
            g
        })
        .collect();
    LatentVideo::new(frames)
}

/// Full guided reverse loop from seeded noise.
pub fn solve(
    scene: &SceneInput,
    traj: &Trajectory,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
    seed: u64,
) -> Result<SolveReport> {
    let init = initial_latent(scene.frame_shape(), traj.len(), schedule.sigma_max(), seed)?;
    solve_from(scene, traj, denoiser, schedule, config, init)
}

/// [`solve`] with a caller-supplied starting latent.
pub fn solve_from(
    scene: &SceneInput,
    traj: &Trajectory,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
    init: LatentVideo,
) -> Result<SolveReport> {
    config.validate()?;
    let priors = prepare_priors(scene, traj)?;
    solve_with_priors(scene, traj, &priors, denoiser, schedule, config, init)
}

/// Reverse loop against precomputed priors (one per pose).
pub fn solve_with_priors(
    scene: &SceneInput,
    traj: &Trajectory,
    priors: &[PriorWarp],
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
    init: LatentVideo,
) -> Result<SolveReport> {
    config.validate()?;
    let n = traj.len();
    let shape = scene.frame_shape();
    if priors.len() != n {
        return Err(Error::shape(n, priors.len()));
    }
    if init.len() != n || init.frame_shape() != shape {
        return Err(Error::shape((n, shape), (init.len(), init.frame_shape())));
    }
    check_capabilities(denoiser, n, shape.channels, config)?;

    let dists: Vec<f64> = priors
        .iter()
        .zip(&traj.poses)
        .map(|(p, pose)| pose_distance_weighted(&scene.views[p.source_index].pose, pose, config.rotation_weight))
        .collect();
    let steps = schedule.steps();
    let mut x = init;
    let mut trace = LambdaTrace::default();
    let mut step_seconds = Vec::with_capacity(steps);
    let mut calls = 0;

    for (k, (sigma, sigma_next)) in schedule.step_pairs().enumerate() {
        let started = Instant::now();
        let non_finite = || Error::NonFinite { step: k, sigma };
        let mu = denoiser.denoise(&x, sigma)?;
        calls += 1;
        x.ensure_same_shape(&mu)?;
        if !mu.is_finite() {
            return Err(non_finite());
        }
        let t = (steps - k) as f64 / steps as f64;
        let modulated = mu
            .frames()
            .par_iter()
            .zip(priors)
            .zip(&dists)
            .map(|((m, prior), &d)| {
                let eval = config.weight(sigma, d, t);
                modulate_mean(m, &prior.warp, eval.clamped, config.modulation).map(|mt| (mt, eval))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tilde = Vec::with_capacity(n);
        for (frame, ((mt, eval), &d)) in modulated.into_iter().zip(&dists).enumerate() {
            trace.push(LambdaRecord {
                step: k,
                frame,
                sigma,
                pose_dist: d,
                q: eval.q,
                lambda_raw: eval.raw,
                lambda_clamped: eval.clamped,
                ratio: blend_ratio(eval.clamped),
            });
            tilde.push(mt);
        }
        let mu_tilde = LatentVideo::new(tilde)?;

        x = match config.mode {
            SamplingMode::Dgs => LatentVideo::new(
                x.frames()
                    .par_iter()
                    .zip(mu_tilde.frames())
                    .map(|(xf, mt)| dgs_step(xf, mt, sigma, sigma_next))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|_| non_finite())?,
            )?,
            SamplingMode::Posterior => {
                let moved = posterior_update(&x, denoiser, &mu, &mu_tilde, sigma, config.kappa_scale)?;
                calls += 1;
                if !moved.latent.is_finite() {
                    return Err(non_finite());
                }
                let mu2 = denoiser.denoise(&moved.latent, sigma)?;
                calls += 1;
                moved.latent.ensure_same_shape(&mu2)?;
                if !mu2.is_finite() {
                    return Err(non_finite());
                }
                LatentVideo::new(
                    moved
                        .latent
                        .frames()
                        .par_iter()
                        .zip(mu2.frames())
                        .map(|(xf, m)| ve_step(xf, m, sigma, sigma_next))
                        .collect::<Result<Vec<_>>>()
                        .map_err(|_| non_finite())?,
                )?
            }
        };
        if !x.is_finite() {
            return Err(non_finite());
        }
        step_seconds.push(started.elapsed().as_secs_f64());
        log::debug!("step {k}: sigma {sigma:.4e} -> {sigma_next:.4e}");
    }

    Ok(SolveReport {
        output: x,
        poses: traj.poses.clone(),
        lambda_trace: trace,
        coverage: priors.iter().map(|p| p.warp.coverage).collect(),
        source_indices: priors.iter().map(|p| p.source_index).collect(),
        pose_distances: dists,
        step_seconds,
        denoiser_calls: calls,
        stages: Vec::new(),
    })
}

/// Unguided reverse loop: plain Euler steps on the denoiser output.
pub fn sample_unguided(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    frame_shape: Shape,
    seed: u64,
) -> Result<LatentVideo> {
    let frames = denoiser.capabilities().frame_count;
    let mut x = initial_latent(frame_shape, frames, schedule.sigma_max(), seed)?;
    for (k, (sigma, sigma_next)) in schedule.step_pairs().enumerate() {
        let mu = denoiser.denoise(&x, sigma)?;
        x.ensure_same_shape(&mu)?;
        x = LatentVideo::new(
            x.frames()
                .par_iter()
                .zip(mu.frames())
                .map(|(xf, m)| ve_step(xf, m, sigma, sigma_next))
                .collect::<Result<Vec<_>>>()
                .map_err(|_| Error::NonFinite { step: k, sigma })?,
        )?;
    }
    Ok(x)
}
