use serde::{Deserialize, Serialize};

use super::{orbit_between, solve, SceneInput, SceneKind, SolveReport, Trajectory};
use crate::denoiser::{Denoiser, LatentVideo};
use crate::error::{Error, Result};
use crate::geometry::{render_synthetic, Camera, CameraIntrinsics, DepthMap, Pose, SourceView, SyntheticScene};
use crate::guidance::{GuidanceConfig, LambdaTrace};
use crate::image::ImageGrid;
use crate::schedule::NoiseSchedule;

/// Depth for a synthesized view, used when that view becomes a source.
pub trait DepthProvider: Send + Sync {
    fn depth(&self, pose: &Pose, image: &ImageGrid) -> Result<DepthMap>;
}

/// Exact depth from the procedural renderer.
#[derive(Clone, Debug)]
pub struct SyntheticDepth {
    pub scene: SyntheticScene,
    pub intrinsics: CameraIntrinsics,
}

impl DepthProvider for SyntheticDepth {
    fn depth(&self, pose: &Pose, _image: &ImageGrid) -> Result<DepthMap> {
        Ok(render_synthetic(self.scene, &Camera::new(self.intrinsics, *pose))?.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Chain360 {
    /// Distance from the input camera to the orbit centre.
    pub radius: f64,
    /// Frames per stage; must match the denoiser.
    pub frames: usize,
    /// Per-side stage spans in degrees; the last one must be 120.
    pub spans_deg: Vec<f64>,
    /// Every `prompt_stride`-th output of a stage becomes a source of the next.
    pub prompt_stride: usize,
}

impl Default for Chain360 {
    fn default() -> Self {
        Self {
            radius: 1.0,
            frames: 24,
            spans_deg: vec![30.0, 60.0, 120.0],
            prompt_stride: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageInfo {
    pub stage: usize,
    pub name: String,
    pub from_deg: f64,
    pub to_deg: f64,
    /// `(source stage, frame)` pairs used as prompts.
    pub prompts: Vec<(usize, usize)>,
    /// Offset added to frame indices of this stage in the combined trace.
    pub trace_frame_offset: usize,
}

struct Stage {
    traj: Trajectory,
    report: SolveReport,
}

fn prompt_views(
    stage_index: usize,
    stage: &Stage,
    stride: usize,
    depth: &dyn DepthProvider,
    prompts: &mut Vec<(usize, usize)>,
) -> Result<Vec<SourceView>> {
    (0..stage.traj.len())
        .step_by(stride)
        .map(|i| {
            let pose = stage.traj.poses[i];
            let image = stage.report.output.frames()[i].clone();
            prompts.push((stage_index, i));
            Ok(SourceView {
                depth: depth.depth(&pose, &image)?,
                image,
                pose,
            })
        })
        .collect()
}

/// Full circle from one view: per side, orbits of growing span each prompted
/// by stride-subsampled outputs of the previous one, then a closing
/// multi-view segment between the two 120-degree ends.
pub fn solve_360(
    scene: &SceneInput,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
    seed: u64,
    chain: &Chain360,
    depth: &dyn DepthProvider,
) -> Result<SolveReport> {
    if scene.kind != SceneKind::SingleView {
        return Err(Error::invalid("360 chaining starts from a single_view scene"));
    }
    scene.validate()?;
    if chain.frames < 2 || chain.prompt_stride == 0 {
        return Err(Error::invalid("360 chaining needs >= 2 frames and a positive stride"));
    }
    if chain.spans_deg.last() != Some(&120.0) {
        return Err(Error::invalid("the last per-side span must be 120 degrees"));
    }
    let anchor = scene.views[0].pose;
    let mut stages: Vec<Stage> = Vec::new();
    let mut infos: Vec<StageInfo> = Vec::new();
    let mut side_ends = Vec::new();

    let mut run = |name: String,
                   from: f64,
                   to: f64,
                   views: Vec<SourceView>,
                   kind: SceneKind,
                   prompts: Vec<(usize, usize)>,
                   stages: &mut Vec<Stage>|
     -> Result<usize> {
        let index = stages.len();
        let wrap = |e| Error::Stage {
            stage: index,
            source: Box::new(e),
        };
        let traj = orbit_between(&anchor, chain.radius, from.to_radians(), to.to_radians(), chain.frames)
            .map_err(wrap)?;
        let stage_scene = SceneInput::new(views, scene.intrinsics, kind).map_err(wrap)?;
        let report = solve(&stage_scene, &traj, denoiser, schedule, config, seed.wrapping_add(index as u64))
            .map_err(wrap)?;
        log::info!("360 stage {index} ({name}) done");
        infos.push(StageInfo {
            stage: index,
            name,
            from_deg: from,
            to_deg: to,
            prompts,
            trace_frame_offset: index * chain.frames,
        });
        stages.push(Stage { traj, report });
        Ok(index)
    };

    for (side, sign) in [("left", 1.0), ("right", -1.0)] {
        let mut prev: Option<usize> = None;
        for &span in &chain.spans_deg {
            let mut prompts = Vec::new();
            let (views, kind) = match prev {
                None => (scene.views.clone(), SceneKind::SingleView),
                Some(p) => (
                    prompt_views(p, &stages[p], chain.prompt_stride, depth, &mut prompts)
                        .map_err(|e| Error::Stage {
                            stage: stages.len(),
                            source: Box::new(e),
                        })?,
                    SceneKind::MultiView,
                ),
            };
            let name = format!("{side}_{span}");
            prev = Some(run(name, 0.0, sign * span, views, kind, prompts, &mut stages)?);
        }
        side_ends.push(prev.expect("at least one span"));
    }

    let (left, right) = (side_ends[0], side_ends[1]);
    let mut prompts = Vec::new();
    let closing_views = {
        let wrap = |e| Error::Stage {
            stage: stages.len(),
            source: Box::new(e),
        };
        let mut v = prompt_views(left, &stages[left], chain.prompt_stride, depth, &mut prompts).map_err(wrap)?;
        v.extend(prompt_views(right, &stages[right], chain.prompt_stride, depth, &mut prompts).map_err(wrap)?);
        v
    };
    let closing = run(
        "closing".into(),
        120.0,
        240.0,
        closing_views,
        SceneKind::MultiView,
        prompts,
        &mut stages,
    )?;

    // left end 0..120, closing interior, right end reversed 240..360
    let n = chain.frames;
    let mut picks: Vec<(usize, usize)> = (0..n).map(|i| (left, i)).collect();
    picks.extend((1..n - 1).map(|i| (closing, i)));
    picks.extend((0..n).rev().map(|i| (right, i)));

    let mut trace = LambdaTrace::default();
    for (s, info) in stages.iter().zip(&infos) {
        for r in &s.report.lambda_trace.records {
            let mut r = *r;
            r.frame += info.trace_frame_offset;
            trace.push(r);
        }
    }
    let pick = |f: &dyn Fn(&SolveReport, usize) -> f64| -> Vec<f64> {
        picks.iter().map(|&(s, i)| f(&stages[s].report, i)).collect()
    };
    Ok(SolveReport {
        output: LatentVideo::new(
            picks
                .iter()
                .map(|&(s, i)| stages[s].report.output.frames()[i].clone())
                .collect(),
        )?,
        poses: picks.iter().map(|&(s, i)| stages[s].traj.poses[i]).collect(),
        lambda_trace: trace,
        coverage: pick(&|r, i| r.coverage[i]),
        source_indices: picks
            .iter()
            .map(|&(s, i)| stages[s].report.source_indices[i])
            .collect(),
        pose_distances: pick(&|r, i| r.pose_distances[i]),
        step_seconds: stages.iter().flat_map(|s| s.report.step_seconds.iter().copied()).collect(),
        denoiser_calls: stages.iter().map(|s| s.report.denoiser_calls).sum(),
        stages: infos,
    })
}
