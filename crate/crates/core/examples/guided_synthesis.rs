//! Single-view synthesis on the plane scene, guided against unguided.

use nvs_core::experiment::{ground_truth, mean_mse, shifted_gmm, BuiltinGmm};
use nvs_core::denoiser::GmmFrameDenoiser;
use nvs_core::geometry::{render_synthetic, Camera, CameraIntrinsics, Pose, SourceView, SyntheticScene};
use nvs_core::guidance::GuidanceConfig;
use nvs_core::schedule::NoiseSchedule;
use nvs_core::solver::{make_trajectory, sample_unguided, solve, SceneInput, SceneKind, TrajectorySpec};

fn main() -> nvs_core::Result<()> {
    let k = CameraIntrinsics::canonical(32, 32);
    let (image, depth) = render_synthetic(SyntheticScene::Plane, &Camera::new(k, Pose::identity()))?;
    let view = SourceView {
        image,
        depth,
        pose: Pose::identity(),
    };
    let scene = SceneInput::new(vec![view], k, SceneKind::SingleView)?;
    let spec = TrajectorySpec::Line {
        frames: 4,
        extent: 0.3,
        direction: [1.0, 0.0, 0.0],
    };
    let traj = make_trajectory(&spec, &Pose::identity())?;
    let truth = ground_truth(SyntheticScene::Plane, k, &traj.poses)?;
    let den = GmmFrameDenoiser::new(shifted_gmm(&truth, &BuiltinGmm::default())?, scene.frame_shape(), traj.len())?;
    let schedule = NoiseSchedule::build(700.0, 0.002, 7.0, 25)?;
    let guided = solve(&scene, &traj, &den, &schedule, &GuidanceConfig::default(), 0)?;
    let plain = sample_unguided(&den, &schedule, scene.frame_shape(), 0)?;
    println!("coverage per frame: {:.3?}", guided.coverage);
    println!("guided MSE   {:.3e}", mean_mse(guided.output.frames(), &truth)?);
    println!("unguided MSE {:.3e}", mean_mse(plain.frames(), &truth)?);
    println!("denoiser calls: {}", guided.denoiser_calls);
    Ok(())
}
