//! Moves the camera a little, warps the input view with its depth and
//! compares against a direct render from the new pose.

use nalgebra::Vector3;
use nvs_core::geometry::{
    forward_warp, pose_distance, render_synthetic, reproject_pixels, Camera, Pose, SyntheticScene,
};

fn main() -> nvs_core::Result<()> {
    let source = Camera::canonical();
    let (image, depth) = render_synthetic(SyntheticScene::BoxRoom, &source)?;
    for step in 1..=4 {
        let t = 0.05 * step as f64;
        let target = Pose::from_axis_angle(Vector3::y(), 0.1 * t, Vector3::new(t, 0.0, 0.0));
        let reproj = reproject_pixels(&source.intrinsics, &depth, &Pose::relative(&source.pose, &target))?;
        let warped = forward_warp(&image, &reproj)?;
        let (truth, _) = render_synthetic(SyntheticScene::BoxRoom, &Camera::new(source.intrinsics, target))?;
        let mut abs = 0.0;
        let mut n = 0;
        for (p, ok) in warped.validity.iter().enumerate() {
            if *ok {
                for (a, b) in warped.image.pixel(p).iter().zip(truth.pixel(p)) {
                    abs += (a - b).abs();
                    n += 1;
                }
            }
        }
        println!(
            "pose distance {:.3}: coverage {:.3}, MAE {:.4}",
            pose_distance(&source.pose, &target),
            warped.valid_count() as f64 / warped.validity.len() as f64,
            abs / n as f64
        );
    }
    Ok(())
}
