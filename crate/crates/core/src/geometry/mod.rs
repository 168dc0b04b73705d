//! Cameras, depth, reprojection, forward warping and the synthetic scenes.

mod camera;
mod depth;
mod scenes;
mod warp;

pub use camera::{
    pose_distance, pose_distance_weighted, Camera, CameraIntrinsics, Pose,
    DEFAULT_ROTATION_WEIGHT,
};
pub use depth::{DepthHeader, DepthMap};
pub use scenes::{render_synthetic, render_synthetic_by_id, render_synthetic_channels, SyntheticScene};
pub use warp::{
    forward_warp, reproject_pixels, warp_prior, PriorWarp, Reprojection, SourceView, WarpResult,
    WarpStrategy,
};
