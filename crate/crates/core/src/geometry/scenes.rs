//! Procedural ray-cast scenes with exact depth, used as hermetic fixtures.
//!
//! Textures are smooth (products of sinusoids) so that bilinear resampling
//! error stays well below a percent at the canonical 64 x 64 resolution.

use std::f64::consts::TAU;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::camera::Camera;
use super::depth::DepthMap;
use crate::error::{Error, Result};
use crate::image::{ImageGrid, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticScene {
    /// Textured plane `z = 2`, facing the canonical camera.
    Plane,
    /// Camera inside an axis-aligned textured room.
    BoxRoom,
    /// Textured ground `y = 1` with two spheres in front of the camera.
    Spheres,
}

impl SyntheticScene {
    pub const ALL: [SyntheticScene; 3] = [Self::Plane, Self::BoxRoom, Self::Spheres];

    pub fn id(&self) -> &'static str {
        match self {
            Self::Plane => "plane",
            Self::BoxRoom => "box_room",
            Self::Spheres => "spheres",
        }
    }

    /// Point the canonical orbit circles around: 1 unit in front of the
    /// identity camera for the room, the plane itself otherwise.
    pub fn center(&self) -> Vector3<f64> {
        match self {
            Self::Plane => Vector3::new(0.0, 0.0, PLANE_Z),
            Self::BoxRoom => Vector3::new(0.0, 0.0, 1.0),
            Self::Spheres => Vector3::new(0.0, 0.4, 3.2),
        }
    }
}

impl FromStr for SyntheticScene {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Self::Plane),
            "box_room" | "box-room" | "room" => Ok(Self::BoxRoom),
            "spheres" | "checker_spheres" => Ok(Self::Spheres),
            other => Err(Error::UnknownScene(other.to_string())),
        }
    }
}

const PLANE_Z: f64 = 2.0;
const ROOM_MIN: [f64; 3] = [-2.0, -1.5, -1.0];
const ROOM_MAX: [f64; 3] = [2.0, 1.5, 3.0];
const GROUND_Y: f64 = 1.0;
const SPHERES: [([f64; 3], f64); 2] = [([-0.6, 0.4, 3.0], 0.6), ([0.7, 0.5, 3.6], 0.5)];
const SKY: [f64; 3] = [0.80, 0.85, 0.95];

/// Smooth checker: product of two sinusoids with period `period`, per-channel
/// phase offsets, around a per-surface base colour.
fn checker(a: f64, b: f64, period: f64, base: [f64; 3], channels: usize) -> Vec<f64> {
    (0..channels)
        .map(|c| {
            let phase = c as f64 * 0.9;
            let s = (TAU * a / period + phase).sin() * (TAU * b / period - 0.5 * phase).sin();
            base[c % 3] + 0.3 * s
        })
        .collect()
}

struct Hit {
    t: f64,
    color: Vec<f64>,
}

fn trace(scene: SyntheticScene, origin: &Vector3<f64>, dir: &Vector3<f64>, channels: usize) -> Option<Hit> {
    match scene {
        SyntheticScene::Plane => {
            if dir.z.abs() < 1e-12 {
                return None;
            }
            let t = (PLANE_Z - origin.z) / dir.z;
            (t > 0.0).then(|| {
                let p = origin + dir * t;
                Hit {
                    t,
                    color: checker(p.x, p.y, 0.5, [0.5, 0.5, 0.5], channels),
                }
            })
        }
        SyntheticScene::BoxRoom => {
            // exit distance from inside the box
            let mut best: Option<(f64, usize, bool)> = None;
            for axis in 0..3 {
                let d = dir[axis];
                if d.abs() < 1e-12 {
                    continue;
                }
                let (wall, high) = if d > 0.0 {
                    (ROOM_MAX[axis], true)
                } else {
                    (ROOM_MIN[axis], false)
                };
                let t = (wall - origin[axis]) / d;
                if t > 0.0 && best.is_none_or(|(bt, _, _)| t < bt) {
                    best = Some((t, axis, high));
                }
            }
            let (t, axis, high) = best?;
            let p = origin + dir * t;
            let (a, b) = match axis {
                0 => (p.z, p.y),
                1 => (p.x, p.z),
                _ => (p.x, p.y),
            };
            let base = match (axis, high) {
                (0, false) => [0.55, 0.35, 0.35],
                (0, true) => [0.35, 0.55, 0.35],
                (1, false) => [0.45, 0.45, 0.60],
                (1, true) => [0.40, 0.40, 0.40],
                (_, false) => [0.60, 0.55, 0.35],
                _ => [0.35, 0.50, 0.60],
            };
            Some(Hit {
                t,
                color: checker(a, b, 0.8, base, channels),
            })
        }
        SyntheticScene::Spheres => {
            let mut hit: Option<Hit> = None;
            if dir.y.abs() > 1e-12 {
                let t = (GROUND_Y - origin.y) / dir.y;
                if t > 0.0 {
                    let p = origin + dir * t;
                    hit = Some(Hit {
                        t,
                        color: checker(p.x, p.z, 0.6, [0.5, 0.45, 0.4], channels),
                    });
                }
            }
            for (center, radius) in SPHERES {
                let c = Vector3::from(center);
                let oc = origin - c;
                let a = dir.dot(dir);
                let b = oc.dot(dir);
                let disc = b * b - a * (oc.dot(&oc) - radius * radius);
                if disc < 0.0 {
                    continue;
                }
                let t = (-b - disc.sqrt()) / a;
                if t > 0.0 && hit.as_ref().is_none_or(|h| t < h.t) {
                    let n = (origin + dir * t - c) / radius;
                    let color = (0..channels)
                        .map(|k| 0.5 + 0.35 * n[k % 3] * if k % 2 == 0 { 1.0 } else { -1.0 })
                        .collect();
                    hit = Some(Hit { t, color });
                }
            }
            hit
        }
    }
}

/// Renders `scene` from `camera` with one ray per pixel centre. Returns an
/// RGB image in `[0, 1]` and camera-space depth; rays that hit nothing get the
/// sky colour and invalid depth.
pub fn render_synthetic(scene: SyntheticScene, camera: &Camera) -> Result<(ImageGrid, DepthMap)> {
    render_synthetic_channels(scene, camera, 3)
}

pub fn render_synthetic_channels(
    scene: SyntheticScene,
    camera: &Camera,
    channels: usize,
) -> Result<(ImageGrid, DepthMap)> {
    camera.intrinsics.validate()?;
    if channels == 0 {
        return Err(Error::invalid("at least one channel required"));
    }
    let k = &camera.intrinsics;
    let (w, h) = (k.width, k.height);
    let origin = *camera.pose.translation();
    let rot = camera.pose.rotation();
    let mut data = Vec::with_capacity(w * h * channels);
    let mut depth = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            // camera-space direction has z = 1, so the ray parameter is the depth
            let dir = rot * k.unproject(x as f64 + 0.5, y as f64 + 0.5);
            match trace(scene, &origin, &dir, channels) {
                Some(hit) => {
                    data.extend(hit.color.iter().map(|v| v.clamp(0.0, 1.0)));
                    depth.push(hit.t);
                    valid.push(true);
                }
                None => {
                    data.extend((0..channels).map(|c| SKY[c % 3]));
                    depth.push(0.0);
                    valid.push(false);
                }
            }
        }
    }
    Ok((
        ImageGrid::from_vec(Shape::new(h, w, channels), data)?,
        DepthMap::with_validity(w, h, depth, valid)?,
    ))
}

/// Looks the scene up by name and renders it.
pub fn render_synthetic_by_id(scene_id: &str, camera: &Camera) -> Result<(ImageGrid, DepthMap)> {
    render_synthetic(scene_id.parse()?, camera)
}
