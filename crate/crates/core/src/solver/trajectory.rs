use std::f64::consts::FRAC_PI_4;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Target camera poses, one per output frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("trajectory needs at least one pose"));
        }
        if let Some(i) = poses.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("trajectory pose {i} is not finite")));
        }
        Ok(Self { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Sum of rotation angles between consecutive poses, in radians.
    pub fn accumulated_rotation(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| Pose::relative(&w[0], &w[1]).rotation_angle())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Circles a point `radius` ahead of the anchor about the anchor's
    /// vertical axis, sweeping `span_deg` (positive turns left).
    Orbit { frames: usize, span_deg: f64, radius: f64 },
    /// Slides along `direction` (anchor camera frame) up to `extent`.
    Line {
        frames: usize,
        extent: f64,
        direction: [f64; 3],
    },
    /// One of eight in-plane directions, `index * 45` degrees from image right.
    EightDirection { frames: usize, extent: f64, index: usize },
    /// Poses given verbatim.
    Explicit { poses: Vec<Pose> },
}

impl TrajectorySpec {
    pub fn frames(&self) -> usize {
        match self {
            Self::Orbit { frames, .. } | Self::Line { frames, .. } | Self::EightDirection { frames, .. } => *frames,
            Self::Explicit { poses } => poses.len(),
        }
    }
}

fn fraction(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

fn finite_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")))
    }
}

/// Orbit poses for angles `span * i / (n - 1)`, `i = 0..n`.
pub fn orbit(anchor: &Pose, radius: f64, span_rad: f64, frames: usize) -> Result<Trajectory> {
    orbit_between(anchor, radius, 0.0, span_rad, frames)
}

/// Orbit poses for angles evenly spaced over `[from, to]` (radians).
pub fn orbit_between(anchor: &Pose, radius: f64, from: f64, to: f64, frames: usize) -> Result<Trajectory> {
    if frames == 0 {
        return Err(Error::invalid("trajectory needs at least one frame"));
    }
    finite_nonneg("radius", radius)?;
    if !(from.is_finite() && to.is_finite()) {
        return Err(Error::invalid("orbit angles must be finite"));
    }
    let r = anchor.rotation();
    let t = anchor.translation();
    let axis = r * Vector3::y();
    let center = t + r * Vector3::new(0.0, 0.0, radius);
    let poses = (0..frames)
        .map(|i| {
            let angle = from + (to - from) * fraction(i, frames);
            if angle == 0.0 {
                return Ok(*anchor);
            }
            let turn = Pose::from_axis_angle(axis, angle, Vector3::zeros());
            let rw = turn.rotation();
            Pose::new(rw * r, center + rw * (t - center))
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(poses)
}

fn slide(anchor: &Pose, direction: Vector3<f64>, extent: f64, frames: usize) -> Result<Trajectory> {
    if frames == 0 {
        return Err(Error::invalid("trajectory needs at least one frame"));
    }
    finite_nonneg("extent", extent)?;
    let step = anchor.rotation() * direction;
    let poses = (0..frames)
        .map(|i| Pose::new(*anchor.rotation(), anchor.translation() + step * (extent * fraction(i, frames))))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(poses)
}

pub fn make_trajectory(spec: &TrajectorySpec, anchor: &Pose) -> Result<Trajectory> {
    match spec {
        TrajectorySpec::Orbit {
            frames,
            span_deg,
            radius,
        } => orbit(anchor, *radius, span_deg.to_radians(), *frames),
        TrajectorySpec::Line {
            frames,
            extent,
            direction,
        } => {
            let d = Vector3::from(*direction);
            let unit = d
                .try_normalize(1e-12)
                .ok_or_else(|| Error::invalid("line direction must be non-zero"))?;
            slide(anchor, unit, *extent, *frames)
        }
        TrajectorySpec::EightDirection { frames, extent, index } => {
            if *index >= 8 {
                return Err(Error::invalid(format!("direction index {index} outside 0..8")));
            }
            let a = *index as f64 * FRAC_PI_4;
            // image y points down; index 2 moves the camera up
            slide(anchor, Vector3::new(a.cos(), -a.sin(), 0.0), *extent, *frames)
        }
        TrajectorySpec::Explicit { poses } => Trajectory::new(poses.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose_distance;

    #[test]
    fn single_frame_is_anchor() {
        let anchor = Pose::from_axis_angle(Vector3::x(), 0.2, Vector3::new(1.0, 2.0, 3.0));
        for spec in [
            TrajectorySpec::Orbit {
                frames: 1,
                span_deg: 30.0,
                radius: 2.0,
            },
            TrajectorySpec::Line {
                frames: 1,
                extent: 0.5,
                direction: [1.0, 0.0, 0.0],
            },
            TrajectorySpec::EightDirection {
                frames: 1,
                extent: 0.5,
                index: 3,
            },
        ] {
            assert_eq!(make_trajectory(&spec, &anchor).unwrap().poses, vec![anchor]);
        }
    }

    #[test]
    fn zero_extent_line_repeats_anchor() {
        let anchor = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let spec = TrajectorySpec::Line {
            frames: 5,
            extent: 0.0,
            direction: [0.0, 1.0, 0.0],
        };
        assert_eq!(make_trajectory(&spec, &anchor).unwrap().poses, vec![anchor; 5]);
    }

    #[test]
    fn orbit_spacing_uniform() {
        let anchor = Pose::from_axis_angle(Vector3::new(0.3, 1.0, 0.1), 0.4, Vector3::new(0.5, -0.2, 1.0));
        let spec = TrajectorySpec::Orbit {
            frames: 24,
            span_deg: 30.0,
            radius: 2.0,
        };
        let traj = make_trajectory(&spec, &anchor).unwrap();
        let d: Vec<f64> = traj.poses.windows(2).map(|w| pose_distance(&w[0], &w[1])).collect();
        for v in &d {
            assert!((v - d[0]).abs() < 1e-9, "{d:?}");
        }
        assert!((traj.accumulated_rotation() - 30f64.to_radians()).abs() < 1e-9);
    }

    #[test]
    fn orbit_keeps_center_in_view() {
        let anchor = Pose::identity();
        let traj = orbit(&anchor, 2.0, 1.0, 5).unwrap();
        let center = Vector3::new(0.0, 0.0, 2.0);
        for p in &traj.poses {
            let local = p.inverse().transform_point(&center);
            assert!(local.x.abs() < 1e-12 && local.y.abs() < 1e-12);
            assert!((local.z - 2.0).abs() < 1e-12);
        }
        // positive span moves the camera to its left
        assert!(traj.poses[4].translation().x < 0.0);
    }

    #[test]
    fn eight_directions_are_unit_steps() {
        let anchor = Pose::identity();
        for index in 0..8 {
            let spec = TrajectorySpec::EightDirection {
                frames: 3,
                extent: 0.4,
                index,
            };
            let t = make_trajectory(&spec, &anchor).unwrap();
            assert!((pose_distance(&t.poses[0], &t.poses[2]) - 0.4).abs() < 1e-12);
            assert_eq!(t.poses[2].translation().z, 0.0);
        }
        let bad = TrajectorySpec::EightDirection {
            frames: 3,
            extent: 0.4,
            index: 8,
        };
        assert!(make_trajectory(&bad, &anchor).is_err());
    }

    #[test]
    fn rejects_invalid() {
        let anchor = Pose::identity();
        let zero = TrajectorySpec::Orbit {
            frames: 0,
            span_deg: 10.0,
            radius: 1.0,
        };
        assert!(make_trajectory(&zero, &anchor).is_err());
        let dir = TrajectorySpec::Line {
            frames: 2,
            extent: 1.0,
            direction: [0.0; 3],
        };
        assert!(make_trajectory(&dir, &anchor).is_err());
        let neg = TrajectorySpec::Line {
            frames: 2,
            extent: -1.0,
            direction: [1.0, 0.0, 0.0],
        };
        assert!(make_trajectory(&neg, &anchor).is_err());
    }

    #[test]
    fn trajectory_json() {
        let spec: TrajectorySpec = serde_json::from_str(r#"{"kind":"orbit","frames":24,"span_deg":30,"radius":2}"#).unwrap();
        assert_eq!(spec.frames(), 24);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<TrajectorySpec>(&text).unwrap(), spec);
    }
}
