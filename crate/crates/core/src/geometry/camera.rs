use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Weight on the rotation angle (radians) when folding a relative pose into
/// one scalar distance.
pub const DEFAULT_ROTATION_WEIGHT: f64 = 1.0;

/// Pinhole intrinsics in pixels. Pixel `(x, y)` has its centre at
/// `(x + 0.5, y + 0.5)`; `+x` right, `+y` down, the camera looks down `+z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, focal length equal to the width, principal point at the
    /// image centre (about 53 degrees horizontal field of view).
    pub fn canonical(width: usize, height: usize) -> Self {
        Self {
            fx: width as f64,
            fy: width as f64,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid("focal lengths must be finite and positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::invalid("principal point outside the image"));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Ray direction in camera coordinates (z = 1) through continuous pixel
    /// coordinates `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Rigid camera-to-world transform: `x_world = rotation * x_cam + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates `R^T R = I` (1e-9) and `det R = +1`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("pose has non-finite entries"));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if err > 1e-9 {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max |R^T R - I| = {err:e})"
            )));
        }
        if rotation.determinant() <= 0.0 {
            return Err(Error::invalid("rotation has negative determinant"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length),
    /// followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
        }
    }

    /// Camera at `eye` whose optical axis passes through `target`, with image
    /// `+y` aligned as closely as possible to `down`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, down: Vector3<f64>) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at eye and target coincide"))?;
        let x = down
            .cross(&z)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at down vector parallel to view axis"))?;
        let y = z.cross(&x);
        Ok(Self {
            rotation: Matrix3::from_columns(&[x, y, z]),
            translation: eye,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Transform taking points in the `source` camera frame to the `target`
    /// camera frame.
    pub fn relative(source: &Pose, target: &Pose) -> Pose {
        target.inverse().compose(source)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            self.rotation,
        ));
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    /// Axis-angle vector of the rotation.
    pub fn rotation_vector(&self) -> Vector3<f64> {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        PoseRepr {
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        Pose::new(
            Matrix3::from_row_slice(&repr.rotation),
            Vector3::from(repr.translation),
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Intrinsics plus pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn canonical() -> Self {
        Self::new(CameraIntrinsics::canonical(64, 64), Pose::identity())
    }
}

/// `|| [t_rel ; w_r * axis_angle(R_rel)] ||_2` with the default rotation weight.
pub fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    pose_distance_weighted(a, b, DEFAULT_ROTATION_WEIGHT)
}

pub fn pose_distance_weighted(a: &Pose, b: &Pose, rotation_weight: f64) -> f64 {
    let rel = a.inverse().compose(b);
    let t = rel.translation.norm();
    let r = rotation_weight * rel.rotation_angle();
    (t * t + r * r).sqrt()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use nvs_oracle::{axis_angle_matrix, rotation_angle};

    fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    #[test]
    fn distance_to_self_is_zero() {
        let p = Pose::from_axis_angle(Vector3::new(0.3, -1.0, 0.2), 0.7, Vector3::new(1.0, 2.0, 3.0));
        assert!(pose_distance(&p, &p) < 1e-12);
    }

    #[test]
    fn pure_translation_distance() {
        let a = Pose::identity();
        let b = Pose::from_translation(Vector3::new(0.3, 0.0, 0.0));
        for w in [0.0, 1.0, 7.5] {
            assert!((pose_distance_weighted(&a, &b, w) - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn quarter_turn_matches_matrix_log() {
        let b = Pose::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::zeros());
        let expected = rotation_angle(&to_rows(b.rotation()));
        assert!((expected - FRAC_PI_2).abs() < 1e-15);
        assert!((pose_distance(&Pose::identity(), &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn angles_agree_with_independent_log() {
        for (i, angle) in [1e-7, 0.01, 0.5, 2.0, 3.1].iter().enumerate() {
            let axis = [1.0, i as f64 - 2.0, 0.5];
            let m = axis_angle_matrix(axis, *angle);
            let pose = Pose::new(
                Matrix3::from_row_slice(&m.concat()),
                Vector3::zeros(),
            )
            .unwrap();
            assert!((pose.rotation_angle() - rotation_angle(&m)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn compose_inverse_is_identity() {
        let p = Pose::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 1.1, Vector3::new(-1.0, 0.5, 2.0));
        let id = p.compose(&p.inverse());
        assert!((id.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation().norm() < 1e-12);
    }

    #[test]
    fn look_at_points_axis_at_target() {
        let pose = Pose::look_at(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 1.0), Vector3::y()).unwrap();
        let axis = pose.rotation() * Vector3::z();
        let want = Vector3::new(-1.0, 0.0, 1.0).normalize();
        assert!((axis - want).norm() < 1e-12);
        assert!(Pose::new(*pose.rotation(), *pose.translation()).is_ok());
    }

    #[test]
    fn json_is_row_major() {
        let p = Pose::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::new(1.0, 2.0, 3.0));
        let v: serde_json::Value = serde_json::to_value(p).unwrap();
        let r = v["rotation"].as_array().unwrap();
        assert!((r[1].as_f64().unwrap() + 1.0).abs() < 1e-12);
        let back: Pose = serde_json::from_value(v).unwrap();
        assert!((back.rotation() - p.rotation()).amax() < 1e-15);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 2.0, 4, 4).is_ok());
    }
}
