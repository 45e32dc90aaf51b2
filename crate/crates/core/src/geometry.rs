//! Pinhole camera model and rigid poses.
//!
//! Camera frame convention: `+z` points forward along the optical axis, `+x`
//! to the right and `+y` down, so camera axes line up with pixel axes
//! (`u` grows with `x`, `v` grows with `y`).
//!
//! A [`Pose`] maps points from a local frame into its parent frame. Camera
//! poses are camera-to-world, object poses are object-to-world.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
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

    /// Camera with the principal point at the image center and the given
    /// horizontal field of view.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Self {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Image diagonal in pixels, the normalizer for pixel errors.
    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    /// Unnormalized camera-frame ray (`z = 1`) through a pixel.
    pub fn ray(&self, p: Pixel) -> Vec3 {
        Vec3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.round_in(self.width, self.height).is_some()
    }
}

/// Real-valued pixel coordinate; `u` is the column and `v` the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Pixel { u, v }
    }

    pub fn at(x: usize, y: usize) -> Self {
        Pixel {
            u: x as f64,
            v: y as f64,
        }
    }

    /// Nearest integer pixel, if it lies inside a `width x height` image.
    pub fn round_in(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let x = self.u.round();
        let y = self.v.round();
        if x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64 {
            Some((x as usize, y as usize))
        } else {
            None
        }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Projects a camera-frame point, returning the pixel and its depth.
pub fn project(point_cam: &Vec3, k: &Intrinsics) -> Result<(Pixel, f64)> {
    let z = point_cam.z;
    if z <= 0.0 {
        return Err(Error::BehindCamera { z });
    }
    let u = k.fx * point_cam.x / z + k.cx;
    let v = k.fy * point_cam.y / z + k.cy;
    Ok((Pixel { u, v }, z))
}

/// Camera-frame point at `depth` (z-distance) behind pixel `p`.
pub fn unproject(p: Pixel, depth: f64, k: &Intrinsics) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::InvalidDepth { depth });
    }
    if !k.contains(p) {
        return Err(Error::OutOfBounds {
            u: p.u,
            v: p.v,
            width: k.width,
            height: k.height,
        });
    }
    Ok(k.ray(p) * depth)
}

/// Rigid transform from a local frame into its parent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Pose { rotation, translation }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose::new(Mat3::identity(), t)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Pose::new(*r.matrix(), translation)
    }

    /// Camera-to-world pose of a camera at `eye` whose optical axis passes
    /// through `target`. Image "up" (`-y`) follows `up` as closely as possible.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(up);
        if x.norm() < 1e-9 {
            // Looking along `up`: any perpendicular right-axis will do.
            let alt = if z.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            x = z.cross(&alt);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Pose::new(Mat3::from_columns(&[x, y, z]), *eye)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Optical axis (`+z`) in the parent frame.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// Angle in radians of the relative rotation between two poses.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn translation_distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Mat3::identity()).abs().max() <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        (self.rotation - other.rotation).abs().max() <= tol && (self.translation - other.translation).abs().max() <= tol
    }
}

/// JSON form of a pose: row-major rotation entries and a translation.
#[derive(Serialize, Deserialize)]
struct PoseJson {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        PoseJson {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = PoseJson::deserialize(d)?;
        let pose = Pose::new(
            Mat3::from_row_slice(&j.rotation),
            Vec3::from_column_slice(&j.translation),
        );
        if !pose.is_valid(1e-6) {
            return Err(serde::de::Error::custom("rotation is not orthonormal"));
        }
        Ok(pose)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn k() -> Intrinsics {
        Intrinsics::new(50.0, 50.0, 32.0, 24.0, 64, 48).unwrap()
    }

    #[test]
    fn project_examples() {
        let (p, d) = project(&Vec3::new(0.0, 0.0, 1.0), &k()).unwrap();
        assert_eq!((p.u, p.v, d), (32.0, 24.0, 1.0));
        let (p, d) = project(&Vec3::new(0.2, 0.0, 1.0), &k()).unwrap();
        assert!((p.u - 42.0).abs() < 1e-12 && p.v == 24.0 && d == 1.0);
        assert!(matches!(
            project(&Vec3::new(0.0, 0.0, -1.0), &k()),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn unproject_examples() {
        let p = unproject(Pixel::new(32.0, 24.0), 1.0, &k()).unwrap();
        assert_eq!(p, Vec3::new(0.0, 0.0, 1.0));
        let p = unproject(Pixel::new(42.0, 24.0), 2.0, &k()).unwrap();
        assert!((p - Vec3::new(0.4, 0.0, 2.0)).norm() < 1e-12);
        assert!(matches!(
            unproject(Pixel::new(42.0, 24.0), 0.0, &k()),
            Err(Error::InvalidDepth { .. })
        ));
    }

    #[test]
    fn axes_follow_pixel_axes() {
        // +x right, +y down: positive camera x/y land right of / below center.
        let (p, _) = project(&Vec3::new(0.1, 0.1, 1.0), &k()).unwrap();
        assert!(p.u > k().cx && p.v > k().cy);
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(Intrinsics::new(0.0, 50.0, 32.0, 24.0, 64, 48).is_err());
        assert!(Intrinsics::new(50.0, 50.0, 64.0, 24.0, 64, 48).is_err());
    }

    #[test]
    fn pose_examples() {
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().apply(&x), x);
        let t = Pose::from_translation(Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(t.apply(&Vec3::zeros()), Vec3::new(0.0, 0.0, 1.0));
        let r = Pose::from_axis_angle(&Vec3::z(), PI, Vec3::zeros());
        assert!((r.apply(&Vec3::x()) - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vec3::new(0.3, -0.2, 0.5);
        let target = Vec3::new(0.01, 0.02, 0.0);
        let pose = Pose::look_at(&eye, &target, &Vec3::z());
        assert!(pose.is_valid(1e-9));
        let cam = pose.inverse().apply(&target);
        assert!(cam.x.abs() < 1e-12 && cam.y.abs() < 1e-12 && cam.z > 0.0);
        // World up appears toward the top of the image.
        let up_cam = pose.inverse().apply_vector(&Vec3::z());
        assert!(up_cam.y < 0.0);
    }

    #[test]
    fn pose_json_is_row_major() {
        let pose = Pose::from_axis_angle(&Vec3::z(), PI / 2.0, Vec3::new(1.0, 2.0, 3.0));
        let json = serde_json::to_value(pose).unwrap();
        let rot: Vec<f64> = serde_json::from_value(json["rotation"].clone()).unwrap();
        assert!((rot[1] + 1.0).abs() < 1e-12 && (rot[3] - 1.0).abs() < 1e-12);
        assert_eq!(json["translation"], serde_json::json!([1.0, 2.0, 3.0]));
        let back: Pose = serde_json::from_value(json).unwrap();
        assert!(back.approx_eq(&pose, 0.0));
        let bad = serde_json::json!({"rotation": [2.0,0,0, 0,1,0, 0,0,1], "translation": [0,0,0]});
        assert!(serde_json::from_value::<Pose>(bad).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -PI..PI,
            prop::array::uniform3(-2.0f64..2.0),
        )
            .prop_filter("nonzero axis", |(a, _, _)| Vec3::from(*a).norm() > 1e-3)
            .prop_map(|(a, angle, t)| Pose::from_axis_angle(&Vec3::from(a), angle, Vec3::from(t)))
    }

    proptest! {
        #[test]
        fn project_unproject_round_trip(
            x in 0usize..64, y in 0usize..48,
            du in -0.49f64..0.49, dv in -0.49f64..0.49,
            depth in 0.1f64..5.0,
        ) {
            let k = k();
            let p = Pixel::new((x as f64 + du).max(0.0), (y as f64 + dv).max(0.0));
            let pt = unproject(p, depth, &k).unwrap();
            let (q, d) = project(&pt, &k).unwrap();
            prop_assert!((q.u - p.u).abs() < 1e-7 && (q.v - p.v).abs() < 1e-7);
            prop_assert!((d - depth).abs() < 1e-7);
        }

        #[test]
        fn pose_inverse_and_compose(a in arb_pose(), b in arb_pose(), c in arb_pose(),
                                    x in prop::array::uniform3(-3.0f64..3.0)) {
            let x = Vec3::from(x);
            prop_assert!((a.inverse().apply(&a.apply(&x)) - x).norm() < 1e-9);
            prop_assert!(a.compose(&a.inverse()).approx_eq(&Pose::identity(), 1e-9));
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!(left.approx_eq(&right, 1e-9));
            prop_assert!(a.is_valid(1e-9));
        }
    }
}
