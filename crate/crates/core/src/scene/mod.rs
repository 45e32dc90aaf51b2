//! Deterministic synthetic RGBD scenes built from analytic primitives.
//!
//! The renderer stands in for a robot-mounted depth camera and additionally
//! emits exact per-pixel ground truth (object id and object-local surface
//! coordinate), which the evaluation code uses as its correspondence oracle.

mod io;
mod raycast;
mod render;
mod texture;
mod trajectory;

pub use io::{read_ground_truth, write_ground_truth, GroundTruthHeader};
pub use raycast::{Hit, PreparedScene, Ray};
pub use render::{oracle_match, render, GroundTruth, RgbdFrame};
pub use texture::Texture;
pub use trajectory::{sample_camera_trajectory, TrajectoryConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Box { half_extents: [f64; 3] },
    Sphere { radius: f64 },
}

impl Primitive {
    /// Corners of a local bounding box, used for placement and validation.
    fn bound_corners(&self) -> [Vec3; 8] {
        let h = match *self {
            Primitive::Box { half_extents } => Vec3::from(half_extents),
            Primitive::Sphere { radius } => Vec3::repeat(radius),
        };
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            *c = Vec3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            );
        }
        out
    }

    fn lowest_point_z(&self, pose: &Pose) -> f64 {
        match *self {
            Primitive::Sphere { radius } => pose.translation.z - radius,
            Primitive::Box { .. } => self
                .bound_corners()
                .iter()
                .map(|c| pose.apply(c).z)
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Revolute joint used to articulate a part between scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    /// Rotation axis in the object frame.
    pub axis: [f64; 3],
    /// Pivot point in the object frame.
    pub pivot: [f64; 3],
    pub max_angle_deg: f64,
}

/// One rigid piece of an object.
///
/// `rest` places the part in the object's canonical configuration and
/// defines its surface coordinates; `pose` is where the part actually sits
/// in this scene. They differ only for articulated parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub primitive: Primitive,
    pub rest: Pose,
    pub pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<Joint>,
}

impl Part {
    pub fn rigid(primitive: Primitive, rest: Pose) -> Self {
        Part {
            primitive,
            rest,
            pose: rest,
            joint: None,
        }
    }

    /// Sets the articulation angle of a jointed part; rigid parts are unchanged.
    pub fn articulate(&mut self, angle_rad: f64) {
        if let Some(j) = self.joint {
            let pivot = Vec3::from(j.pivot);
            let rot = Pose::from_axis_angle(&Vec3::from(j.axis), angle_rad, Vec3::zeros());
            let about_pivot = Pose::from_translation(pivot)
                .compose(&rot)
                .compose(&Pose::from_translation(-pivot));
            self.pose = about_pivot.compose(&self.rest);
        }
    }

    /// Maps a point in this part's frame to surface coordinates.
    pub fn surface_coord(&self, part_local: &Vec3) -> Vec3 {
        self.rest.apply(part_local)
    }

    /// Inverse of [`Part::surface_coord`], into the object frame.
    pub fn object_point_from_surface(&self, coord: &Vec3) -> Vec3 {
        self.pose.apply(&self.rest.inverse().apply(coord))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box { half_extents: [f64; 3] },
    Sphere { radius: f64 },
    Union { parts: Vec<Part> },
}

impl Shape {
    pub fn parts(&self) -> Vec<Part> {
        match self {
            Shape::Box { half_extents } => vec![Part::rigid(
                Primitive::Box {
                    half_extents: *half_extents,
                },
                Pose::identity(),
            )],
            Shape::Sphere { radius } => vec![Part::rigid(Primitive::Sphere { radius: *radius }, Pose::identity())],
            Shape::Union { parts } => parts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub shape: Shape,
    /// Object-to-world pose.
    pub pose: Pose,
    pub texture: Texture,
}

impl SceneObject {
    /// Lowest world-frame z over the object's part bounds.
    pub fn lowest_point_z(&self) -> f64 {
        self.shape
            .parts()
            .iter()
            .map(|p| p.primitive.lowest_point_z(&self.pose.compose(&p.pose)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Lowest z of the object in its own frame after applying `rotation`.
    pub fn lowest_point_z_rotated(&self, rotation: &Pose) -> f64 {
        self.shape
            .parts()
            .iter()
            .map(|p| p.primitive.lowest_point_z(&rotation.compose(&p.pose)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Horizontal radius of a bounding cylinder around the object origin.
    pub fn footprint_radius(&self) -> f64 {
        self.shape
            .parts()
            .iter()
            .flat_map(|p| {
                let pose = p.pose;
                p.primitive.bound_corners().map(move |c| pose.apply(&c).xy().norm())
            })
            .fold(0.0, f64::max)
    }

    /// World point of a surface coordinate on part `part`.
    pub fn world_point(&self, part: usize, coord: &Vec3) -> Option<Vec3> {
        let parts = self.shape.parts();
        parts
            .get(part)
            .map(|p| self.pose.apply(&p.object_point_from_surface(coord)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    /// Texture of the table plane `z = 0`, evaluated at world `(x, y, 0)`.
    pub table: Texture,
    /// Unit vector pointing toward the light.
    pub light_direction: [f64; 3],
    /// Fraction of light that is non-directional.
    #[serde(default = "default_ambient")]
    pub ambient: f64,
}

fn default_ambient() -> f64 {
    0.35
}

impl Scene {
    pub fn new(objects: Vec<SceneObject>, table: Texture, light_direction: Vec3) -> Self {
        Scene {
            objects,
            table,
            light_direction: light_direction.normalize().into(),
            ambient: default_ambient(),
        }
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.first() == Some(&0) {
            return Err(Error::Config("object ids start at 1".into()));
        }
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate object id".into()));
        }
        let n = Vec3::from(self.light_direction).norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("light direction norm {n} != 1")));
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return Err(Error::Config("ambient outside [0, 1]".into()));
        }
        for o in &self.objects {
            if o.lowest_point_z() < -1e-9 {
                return Err(Error::Config(format!("object {} pokes through the table", o.id)));
            }
        }
        Ok(())
    }
}
