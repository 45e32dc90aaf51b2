use super::{Ray, Scene};
use crate::geometry::{project, Intrinsics, Pixel, Pose, Vec3};
use crate::image::{DepthImage, Grid, RgbImage};

/// Registered color and depth with the camera that captured them.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    /// Colors in `[0, 1]`.
    pub rgb: RgbImage,
    /// Camera-frame z in meters, 0 where nothing was hit.
    pub depth: DepthImage,
    /// Camera-to-world.
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

/// Exact per-pixel labels produced alongside a render.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// 0 for table and background.
    pub object_id: Grid<u32>,
    pub part: Grid<u16>,
    /// Object surface coordinate of the hit; zero where `object_id == 0`.
    pub surface_coord: Grid<[f64; 3]>,
}

impl GroundTruth {
    pub fn object_mask(&self, id: u32) -> crate::image::Mask {
        Grid {
            width: self.object_id.width,
            height: self.object_id.height,
            data: self.object_id.data.iter().map(|&o| o == id).collect(),
        }
    }

    pub fn any_object_mask(&self) -> crate::image::Mask {
        Grid {
            width: self.object_id.width,
            height: self.object_id.height,
            data: self.object_id.data.iter().map(|&o| o > 0).collect(),
        }
    }
}

fn camera_ray(pose: &Pose, k: &Intrinsics, p: Pixel) -> Ray {
    Ray {
        origin: pose.translation,
        direction: pose.apply_vector(&k.ray(p)),
    }
}

/// Raycasts every pixel center of the camera `(pose, k)`.
///
/// Rays are scaled so their camera-frame z component is 1, which makes the
/// hit parameter equal to depth.
pub fn render(scene: &Scene, pose: &Pose, k: &Intrinsics) -> (RgbdFrame, GroundTruth) {
    let (w, h) = (k.width, k.height);
    let prepared = scene.prepare();
    let light = Vec3::from(scene.light_direction);
    let mut rgb = Grid::filled(w, h, [0.0f32; 3]);
    let mut depth = Grid::filled(w, h, 0.0);
    let mut object_id = Grid::filled(w, h, 0u32);
    let mut part = Grid::filled(w, h, 0u16);
    let mut surface_coord = Grid::filled(w, h, [0.0; 3]);

    for y in 0..h {
        for x in 0..w {
            let ray = camera_ray(pose, k, Pixel::at(x, y));
            let Some(hit) = prepared.intersect(&ray) else {
                continue;
            };
            let i = y * w + x;
            let albedo = if hit.object_id == 0 {
                scene.table.color(&hit.surface_coord)
            } else {
                let obj = scene.object(hit.object_id).expect("hit object exists");
                obj.texture.color(&hit.surface_coord)
            };
            let shade = scene.ambient + (1.0 - scene.ambient) * hit.normal.dot(&light).max(0.0);
            rgb.data[i] = albedo.map(|c| (c as f64 * shade).clamp(0.0, 1.0) as f32);
            depth.data[i] = hit.t;
            if hit.object_id > 0 {
                object_id.data[i] = hit.object_id;
                part.data[i] = hit.part as u16;
                surface_coord.data[i] = hit.surface_coord.into();
            }
        }
    }

    (
        RgbdFrame {
            rgb,
            depth,
            pose: *pose,
            intrinsics: *k,
        },
        GroundTruth {
            object_id,
            part,
            surface_coord,
        },
    )
}

/// Ground-truth correspondence of `p_a` in view `b`.
///
/// The surface point under `p_a` (from `gt_a`) is placed with the object's
/// pose in `scene_b`, so the query also works across scenes whose object
/// configurations differ. The point is projected into `frame_b`'s camera and
/// accepted only if a ray through the exact projection hits the same surface
/// coordinate first (within 1e-4 m). Returns the rounded pixel.
pub fn oracle_match(scene_b: &Scene, frame_b: &RgbdFrame, gt_a: &GroundTruth, p_a: Pixel) -> Option<Pixel> {
    let (xa, ya) = p_a.round_in(gt_a.object_id.width, gt_a.object_id.height)?;
    let id = *gt_a.object_id.get(xa, ya);
    if id == 0 {
        return None;
    }
    let part = *gt_a.part.get(xa, ya) as usize;
    let coord = Vec3::from(*gt_a.surface_coord.get(xa, ya));
    let world = scene_b.object(id)?.world_point(part, &coord)?;

    let k = &frame_b.intrinsics;
    let cam = frame_b.pose.inverse().apply(&world);
    let (pb, _) = project(&cam, k).ok()?;
    let (xb, yb) = pb.round_in(k.width, k.height)?;

    let hit = scene_b.intersect(&camera_ray(&frame_b.pose, k, pb))?;
    let same_surface = hit.object_id == id && hit.part == part && (hit.surface_coord - coord).norm() <= 1e-4;
    same_surface.then(|| Pixel::at(xb, yb))
}
