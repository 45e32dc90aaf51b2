//! Geometric grasp planning on fused point clouds for a parallel-jaw
//! gripper: candidate sampling, collision pruning, antipodal scoring and
//! grasping at a descriptor-matched target point.

mod cloud;

pub use cloud::{fuse_cloud, CloudView, PointCloud, DEFAULT_NORMAL_NEIGHBORS, DEFAULT_VOXEL};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::best_match;
use crate::geometry::{unproject, Intrinsics, Pixel, Pose, Vec3};
use crate::image::DepthImage;
use crate::net::DescriptorImage;
use cloud::NeighborIndex;

/// Two box fingers and a box palm, in meters.
///
/// Gripper frame: `x` is the closing axis, `z` the approach direction and
/// the origin the grasp center. Fingertips reach `tip_depth` past the center
/// along `z`; the palm sits behind the fingers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GripperModel {
    pub max_opening: f64,
    pub finger_thickness: f64,
    pub finger_width: f64,
    pub finger_length: f64,
    pub tip_depth: f64,
    pub palm_thickness: f64,
    /// Gap left on each side between the object and a finger.
    pub clearance: f64,
}

impl Default for GripperModel {
    fn default() -> Self {
        GripperModel {
            max_opening: 0.08,
            finger_thickness: 0.01,
            finger_width: 0.02,
            finger_length: 0.07,
            tip_depth: 0.01,
            palm_thickness: 0.02,
            clearance: 0.002,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraspConfig {
    pub gripper: GripperModel,
    pub n_candidates: usize,
    pub contact_band: f64,
    /// Candidate axes are drawn from normals of points within this distance
    /// of the grasp target.
    pub axis_neighborhood: f64,
    pub axis_noise_deg: f64,
    pub approach_noise_deg: f64,
    /// Target-mode sampling radius.
    pub target_radius: f64,
    /// Height of the support plane; gripper bodies may not go below it.
    pub floor_z: Option<f64>,
}

impl Default for GraspConfig {
    fn default() -> Self {
        GraspConfig {
            gripper: GripperModel::default(),
            n_candidates: 200,
            contact_band: 0.005,
            axis_neighborhood: 0.05,
            axis_noise_deg: 10.0,
            approach_noise_deg: 20.0,
            target_radius: 0.01,
            floor_z: Some(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub center: Vec3,
    /// Unit closing direction.
    pub axis: Vec3,
    /// Unit approach direction, perpendicular to `axis`.
    pub approach: Vec3,
    pub width: f64,
    pub score: f64,
    pub collision_free: bool,
}

impl GraspCandidate {
    /// Unscored candidate with the full opening.
    pub fn new(center: Vec3, axis: Vec3, approach: Vec3, width: f64) -> Self {
        GraspCandidate {
            center,
            axis,
            approach,
            width,
            score: 0.0,
            collision_free: false,
        }
    }

    /// Gripper-frame coordinates of a world point.
    fn local(&self, p: &Vec3) -> Vec3 {
        let d = p - self.center;
        let y = self.approach.cross(&self.axis);
        Vec3::new(d.dot(&self.axis), d.dot(&y), d.dot(&self.approach))
    }

    /// World pose of the gripper frame.
    pub fn pose(&self) -> Pose {
        let y = self.approach.cross(&self.axis);
        Pose::new(
            crate::geometry::Mat3::from_columns(&[self.axis, y, self.approach]),
            self.center,
        )
    }

    pub fn is_valid(&self, max_opening: f64) -> bool {
        (self.axis.norm() - 1.0).abs() < 1e-6
            && (self.approach.norm() - 1.0).abs() < 1e-6
            && self.axis.dot(&self.approach).abs() < 1e-6
            && self.width > 0.0
            && self.width <= max_opening + 1e-12
    }
}

/// Axis-aligned box in the gripper frame.
#[derive(Debug, Clone, Copy)]
struct LocalBox {
    lo: Vec3,
    hi: Vec3,
}

impl LocalBox {
    fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] > self.lo[i] && p[i] < self.hi[i])
    }

    fn corners(&self) -> impl Iterator<Item = Vec3> + '_ {
        (0..8).map(move |i| {
            Vec3::new(
                if i & 1 == 0 { self.lo.x } else { self.hi.x },
                if i & 2 == 0 { self.lo.y } else { self.hi.y },
                if i & 4 == 0 { self.lo.z } else { self.hi.z },
            )
        })
    }
}

impl GripperModel {
    fn finger_z(&self) -> (f64, f64) {
        (self.tip_depth - self.finger_length, self.tip_depth)
    }

    /// Left finger, right finger, palm.
    fn bodies(&self, width: f64) -> [LocalBox; 3] {
        let (z0, z1) = self.finger_z();
        let hw = self.finger_width / 2.0;
        let inner = width / 2.0;
        let outer = inner + self.finger_thickness;
        let palm_x = self.max_opening / 2.0 + self.finger_thickness;
        [
            LocalBox {
                lo: Vec3::new(-outer, -hw, z0),
                hi: Vec3::new(-inner, hw, z1),
            },
            LocalBox {
                lo: Vec3::new(inner, -hw, z0),
                hi: Vec3::new(outer, hw, z1),
            },
            LocalBox {
                lo: Vec3::new(-palm_x, -hw, z0 - self.palm_thickness),
                hi: Vec3::new(palm_x, hw, z0),
            },
        ]
    }

    fn in_closing_slab(&self, local: &Vec3) -> bool {
        let (z0, z1) = self.finger_z();
        local.y.abs() <= self.finger_width / 2.0 && local.z >= z0 && local.z <= z1
    }
}

/// Opening that clears every point between the fingers, capped at the
/// maximum opening.
pub fn grasp_width(center: &Vec3, axis: &Vec3, approach: &Vec3, cloud: &PointCloud, gripper: &GripperModel) -> f64 {
    let probe = GraspCandidate::new(*center, *axis, *approach, gripper.max_opening);
    let half = gripper.max_opening / 2.0;
    let reach = cloud
        .points
        .iter()
        .map(|p| probe.local(p))
        .filter(|l| gripper.in_closing_slab(l) && l.x.abs() <= half)
        .map(|l| l.x.abs())
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    match reach {
        Some(r) => (2.0 * (r + gripper.clearance)).min(gripper.max_opening),
        None => gripper.max_opening,
    }
}

/// For each finger, the mean alignment of the contact normals with the
/// direction the finger pushes against; the score is the smaller of the two.
/// Contacts are points within `contact_band` of a finger's inner plane.
pub fn antipodal_score(grasp: &GraspCandidate, cloud: &PointCloud, gripper: &GripperModel, contact_band: f64) -> f64 {
    let half = grasp.width / 2.0;
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        let l = grasp.local(p);
        if !gripper.in_closing_slab(&l) || (l.x.abs() - half).abs() > contact_band {
            continue;
        }
        let along = grasp.axis.dot(n);
        let (side, value) = if l.x > 0.0 { (0, along) } else { (1, -along) };
        sums[side] += value.max(0.0);
        counts[side] += 1;
    }
    if counts.contains(&0) {
        return 0.0;
    }
    (sums[0] / counts[0] as f64)
        .min(sums[1] / counts[1] as f64)
        .clamp(0.0, 1.0)
}

/// True when no cloud point is inside a finger or the palm and no gripper
/// body dips below `floor_z`.
pub fn collision_free(
    grasp: &GraspCandidate,
    cloud: &PointCloud,
    gripper: &GripperModel,
    floor_z: Option<f64>,
) -> bool {
    let bodies = gripper.bodies(grasp.width);
    if let Some(floor) = floor_z {
        let pose = grasp.pose();
        if bodies
            .iter()
            .flat_map(|b| b.corners())
            .any(|c| pose.apply(&c).z < floor)
        {
            return false;
        }
    }
    !cloud.points.iter().any(|p| {
        let l = grasp.local(p);
        bodies.iter().any(|b| b.contains(&l))
    })
}

/// Fills in width, score and the collision flag.
pub fn evaluate_grasp(mut grasp: GraspCandidate, cloud: &PointCloud, cfg: &GraspConfig) -> GraspCandidate {
    grasp.width = grasp_width(&grasp.center, &grasp.axis, &grasp.approach, cloud, &cfg.gripper);
    grasp.score = antipodal_score(&grasp, cloud, &cfg.gripper, cfg.contact_band);
    grasp.collision_free = collision_free(&grasp, cloud, &cfg.gripper, cfg.floor_z);
    grasp
}

fn any_perpendicular(v: &Vec3) -> Vec3 {
    let a = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    v.cross(&a).normalize()
}

/// Rotates `v` by a uniform angle in `[0, max_rad]` about a random axis
/// perpendicular to it.
fn perturb<R: Rng>(v: &Vec3, max_rad: f64, rng: &mut R) -> Vec3 {
    if max_rad <= 0.0 {
        return *v;
    }
    let e1 = any_perpendicular(v);
    let e2 = v.cross(&e1);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let axis = e1 * phi.cos() + e2 * phi.sin();
    let angle = rng.random_range(0.0..=max_rad);
    Pose::from_axis_angle(&axis, angle, Vec3::zeros()).apply_vector(v)
}

/// Downward approach made perpendicular to `axis`, turned about `axis` by a
/// random angle in `[-noise, noise]`.
fn approach_for<R: Rng>(axis: &Vec3, noise_rad: f64, rng: &mut R) -> Vec3 {
    let down = -Vec3::z();
    let proj = down - axis * axis.dot(&down);
    let base = if proj.norm() < 1e-6 {
        any_perpendicular(axis)
    } else {
        proj.normalize()
    };
    let angle = if noise_rad > 0.0 {
        rng.random_range(-noise_rad..=noise_rad)
    } else {
        0.0
    };
    let turned = Pose::from_axis_angle(axis, angle, Vec3::zeros()).apply_vector(&base);
    // Re-orthogonalize against rounding.
    (turned - axis * axis.dot(&turned)).normalize()
}

fn uniform_in_ball<R: Rng>(radius: f64, rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

/// Draws `cfg.n_candidates` scored candidates.
///
/// Without a target, each candidate closes along the (perturbed) normal of
/// a random cloud point and is centered between that point and the far side
/// of the object. With a target, centers are uniform in the ball of radius
/// `cfg.target_radius` around it and axes come from normals near it.
pub fn sample_grasps<R: Rng>(
    cloud: &PointCloud,
    target: Option<Vec3>,
    cfg: &GraspConfig,
    rng: &mut R,
) -> Result<Vec<GraspCandidate>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index = NeighborIndex::new(&cloud.points, 0.01);
    let axis_noise = cfg.axis_noise_deg.to_radians();
    let approach_noise = cfg.approach_noise_deg.to_radians();
    let nearby = match target {
        Some(t) => {
            let reachable = index.within(&cloud.points, &t, cfg.target_radius);
            if reachable.is_empty() {
                return Err(Error::TargetUnreachable {
                    radius: cfg.target_radius,
                });
            }
            let near = index.within(&cloud.points, &t, cfg.axis_neighborhood);
            if near.is_empty() {
                reachable
            } else {
                near
            }
        }
        None => Vec::new(),
    };
    let mut out = Vec::with_capacity(cfg.n_candidates);
    for _ in 0..cfg.n_candidates {
        let (center, axis) = match target {
            Some(t) => {
                let i = nearby[rng.random_range(0..nearby.len())];
                (
                    t + uniform_in_ball(cfg.target_radius, rng),
                    -perturb(&cloud.normals[i], axis_noise, rng),
                )
            }
            None => {
                let i = rng.random_range(0..cloud.len());
                let p = cloud.points[i];
                let axis = -perturb(&cloud.normals[i], axis_noise, rng);
                // Farthest point within 5 mm of the closing line, up to the
                // maximum opening.
                let far = index
                    .within(
                        &cloud.points,
                        &(p + axis * cfg.gripper.max_opening / 2.0),
                        cfg.gripper.max_opening / 2.0 + 0.005,
                    )
                    .into_iter()
                    .map(|j| cloud.points[j] - p)
                    .filter(|d| {
                        let t = d.dot(&axis);
                        t > 0.0 && t <= cfg.gripper.max_opening && (d - axis * t).norm() <= 0.005
                    })
                    .map(|d| d.dot(&axis))
                    .fold(0.0, f64::max);
                (p + axis * (far / 2.0), axis)
            }
        };
        let approach = approach_for(&axis, approach_noise, rng);
        out.push(evaluate_grasp(
            GraspCandidate::new(center, axis, approach, cfg.gripper.max_opening),
            cloud,
            cfg,
        ));
    }
    Ok(out)
}

/// Highest-scoring collision-free candidate with contact on both fingers;
/// the first one wins ties.
pub fn select_best_grasp(candidates: &[GraspCandidate]) -> Result<GraspCandidate> {
    let mut best: Option<&GraspCandidate> = None;
    for c in candidates.iter().filter(|c| c.collision_free && c.score > 0.0) {
        if best.is_none_or(|b| c.score > b.score) {
            best = Some(c);
        }
    }
    best.copied().ok_or(Error::NoFeasibleGrasp)
}

/// A test image for descriptor lookup.
#[derive(Debug, Clone, Copy)]
pub struct TestView<'a> {
    pub descriptors: &'a DescriptorImage,
    pub depth: &'a DepthImage,
    pub pose: &'a Pose,
    pub intrinsics: &'a Intrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspTarget {
    pub view: usize,
    pub pixel: Pixel,
    pub distance: f64,
    pub world: Vec3,
}

/// Looks up the reference pixel in every test view, keeps the closest
/// descriptor match if it passes `threshold`, and grasps around the
/// corresponding 3D point.
pub fn grasp_specific_point<R: Rng>(
    reference: &DescriptorImage,
    u_ref: Pixel,
    views: &[TestView],
    cloud: &PointCloud,
    threshold: f64,
    cfg: &GraspConfig,
    rng: &mut R,
) -> Result<(GraspCandidate, GraspTarget)> {
    let mut best: Option<(usize, Pixel, f64)> = None;
    for (i, v) in views.iter().enumerate() {
        let valid_depth = crate::image::Grid {
            width: v.depth.width,
            height: v.depth.height,
            data: v.depth.data.iter().map(|&d| d > 0.0).collect(),
        };
        let Ok(m) = best_match(reference, u_ref, v.descriptors, Some(&valid_depth), threshold) else {
            continue;
        };
        if m.valid && best.is_none_or(|(_, _, d)| m.best_distance < d) {
            best = Some((i, m.best_pixel, m.best_distance));
        }
    }
    let (view, pixel, distance) = best.ok_or(Error::NoMatch)?;
    let v = &views[view];
    let (x, y) = (pixel.u as usize, pixel.v as usize);
    let world = v.pose.apply(&unproject(pixel, *v.depth.get(x, y), v.intrinsics)?);
    let candidates = sample_grasps(cloud, Some(world), cfg, rng)?;
    let grasp = select_best_grasp(&candidates)?;
    Ok((
        grasp,
        GraspTarget {
            view,
            pixel,
            distance,
            world,
        },
    ))
}
