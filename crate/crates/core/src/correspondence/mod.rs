//! Training signal generation: geometric matches and non-matches between
//! frames, cross-object non-matches, and image-space augmentation.

mod augment;

pub use augment::{
    augment_rotate180, composite_multi_object, randomize_background, remap_rotate180, Composite, CompositeLayer,
    MatchSide,
};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, unproject, Intrinsics, Pixel, Vec3};
use crate::image::{DepthImage, Grid, Mask};
use crate::scene::RgbdFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Match,
    NonMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPair {
    pub image_a: usize,
    pub image_b: usize,
    pub u_a: Pixel,
    pub u_b: Pixel,
    pub kind: PairKind,
    /// 0 is background.
    pub object_a: u32,
    pub object_b: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonType {
    SingleObjectWithinScene,
    DifferentObjectAcrossScene,
    MultiObjectWithinScene,
    SyntheticMultiObject,
}

impl ComparisonType {
    pub const ALL: [ComparisonType; 4] = [
        ComparisonType::SingleObjectWithinScene,
        ComparisonType::DifferentObjectAcrossScene,
        ComparisonType::MultiObjectWithinScene,
        ComparisonType::SyntheticMultiObject,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComparisonType::SingleObjectWithinScene => "single_object_within_scene",
            ComparisonType::DifferentObjectAcrossScene => "different_object_across_scene",
            ComparisonType::MultiObjectWithinScene => "multi_object_within_scene",
            ComparisonType::SyntheticMultiObject => "synthetic_multi_object",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub matches: Vec<PixelPair>,
    pub non_matches: Vec<PixelPair>,
    pub comparison_type: ComparisonType,
}

impl CorrespondenceSet {
    pub fn new(comparison_type: ComparisonType) -> Self {
        CorrespondenceSet {
            matches: Vec::new(),
            non_matches: Vec::new(),
            comparison_type,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n_matches: usize,
    pub n_nonmatch_per_match: usize,
    /// Non-matches are drawn outside this many pixels of the true match.
    pub exclusion_radius: f64,
    /// Largest depth disagreement, in meters, still treated as visible.
    pub occlusion_eps: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_matches: 500,
            n_nonmatch_per_match: 150,
            exclusion_radius: 3.0,
            occlusion_eps: 0.01,
        }
    }
}

/// One image of a training pair.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub image: usize,
    pub frame: &'a RgbdFrame,
    /// Depth used for association, usually re-rendered from the reconstruction.
    pub depth: &'a DepthImage,
    /// Pixels allowed as match sources (and cross-object samples).
    pub mask: &'a Mask,
    /// Object label per pixel, 0 for background.
    pub labels: &'a Grid<u32>,
}

impl View<'_> {
    fn label(&self, p: Pixel) -> u32 {
        p.round_in(self.labels.width, self.labels.height)
            .map_or(0, |(x, y)| *self.labels.get(x, y))
    }
}

/// Label image assigning `id` inside `mask` and 0 elsewhere.
pub fn labels_from_mask(mask: &Mask, id: u32) -> Grid<u32> {
    Grid {
        width: mask.width,
        height: mask.height,
        data: mask.data.iter().map(|&m| if m { id } else { 0 }).collect(),
    }
}

/// Independent random stream for pair `pair_id` under `seed`.
pub fn pair_rng(seed: u64, pair_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pair_id);
    rng
}

/// Reprojects `p_a` into frame `b` through the depth of frame `a`.
///
/// Returns `Ok(None)` when the point leaves `b`'s image, falls behind its
/// camera, faces away from it, or disagrees with `depth_b` by more than
/// `occlusion_eps`.
pub fn find_match(
    frame_a: &RgbdFrame,
    depth_a: &DepthImage,
    frame_b: &RgbdFrame,
    depth_b: &DepthImage,
    p_a: Pixel,
    occlusion_eps: f64,
) -> Result<Option<Pixel>> {
    let ka = &frame_a.intrinsics;
    let (xa, ya) = p_a.round_in(depth_a.width, depth_a.height).ok_or(Error::OutOfBounds {
        u: p_a.u,
        v: p_a.v,
        width: depth_a.width,
        height: depth_a.height,
    })?;
    let za = *depth_a.get(xa, ya);
    if za <= 0.0 || !za.is_finite() {
        return Err(Error::NoDepth);
    }
    let local = unproject(p_a, za, ka)?;
    let world = frame_a.pose.apply(&local);
    if let Some(n) = surface_normal(depth_a, ka, xa, ya, &local) {
        if frame_a.pose.apply_vector(&n).dot(&(frame_b.pose.translation - world)) <= 0.0 {
            return Ok(None);
        }
    }
    let cam_b = frame_b.pose.inverse().apply(&world);
    let Ok((pb, zb)) = project(&cam_b, &frame_b.intrinsics) else {
        return Ok(None);
    };
    let Some((xb, yb)) = pb.round_in(depth_b.width, depth_b.height) else {
        return Ok(None);
    };
    if depth_consistent(depth_b, pb, zb, occlusion_eps) {
        Ok(Some(Pixel::at(xb, yb)))
    } else {
        Ok(None)
    }
}

/// Camera-frame normal at pixel `(x, y)`, facing the camera.
///
/// Inverse depth is affine in image coordinates over a plane, so on each
/// axis the tangent is taken toward the side whose inverse depth has the
/// smaller second difference: a pixel next to an edge uses its own face.
/// Away from edges the central difference is used.
/// `None` without valid neighbors.
fn surface_normal(depth: &DepthImage, k: &Intrinsics, x: usize, y: usize, center: &Vec3) -> Option<Vec3> {
    let inv = |dx: isize, dy: isize| -> Option<f64> {
        let nx = x.checked_add_signed(dx)?;
        let ny = y.checked_add_signed(dy)?;
        if nx >= depth.width || ny >= depth.height {
            return None;
        }
        let d = *depth.get(nx, ny);
        (d > 0.0 && d.is_finite()).then(|| 1.0 / d)
    };
    let point = |dx: isize, dy: isize| -> Option<Vec3> {
        let p = Pixel::at(x.checked_add_signed(dx)?, y.checked_add_signed(dy)?);
        unproject(p, 1.0 / inv(dx, dy)?, k).ok()
    };
    let c = inv(0, 0)?;
    let tangent = |ex: isize, ey: isize| -> Option<Vec3> {
        let curvature = |s: isize| -> f64 {
            match (inv(s * ex, s * ey), inv(2 * s * ex, 2 * s * ey)) {
                (Some(a), Some(b)) => (b - 2.0 * a + c).abs(),
                _ => f64::INFINITY,
            }
        };
        let (minus, plus) = (curvature(-1), curvature(1));
        // Comparable curvature on both sides: no edge, use the central difference.
        if minus.is_finite() && plus.is_finite() && minus.max(plus) <= 4.0 * minus.min(plus) + 1e-12 * c {
            return Some(point(ex, ey)? - point(-ex, -ey)?);
        }
        let s = if minus < plus { -1 } else { 1 };
        Some((point(s * ex, s * ey)? - center) * s as f64)
    };
    let n = tangent(1, 0)?.cross(&tangent(0, 1)?);
    let len = n.norm();
    if len == 0.0 || !len.is_finite() {
        return None;
    }
    let n = n / len;
    Some(if n.dot(center) > 0.0 { -n } else { n })
}

/// Whether a surface at depth `z` seen at `p` agrees with `depth`.
///
/// The depth image samples the surface at pixel centers only, so a single
/// rounded sample fails on steeply inclined surfaces. Inverse depth is
/// linear in image coordinates over a plane, which makes its bilinear
/// interpolation exact there; the four neighboring samples are also tried
/// so that planar edges still pass.
fn depth_consistent(depth: &DepthImage, p: Pixel, z: f64, eps: f64) -> bool {
    let x0 = (p.u.floor().max(0.0) as usize).min(depth.width - 1);
    let y0 = (p.v.floor().max(0.0) as usize).min(depth.height - 1);
    let x1 = (x0 + 1).min(depth.width - 1);
    let y1 = (y0 + 1).min(depth.height - 1);
    let corners = [
        *depth.get(x0, y0),
        *depth.get(x1, y0),
        *depth.get(x0, y1),
        *depth.get(x1, y1),
    ];
    let agrees = |d: f64| d > 0.0 && (d - z).abs() <= eps;
    if corners.iter().all(|&d| d > 0.0) {
        let fx = (p.u - x0 as f64).clamp(0.0, 1.0);
        let fy = (p.v - y0 as f64).clamp(0.0, 1.0);
        let inv = |d: f64| 1.0 / d;
        let top = inv(corners[0]) * (1.0 - fx) + inv(corners[1]) * fx;
        let bottom = inv(corners[2]) * (1.0 - fx) + inv(corners[3]) * fx;
        if agrees(1.0 / (top * (1.0 - fy) + bottom * fy)) {
            return true;
        }
    }
    // The nearest sample decides, except that a farther surface there cannot
    // occlude: then the point sits on its own silhouette.
    let Some((x, y)) = p.round_in(depth.width, depth.height) else {
        return false;
    };
    let nearest = *depth.get(x, y);
    agrees(nearest) || ((nearest <= 0.0 || nearest > z + eps) && corners.into_iter().any(agrees))
}

fn uniform_pixel<R: Rng>(width: usize, height: usize, rng: &mut R) -> Pixel {
    Pixel::at(rng.random_range(0..width), rng.random_range(0..height))
}

/// Matches sourced on `a.mask` where depth is valid, each followed by
/// `n_nonmatch_per_match` non-matches drawn over all of image `b` outside
/// the exclusion disc around the true match.
pub fn sample_correspondences<R: Rng>(
    a: &View,
    b: &View,
    cfg: &SamplingConfig,
    comparison_type: ComparisonType,
    rng: &mut R,
) -> Result<CorrespondenceSet> {
    let sources: Vec<(usize, usize)> = a
        .mask
        .coords()
        .into_iter()
        .filter(|&(x, y)| *a.depth.get(x, y) > 0.0)
        .collect();
    let insufficient = |found| Error::InsufficientOverlap {
        found,
        requested: cfg.n_matches,
    };
    if sources.is_empty() {
        return Err(insufficient(0));
    }
    let (wb, hb) = (b.depth.width, b.depth.height);
    let mut set = CorrespondenceSet::new(comparison_type);
    for _ in 0..cfg.n_matches {
        let (x, y) = sources[rng.random_range(0..sources.len())];
        let u_a = Pixel::at(x, y);
        let Some(u_b) = find_match(a.frame, a.depth, b.frame, b.depth, u_a, cfg.occlusion_eps)? else {
            continue;
        };
        let object_a = a.label(u_a);
        set.matches.push(PixelPair {
            image_a: a.image,
            image_b: b.image,
            u_a,
            u_b,
            kind: PairKind::Match,
            object_a,
            object_b: b.label(u_b),
        });
        for _ in 0..cfg.n_nonmatch_per_match {
            let nb = loop {
                let p = uniform_pixel(wb, hb, rng);
                if p.distance(&u_b) > cfg.exclusion_radius {
                    break p;
                }
            };
            set.non_matches.push(PixelPair {
                image_a: a.image,
                image_b: b.image,
                u_a,
                u_b: nb,
                kind: PairKind::NonMatch,
                object_a,
                object_b: b.label(nb),
            });
        }
    }
    if set.matches.len() * 10 < cfg.n_matches {
        return Err(insufficient(set.matches.len()));
    }
    Ok(set)
}

/// `n_per_match` non-matches for every match, uniform over image `b`
/// outside the exclusion disc around the match.
pub fn sample_non_matches<R: Rng>(
    matches: &[PixelPair],
    labels_b: &Grid<u32>,
    n_per_match: usize,
    exclusion_radius: f64,
    rng: &mut R,
) -> Vec<PixelPair> {
    let mut out = Vec::with_capacity(matches.len() * n_per_match);
    for m in matches {
        for _ in 0..n_per_match {
            let nb = loop {
                let p = uniform_pixel(labels_b.width, labels_b.height, rng);
                if p.distance(&m.u_b) > exclusion_radius {
                    break p;
                }
            };
            let (x, y) = (nb.u as usize, nb.v as usize);
            out.push(PixelPair {
                u_b: nb,
                kind: PairKind::NonMatch,
                object_b: *labels_b.get(x, y),
                ..*m
            });
        }
    }
    out
}

fn object_ids(mask: &Mask, labels: &Grid<u32>) -> Vec<u32> {
    let mut ids: Vec<u32> = mask
        .data
        .iter()
        .zip(&labels.data)
        .filter(|(&m, &l)| m && l != 0)
        .map(|(_, &l)| l)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// `n` non-matches between two different objects, uniform over both masks.
pub fn cross_object_pairs<R: Rng>(a: &View, b: &View, n: usize, rng: &mut R) -> Result<Vec<PixelPair>> {
    let pa = a.mask.coords();
    let pb = b.mask.coords();
    if pa.is_empty() || pb.is_empty() {
        return Err(Error::EmptyMask);
    }
    let ids_b = object_ids(b.mask, b.labels);
    if let Some(&shared) = object_ids(a.mask, a.labels).iter().find(|id| ids_b.contains(id)) {
        return Err(Error::SameObject(shared));
    }
    Ok((0..n)
        .map(|_| {
            let (xa, ya) = pa[rng.random_range(0..pa.len())];
            let (xb, yb) = pb[rng.random_range(0..pb.len())];
            PixelPair {
                image_a: a.image,
                image_b: b.image,
                u_a: Pixel::at(xa, ya),
                u_b: Pixel::at(xb, yb),
                kind: PairKind::NonMatch,
                object_a: *a.labels.get(xa, ya),
                object_b: *b.labels.get(xb, yb),
            }
        })
        .collect())
}

/// Categorical draw over [`ComparisonType::ALL`].
pub fn sample_comparison_type<R: Rng>(weights: &[f64; 4], rng: &mut R) -> Result<ComparisonType> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidDistribution);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidDistribution);
    }
    let r = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if r < acc && *w > 0.0 {
            return Ok(ComparisonType::ALL[i]);
        }
    }
    let last = weights.iter().rposition(|&w| w > 0.0).expect("positive sum");
    Ok(ComparisonType::ALL[last])
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct PairRecord {
    img_a: usize,
    img_b: usize,
    ua_u: f64,
    ua_v: f64,
    ub_u: f64,
    ub_v: f64,
    kind: PairKind,
    obj_a: u32,
    obj_b: u32,
}

/// One row per pair, matches first.
pub fn write_correspondences_csv(path: &Path, set: &CorrespondenceSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in set.matches.iter().chain(&set.non_matches) {
        w.serialize(PairRecord {
            img_a: p.image_a,
            img_b: p.image_b,
            ua_u: p.u_a.u,
            ua_v: p.u_a.v,
            ub_u: p.u_b.u,
            ub_v: p.u_b.v,
            kind: p.kind,
            obj_a: p.object_a,
            obj_b: p.object_b,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_correspondences_csv(path: &Path) -> Result<Vec<PixelPair>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|rec| {
            let rec: PairRecord = rec?;
            Ok(PixelPair {
                image_a: rec.img_a,
                image_b: rec.img_b,
                u_a: Pixel::new(rec.ua_u, rec.ua_v),
                u_b: Pixel::new(rec.ub_u, rec.ub_v),
                kind: rec.kind,
                object_a: rec.obj_a,
                object_b: rec.obj_b,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Pose, Vec3};
    use crate::scene::{oracle_match, render, Scene, SceneObject, Shape, Texture};

    fn k() -> Intrinsics {
        Intrinsics::from_fov(96, 72, 60.0)
    }

    fn two_box_scene() -> Scene {
        let bx = |id, x: f64, y: f64, h: f64| SceneObject {
            id,
            shape: Shape::Box {
                half_extents: [0.045, 0.045, h],
            },
            pose: Pose::from_translation(Vec3::new(x, y, h)),
            texture: Texture::Flat { color: [0.7, 0.3, 0.2] },
        };
        Scene::new(
            vec![bx(1, 0.0, -0.07, 0.05), bx(2, 0.0, 0.07, 0.04)],
            Texture::Flat { color: [0.4; 3] },
            Vec3::new(0.2, 0.3, 1.0),
        )
    }

    fn cam(eye: [f64; 3]) -> Pose {
        Pose::look_at(&Vec3::from(eye), &Vec3::new(0.0, 0.0, 0.04), &Vec3::z())
    }

    #[test]
    fn identical_frames_match_themselves() {
        let scene = two_box_scene();
        let (f, _) = render(&scene, &cam([0.3, 0.1, 0.3]), &k());
        for (x, y) in [(10, 10), (48, 36), (95, 71)] {
            let p = Pixel::at(x, y);
            assert_eq!(find_match(&f, &f.depth, &f, &f.depth, p, 0.01).unwrap(), Some(p));
        }
        let mut empty = f.clone();
        empty.depth.data.fill(0.0);
        assert!(matches!(
            find_match(&empty, &empty.depth, &f, &f.depth, Pixel::at(1, 1), 0.01),
            Err(Error::NoDepth)
        ));
    }

    #[test]
    fn point_outside_second_view_has_no_match() {
        let scene = two_box_scene();
        let (fa, _) = render(&scene, &cam([0.3, 0.0, 0.3]), &k());
        let pose_b = Pose::look_at(&Vec3::new(0.3, 0.0, 0.3), &Vec3::new(0.6, 0.5, 0.3), &Vec3::z());
        let (fb, _) = render(&scene, &pose_b, &k());
        assert_eq!(
            find_match(&fa, &fa.depth, &fb, &fb.depth, Pixel::at(48, 36), 0.01).unwrap(),
            None
        );
    }

    #[test]
    fn agrees_with_oracle_on_occluding_boxes() {
        let scene = two_box_scene();
        // View b looks roughly along +y so the taller box 1 hides parts of box 2.
        let (fa, gta) = render(&scene, &cam([0.35, 0.0, 0.25]), &k());
        let (fb, _) = render(&scene, &cam([0.2, -0.35, 0.25]), &k());
        let on_object = gta.any_object_mask().coords();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut agree, mut occluded) = (0, 0);
        for _ in 0..1000 {
            let (x, y) = on_object[rng.random_range(0..on_object.len())];
            let p = Pixel::at(x, y);
            let got = find_match(&fa, &fa.depth, &fb, &fb.depth, p, 0.01).unwrap();
            let truth = oracle_match(&scene, &fb, &gta, p);
            if truth.is_none() {
                occluded += 1;
            }
            let same = match (got, truth) {
                (None, None) => true,
                (Some(g), Some(t)) => g.distance(&t) <= 1.0,
                _ => false,
            };
            agree += same as usize;
        }
        assert!(occluded > 20, "scene should have occlusions, got {occluded}");
        assert!(agree >= 990, "agreement {agree}/1000");
    }

    #[test]
    fn back_of_thin_wall_is_rejected() {
        // 4 mm wall, thinner than the depth tolerance: only the normal can tell.
        let wall = SceneObject {
            id: 1,
            shape: Shape::Box {
                half_extents: [0.002, 0.08, 0.06],
            },
            pose: Pose::from_translation(Vec3::new(0.0, 0.0, 0.06)),
            texture: Texture::Flat { color: [0.7, 0.3, 0.2] },
        };
        let scene = Scene::new(vec![wall], Texture::Flat { color: [0.4; 3] }, Vec3::new(0.2, 0.3, 1.0));
        let look = |x: f64| Pose::look_at(&Vec3::new(x, 0.05, 0.12), &Vec3::new(0.0, 0.0, 0.06), &Vec3::z());
        let (fa, gta) = render(&scene, &look(0.3), &k());
        let (fb, _) = render(&scene, &look(-0.3), &k());
        let on_wall = gta.object_mask(1).coords();
        assert!(on_wall.len() > 100);
        for (x, y) in on_wall {
            let p = Pixel::at(x, y);
            assert_eq!(oracle_match(&scene, &fb, &gta, p), None);
            assert_eq!(
                find_match(&fa, &fa.depth, &fb, &fb.depth, p, 0.01).unwrap(),
                None,
                "pixel {x},{y}"
            );
        }
    }

    fn view<'a>(f: &'a RgbdFrame, mask: &'a Mask, labels: &'a Grid<u32>, image: usize) -> View<'a> {
        View {
            image,
            frame: f,
            depth: &f.depth,
            mask,
            labels,
        }
    }

    #[test]
    fn identical_frames_sample_identity_matches() {
        let scene = two_box_scene();
        let (f, gt) = render(&scene, &cam([0.3, 0.1, 0.3]), &k());
        let mask = gt.object_mask(1);
        let labels = gt.object_id.clone();
        let v = view(&f, &mask, &labels, 0);
        let cfg = SamplingConfig {
            n_matches: 500,
            n_nonmatch_per_match: 20,
            ..Default::default()
        };
        let set = sample_correspondences(
            &v,
            &v,
            &cfg,
            ComparisonType::SingleObjectWithinScene,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(set.matches.len(), 500);
        assert!(set.matches.iter().all(|m| m.u_a == m.u_b && m.object_a == 1));
        assert_eq!(set.non_matches.len(), 500 * 20);
    }

    #[test]
    fn non_matches_avoid_the_true_match() {
        let scene = two_box_scene();
        let (fa, gta) = render(&scene, &cam([0.3, 0.1, 0.3]), &k());
        let (fb, gtb) = render(&scene, &cam([0.25, -0.2, 0.3]), &k());
        let (ma, mb) = (gta.any_object_mask(), gtb.any_object_mask());
        let a = view(&fa, &ma, &gta.object_id, 0);
        let b = view(&fb, &mb, &gtb.object_id, 1);
        let cfg = SamplingConfig::default();
        let set = sample_correspondences(
            &a,
            &b,
            &cfg,
            ComparisonType::MultiObjectWithinScene,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        assert!(set.matches.len() >= 50);
        for (i, m) in set.matches.iter().enumerate() {
            let nm = &set.non_matches[i * 150..(i + 1) * 150];
            assert!(nm.iter().all(|n| n.u_a == m.u_a && n.u_b.distance(&m.u_b) > 3.0));
            // Re-verification of the occlusion check.
            let again = find_match(&fa, &fa.depth, &fb, &fb.depth, m.u_a, cfg.occlusion_eps).unwrap();
            assert_eq!(again, Some(m.u_b));
        }
        let again = sample_correspondences(
            &a,
            &b,
            &cfg,
            ComparisonType::MultiObjectWithinScene,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        assert_eq!(again, set);
    }

    #[test]
    fn disjoint_views_are_insufficient() {
        let scene = two_box_scene();
        let (fa, gta) = render(&scene, &cam([0.3, 0.0, 0.3]), &k());
        let pose_b = Pose::look_at(&Vec3::new(0.3, 0.0, 0.3), &Vec3::new(0.9, 0.6, 0.3), &Vec3::z());
        let (fb, gtb) = render(&scene, &pose_b, &k());
        let (ma, mb) = (gta.any_object_mask(), gtb.any_object_mask());
        let r = sample_correspondences(
            &view(&fa, &ma, &gta.object_id, 0),
            &view(&fb, &mb, &gtb.object_id, 1),
            &SamplingConfig::default(),
            ComparisonType::SingleObjectWithinScene,
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        assert!(matches!(r, Err(Error::InsufficientOverlap { .. })));
    }

    #[test]
    fn cross_object_pairs_stay_on_masks() {
        let scene = two_box_scene();
        let (f, gt) = render(&scene, &cam([0.3, 0.1, 0.3]), &k());
        let (m1, m2) = (gt.object_mask(1), gt.object_mask(2));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = view(&f, &m1, &gt.object_id, 0);
        let b = view(&f, &m2, &gt.object_id, 1);
        let pairs = cross_object_pairs(&a, &b, 100, &mut rng).unwrap();
        assert_eq!(pairs.len(), 100);
        for p in &pairs {
            assert_eq!(p.kind, PairKind::NonMatch);
            assert!(*m1.get(p.u_a.u as usize, p.u_a.v as usize));
            assert!(*m2.get(p.u_b.u as usize, p.u_b.v as usize));
            assert_eq!((p.object_a, p.object_b), (1, 2));
        }
        assert!(matches!(
            cross_object_pairs(&a, &a, 10, &mut rng),
            Err(Error::SameObject(1))
        ));
        let empty = Mask::filled(96, 72, false);
        let e = view(&f, &empty, &gt.object_id, 2);
        assert!(matches!(
            cross_object_pairs(&e, &b, 10, &mut rng),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn comparison_type_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            assert_eq!(
                sample_comparison_type(&[1.0, 0.0, 0.0, 0.0], &mut rng).unwrap(),
                ComparisonType::SingleObjectWithinScene
            );
        }
        let n = 10_000;
        let first = (0..n)
            .filter(|_| {
                sample_comparison_type(&[0.5, 0.5, 0.0, 0.0], &mut rng).unwrap()
                    == ComparisonType::SingleObjectWithinScene
            })
            .count();
        assert!((first as f64 / n as f64 - 0.5).abs() < 0.02);
        assert!(matches!(
            sample_comparison_type(&[0.0; 4], &mut rng),
            Err(Error::InvalidDistribution)
        ));
        assert!(sample_comparison_type(&[-1.0, 2.0, 0.0, 0.0], &mut rng).is_err());
    }

    #[test]
    fn pair_streams_are_independent_and_repeatable() {
        let a: Vec<u32> = (0..4).map(|_| pair_rng(9, 0).random()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(pair_rng(9, 0).random::<u64>(), pair_rng(9, 1).random::<u64>());
    }

    #[test]
    fn csv_round_trip() {
        let mut set = CorrespondenceSet::new(ComparisonType::SyntheticMultiObject);
        set.matches.push(PixelPair {
            image_a: 3,
            image_b: 4,
            u_a: Pixel::at(1, 2),
            u_b: Pixel::at(5, 6),
            kind: PairKind::Match,
            object_a: 1,
            object_b: 1,
        });
        set.non_matches.push(PixelPair {
            kind: PairKind::NonMatch,
            u_b: Pixel::at(50, 60),
            object_b: 0,
            ..set.matches[0]
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        write_correspondences_csv(&path, &set).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("img_a,img_b,ua_u,ua_v,ub_u,ub_v,kind,obj_a,obj_b"));
        let back = read_correspondences_csv(&path).unwrap();
        assert_eq!(back, vec![set.matches[0], set.non_matches[0]]);
    }
}
