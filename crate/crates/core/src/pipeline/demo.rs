//! Single-query descriptor matching and grasping at a clicked point.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::train::describe;
use crate::error::{Error, Result};
use crate::eval::{best_match, MatchDecision, DEFAULT_THRESHOLD_FRACTION};
use crate::geometry::{Pixel, Vec3};
use crate::grasp::{
    fuse_cloud, grasp_specific_point, CloudView, GraspCandidate, GraspConfig, GraspTarget, TestView,
    DEFAULT_NORMAL_NEIGHBORS, DEFAULT_VOXEL,
};
use crate::image::{write_ppm, Grid, RgbImage};
use crate::net::{DescriptorImage, NetArchitecture, NetParams};
use crate::scene::oracle_match;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchQuery {
    pub reference_scene: usize,
    pub reference_frame: usize,
    pub pixel: [usize; 2],
    pub target_scene: usize,
    pub target_frame: usize,
    /// Descriptor distance below which a match is accepted.
    pub threshold: Option<f64>,
}

fn frame_ref(ds: &Dataset, scene: usize, frame: usize) -> Result<&super::dataset::FrameData> {
    ds.scenes
        .get(scene)
        .and_then(|s| s.frames.get(frame))
        .ok_or_else(|| Error::Config(format!("no frame {frame} in scene {scene}")))
}

/// Best match of the query pixel and, when the renderer can see it, the
/// true location.
pub fn find_match_in_dataset(
    params: &NetParams,
    arch: &NetArchitecture,
    ds: &Dataset,
    q: &MatchQuery,
    margin: f64,
) -> Result<(MatchDecision, Option<Pixel>)> {
    let fa = frame_ref(ds, q.reference_scene, q.reference_frame)?;
    let fb = frame_ref(ds, q.target_scene, q.target_frame)?;
    let u_a = Pixel::at(q.pixel[0], q.pixel[1]);
    let da = describe(params, arch, &fa.frame.rgb)?;
    let db = describe(params, arch, &fb.frame.rgb)?;
    let threshold = q.threshold.unwrap_or(margin * DEFAULT_THRESHOLD_FRACTION);
    let decision = best_match(&da, u_a, &db, None, threshold)?;
    let truth = oracle_match(&ds.scenes[q.target_scene].scene, &fb.frame, &fa.gt, u_a);
    Ok((decision, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraspDemoConfig {
    pub reference_scene: usize,
    pub reference_frame: usize,
    /// The clicked pixel; defaults to the mask pixel nearest the mask
    /// centroid.
    pub reference_pixel: Option<[usize; 2]>,
    pub test_scene: usize,
    /// Frames searched for the match; all frames of the test scene if unset.
    pub test_frames: Option<Vec<usize>>,
    pub threshold: Option<f64>,
    pub margin: f64,
    pub cloud_voxel: f64,
    pub grasp: GraspConfig,
    pub seed: u64,
}

impl Default for GraspDemoConfig {
    fn default() -> Self {
        GraspDemoConfig {
            reference_scene: 0,
            reference_frame: 0,
            reference_pixel: None,
            test_scene: 1,
            test_frames: None,
            threshold: None,
            margin: 0.5,
            cloud_voxel: DEFAULT_VOXEL,
            grasp: GraspConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspDemoReport {
    pub reference_pixel: Pixel,
    pub target: GraspTarget,
    pub grasp: GraspCandidate,
    /// Object id under the matched pixel according to the renderer.
    pub matched_object: u32,
    /// Where the clicked surface point really is in the test scene.
    pub oracle_point: Option<Vec3>,
    pub center_error: Option<f64>,
}

fn centroid_pixel(mask: &crate::image::Mask) -> Option<[usize; 2]> {
    let coords = mask.coords();
    if coords.is_empty() {
        return None;
    }
    let n = coords.len() as f64;
    let cx = coords.iter().map(|c| c.0 as f64).sum::<f64>() / n;
    let cy = coords.iter().map(|c| c.1 as f64).sum::<f64>() / n;
    coords
        .iter()
        .min_by(|a, b| {
            let da = (a.0 as f64 - cx).powi(2) + (a.1 as f64 - cy).powi(2);
            let db = (b.0 as f64 - cx).powi(2) + (b.1 as f64 - cy).powi(2);
            da.total_cmp(&db)
        })
        .map(|&(x, y)| [x, y])
}

/// Clicks a pixel in the reference image, finds it in the test scene and
/// grasps around it. Errors with `NoMatch` or `NoFeasibleGrasp`.
pub fn grasp_demo(
    params: &NetParams,
    arch: &NetArchitecture,
    ds: &Dataset,
    cfg: &GraspDemoConfig,
) -> Result<GraspDemoReport> {
    let reference = frame_ref(ds, cfg.reference_scene, cfg.reference_frame)?;
    let test = ds
        .scenes
        .get(cfg.test_scene)
        .ok_or_else(|| Error::Config(format!("no scene {}", cfg.test_scene)))?;
    let [px, py] = match cfg.reference_pixel {
        Some(p) => p,
        None => centroid_pixel(&reference.mask).ok_or(Error::EmptyMask)?,
    };
    let u_ref = Pixel::at(px, py);
    let frames: Vec<usize> = cfg
        .test_frames
        .clone()
        .unwrap_or_else(|| (0..test.frames.len()).collect());
    for &f in &frames {
        frame_ref(ds, cfg.test_scene, f)?;
    }
    let desc_ref = describe(params, arch, &reference.frame.rgb)?;
    let descs: Vec<DescriptorImage> = frames
        .iter()
        .map(|&f| describe(params, arch, &test.frames[f].frame.rgb))
        .collect::<Result<_>>()?;
    let views: Vec<TestView> = frames
        .iter()
        .zip(&descs)
        .map(|(&f, d)| TestView {
            descriptors: d,
            depth: &test.frames[f].recon_depth,
            pose: &test.frames[f].frame.pose,
            intrinsics: &test.frames[f].frame.intrinsics,
        })
        .collect();
    let cloud_views: Vec<CloudView> = test
        .frames
        .iter()
        .map(|f| CloudView {
            depth: &f.recon_depth,
            pose: &f.frame.pose,
            intrinsics: &f.frame.intrinsics,
            mask: Some(&f.mask),
        })
        .collect();
    let cloud = fuse_cloud(&cloud_views, cfg.cloud_voxel, DEFAULT_NORMAL_NEIGHBORS)?;
    let threshold = cfg.threshold.unwrap_or(cfg.margin * DEFAULT_THRESHOLD_FRACTION);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (grasp, mut target) = grasp_specific_point(&desc_ref, u_ref, &views, &cloud, threshold, &cfg.grasp, &mut rng)?;
    target.view = frames[target.view];

    let gt = &reference.gt;
    let (xr, yr) = (px.min(gt.object_id.width - 1), py.min(gt.object_id.height - 1));
    let id = *gt.object_id.get(xr, yr);
    let oracle_point = (id != 0)
        .then(|| {
            let coord = Vec3::from(*gt.surface_coord.get(xr, yr));
            test.scene
                .object(id)?
                .world_point(*gt.part.get(xr, yr) as usize, &coord)
        })
        .flatten();
    let matched = &test.frames[target.view].gt.object_id;
    Ok(GraspDemoReport {
        reference_pixel: u_ref,
        matched_object: *matched.get(target.pixel.u as usize, target.pixel.v as usize),
        center_error: oracle_point.map(|p| (grasp.center - p).norm()),
        oracle_point,
        target,
        grasp,
    })
}

fn mark(img: &mut RgbImage, p: Pixel, color: [f32; 3]) {
    let (x0, y0) = (p.u.round() as i64, p.v.round() as i64);
    for d in -3i64..=3 {
        for (x, y) in [(x0 + d, y0), (x0, y0 + d)] {
            if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
                *img.get_mut(x as usize, y as usize) = color;
            }
        }
    }
}

/// Reference and matched images side by side with both pixels marked.
pub fn write_match_visualization(
    path: &Path,
    reference: &RgbImage,
    p_ref: Pixel,
    matched: &RgbImage,
    p_match: Pixel,
) -> Result<()> {
    let (mut a, mut b) = (reference.clone(), matched.clone());
    mark(&mut a, p_ref, [1.0, 0.0, 0.0]);
    mark(&mut b, p_match, [0.0, 1.0, 0.0]);
    let h = a.height.max(b.height);
    let out = Grid::from_fn(a.width + b.width, h, |x, y| {
        if x < a.width {
            if y < a.height {
                *a.get(x, y)
            } else {
                [0.0; 3]
            }
        } else if y < b.height {
            *b.get(x - a.width, y)
        } else {
            [0.0; 3]
        }
    });
    write_ppm(path, &out)
}
