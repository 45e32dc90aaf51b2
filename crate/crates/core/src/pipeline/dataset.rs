//! Synthetic scene logs: object placement, rendering, reconstruction,
//! masking, and the on-disk dataset layout.
//!
//! ```text
//! <out>/dataset.json
//! <out>/scene_000/scene.json
//! <out>/scene_000/tsdf.{json,bin}
//! <out>/scene_000/frame_0000.ppm            color
//! <out>/scene_000/frame_0000_depth.pgm      sensor depth
//! <out>/scene_000/frame_0000_recon.pgm      depth re-rendered from the TSDF
//! <out>/scene_000/frame_0000_mask.pgm       object mask from change detection
//! <out>/scene_000/frame_0000_camera.json    pose and intrinsics
//! <out>/scene_000/frame_0000_gt.{json,bin}  renderer ground truth
//! ```

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::correspondence::pair_rng;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose, Vec3};
use crate::image::{
    quantize_depth_mm, quantize_rgb_u8, read_depth_pgm, read_mask_pgm, read_ppm, write_depth_pgm, write_mask_pgm,
    write_ppm, DepthImage, Mask,
};
use crate::recon::{change_detect, downsample_frames, render_mask, TsdfVolume};
use crate::scene::{
    read_ground_truth, render, sample_camera_trajectory, write_ground_truth, GroundTruth, Joint, Part, Primitive,
    RgbdFrame, Scene, SceneObject, Shape, Texture, TrajectoryConfig,
};

const SCENE_STREAM: u64 = 0x5ce0_0000;

/// An object as it appears in every scene that contains it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTemplate {
    pub id: u32,
    pub name: String,
    pub shape: Shape,
    pub texture: Texture,
}

fn gradient(base: [f32; 3], axes: [[f64; 3]; 3]) -> Texture {
    Texture::Gradient { base, axes }
}

/// Three small textured objects: a block, a mallet and a hinged two-box
/// object that changes shape between scenes.
pub fn object_library() -> Vec<ObjectTemplate> {
    let hinge = Part {
        primitive: Primitive::Box {
            half_extents: [0.03, 0.02, 0.012],
        },
        rest: Pose::from_translation(Vec3::new(0.03, 0.0, 0.0)),
        pose: Pose::from_translation(Vec3::new(0.03, 0.0, 0.0)),
        joint: Some(Joint {
            axis: [0.0, 0.0, 1.0],
            pivot: [0.0, 0.0, 0.0],
            max_angle_deg: 35.0,
        }),
    };
    vec![
        ObjectTemplate {
            id: 1,
            name: "block".into(),
            shape: Shape::Box {
                half_extents: [0.045, 0.03, 0.035],
            },
            texture: gradient([0.55, 0.45, 0.5], [[7.0, 0.0, 3.0], [-2.0, 9.0, 0.0], [0.0, -3.0, 8.0]]),
        },
        ObjectTemplate {
            id: 2,
            name: "mallet".into(),
            shape: Shape::Union {
                parts: vec![
                    Part::rigid(
                        Primitive::Box {
                            half_extents: [0.05, 0.012, 0.012],
                        },
                        Pose::identity(),
                    ),
                    Part::rigid(
                        Primitive::Sphere { radius: 0.03 },
                        Pose::from_translation(Vec3::new(0.06, 0.0, 0.018)),
                    ),
                ],
            },
            texture: gradient([0.25, 0.7, 0.35], [[6.0, -3.0, 0.0], [0.0, 8.0, 4.0], [3.0, 0.0, -7.0]]),
        },
        ObjectTemplate {
            id: 3,
            name: "hinge".into(),
            shape: Shape::Union {
                parts: vec![
                    Part::rigid(
                        Primitive::Box {
                            half_extents: [0.03, 0.025, 0.02],
                        },
                        Pose::from_translation(Vec3::new(-0.03, 0.0, 0.008)),
                    ),
                    hinge,
                ],
            },
            texture: gradient([0.35, 0.3, 0.75], [[-6.0, 0.0, 5.0], [4.0, 7.0, 0.0], [0.0, 5.0, 7.0]]),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub objects: Vec<ObjectTemplate>,
    /// Single-object training scenes per object.
    pub train_scenes_per_object: usize,
    /// Single-object held-out scenes per object.
    pub eval_scenes_per_object: usize,
    /// Scenes holding every object, for training and held out.
    pub train_multi_object_scenes: usize,
    pub eval_multi_object_scenes: usize,
    pub trajectory: TrajectoryConfig,
    pub translation_threshold: f64,
    pub rotation_threshold_deg: f64,
    pub voxel_size: f64,
    pub truncation: f64,
    pub volume_origin: [f64; 3],
    pub volume_dims: [usize; 3],
    /// Reconstruction below this height above the table counts as table.
    pub table_margin: f64,
    /// Objects are placed within this distance of the table center.
    pub placement_radius: f64,
    /// Amplitude of the table's color noise.
    pub table_contrast: f32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            width: 96,
            height: 72,
            hfov_deg: 60.0,
            objects: object_library().into_iter().take(1).collect(),
            train_scenes_per_object: 4,
            eval_scenes_per_object: 2,
            train_multi_object_scenes: 0,
            eval_multi_object_scenes: 0,
            trajectory: TrajectoryConfig {
                n_views: 24,
                radius_range: (0.16, 0.22),
                ..TrajectoryConfig::default()
            },
            translation_threshold: crate::recon::DEFAULT_TRANSLATION_THRESHOLD,
            rotation_threshold_deg: crate::recon::DEFAULT_ROTATION_THRESHOLD_DEG,
            voxel_size: 0.01,
            truncation: 0.03,
            volume_origin: [-0.25, -0.25, -0.05],
            volume_dims: [50, 50, 30],
            table_margin: 0.003,
            placement_radius: 0.06,
            table_contrast: 1.0,
        }
    }
}

impl DatasetConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.width, self.height, self.hfov_deg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 8 || self.height < 8 {
            return bad(format!("image size {}x{} too small", self.width, self.height));
        }
        if !(1.0..179.0).contains(&self.hfov_deg) {
            return bad(format!("hfov {} out of range", self.hfov_deg));
        }
        if self.objects.is_empty() {
            return bad("no objects".into());
        }
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.objects.len() || ids[0] == 0 {
            return bad("object ids must be distinct and nonzero".into());
        }
        if self.trajectory.n_views < 2 {
            return bad("need at least 2 views per scene".into());
        }
        if self.voxel_size <= 0.0 || self.truncation <= 0.0 || self.volume_dims.contains(&0) {
            return bad("invalid volume".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    /// Color and sensor depth as stored on disk.
    pub frame: RgbdFrame,
    /// Depth raycast from the scene reconstruction.
    pub recon_depth: DepthImage,
    /// Object pixels from the change-detected reconstruction.
    pub mask: Mask,
    pub gt: GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub scene: Scene,
    pub object_ids: Vec<u32>,
    pub split: Split,
    pub frames: Vec<FrameData>,
    /// Raw trajectory length before downsampling.
    pub raw_views: usize,
}

impl SceneData {
    pub fn single_object(&self) -> Option<u32> {
        match self.object_ids.as_slice() {
            [id] => Some(*id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub scenes: Vec<SceneData>,
}

impl Dataset {
    pub fn scene_indices(&self, split: Split) -> Vec<usize> {
        (0..self.scenes.len())
            .filter(|&i| self.scenes[i].split == split)
            .collect()
    }

    pub fn total_frames(&self) -> usize {
        self.scenes.iter().map(|s| s.frames.len()).sum()
    }
}

/// Places `templates` on the table at random yaw without overlap, picks a
/// random articulation, table texture and light. Several objects get a
/// placement disc of at least 6 cm per object.
pub fn random_scene<R: Rng>(
    templates: &[ObjectTemplate],
    placement_radius: f64,
    table_contrast: f32,
    rng: &mut R,
) -> Result<Scene> {
    let mut objects: Vec<SceneObject> = Vec::new();
    let radius = placement_radius.max(0.06 * templates.len() as f64);
    for t in templates {
        let mut shape = t.shape.clone();
        if let Shape::Union { parts } = &mut shape {
            for p in parts.iter_mut() {
                if let Some(j) = p.joint {
                    let max = j.max_angle_deg.to_radians();
                    p.articulate(rng.random_range(-max..=max));
                }
            }
        }
        let mut placed = None;
        for _ in 0..200 {
            let yaw = Pose::from_axis_angle(&Vec3::z(), rng.random_range(0.0..std::f64::consts::TAU), Vec3::zeros());
            let r = radius * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let mut obj = SceneObject {
                id: t.id,
                shape: shape.clone(),
                pose: yaw,
                texture: t.texture.clone(),
            };
            let lift = -obj.lowest_point_z_rotated(&yaw);
            obj.pose = Pose::new(yaw.rotation, Vec3::new(r * phi.cos(), r * phi.sin(), lift));
            let clear = objects.iter().all(|o| {
                (o.pose.translation.xy() - obj.pose.translation.xy()).norm()
                    > o.footprint_radius() + obj.footprint_radius() + 0.01
            });
            if clear {
                placed = Some(obj);
                break;
            }
        }
        objects.push(placed.ok_or_else(|| Error::Config("objects do not fit on the table".into()))?);
    }
    // Full-contrast noise over the object palette, so color alone does not
    // separate object from table.
    let table = Texture::Noise {
        seed: rng.random(),
        scale: rng.random_range(0.01..0.05),
        base: [0.5; 3],
        amplitude: table_contrast,
    };
    let elev = rng.random_range(40f64..85.0).to_radians();
    let azim = rng.random_range(0.0..std::f64::consts::TAU);
    let light = Vec3::new(elev.cos() * azim.cos(), elev.cos() * azim.sin(), elev.sin());
    let scene = Scene::new(objects, table, light);
    scene.validate()?;
    Ok(scene)
}

/// Renders a trajectory around `scene`, keeps a pose-downsampled subset,
/// fuses it and derives reconstruction depth and object masks.
pub fn capture_scene<R: Rng>(scene: Scene, split: Split, cfg: &DatasetConfig, rng: &mut R) -> Result<SceneData> {
    let k = cfg.intrinsics();
    let center = scene.objects.iter().map(|o| o.pose.translation).sum::<Vec3>() / scene.objects.len().max(1) as f64;
    let traj = TrajectoryConfig {
        gaze_target: [center.x, center.y, cfg.trajectory.gaze_target[2]],
        ..cfg.trajectory.clone()
    };
    let poses = sample_camera_trajectory(rng, &traj);
    let kept = downsample_frames(&poses, cfg.translation_threshold, cfg.rotation_threshold_deg);
    let mut vol = TsdfVolume::new(
        Vec3::from(cfg.volume_origin),
        cfg.voxel_size,
        cfg.volume_dims,
        cfg.truncation,
    );
    let mut rendered = Vec::with_capacity(kept.len());
    for &i in &kept {
        let (mut frame, gt) = render(&scene, &poses[i], &k);
        frame.rgb = quantize_rgb_u8(&frame.rgb);
        frame.depth = quantize_depth_mm(&frame.depth);
        vol.integrate(&frame);
        rendered.push((frame, gt));
    }
    let objects_only = change_detect(&vol, 0.0, cfg.table_margin);
    let frames = rendered
        .into_iter()
        .map(|(frame, gt)| FrameData {
            recon_depth: quantize_depth_mm(&vol.raycast(&frame.pose, &k)),
            mask: render_mask(&objects_only, &frame.pose, &k),
            frame,
            gt,
        })
        .collect();
    let object_ids = scene.objects.iter().map(|o| o.id).collect();
    Ok(SceneData {
        scene,
        object_ids,
        split,
        frames,
        raw_views: poses.len(),
    })
}

/// Scene plan: single-object train and eval scenes for every object, then
/// multi-object scenes.
fn scene_plan(cfg: &DatasetConfig) -> Vec<(Vec<usize>, Split)> {
    let mut plan = Vec::new();
    for (i, _) in cfg.objects.iter().enumerate() {
        plan.extend((0..cfg.train_scenes_per_object).map(|_| (vec![i], Split::Train)));
        plan.extend((0..cfg.eval_scenes_per_object).map(|_| (vec![i], Split::Eval)));
    }
    let all: Vec<usize> = (0..cfg.objects.len()).collect();
    plan.extend((0..cfg.train_multi_object_scenes).map(|_| (all.clone(), Split::Train)));
    plan.extend((0..cfg.eval_multi_object_scenes).map(|_| (all.clone(), Split::Eval)));
    plan
}

pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut scenes = Vec::new();
    for (i, (members, split)) in scene_plan(cfg).into_iter().enumerate() {
        let mut rng = pair_rng(seed, SCENE_STREAM + i as u64);
        let templates: Vec<ObjectTemplate> = members.iter().map(|&m| cfg.objects[m].clone()).collect();
        let scene = random_scene(&templates, cfg.placement_radius, cfg.table_contrast, &mut rng)?;
        let data = capture_scene(scene, split, cfg, &mut rng)?;
        log::info!("scene {i}: {} of {} frames kept", data.frames.len(), data.raw_views);
        scenes.push(data);
    }
    Ok(Dataset {
        config: cfg.clone(),
        scenes,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneEntry {
    dir: String,
    objects: Vec<u32>,
    split: Split,
    frames: usize,
    raw_views: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetIndex {
    config: DatasetConfig,
    scenes: Vec<SceneEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraFile {
    pose: Pose,
    intrinsics: Intrinsics,
}

fn scene_dir(i: usize) -> String {
    format!("scene_{i:03}")
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (i, s) in ds.scenes.iter().enumerate() {
        let sd = dir.join(scene_dir(i));
        std::fs::create_dir_all(&sd)?;
        std::fs::write(sd.join("scene.json"), serde_json::to_string_pretty(&s.scene)?)?;
        for (j, f) in s.frames.iter().enumerate() {
            let stem = format!("frame_{j:04}");
            write_ppm(&sd.join(format!("{stem}.ppm")), &f.frame.rgb)?;
            write_depth_pgm(&sd.join(format!("{stem}_depth.pgm")), &f.frame.depth)?;
            write_depth_pgm(&sd.join(format!("{stem}_recon.pgm")), &f.recon_depth)?;
            write_mask_pgm(&sd.join(format!("{stem}_mask.pgm")), &f.mask)?;
            let cam = CameraFile {
                pose: f.frame.pose,
                intrinsics: f.frame.intrinsics,
            };
            std::fs::write(
                sd.join(format!("{stem}_camera.json")),
                serde_json::to_string_pretty(&cam)?,
            )?;
            write_ground_truth(&sd, &format!("{stem}_gt"), &f.gt)?;
        }
        entries.push(SceneEntry {
            dir: scene_dir(i),
            objects: s.object_ids.clone(),
            split: s.split,
            frames: s.frames.len(),
            raw_views: s.raw_views,
        });
    }
    let index = DatasetIndex {
        config: ds.config.clone(),
        scenes: entries,
    };
    std::fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let index_path = dir.join("dataset.json");
    let index: DatasetIndex = serde_json::from_slice(&std::fs::read(&index_path)?)?;
    let mut scenes = Vec::new();
    for e in index.scenes {
        let sd = dir.join(&e.dir);
        let scene: Scene = serde_json::from_slice(&std::fs::read(sd.join("scene.json"))?)?;
        let mut frames = Vec::with_capacity(e.frames);
        for j in 0..e.frames {
            let stem = format!("frame_{j:04}");
            let cam: CameraFile = serde_json::from_slice(&std::fs::read(sd.join(format!("{stem}_camera.json")))?)?;
            frames.push(FrameData {
                frame: RgbdFrame {
                    rgb: read_ppm(&sd.join(format!("{stem}.ppm")))?,
                    depth: read_depth_pgm(&sd.join(format!("{stem}_depth.pgm")))?,
                    pose: cam.pose,
                    intrinsics: cam.intrinsics,
                },
                recon_depth: read_depth_pgm(&sd.join(format!("{stem}_recon.pgm")))?,
                mask: read_mask_pgm(&sd.join(format!("{stem}_mask.pgm")))?,
                gt: read_ground_truth(&sd, &format!("{stem}_gt"))?,
            });
        }
        scenes.push(SceneData {
            scene,
            object_ids: e.objects,
            split: e.split,
            frames,
            raw_views: e.raw_views,
        });
    }
    Ok(Dataset {
        config: index.config,
        scenes,
    })
}
