//! The training loop: one image pair per optimizer step.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, SceneData, Split};
use crate::correspondence::{
    augment_rotate180, composite_multi_object, cross_object_pairs, labels_from_mask, pair_rng, randomize_background,
    sample_comparison_type, sample_correspondences, sample_non_matches, write_correspondences_csv, ComparisonType,
    CompositeLayer, CorrespondenceSet, MatchSide, SamplingConfig, View,
};
use crate::error::{Error, Result};
use crate::image::{Grid, Mask, RgbImage};
use crate::loss::{total_loss_and_grad, LossConfig, LossReport};
use crate::net::{
    backward, forward, init_params, save_checkpoint, AdamConfig, AdamState, Checkpoint, DescriptorImage,
    NetArchitecture, NetParams, Tensor,
};
use crate::scene::RgbdFrame;

const INIT_STREAM: u64 = 0x1_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// No cross-object loss: descriptors may be shared across objects.
    Consistent,
    /// Cross-object loss on: every object gets its own descriptor region.
    Specific,
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistent" => Ok(TrainingMode::Consistent),
            "specific" => Ok(TrainingMode::Specific),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Draw match sources from the object mask rather than the whole image.
    pub masking: bool,
    pub hard_negative_scaling: bool,
    pub background_randomization: bool,
    pub cross_object: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Ablations {
            masking: true,
            hard_negative_scaling: true,
            background_randomization: true,
            cross_object: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dataset: Option<PathBuf>,
    pub mode: TrainingMode,
    pub ablations: Ablations,
    /// Overrides the per-mode comparison-type distribution, in the order of
    /// [`ComparisonType::ALL`].
    pub comparison_weights: Option<[f64; 4]>,
    pub steps: usize,
    pub seed: u64,
    pub descriptor_dim: usize,
    /// Overrides the default architecture for `descriptor_dim`.
    pub arch: Option<NetArchitecture>,
    pub margin: f64,
    pub sampling: SamplingConfig,
    /// Non-match pairs per cross-object comparison.
    pub cross_object_pairs: usize,
    pub optimizer: AdamConfig,
    pub rotate180_prob: f64,
    pub checkpoint_every: usize,
    /// Image pairs tried per step before giving up on finding overlap.
    pub max_pair_attempts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: None,
            mode: TrainingMode::Consistent,
            ablations: Ablations::default(),
            comparison_weights: None,
            steps: 3500,
            seed: 0,
            descriptor_dim: 3,
            arch: None,
            margin: 0.5,
            sampling: SamplingConfig::default(),
            cross_object_pairs: 5000,
            optimizer: AdamConfig {
                base_lr: 3e-3,
                ..AdamConfig::default()
            },
            rotate180_prob: 0.0,
            checkpoint_every: 500,
            max_pair_attempts: 20,
        }
    }
}

impl TrainConfig {
    /// Switches mode and the cross-object toggle together.
    pub fn with_mode(mut self, mode: TrainingMode) -> Self {
        self.mode = mode;
        self.ablations.cross_object = mode == TrainingMode::Specific;
        self
    }

    pub fn architecture(&self) -> NetArchitecture {
        self.arch
            .clone()
            .unwrap_or_else(|| NetArchitecture::desk(self.descriptor_dim))
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            hard_negative_scaling: self.ablations.hard_negative_scaling,
        }
    }

    pub fn weights(&self) -> [f64; 4] {
        self.comparison_weights.unwrap_or(match self.mode {
            TrainingMode::Consistent => [1.0, 0.0, 0.0, 0.0],
            TrainingMode::Specific => [0.5, 0.5, 0.0, 0.0],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        match (self.mode, self.ablations.cross_object) {
            (TrainingMode::Specific, false) => return bad("specific mode requires cross_object"),
            (TrainingMode::Consistent, true) => return bad("consistent mode excludes cross_object"),
            _ => {}
        }
        let w = self.weights();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidDistribution);
        }
        if !self.ablations.cross_object && w[1] > 0.0 {
            return bad("cross-object comparisons need cross_object enabled");
        }
        if self.ablations.cross_object && w[1] == 0.0 {
            return bad("cross_object enabled but never sampled");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if self.steps == 0 || self.checkpoint_every == 0 || self.max_pair_attempts == 0 {
            return bad("steps, checkpoint_every and max_pair_attempts must be positive");
        }
        if !(0.0..=1.0).contains(&self.rotate180_prob) {
            return bad("rotate180_prob outside [0, 1]");
        }
        if self.sampling.n_matches == 0 {
            return bad("n_matches must be positive");
        }
        self.architecture().validate()
    }
}

/// Inputs of one optimizer step.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub rgb_a: RgbImage,
    pub rgb_b: RgbImage,
    pub set: CorrespondenceSet,
    /// `(scene, frame)` of each image, for diagnostics.
    pub source_a: Vec<(usize, usize)>,
    pub source_b: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub comparison_type: String,
    pub l_matches: f64,
    pub l_non_matches: f64,
    pub l_total: f64,
    pub n_matches: usize,
    pub n_non_matches: usize,
    pub n_hard_negatives: usize,
    pub hard_negative_rate: f64,
    pub lr: f64,
}

/// Training scenes grouped for pair sampling.
struct Plan {
    single: Vec<usize>,
    multi: Vec<usize>,
}

impl Plan {
    fn new(ds: &Dataset) -> Self {
        let train = ds.scene_indices(Split::Train);
        Plan {
            single: train
                .iter()
                .copied()
                .filter(|&i| ds.scenes[i].single_object().is_some())
                .collect(),
            multi: train
                .iter()
                .copied()
                .filter(|&i| ds.scenes[i].single_object().is_none())
                .collect(),
        }
    }

    fn check(&self, ds: &Dataset, weights: &[f64; 4]) -> Result<()> {
        let distinct = {
            let mut ids: Vec<u32> = self
                .single
                .iter()
                .filter_map(|&i| ds.scenes[i].single_object())
                .collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        };
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("dataset has no {what}")))
            }
        };
        if weights[0] > 0.0 {
            need(!self.single.is_empty(), "single-object training scenes")?;
        }
        if weights[1] > 0.0 || weights[3] > 0.0 {
            need(distinct >= 2, "training scenes for two different objects")?;
        }
        if weights[2] > 0.0 {
            need(!self.multi.is_empty(), "multi-object training scenes")?;
        }
        Ok(())
    }
}

fn full_mask(like: &Mask) -> Mask {
    Mask::filled(like.width, like.height, true)
}

fn two_frames<R: Rng>(scene: &SceneData, rng: &mut R) -> (usize, usize) {
    let n = scene.frames.len();
    if n < 2 {
        return (0, 0);
    }
    let i = rng.random_range(0..n);
    let j = (i + rng.random_range(1..n)) % n;
    (i, j)
}

fn maybe_randomize<R: Rng>(frame: &RgbdFrame, mask: &Mask, on: bool, rng: &mut R) -> RgbdFrame {
    if on {
        randomize_background(frame, mask, rng)
    } else {
        frame.clone()
    }
}

/// Within-scene pair from scene `s`: matches by reprojection through the
/// reconstruction depth.
fn within_scene<R: Rng>(
    ds: &Dataset,
    s: usize,
    cfg: &TrainConfig,
    kind: ComparisonType,
    rng: &mut R,
) -> Result<TrainingPair> {
    let scene = &ds.scenes[s];
    let id = scene.single_object().unwrap_or(0);
    let mut last = Error::InsufficientOverlap {
        found: 0,
        requested: cfg.sampling.n_matches,
    };
    for _ in 0..cfg.max_pair_attempts {
        let (i, j) = two_frames(scene, rng);
        let (fa, fb) = (&scene.frames[i], &scene.frames[j]);
        let (src_a, src_b) = if cfg.ablations.masking {
            (fa.mask.clone(), fb.mask.clone())
        } else {
            (full_mask(&fa.mask), full_mask(&fb.mask))
        };
        let (la, lb) = (labels_from_mask(&fa.mask, id), labels_from_mask(&fb.mask, id));
        let a = View {
            image: 0,
            frame: &fa.frame,
            depth: &fa.recon_depth,
            mask: &src_a,
            labels: &la,
        };
        let b = View {
            image: 1,
            frame: &fb.frame,
            depth: &fb.recon_depth,
            mask: &src_b,
            labels: &lb,
        };
        let set = match sample_correspondences(&a, &b, &cfg.sampling, kind, rng) {
            Ok(set) => set,
            Err(e @ Error::InsufficientOverlap { .. }) => {
                last = e;
                continue;
            }
            Err(e) => return Err(e),
        };
        let ra = maybe_randomize(&fa.frame, &fa.mask, cfg.ablations.background_randomization, rng);
        let rb = maybe_randomize(&fb.frame, &fb.mask, cfg.ablations.background_randomization, rng);
        let (ra, rb, set, _) = augment_rotate180(&ra, &rb, &set, cfg.rotate180_prob, rng);
        return Ok(TrainingPair {
            rgb_a: ra.rgb,
            rgb_b: rb.rgb,
            set,
            source_a: vec![(s, i)],
            source_b: vec![(s, j)],
        });
    }
    Err(last)
}

fn cross_object<R: Rng>(ds: &Dataset, plan: &Plan, cfg: &TrainConfig, rng: &mut R) -> Result<TrainingPair> {
    let sa = plan.single[rng.random_range(0..plan.single.len())];
    let id_a = ds.scenes[sa].single_object();
    let others: Vec<usize> = plan
        .single
        .iter()
        .copied()
        .filter(|&s| ds.scenes[s].single_object() != id_a)
        .collect();
    let sb = others[rng.random_range(0..others.len())];
    let (scene_a, scene_b) = (&ds.scenes[sa], &ds.scenes[sb]);
    let mut last = Error::EmptyMask;
    for _ in 0..cfg.max_pair_attempts {
        let i = rng.random_range(0..scene_a.frames.len());
        let j = rng.random_range(0..scene_b.frames.len());
        let (fa, fb) = (&scene_a.frames[i], &scene_b.frames[j]);
        let la = labels_from_mask(&fa.mask, id_a.unwrap_or(0));
        let lb = labels_from_mask(&fb.mask, scene_b.single_object().unwrap_or(0));
        let a = View {
            image: 0,
            frame: &fa.frame,
            depth: &fa.recon_depth,
            mask: &fa.mask,
            labels: &la,
        };
        let b = View {
            image: 1,
            frame: &fb.frame,
            depth: &fb.recon_depth,
            mask: &fb.mask,
            labels: &lb,
        };
        let pairs = match cross_object_pairs(&a, &b, cfg.cross_object_pairs, rng) {
            Ok(p) => p,
            Err(e @ Error::EmptyMask) => {
                last = e;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut set = CorrespondenceSet::new(ComparisonType::DifferentObjectAcrossScene);
        set.non_matches = pairs;
        let ra = maybe_randomize(&fa.frame, &fa.mask, cfg.ablations.background_randomization, rng);
        let rb = maybe_randomize(&fb.frame, &fb.mask, cfg.ablations.background_randomization, rng);
        let (ra, rb, set, _) = augment_rotate180(&ra, &rb, &set, cfg.rotate180_prob, rng);
        return Ok(TrainingPair {
            rgb_a: ra.rgb,
            rgb_b: rb.rgb,
            set,
            source_a: vec![(sa, i)],
            source_b: vec![(sb, j)],
        });
    }
    Err(last)
}

/// Layers within-scene pairs of two or three different objects into one
/// synthetic cluttered pair.
fn synthetic_multi_object<R: Rng>(ds: &Dataset, plan: &Plan, cfg: &TrainConfig, rng: &mut R) -> Result<TrainingPair> {
    let mut by_object: Vec<(u32, Vec<usize>)> = Vec::new();
    for &s in &plan.single {
        let id = ds.scenes[s].single_object().expect("single-object scene");
        match by_object.iter_mut().find(|(o, _)| *o == id) {
            Some((_, v)) => v.push(s),
            None => by_object.push((id, vec![s])),
        }
    }
    let k = rng.random_range(2..=by_object.len().min(3));
    by_object.shuffle(rng);
    let matches_only = SamplingConfig {
        n_nonmatch_per_match: 0,
        ..cfg.sampling
    };
    let inner = TrainConfig {
        sampling: matches_only,
        ablations: Ablations {
            background_randomization: false,
            ..cfg.ablations
        },
        rotate180_prob: 0.0,
        ..cfg.clone()
    };
    let mut layers_a = Vec::with_capacity(k);
    let mut layers_b = Vec::with_capacity(k);
    let mut source_a = Vec::new();
    let mut source_b = Vec::new();
    for (id, scenes) in by_object.iter().take(k) {
        let s = scenes[rng.random_range(0..scenes.len())];
        let pair = within_scene(ds, s, &inner, ComparisonType::SyntheticMultiObject, rng)?;
        let (fa, fb) = (
            &ds.scenes[s].frames[pair.source_a[0].1],
            &ds.scenes[s].frames[pair.source_b[0].1],
        );
        let mut matches = pair.set.matches.clone();
        for m in &mut matches {
            m.object_a = *id;
            m.object_b = *id;
        }
        layers_a.push(CompositeLayer {
            frame: fa.frame.clone(),
            mask: fa.mask.clone(),
            matches: matches.clone(),
        });
        layers_b.push(CompositeLayer {
            frame: fb.frame.clone(),
            mask: fb.mask.clone(),
            matches,
        });
        source_a.extend(pair.source_a);
        source_b.extend(pair.source_b);
    }
    let mut order_a: Vec<usize> = (0..k).collect();
    let mut order_b = order_a.clone();
    order_a.shuffle(rng);
    order_b.shuffle(rng);
    let ca = composite_multi_object(&layers_a, &order_a, MatchSide::A);
    let cb = composite_multi_object(&layers_b, &order_b, MatchSide::B);
    let matches: Vec<_> = ca.matches.iter().filter(|m| cb.matches.contains(m)).copied().collect();
    if matches.is_empty() {
        return Err(Error::InsufficientOverlap {
            found: 0,
            requested: cfg.sampling.n_matches,
        });
    }
    let union = |masks: &[Mask]| masks.iter().skip(1).fold(masks[0].clone(), |acc, m| acc.or(m));
    let (ua, ub) = (union(&ca.masks), union(&cb.masks));
    let mut labels_b = Grid::filled(ub.width, ub.height, 0u32);
    for (mask, (id, _)) in cb.masks.iter().zip(&by_object) {
        for (l, &m) in labels_b.data.iter_mut().zip(&mask.data) {
            if m {
                *l = *id;
            }
        }
    }
    let mut set = CorrespondenceSet::new(ComparisonType::SyntheticMultiObject);
    set.non_matches = sample_non_matches(
        &matches,
        &labels_b,
        cfg.sampling.n_nonmatch_per_match,
        cfg.sampling.exclusion_radius,
        rng,
    );
    set.matches = matches;
    let ra = maybe_randomize(&ca.frame, &ua, cfg.ablations.background_randomization, rng);
    let rb = maybe_randomize(&cb.frame, &ub, cfg.ablations.background_randomization, rng);
    let (ra, rb, set, _) = augment_rotate180(&ra, &rb, &set, cfg.rotate180_prob, rng);
    Ok(TrainingPair {
        rgb_a: ra.rgb,
        rgb_b: rb.rgb,
        set,
        source_a,
        source_b,
    })
}

/// Samples the comparison type and builds the image pair and
/// correspondences for one step.
pub fn prepare_pair<R: Rng>(ds: &Dataset, cfg: &TrainConfig, rng: &mut R) -> Result<TrainingPair> {
    let plan = Plan::new(ds);
    let weights = cfg.weights();
    plan.check(ds, &weights)?;
    prepare_with_plan(ds, &plan, cfg, &weights, rng)
}

fn prepare_with_plan<R: Rng>(
    ds: &Dataset,
    plan: &Plan,
    cfg: &TrainConfig,
    weights: &[f64; 4],
    rng: &mut R,
) -> Result<TrainingPair> {
    match sample_comparison_type(weights, rng)? {
        ComparisonType::SingleObjectWithinScene => {
            let s = plan.single[rng.random_range(0..plan.single.len())];
            within_scene(ds, s, cfg, ComparisonType::SingleObjectWithinScene, rng)
        }
        ComparisonType::DifferentObjectAcrossScene => cross_object(ds, plan, cfg, rng),
        ComparisonType::MultiObjectWithinScene => {
            let s = plan.multi[rng.random_range(0..plan.multi.len())];
            within_scene(ds, s, cfg, ComparisonType::MultiObjectWithinScene, rng)
        }
        ComparisonType::SyntheticMultiObject => synthetic_multi_object(ds, plan, cfg, rng),
    }
}

/// Dense descriptors of an image.
pub fn describe(params: &NetParams, arch: &NetArchitecture, rgb: &RgbImage) -> Result<DescriptorImage> {
    let (out, _) = forward(params, arch, &Tensor::from_rgb(rgb))?;
    Ok(DescriptorImage::from_tensor(&out))
}

/// Loss report and summed parameter gradients for one pair.
pub fn pair_gradients(
    params: &NetParams,
    arch: &NetArchitecture,
    pair: &TrainingPair,
    loss: &LossConfig,
) -> Result<(LossReport, NetParams)> {
    let (out_a, cache_a) = forward(params, arch, &Tensor::from_rgb(&pair.rgb_a))?;
    let (out_b, cache_b) = forward(params, arch, &Tensor::from_rgb(&pair.rgb_b))?;
    let (da, db) = (
        DescriptorImage::from_tensor(&out_a),
        DescriptorImage::from_tensor(&out_b),
    );
    let (report, ga, gb) = total_loss_and_grad(&da, &db, &pair.set, loss)?;
    let (mut grads, _) = backward(params, arch, &cache_a, &ga.to_tensor());
    let (grads_b, _) = backward(params, arch, &cache_b, &gb.to_tensor());
    grads.accumulate(&grads_b);
    Ok((report, grads))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
}

pub fn initial_checkpoint(cfg: &TrainConfig) -> Checkpoint {
    let arch = cfg.architecture();
    let params = init_params(&arch, &mut pair_rng(cfg.seed, INIT_STREAM));
    let optimizer = AdamState::new(&params, cfg.optimizer);
    Checkpoint {
        arch,
        params,
        optimizer,
        step: 0,
    }
}

fn dump_pair(dir: &Path, step: usize, pair: &TrainingPair, report: &LossReport) -> Result<()> {
    let d = dir.join(format!("nonfinite_step_{step:05}"));
    std::fs::create_dir_all(&d)?;
    crate::image::write_ppm(&d.join("a.ppm"), &pair.rgb_a)?;
    crate::image::write_ppm(&d.join("b.ppm"), &pair.rgb_b)?;
    write_correspondences_csv(&d.join("pairs.csv"), &pair.set)?;
    let info = serde_json::json!({
        "step": step,
        "source_a": pair.source_a,
        "source_b": pair.source_b,
        "report": report,
    });
    std::fs::write(d.join("info.json"), serde_json::to_string_pretty(&info)?)?;
    Ok(())
}

pub fn write_log_csv(path: &Path, log: &[StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `cfg.steps` optimizer steps. With `out`, writes checkpoints every
/// `checkpoint_every` steps and at the end (`final`), plus `train_log.csv`.
pub fn train(ds: &Dataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let plan = Plan::new(ds);
    let weights = cfg.weights();
    plan.check(ds, &weights)?;
    let loss = cfg.loss_config();
    let mut ckpt = initial_checkpoint(cfg);
    let mut log = Vec::with_capacity(cfg.steps);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    for step in 0..cfg.steps {
        let mut rng = pair_rng(cfg.seed, step as u64);
        let pair = prepare_with_plan(ds, &plan, cfg, &weights, &mut rng)?;
        let (report, grads) = pair_gradients(&ckpt.params, &ckpt.arch, &pair, &loss)?;
        if !report.l_total.is_finite() || !grads.is_finite() {
            if let Some(dir) = out {
                dump_pair(dir, step, &pair, &report)?;
            }
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("{report:?} from {:?} / {:?}", pair.source_a, pair.source_b),
            });
        }
        let lr = ckpt.optimizer.current_lr();
        ckpt.optimizer.step(&mut ckpt.params, &grads)?;
        ckpt.step = step + 1;
        log.push(StepLog {
            step,
            comparison_type: pair.set.comparison_type.as_str().into(),
            l_matches: report.l_matches,
            l_non_matches: report.l_non_matches,
            l_total: report.l_total,
            n_matches: report.n_matches,
            n_non_matches: report.n_non_matches,
            n_hard_negatives: report.n_hard_negatives,
            hard_negative_rate: if report.n_non_matches > 0 {
                report.n_hard_negatives as f64 / report.n_non_matches as f64
            } else {
                0.0
            },
            lr,
        });
        if step % 100 == 0 {
            log::info!(
                "step {step}: loss {:.5} hard {}",
                report.l_total,
                report.n_hard_negatives
            );
        }
        if let Some(dir) = out {
            if ckpt.step.is_multiple_of(cfg.checkpoint_every) {
                save_checkpoint(&dir.join("checkpoints"), &format!("step_{:05}", ckpt.step), &ckpt)?;
            }
        }
    }
    if let Some(dir) = out {
        save_checkpoint(&dir.join("checkpoints"), "final", &ckpt)?;
        write_log_csv(&dir.join("train_log.csv"), &log)?;
    }
    Ok(TrainOutcome { checkpoint: ckpt, log })
}
