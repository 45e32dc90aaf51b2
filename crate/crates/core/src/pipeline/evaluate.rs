//! Held-out evaluation against renderer ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use super::train::describe;
use crate::correspondence::pair_rng;
use crate::error::{Error, Result};
use crate::eval::{best_match, fraction_closer, scatter_sample, PixelErrorCdf, Scatter};
use crate::geometry::Pixel;
use crate::net::{DescriptorImage, NetArchitecture, NetParams};
use crate::scene::oracle_match;

const EVAL_STREAM: u64 = 0xe7a1_0000;
const SCATTER_STREAM: u64 = 0x5ca7_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_pairs: usize,
    pub seed: u64,
    /// Normalized pixel error counted as a success.
    pub success_threshold: f64,
    pub scatter_per_object: usize,
    /// Frames per held-out scene pooled for the scatter export.
    pub scatter_frames_per_scene: usize,
    pub margin: f64,
    pub max_attempts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_pairs: 200,
            seed: 0,
            success_threshold: 0.13,
            scatter_per_object: 300,
            scatter_frames_per_scene: 4,
            margin: 0.5,
            max_attempts: 200,
        }
    }
}

/// One query: a pixel on `object_id` in image a and its true location in
/// image b.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub scene_a: usize,
    pub frame_a: usize,
    pub scene_b: usize,
    pub frame_b: usize,
    pub u_a: Pixel,
    pub u_b: Pixel,
    pub object_id: u32,
}

/// Cross-scene queries on held-out scenes. Each query picks an object, two
/// held-out scenes containing it (the same scene only if it has just one),
/// a frame in each, and a visible on-object pixel that the oracle finds in
/// the other frame.
pub fn sample_eval_pairs(ds: &Dataset, n: usize, seed: u64, max_attempts: usize) -> Result<Vec<EvalPair>> {
    let held_out = ds.scene_indices(Split::Eval);
    if held_out.is_empty() {
        return Err(Error::Config("dataset has no held-out scenes".into()));
    }
    let mut by_object: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &s in &held_out {
        for &id in &ds.scenes[s].object_ids {
            by_object.entry(id).or_default().push(s);
        }
    }
    let objects: Vec<(u32, Vec<usize>)> = by_object.into_iter().collect();
    let mut out = Vec::with_capacity(n);
    for q in 0..n {
        let mut rng = pair_rng(seed, EVAL_STREAM + q as u64);
        let mut found = None;
        for _ in 0..max_attempts {
            let (id, scenes) = &objects[rng.random_range(0..objects.len())];
            let sa = scenes[rng.random_range(0..scenes.len())];
            let sb = if scenes.len() > 1 {
                let others: Vec<usize> = scenes.iter().copied().filter(|&s| s != sa).collect();
                others[rng.random_range(0..others.len())]
            } else {
                sa
            };
            let fa = rng.random_range(0..ds.scenes[sa].frames.len());
            let fb = rng.random_range(0..ds.scenes[sb].frames.len());
            if sa == sb && fa == fb {
                continue;
            }
            let gt_a = &ds.scenes[sa].frames[fa].gt;
            let pixels: Vec<usize> = (0..gt_a.object_id.len())
                .filter(|&i| gt_a.object_id.data[i] == *id)
                .collect();
            if pixels.is_empty() {
                continue;
            }
            let i = pixels[rng.random_range(0..pixels.len())];
            let u_a = Pixel::at(i % gt_a.object_id.width, i / gt_a.object_id.width);
            let frame_b = &ds.scenes[sb].frames[fb].frame;
            if let Some(u_b) = oracle_match(&ds.scenes[sb].scene, frame_b, gt_a, u_a) {
                found = Some(EvalPair {
                    scene_a: sa,
                    frame_a: fa,
                    scene_b: sb,
                    frame_b: fb,
                    u_a,
                    u_b,
                    object_id: *id,
                });
                break;
            }
        }
        out.push(found.ok_or_else(|| Error::Config(format!("no visible correspondence found for query {q}")))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_pairs: usize,
    pub success_threshold: f64,
    pub fraction_below_threshold: f64,
    pub median_normalized_error: f64,
    pub mean_fraction_closer: f64,
    pub min_centroid_distance: Option<f64>,
    /// `(object_id, share of cross-object pairs inside the margin)`.
    pub cross_object_hard_negative_rates: Vec<(u32, f64)>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub pairs: Vec<EvalPair>,
    pub predictions: Vec<Pixel>,
    pub cdf: PixelErrorCdf,
    pub fraction_closer: Vec<f64>,
    pub scatter: Option<Scatter>,
    pub summary: EvalSummary,
}

/// Descriptor images computed on demand and kept for reuse.
struct DescriptorCache<'a> {
    ds: &'a Dataset,
    params: &'a NetParams,
    arch: &'a NetArchitecture,
    cache: BTreeMap<(usize, usize), DescriptorImage>,
}

impl DescriptorCache<'_> {
    fn get(&mut self, scene: usize, frame: usize) -> Result<&DescriptorImage> {
        if !self.cache.contains_key(&(scene, frame)) {
            let d = describe(self.params, self.arch, &self.ds.scenes[scene].frames[frame].frame.rgb)?;
            self.cache.insert((scene, frame), d);
        }
        Ok(&self.cache[&(scene, frame)])
    }
}

/// Runs the queries `pairs` with exhaustive nearest-descriptor search over
/// the whole of image b, and exports the descriptor scatter of held-out
/// frames.
pub fn evaluate(
    params: &NetParams,
    arch: &NetArchitecture,
    ds: &Dataset,
    pairs: &[EvalPair],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut cache = DescriptorCache {
        ds,
        params,
        arch,
        cache: BTreeMap::new(),
    };
    let k = ds.config.intrinsics();
    let mut errors = Vec::with_capacity(pairs.len());
    let mut predictions = Vec::with_capacity(pairs.len());
    let mut closer = Vec::with_capacity(pairs.len());
    for p in pairs {
        let da = cache.get(p.scene_a, p.frame_a)?.clone();
        let db = cache.get(p.scene_b, p.frame_b)?;
        let m = best_match(&da, p.u_a, db, None, f64::INFINITY)?;
        errors.push(m.best_pixel.distance(&p.u_b));
        predictions.push(m.best_pixel);
        let mask_b = ds.scenes[p.scene_b].frames[p.frame_b].gt.object_mask(p.object_id);
        closer.push(fraction_closer(&da, p.u_a, db, p.u_b, &mask_b)?);
    }
    let cdf = PixelErrorCdf::new(&errors, k.diagonal());

    let scatter = if arch.descriptor_dim >= 2 {
        let mut keys = Vec::new();
        for s in ds.scene_indices(Split::Eval) {
            for f in 0..ds.scenes[s].frames.len().min(cfg.scatter_frames_per_scene) {
                cache.get(s, f)?;
                keys.push((s, f));
            }
        }
        let images: Vec<(&DescriptorImage, &crate::image::Grid<u32>)> = keys
            .iter()
            .map(|&(s, f)| (&cache.cache[&(s, f)], &ds.scenes[s].frames[f].gt.object_id))
            .collect();
        let ids: Vec<u32> = ds.config.objects.iter().map(|o| o.id).collect();
        let mut rng = pair_rng(cfg.seed, SCATTER_STREAM);
        Some(scatter_sample(&images, &ids, cfg.scatter_per_object, &mut rng)?)
    } else {
        None
    };

    let median = if cdf.is_empty() {
        f64::NAN
    } else {
        cdf.normalized[cdf.normalized.len() / 2]
    };
    let summary = EvalSummary {
        n_pairs: pairs.len(),
        success_threshold: cfg.success_threshold,
        fraction_below_threshold: cdf.fraction_below(cfg.success_threshold),
        median_normalized_error: median,
        mean_fraction_closer: closer.iter().sum::<f64>() / closer.len().max(1) as f64,
        min_centroid_distance: scatter.as_ref().and_then(Scatter::min_centroid_distance),
        cross_object_hard_negative_rates: scatter
            .as_ref()
            .map(|s| s.cross_object_hard_negative_rates(cfg.margin))
            .unwrap_or_default(),
    };
    Ok(EvalReport {
        pairs: pairs.to_vec(),
        predictions,
        cdf,
        fraction_closer: closer,
        scatter,
        summary,
    })
}

/// Writes `pixel_error_cdf.csv`, `fraction_closer_cdf.csv`, `queries.csv`,
/// `scatter.csv` and `centroids.csv` (when D >= 2) and `summary.json`.
pub fn write_eval(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    report.cdf.write_csv(&dir.join("pixel_error_cdf.csv"))?;
    let mut fc = report.fraction_closer.clone();
    fc.sort_by(f64::total_cmp);
    let mut w = csv::Writer::from_path(dir.join("fraction_closer_cdf.csv"))?;
    w.write_record(["fraction_closer", "cumulative_fraction"])?;
    for (i, v) in fc.iter().enumerate() {
        w.write_record([v.to_string(), ((i + 1) as f64 / fc.len() as f64).to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("queries.csv"))?;
    w.write_record([
        "scene_a",
        "frame_a",
        "scene_b",
        "frame_b",
        "ua_u",
        "ua_v",
        "ub_u",
        "ub_v",
        "pred_u",
        "pred_v",
        "object_id",
    ])?;
    for (p, pred) in report.pairs.iter().zip(&report.predictions) {
        w.write_record([
            p.scene_a.to_string(),
            p.frame_a.to_string(),
            p.scene_b.to_string(),
            p.frame_b.to_string(),
            p.u_a.u.to_string(),
            p.u_a.v.to_string(),
            p.u_b.u.to_string(),
            p.u_b.v.to_string(),
            pred.u.to_string(),
            pred.v.to_string(),
            p.object_id.to_string(),
        ])?;
    }
    w.flush()?;
    if let Some(s) = &report.scatter {
        s.write_csv(&dir.join("scatter.csv"))?;
        s.write_centroids_csv(&dir.join("centroids.csv"))?;
    }
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report.summary)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::dataset::{generate_dataset, DatasetConfig};
    use super::super::train::{initial_checkpoint, TrainConfig};
    use super::*;
    use crate::scene::TrajectoryConfig;

    fn tiny() -> Dataset {
        let cfg = DatasetConfig {
            width: 48,
            height: 36,
            train_scenes_per_object: 1,
            eval_scenes_per_object: 2,
            trajectory: TrajectoryConfig {
                n_views: 6,
                ..TrajectoryConfig::default()
            },
            ..DatasetConfig::default()
        };
        generate_dataset(&cfg, 5).unwrap()
    }

    #[test]
    fn pairs_are_cross_scene_and_oracle_backed() {
        let ds = tiny();
        let pairs = sample_eval_pairs(&ds, 30, 1, 200).unwrap();
        assert_eq!(pairs.len(), 30);
        let mut on_object = 0;
        for p in &pairs {
            assert_ne!(p.scene_a, p.scene_b);
            assert_eq!(ds.scenes[p.scene_a].split, Split::Eval);
            let gt_b = &ds.scenes[p.scene_b].frames[p.frame_b].gt;
            on_object += usize::from(*gt_b.object_id.get(p.u_b.u as usize, p.u_b.v as usize) == p.object_id);
        }
        // Rounding the exact projection can step off a silhouette edge.
        assert!(on_object >= 27, "{on_object}");
        assert_eq!(pairs, sample_eval_pairs(&ds, 30, 1, 200).unwrap());
    }

    #[test]
    fn no_held_out_scenes_is_an_error() {
        let mut ds = tiny();
        ds.scenes.retain(|s| s.split == Split::Train);
        assert!(matches!(sample_eval_pairs(&ds, 5, 0, 10), Err(Error::Config(_))));
    }

    #[test]
    fn metrics_files_are_monotone() {
        let ds = tiny();
        let ckpt = initial_checkpoint(&TrainConfig::default());
        let pairs = sample_eval_pairs(&ds, 20, 2, 200).unwrap();
        let report = evaluate(&ckpt.params, &ckpt.arch, &ds, &pairs, &EvalConfig::default()).unwrap();
        assert!(report.fraction_closer.iter().all(|f| (0.0..=1.0).contains(f)));
        let dir = tempfile::tempdir().unwrap();
        write_eval(dir.path(), &report).unwrap();
        for name in ["pixel_error_cdf.csv", "fraction_closer_cdf.csv"] {
            let mut r = csv::Reader::from_path(dir.path().join(name)).unwrap();
            let rows: Vec<(f64, f64)> = r.deserialize().map(|x| x.unwrap()).collect();
            assert_eq!(rows.len(), 20);
            assert!(rows.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        }
        let summary: EvalSummary =
            serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary.n_pairs, 20);
        assert!(dir.path().join("scatter.csv").exists());
    }
}
