//! Correspondence metrics: best-match lookup, normalized pixel-error CDF,
//! fraction of closer pixels, hard-negative rate and descriptor scatter.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::correspondence::PixelPair;
use crate::error::{Error, Result};
use crate::geometry::Pixel;
use crate::image::{Grid, Mask};
use crate::loss::{descriptor_at, pair_distance};
use crate::net::DescriptorImage;

/// Default validity threshold as a fraction of the loss margin.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub best_pixel: Pixel,
    pub best_distance: f64,
    /// `best_distance < threshold`.
    pub valid: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exhaustive nearest descriptor to `desc_a(u_a)` in `desc_b`, optionally
/// restricted to `search_mask`. Ties go to the first pixel in row-major order.
pub fn best_match(
    desc_a: &DescriptorImage,
    u_a: Pixel,
    desc_b: &DescriptorImage,
    search_mask: Option<&Mask>,
    threshold: f64,
) -> Result<MatchDecision> {
    let query = descriptor_at(desc_a, u_a)?;
    let mut best: Option<(usize, usize, f64)> = None;
    for y in 0..desc_b.height {
        for x in 0..desc_b.width {
            if search_mask.is_some_and(|m| !*m.get(x, y)) {
                continue;
            }
            let d = sq_dist(query, desc_b.at(x, y));
            if best.is_none_or(|(_, _, b)| d < b) {
                best = Some((x, y, d));
            }
        }
    }
    let (x, y, d2) = best.ok_or(Error::EmptySearchRegion)?;
    let best_distance = d2.sqrt();
    Ok(MatchDecision {
        best_pixel: Pixel::at(x, y),
        best_distance,
        valid: best_distance < threshold,
    })
}

/// Sorted pixel errors normalized by the image diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelErrorCdf {
    pub normalized: Vec<f64>,
}

impl PixelErrorCdf {
    pub fn new(errors_px: &[f64], diagonal: f64) -> Self {
        let mut normalized: Vec<f64> = errors_px.iter().map(|e| e / diagonal).collect();
        normalized.sort_by(f64::total_cmp);
        PixelErrorCdf { normalized }
    }

    pub fn from_decisions(pairs: &[(MatchDecision, Pixel)], diagonal: f64) -> Self {
        let errors: Vec<f64> = pairs.iter().map(|(d, t)| d.best_pixel.distance(t)).collect();
        Self::new(&errors, diagonal)
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    /// Fraction of errors strictly below `t`.
    pub fn fraction_below(&self, t: f64) -> f64 {
        if self.normalized.is_empty() {
            return 0.0;
        }
        self.normalized.partition_point(|&e| e < t) as f64 / self.normalized.len() as f64
    }

    /// `(normalized_error, cumulative_fraction)` steps of the empirical CDF.
    pub fn curve(&self) -> Vec<(f64, f64)> {
        let n = self.normalized.len() as f64;
        self.normalized
            .iter()
            .enumerate()
            .map(|(i, &e)| (e, (i + 1) as f64 / n))
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["normalized_error", "cumulative_fraction"])?;
        for (e, f) in self.curve() {
            w.write_record([e.to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fraction of object pixels in `b` strictly closer in descriptor space to
/// `desc_a(u_a)` than the true match `u_b` is.
pub fn fraction_closer(
    desc_a: &DescriptorImage,
    u_a: Pixel,
    desc_b: &DescriptorImage,
    u_b: Pixel,
    object_mask_b: &Mask,
) -> Result<f64> {
    let total = object_mask_b.count();
    if total == 0 {
        return Err(Error::EmptyMask);
    }
    let query = descriptor_at(desc_a, u_a)?;
    let reference = sq_dist(query, descriptor_at(desc_b, u_b)?);
    let closer = object_mask_b
        .coords()
        .into_iter()
        .filter(|&(x, y)| sq_dist(query, desc_b.at(x, y)) < reference)
        .count();
    Ok(closer as f64 / total as f64)
}

/// Share of non-matches still inside the margin.
pub fn hard_negative_rate(
    desc_a: &DescriptorImage,
    desc_b: &DescriptorImage,
    non_matches: &[PixelPair],
    margin: f64,
) -> Result<f64> {
    if non_matches.is_empty() {
        return Ok(0.0);
    }
    let mut hard = 0;
    for nm in non_matches {
        if pair_distance(desc_a, nm.u_a, desc_b, nm.u_b)? < margin {
            hard += 1;
        }
    }
    Ok(hard as f64 / non_matches.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectCentroid {
    pub object_id: u32,
    pub samples: usize,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    pub dim: usize,
    pub rows: Vec<(u32, Vec<f64>)>,
    pub centroids: Vec<ObjectCentroid>,
}

/// Samples up to `n_per_object` on-object descriptors per object, without
/// replacement, pooled over all `(descriptors, labels)` images. Objects with
/// no pixels are skipped with a warning.
pub fn scatter_sample<R: Rng>(
    images: &[(&DescriptorImage, &Grid<u32>)],
    object_ids: &[u32],
    n_per_object: usize,
    rng: &mut R,
) -> Result<Scatter> {
    let dim = images.first().map_or(0, |(d, _)| d.dim);
    if dim < 2 {
        return Err(Error::Shape(format!("scatter export needs D >= 2, got {dim}")));
    }
    let mut pixels: BTreeMap<u32, Vec<(usize, usize, usize)>> = BTreeMap::new();
    for (i, (_, labels)) in images.iter().enumerate() {
        for y in 0..labels.height {
            for x in 0..labels.width {
                let id = *labels.get(x, y);
                if object_ids.contains(&id) {
                    pixels.entry(id).or_default().push((i, x, y));
                }
            }
        }
    }
    let mut rows = Vec::new();
    let mut centroids = Vec::new();
    for &id in object_ids {
        let Some(pool) = pixels.get(&id).filter(|p| !p.is_empty()) else {
            log::warn!("object {id} has no pixels; skipped in scatter export");
            continue;
        };
        let n = n_per_object.min(pool.len());
        let mut centroid = vec![0.0; dim];
        for k in rand::seq::index::sample(rng, pool.len(), n) {
            let (i, x, y) = pool[k];
            let d = images[i].0.at(x, y).to_vec();
            for (c, v) in centroid.iter_mut().zip(&d) {
                *c += v / n as f64;
            }
            rows.push((id, d));
        }
        centroids.push(ObjectCentroid {
            object_id: id,
            samples: n,
            centroid,
        });
    }
    Ok(Scatter { dim, rows, centroids })
}

impl Scatter {
    /// Smallest distance between the centroids of two different objects.
    pub fn min_centroid_distance(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, a) in self.centroids.iter().enumerate() {
            for b in &self.centroids[i + 1..] {
                let d = sq_dist(&a.centroid, &b.centroid).sqrt();
                best = Some(best.map_or(d, |m: f64| m.min(d)));
            }
        }
        best
    }

    /// For each object, the share of (own sample, other-object sample) pairs
    /// closer than `margin`, over all such pairs.
    pub fn cross_object_hard_negative_rates(&self, margin: f64) -> Vec<(u32, f64)> {
        let m2 = margin * margin;
        self.centroids
            .iter()
            .map(|c| {
                let mut hard = 0usize;
                let mut total = 0usize;
                for (_, a) in self.rows.iter().filter(|r| r.0 == c.object_id) {
                    for (_, b) in self.rows.iter().filter(|r| r.0 != c.object_id) {
                        total += 1;
                        hard += (sq_dist(a, b) < m2) as usize;
                    }
                }
                (c.object_id, if total == 0 { 0.0 } else { hard as f64 / total as f64 })
            })
            .collect()
    }

    /// Columns `object_id, d_1 .. d_D`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["object_id".to_string()];
        header.extend((1..=self.dim).map(|i| format!("d_{i}")));
        w.write_record(&header)?;
        for (id, d) in &self.rows {
            let mut rec = vec![id.to_string()];
            rec.extend(d.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Columns `object_id, samples, c_1 .. c_D`.
    pub fn write_centroids_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["object_id".to_string(), "samples".to_string()];
        header.extend((1..=self.dim).map(|i| format!("c_{i}")));
        w.write_record(&header)?;
        for c in &self.centroids {
            let mut rec = vec![c.object_id.to_string(), c.samples.to_string()];
            rec.extend(c.centroid.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
