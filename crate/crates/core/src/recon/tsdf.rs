use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, Intrinsics, Pixel, Pose, Vec3};
use crate::image::{DepthImage, Grid, Mask};
use crate::scene::RgbdFrame;

/// Truncated signed distance voxel grid.
///
/// `tsdf` is stored in units of the truncation distance, so it always lies in
/// `[-1, 1]`. A voxel with zero weight has never been observed.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    /// World position of the corner of voxel `(0, 0, 0)`.
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    pub tsdf: Vec<f64>,
    pub weight: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
}

impl TsdfVolume {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        TsdfVolume {
            origin,
            voxel_size,
            dims,
            truncation,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
        }
    }

    /// Volume covering `[min, max]` with the default truncation of four voxels.
    pub fn covering(min: Vec3, max: Vec3, voxel_size: f64) -> Self {
        let extent = max - min;
        let dims = [0, 1, 2].map(|a| (extent[a] / voxel_size).ceil().max(1.0) as usize);
        TsdfVolume::new(min, voxel_size, dims, 4.0 * voxel_size)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.tsdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tsdf.is_empty()
    }

    pub fn observed_count(&self) -> usize {
        self.weight.iter().filter(|&&w| w > 0.0).count()
    }

    /// Fuses one depth frame as a running weighted mean (unit weight per
    /// observation). Voxels more than one truncation distance behind the
    /// measured surface are left untouched.
    pub fn integrate(&mut self, frame: &RgbdFrame) {
        let k = &frame.intrinsics;
        let world_to_cam = frame.pose.inverse();
        for kz in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let cam = world_to_cam.apply(&self.voxel_center(i, j, kz));
                    let Ok((px, z)) = project(&cam, k) else {
                        continue;
                    };
                    let Some((x, y)) = px.round_in(k.width, k.height) else {
                        continue;
                    };
                    let measured = *frame.depth.get(x, y);
                    if measured <= 0.0 {
                        continue;
                    }
                    let sd = measured - z;
                    if sd < -self.truncation {
                        continue;
                    }
                    let value = sd.min(self.truncation) / self.truncation;
                    let idx = self.index(i, j, kz);
                    let w = self.weight[idx];
                    self.tsdf[idx] = (w * self.tsdf[idx] + value) / (w + 1.0);
                    self.weight[idx] = w + 1.0;
                }
            }
        }
    }

    /// Trilinear TSDF sample; `None` unless all eight neighbours are observed.
    pub fn sample(&self, p: &Vec3) -> Option<f64> {
        let g = (p - self.origin) / self.voxel_size - Vec3::repeat(0.5);
        let base = g.map(f64::floor);
        if base.iter().any(|&b| b < 0.0) {
            return None;
        }
        let (i0, j0, k0) = (base.x as usize, base.y as usize, base.z as usize);
        if i0 + 1 >= self.dims[0] || j0 + 1 >= self.dims[1] || k0 + 1 >= self.dims[2] {
            return None;
        }
        let f = g - base;
        let mut acc = 0.0;
        for corner in 0..8usize {
            let (di, dj, dk) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let idx = self.index(i0 + di, j0 + dj, k0 + dk);
            if self.weight[idx] <= 0.0 {
                return None;
            }
            let w = (if di == 1 { f.x } else { 1.0 - f.x })
                * (if dj == 1 { f.y } else { 1.0 - f.y })
                * (if dk == 1 { f.z } else { 1.0 - f.z });
            acc += w * self.tsdf[idx];
        }
        Some(acc)
    }

    /// Ray parameter interval `[t0, t1]` inside the volume bounds.
    fn clip_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let max =
            self.origin + Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.voxel_size;
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < self.origin[a] || origin[a] > max[a] {
                    return None;
                }
                continue;
            }
            let mut ta = (self.origin[a] - origin[a]) / dir[a];
            let mut tb = (max[a] - origin[a]) / dir[a];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 < t1).then_some((t0, t1))
    }

    /// Depth of the first positive-to-negative zero crossing along `ray`
    /// (given in world frame, unit direction). Returns the ray length.
    fn march(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let (t0, t1) = self.clip_ray(origin, dir)?;
        let step = 0.5 * self.voxel_size;
        let mut prev: Option<(f64, f64)> = None;
        let mut t = t0 + 1e-9;
        while t <= t1 {
            match self.sample(&(origin + dir * t)) {
                Some(value) => {
                    if let Some((tp, vp)) = prev {
                        if vp > 0.0 && value <= 0.0 {
                            return Some(tp + (t - tp) * vp / (vp - value));
                        }
                    }
                    prev = Some((t, value));
                }
                None => prev = None,
            }
            t += step;
        }
        None
    }

    /// Renders a depth image (camera z, meters) of the fused surface.
    pub fn raycast(&self, pose: &Pose, k: &Intrinsics) -> DepthImage {
        Grid::from_fn(k.width, k.height, |x, y| {
            let ray_cam = k.ray(Pixel::at(x, y));
            let len = ray_cam.norm();
            let dir = pose.apply_vector(&ray_cam) / len;
            match self.march(&pose.translation, &dir) {
                Some(t) => t / len,
                None => 0.0,
            }
        })
    }

    /// Number of observed voxels that have an observed axis neighbour of the
    /// opposite sign, i.e. voxels bracketing the fused surface.
    pub fn surface_voxel_count(&self) -> usize {
        let [nx, ny, nz] = self.dims;
        let mut count = 0;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = self.index(i, j, k);
                    if self.weight[idx] <= 0.0 {
                        continue;
                    }
                    let v = self.tsdf[idx];
                    let neighbours = [
                        (i > 0).then(|| self.index(i - 1, j, k)),
                        (i + 1 < nx).then(|| self.index(i + 1, j, k)),
                        (j > 0).then(|| self.index(i, j - 1, k)),
                        (j + 1 < ny).then(|| self.index(i, j + 1, k)),
                        (k > 0).then(|| self.index(i, j, k - 1)),
                        (k + 1 < nz).then(|| self.index(i, j, k + 1)),
                    ];
                    let crosses = neighbours
                        .iter()
                        .flatten()
                        .any(|&n| self.weight[n] > 0.0 && ((v > 0.0) != (self.tsdf[n] > 0.0)));
                    if crosses {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            origin: self.origin.into(),
            voxel_size: self.voxel_size,
            dims: self.dims,
            truncation: self.truncation,
        }
    }

    /// Writes `<stem>.json` (header) and `<stem>.bin` (`tsdf` then `weight`,
    /// little-endian `f64`, x fastest).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut body = Vec::with_capacity(self.len() * 16);
        for v in self.tsdf.iter().chain(&self.weight) {
            body.extend(v.to_le_bytes());
        }
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.header())?,
        )?;
        std::fs::write(dir.join(format!("{stem}.bin")), body)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let header: VolumeHeader = serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.json")))?)?;
        let path = dir.join(format!("{stem}.bin"));
        let body = std::fs::read(&path)?;
        let n = header.dims.iter().product::<usize>();
        if body.len() != n * 16 {
            return Err(Error::Format {
                path,
                reason: format!("expected {} bytes, found {}", n * 16, body.len()),
            });
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mut vol = TsdfVolume::new(
            Vec3::from(header.origin),
            header.voxel_size,
            header.dims,
            header.truncation,
        );
        vol.tsdf.copy_from_slice(&values[..n]);
        vol.weight.copy_from_slice(&values[n..]);
        Ok(vol)
    }
}

/// Keeps only the reconstruction above the table: every voxel whose center
/// lies at or below `table_height + margin` is marked unobserved.
pub fn change_detect(vol: &TsdfVolume, table_height: f64, margin: f64) -> TsdfVolume {
    let mut out = vol.clone();
    let cutoff = table_height + margin;
    for k in 0..vol.dims[2] {
        let z = vol.origin.z + (k as f64 + 0.5) * vol.voxel_size;
        if z > cutoff {
            continue;
        }
        for j in 0..vol.dims[1] {
            for i in 0..vol.dims[0] {
                let idx = vol.index(i, j, k);
                out.weight[idx] = 0.0;
                out.tsdf[idx] = 1.0;
            }
        }
    }
    out
}

/// Object mask: pixels where the object-only volume produces a surface.
pub fn render_mask(object_vol: &TsdfVolume, pose: &Pose, k: &Intrinsics) -> Mask {
    let depth = object_vol.raycast(pose, k);
    Grid {
        width: depth.width,
        height: depth.height,
        data: depth.data.iter().map(|&d| d > 0.0).collect(),
    }
}
