use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

/// Procedural color as a function of surface coordinates (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Flat {
        color: [f32; 3],
    },
    /// Alternating cells of edge `size` along every axis.
    Checker {
        size: f64,
        a: [f32; 3],
        b: [f32; 3],
    },
    /// `color[c] = base[c] + axes[c] . coord`, clamped to `[0, 1]`.
    Gradient {
        base: [f32; 3],
        axes: [[f64; 3]; 3],
    },
    /// Smooth value noise on a lattice of spacing `scale`.
    Noise {
        seed: u64,
        scale: f64,
        base: [f32; 3],
        amplitude: f32,
    },
}

impl Texture {
    pub fn color(&self, coord: &Vec3) -> [f32; 3] {
        match self {
            Texture::Flat { color } => *color,
            Texture::Checker { size, a, b } => {
                let s = (coord.x / size).floor() + (coord.y / size).floor() + (coord.z / size).floor();
                if (s as i64).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Gradient { base, axes } => {
                let mut out = [0.0f32; 3];
                for c in 0..3 {
                    let v = base[c] as f64 + Vec3::from(axes[c]).dot(coord);
                    out[c] = v.clamp(0.0, 1.0) as f32;
                }
                out
            }
            Texture::Noise {
                seed,
                scale,
                base,
                amplitude,
            } => {
                let p = coord / *scale;
                let mut out = [0.0f32; 3];
                for (c, o) in out.iter_mut().enumerate() {
                    let n = value_noise(&p, seed.wrapping_add(c as u64 * 0x9E37_79B9));
                    *o = (base[c] + amplitude * (n as f32 - 0.5)).clamp(0.0, 1.0);
                }
                out
            }
        }
    }
}

fn lattice_hash(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x51_7CC1_B727_220A;
    for v in [x, y, z] {
        h ^= v as u64;
        h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        h ^= h >> 29;
    }
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinearly blended lattice noise in `[0, 1)`.
fn value_noise(p: &Vec3, seed: u64) -> f64 {
    let base = p.map(f64::floor);
    let f = p - base;
    let (x0, y0, z0) = (base.x as i64, base.y as i64, base.z as i64);
    let (sx, sy, sz) = (smooth(f.x), smooth(f.y), smooth(f.z));
    let mut acc = 0.0;
    for corner in 0..8 {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let w = (if dx == 1 { sx } else { 1.0 - sx })
            * (if dy == 1 { sy } else { 1.0 - sy })
            * (if dz == 1 { sz } else { 1.0 - sz });
        acc += w * lattice_hash(x0 + dx as i64, y0 + dy as i64, z0 + dz as i64, seed);
    }
    acc
}
