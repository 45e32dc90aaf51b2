//! Dense per-pixel containers and the netpbm encoders used for frame dumps.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `width x height` grid of per-pixel values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

pub type RgbImage = Grid<[f32; 3]>;
pub type DepthImage = Grid<f64>;
pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Image turned by 180 degrees: `(u, v) -> (W-1-u, H-1-v)`.
    pub fn rotated_180(&self) -> Self {
        let mut data = self.data.clone();
        data.reverse();
        Grid {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

impl<T> Grid<T> {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid { width, height, data }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        let w = self.width;
        &mut self.data[y * w + x]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_size<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    /// Row-major list of set pixels.
    pub fn coords(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| *self.get(x, y))
            .collect()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        }
    }

    /// Intersection over union; two empty masks count as identical.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.and(other).count();
        let union = self.or(other).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Square (Chebyshev) dilation by `r` pixels.
    pub fn dilate(&self, r: usize) -> Mask {
        let (w, h) = (self.width, self.height);
        Grid::from_fn(w, h, |x, y| {
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            (y0..=y1).any(|yy| (x0..=x1).any(|xx| *self.get(xx, yy)))
        })
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Quantizes a color channel in `[0, 1]` to 8 bits.
pub fn to_u8(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut out = Vec::with_capacity(img.len() * 3 + 32);
    write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
    for px in &img.data {
        out.extend(px.iter().map(|&c| to_u8(c)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Depth in meters stored as 16-bit big-endian millimeters (0 = no return).
pub fn write_depth_pgm(path: &Path, depth: &DepthImage) -> Result<()> {
    let mut out = Vec::with_capacity(depth.len() * 2 + 32);
    write!(out, "P5\n{} {}\n65535\n", depth.width, depth.height)?;
    for &d in &depth.data {
        let mm = (d * 1000.0).round().clamp(0.0, 65535.0) as u16;
        out.extend(mm.to_be_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = Vec::with_capacity(mask.len() + 32);
    write!(out, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    out.extend(mask.data.iter().map(|&m| if m { 255u8 } else { 0 }));
    std::fs::write(path, out)?;
    Ok(())
}

fn read_token(r: &mut impl BufRead) -> std::io::Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Ok(tok);
        }
        let c = byte[0] as char;
        if c == '#' {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if !tok.is_empty() {
                return Ok(tok);
            }
        } else {
            tok.push(c);
        }
    }
}

struct Netpbm {
    magic: String,
    width: usize,
    height: usize,
    maxval: usize,
    body: Vec<u8>,
}

fn read_netpbm(path: &Path) -> Result<Netpbm> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let magic = read_token(&mut r)?;
    let mut num = |name: &str| -> Result<usize> {
        read_token(&mut r)?
            .parse()
            .map_err(|_| format_err(path, format!("bad {name}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    Ok(Netpbm {
        magic,
        width,
        height,
        maxval,
        body,
    })
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let p = read_netpbm(path)?;
    if p.magic != "P6" || p.maxval != 255 || p.body.len() != p.width * p.height * 3 {
        return Err(format_err(path, "expected 8-bit binary PPM"));
    }
    let data = p
        .body
        .chunks_exact(3)
        .map(|c| [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0])
        .collect();
    Ok(Grid {
        width: p.width,
        height: p.height,
        data,
    })
}

pub fn read_depth_pgm(path: &Path) -> Result<DepthImage> {
    let p = read_netpbm(path)?;
    if p.magic != "P5" || p.maxval != 65535 || p.body.len() != p.width * p.height * 2 {
        return Err(format_err(path, "expected 16-bit binary PGM"));
    }
    let data = p
        .body
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0)
        .collect();
    Ok(Grid {
        width: p.width,
        height: p.height,
        data,
    })
}

pub fn read_mask_pgm(path: &Path) -> Result<Mask> {
    let p = read_netpbm(path)?;
    if p.magic != "P5" || p.maxval != 255 || p.body.len() != p.width * p.height {
        return Err(format_err(path, "expected 8-bit binary PGM"));
    }
    Ok(Grid {
        width: p.width,
        height: p.height,
        data: p.body.iter().map(|&b| b > 127).collect(),
    })
}

/// Depth rounded to whole millimeters, exactly what the PGM encoding keeps.
pub fn quantize_depth_mm(depth: &DepthImage) -> DepthImage {
    Grid {
        width: depth.width,
        height: depth.height,
        data: depth
            .data
            .iter()
            .map(|&d| (d * 1000.0).round().clamp(0.0, 65535.0) / 1000.0)
            .collect(),
    }
}

/// Colors rounded to 8 bits per channel, exactly what the PPM encoding keeps.
pub fn quantize_rgb_u8(img: &RgbImage) -> RgbImage {
    Grid {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|px| px.map(|c| to_u8(c) as f32 / 255.0)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn netpbm_round_trip_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Grid::from_fn(5, 3, |x, y| [x as f32 / 4.0, y as f32 / 2.0, 0.3]);
        let depth = Grid::from_fn(5, 3, |x, y| 0.5 + 0.0123 * (x + y) as f64);
        let mask = Grid::from_fn(5, 3, |x, y| (x + y) % 2 == 0);

        write_ppm(&dir.path().join("a.ppm"), &rgb).unwrap();
        write_depth_pgm(&dir.path().join("a.pgm"), &depth).unwrap();
        write_mask_pgm(&dir.path().join("m.pgm"), &mask).unwrap();

        assert_eq!(read_ppm(&dir.path().join("a.ppm")).unwrap(), quantize_rgb_u8(&rgb));
        assert_eq!(
            read_depth_pgm(&dir.path().join("a.pgm")).unwrap(),
            quantize_depth_mm(&depth)
        );
        assert_eq!(read_mask_pgm(&dir.path().join("m.pgm")).unwrap(), mask);
    }

    #[test]
    fn rotate_180_maps_corners() {
        let g = Grid::from_fn(96, 72, |x, y| (x, y));
        let r = g.rotated_180();
        assert_eq!(*r.get(95, 71), (0, 0));
        assert_eq!(r.rotated_180(), g);
    }

    #[test]
    fn mask_ops() {
        let a = Grid::from_fn(4, 4, |x, _| x < 2);
        let b = Grid::from_fn(4, 4, |x, _| x < 1);
        assert_eq!(a.iou(&b), 0.5);
        assert_eq!(b.dilate(1).count(), 8);
        assert_eq!(Mask::filled(3, 3, false).iou(&Mask::filled(3, 3, false)), 1.0);
    }
}
