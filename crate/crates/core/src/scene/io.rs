//! Ground truth on disk: a JSON header plus a raw little-endian body.
//!
//! Body layout, in order: `object_id` as `u32[W*H]`, `part` as `u16[W*H]`,
//! `surface_coord` as `f64[W*H*3]`, all row-major.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GroundTruth;
use crate::error::{Error, Result};
use crate::image::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthHeader {
    pub width: usize,
    pub height: usize,
    /// `(name, dtype, components)` in body order.
    pub fields: Vec<(String, String, usize)>,
}

impl GroundTruthHeader {
    fn for_size(width: usize, height: usize) -> Self {
        GroundTruthHeader {
            width,
            height,
            fields: vec![
                ("object_id".into(), "u32".into(), 1),
                ("part".into(), "u16".into(), 1),
                ("surface_coord".into(), "f64".into(), 3),
            ],
        }
    }

    fn body_len(&self) -> usize {
        self.width * self.height * (4 + 2 + 24)
    }
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn write_ground_truth(dir: &Path, stem: &str, gt: &GroundTruth) -> Result<()> {
    let header = GroundTruthHeader::for_size(gt.object_id.width, gt.object_id.height);
    let mut body = Vec::with_capacity(header.body_len());
    for &id in &gt.object_id.data {
        body.extend(id.to_le_bytes());
    }
    for &p in &gt.part.data {
        body.extend(p.to_le_bytes());
    }
    for c in &gt.surface_coord.data {
        for v in c {
            body.extend(v.to_le_bytes());
        }
    }
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&header)?)?;
    std::fs::write(dir.join(format!("{stem}.bin")), body)?;
    Ok(())
}

pub fn read_ground_truth(dir: &Path, stem: &str) -> Result<GroundTruth> {
    let header_path = dir.join(format!("{stem}.json"));
    let header: GroundTruthHeader = serde_json::from_slice(&std::fs::read(&header_path)?)?;
    let body_path = dir.join(format!("{stem}.bin"));
    let body = std::fs::read(&body_path)?;
    if header != GroundTruthHeader::for_size(header.width, header.height) || body.len() != header.body_len() {
        return Err(Error::Format {
            path: body_path,
            reason: "ground-truth header and body disagree".into(),
        });
    }
    let n = header.width * header.height;
    let (ids, rest) = body.split_at(n * 4);
    let (parts, coords) = rest.split_at(n * 2);
    let grid = |data| Grid {
        width: header.width,
        height: header.height,
        data,
    };
    Ok(GroundTruth {
        object_id: grid(
            ids.chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
        part: Grid {
            width: header.width,
            height: header.height,
            data: parts
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect(),
        },
        surface_coord: Grid {
            width: header.width,
            height: header.height,
            data: coords
                .chunks_exact(24)
                .map(|b| {
                    let f = |i: usize| f64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().unwrap());
                    [f(0), f(1), f(2)]
                })
                .collect(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gt = GroundTruth {
            object_id: Grid::from_fn(4, 3, |x, y| (x * y) as u32),
            part: Grid::from_fn(4, 3, |x, _| x as u16),
            surface_coord: Grid::from_fn(4, 3, |x, y| [x as f64 * 0.1, -(y as f64), 1e-7]),
        };
        write_ground_truth(dir.path(), "gt", &gt).unwrap();
        assert_eq!(read_ground_truth(dir.path(), "gt").unwrap(), gt);
        std::fs::write(dir.path().join("gt.bin"), [0u8; 5]).unwrap();
        assert!(read_ground_truth(dir.path(), "gt").is_err());
    }
}
