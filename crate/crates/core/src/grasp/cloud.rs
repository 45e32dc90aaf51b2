use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::geometry::{unproject, Intrinsics, Mat3, Pixel, Pose, Vec3};
use crate::image::{DepthImage, Mask};

pub const DEFAULT_VOXEL: f64 = 0.005;
pub const DEFAULT_NORMAL_NEIGHBORS: usize = 12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Unit outward normals, one per point.
    pub normals: Vec<Vec3>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
            normals: self.normals.iter().map(|n| pose.apply_vector(n)).collect(),
        }
    }

    /// ASCII rows `x y z nx ny nz`.
    pub fn write_xyzn(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (p, n) in self.points.iter().zip(&self.normals) {
            writeln!(f, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// A depth image with its camera, optionally restricted to a mask.
#[derive(Debug, Clone, Copy)]
pub struct CloudView<'a> {
    pub depth: &'a DepthImage,
    pub pose: &'a Pose,
    pub intrinsics: &'a Intrinsics,
    pub mask: Option<&'a Mask>,
}

type Cell = (i64, i64, i64);

fn cell_of(p: &Vec3, size: f64) -> Cell {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

/// Unprojects every valid pixel into the world, merges points sharing a
/// `voxel`-sized cell into their mean, and estimates normals by fitting a
/// plane to the `k` nearest neighbors. Normals face the cameras that saw
/// the point.
pub fn fuse_cloud(views: &[CloudView], voxel: f64, k: usize) -> Result<PointCloud> {
    // Accumulated point sum, camera-position sum and count per cell.
    let mut cells: BTreeMap<Cell, (Vec3, Vec3, usize)> = BTreeMap::new();
    for view in views {
        let d = view.depth;
        let eye = view.pose.translation;
        for y in 0..d.height {
            for x in 0..d.width {
                let z = *d.get(x, y);
                if z <= 0.0 || !z.is_finite() || view.mask.is_some_and(|m| !*m.get(x, y)) {
                    continue;
                }
                let world = view.pose.apply(&unproject(Pixel::at(x, y), z, view.intrinsics)?);
                let e = cells
                    .entry(cell_of(&world, voxel))
                    .or_insert((Vec3::zeros(), Vec3::zeros(), 0));
                e.0 += world;
                e.1 += eye;
                e.2 += 1;
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (points, eyes): (Vec<Vec3>, Vec<Vec3>) = cells.values().map(|(p, e, n)| (p / *n as f64, e / *n as f64)).unzip();
    let index = NeighborIndex::new(&points, 2.0 * voxel);
    let normals = points
        .iter()
        .zip(&eyes)
        .map(|(p, eye)| {
            let nbrs = index.nearest(&points, p, k);
            let n = plane_normal(&points, &nbrs).unwrap_or_else(|| (eye - p).normalize());
            if n.dot(&(eye - p)) < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect();
    Ok(PointCloud { points, normals })
}

/// Normal of the least-squares plane through the given points.
fn plane_normal(points: &[Vec3], idx: &[usize]) -> Option<Vec3> {
    if idx.len() < 3 {
        return None;
    }
    let mean = idx.iter().map(|&i| points[i]).sum::<Vec3>() / idx.len() as f64;
    let mut cov = Mat3::zeros();
    for &i in idx {
        let d = points[i] - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (min_i, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let n = eig.eigenvectors.column(min_i).into_owned();
    (n.norm() > 0.0).then(|| n.normalize())
}

/// Uniform grid over the points for k-nearest-neighbor queries.
pub(crate) struct NeighborIndex {
    cell: f64,
    grid: BTreeMap<Cell, Vec<usize>>,
    extent: i64,
}

impl NeighborIndex {
    pub(crate) fn new(points: &[Vec3], cell: f64) -> Self {
        let mut grid: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            grid.entry(cell_of(p, cell)).or_default().push(i);
        }
        let (mut lo, mut hi) = (i64::MAX, i64::MIN);
        for c in grid.keys() {
            lo = lo.min(c.0.min(c.1).min(c.2));
            hi = hi.max(c.0.max(c.1).max(c.2));
        }
        NeighborIndex {
            cell,
            grid,
            extent: hi - lo + 1,
        }
    }

    /// Indices of the `k` points closest to `q` (fewer if the cloud is
    /// smaller), nearest first; ties by index.
    pub(crate) fn nearest(&self, points: &[Vec3], q: &Vec3, k: usize) -> Vec<usize> {
        let c = cell_of(q, self.cell);
        let mut ring = 1;
        loop {
            let mut found: Vec<(f64, usize)> = Vec::new();
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if let Some(ids) = self.grid.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                            found.extend(ids.iter().map(|&i| ((points[i] - q).norm_squared(), i)));
                        }
                    }
                }
            }
            found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // Every point within `ring` cells of distance has been seen.
            let covered = (ring as f64 * self.cell).powi(2);
            let enough = found.len() >= k && found[k - 1].0 <= covered;
            if enough || ring > self.extent {
                found.truncate(k);
                return found.into_iter().map(|(_, i)| i).collect();
            }
            ring += 1;
        }
    }

    /// Indices of all points within `radius` of `q`, in index order.
    pub(crate) fn within(&self, points: &[Vec3], q: &Vec3, radius: f64) -> Vec<usize> {
        let c = cell_of(q, self.cell);
        let r = (radius / self.cell).ceil() as i64;
        let mut out = Vec::new();
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    if let Some(ids) = self.grid.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        out.extend(ids.iter().copied().filter(|&i| (points[i] - q).norm() <= radius));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}
