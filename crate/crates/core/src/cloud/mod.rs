//! Point clouds, sparse voxelization, and devoxelization.
//!
//! A [`PointCloud`] carries positions, colors, and optional per-point
//! labels. [`voxelize`] discretizes a cloud into a [`SparseVoxelGrid`]
//! (the network's input layer); [`devoxelize_nearest`] and
//! [`devoxelize_trilinear`] map per-voxel values back to points.

mod augment;
mod ply;

pub use augment::{augment, AugmentParams};
pub use ply::{read_ply, read_slab, soft_labels_from_slab, write_ply, write_slab};

use crate::error::{Error, Result};
use crate::net::Tensor;

/// Per-point soft label targets: a row-major `N x classes` matrix of
/// categorical distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels {
    pub classes: usize,
    pub values: Vec<f64>,
}

impl SoftLabels {
    pub fn new(classes: usize, values: Vec<f64>) -> Self {
        assert!(
            classes > 0 && values.len() % classes == 0,
            "soft label buffer must be a multiple of the class count"
        );
        SoftLabels { classes, values }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }
}

/// Sentinel for "this point has no ground-truth label".
pub const UNLABELED: i32 = -1;

/// A 3D point cloud with per-point color and optional supervision.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    /// Positions in meters.
    pub positions: Vec<[f64; 3]>,
    /// Colors in `[0, 1]`.
    pub colors: Vec<[f64; 3]>,
    /// Hard class labels; `-1` marks unlabeled points.
    pub hard_labels: Option<Vec<i32>>,
    /// Soft label distributions, one row per point.
    pub soft_labels: Option<SoftLabels>,
    /// Source pixel index (`row * width + col`) for lifted clouds.
    pub provenance: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Axis-aligned bounding box as `(min, max)`. Empty clouds get zeros.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if self.is_empty() {
            ([0.0; 3], [0.0; 3])
        } else {
            (lo, hi)
        }
    }

    /// Check the container invariants: matching lengths, normalized soft
    /// rows, hard labels in `{-1} ∪ [0, classes)`.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.colors.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} positions but {} colors",
                self.colors.len()
            )));
        }
        if let Some(labels) = &self.hard_labels {
            if labels.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{n} positions but {} hard labels",
                    labels.len()
                )));
            }
            if labels.iter().any(|&l| l < UNLABELED) {
                return Err(Error::InvalidInput(
                    "hard labels must be -1 or a class index".into(),
                ));
            }
        }
        if let Some(soft) = &self.soft_labels {
            if soft.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{n} positions but {} soft label rows",
                    soft.len()
                )));
            }
            for i in 0..n {
                let sum: f64 = soft.row(i).iter().sum();
                if (sum - 1.0).abs() > 1e-5 {
                    return Err(Error::InvalidInput(format!(
                        "soft label row {i} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        if let Some(prov) = &self.provenance {
            if prov.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{n} positions but {} provenance entries",
                    prov.len()
                )));
            }
        }
        Ok(())
    }
}

/// Occupied-voxel representation of a point cloud.
///
/// `coords` are unique and lexicographically sorted; `point_to_voxel`
/// maps every input point to its voxel row, which is what nearest
/// devoxelization gathers along.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid {
    /// Voxels per axis along the longest bounding-box edge.
    pub resolution: usize,
    /// Occupied voxel coordinates in `[0, resolution)^3`.
    pub coords: Vec<[u32; 3]>,
    /// Per-voxel input features (`M x 3` mean color remapped to `[-1, 1]`).
    pub features: Tensor,
    /// Voxel row index for each input point.
    pub point_to_voxel: Vec<u32>,
}

impl SparseVoxelGrid {
    pub fn num_voxels(&self) -> usize {
        self.coords.len()
    }

    pub fn num_points(&self) -> usize {
        self.point_to_voxel.len()
    }
}

/// Normalization from cloud space to `[0, resolution)` grid space.
///
/// The longest bounding-box axis maps onto the full grid extent and the
/// aspect ratio is preserved; degenerate boxes collapse to voxel zero.
#[derive(Debug, Clone, Copy)]
pub struct GridTransform {
    pub origin: [f64; 3],
    pub scale: f64,
}

impl GridTransform {
    pub fn for_cloud(cloud: &PointCloud, resolution: usize) -> GridTransform {
        let (lo, hi) = cloud.bounding_box();
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let scale = if extent > 0.0 {
            resolution as f64 / extent
        } else {
            0.0
        };
        GridTransform { origin: lo, scale }
    }

    /// Continuous grid-space position of a point.
    pub fn to_grid(&self, p: &[f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) * self.scale,
            (p[1] - self.origin[1]) * self.scale,
            (p[2] - self.origin[2]) * self.scale,
        ]
    }

    /// Voxel coordinate of a point, clamped so the upper boundary lands
    /// in the last cell.
    pub fn to_voxel(&self, p: &[f64; 3], resolution: usize) -> [u32; 3] {
        let g = self.to_grid(p);
        let mut v = [0u32; 3];
        for a in 0..3 {
            let idx = g[a].floor() as i64;
            v[a] = idx.clamp(0, resolution as i64 - 1) as u32;
        }
        v
    }
}

/// Discretize a cloud into a sparse voxel grid.
///
/// The per-voxel feature is the mean color of its member points remapped
/// from `[0, 1]` to `[-1, 1]`.
pub fn voxelize(cloud: &PointCloud, resolution: usize) -> Result<SparseVoxelGrid> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("voxelize requires a non-empty cloud"));
    }
    if resolution == 0 {
        return Err(Error::InvalidInput("voxel resolution must be >= 1".into()));
    }
    let n = cloud.len();
    if cloud.colors.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} positions but {} colors",
            cloud.colors.len()
        )));
    }

    let transform = GridTransform::for_cloud(cloud, resolution);
    let voxel_of: Vec<[u32; 3]> = cloud
        .positions
        .iter()
        .map(|p| transform.to_voxel(p, resolution))
        .collect();

    let mut coords: Vec<[u32; 3]> = voxel_of.clone();
    coords.sort_unstable();
    coords.dedup();

    let m = coords.len();
    let mut point_to_voxel = Vec::with_capacity(n);
    let mut sums = vec![0.0f64; m * 3];
    let mut counts = vec![0u32; m];
    for (i, v) in voxel_of.iter().enumerate() {
        let row = coords.binary_search(v).expect("own voxel is occupied");
        point_to_voxel.push(row as u32);
        for a in 0..3 {
            sums[row * 3 + a] += cloud.colors[i][a];
        }
        counts[row] += 1;
    }

    let mut features = Vec::with_capacity(m * 3);
    for row in 0..m {
        let c = f64::from(counts[row]);
        for a in 0..3 {
            features.push(2.0 * (sums[row * 3 + a] / c) - 1.0);
        }
    }

    Ok(SparseVoxelGrid {
        resolution,
        coords,
        features: Tensor::new(vec![m, 3], features),
        point_to_voxel,
    })
}

/// Copy each point's containing-voxel value: `out[i] = values[point_to_voxel[i]]`.
pub fn devoxelize_nearest(values: &Tensor, grid: &SparseVoxelGrid) -> Result<Tensor> {
    let (m, c) = values.dims2();
    if m != grid.num_voxels() {
        return Err(Error::ShapeMismatch(format!(
            "{m} value rows for {} voxels",
            grid.num_voxels()
        )));
    }
    let n = grid.num_points();
    let mut out = Vec::with_capacity(n * c);
    for &row in &grid.point_to_voxel {
        out.extend_from_slice(values.row(row as usize));
    }
    Ok(Tensor::new(vec![n, c], out))
}

/// Interpolate per-voxel values to points over the 8 voxel-center
/// neighbors.
///
/// Unoccupied neighbors get zero weight and the rest are renormalized;
/// a point with no occupied neighbor falls back to its own voxel.
pub fn devoxelize_trilinear(
    values: &Tensor,
    grid: &SparseVoxelGrid,
    cloud: &PointCloud,
) -> Result<Tensor> {
    let (m, c) = values.dims2();
    if m != grid.num_voxels() {
        return Err(Error::ShapeMismatch(format!(
            "{m} value rows for {} voxels",
            grid.num_voxels()
        )));
    }
    if cloud.len() != grid.num_points() {
        return Err(Error::ShapeMismatch(format!(
            "cloud has {} points but grid was built from {}",
            cloud.len(),
            grid.num_points()
        )));
    }

    let transform = GridTransform::for_cloud(cloud, grid.resolution);
    let n = cloud.len();
    let mut out = vec![0.0f64; n * c];
    for (i, p) in cloud.positions.iter().enumerate() {
        let g = transform.to_grid(p);
        // Cell corners around the point relative to voxel centers at +0.5.
        let base = [
            (g[0] - 0.5).floor(),
            (g[1] - 0.5).floor(),
            (g[2] - 0.5).floor(),
        ];
        let frac = [g[0] - 0.5 - base[0], g[1] - 0.5 - base[1], g[2] - 0.5 - base[2]];

        let mut weights = [0.0f64; 8];
        let mut rows = [usize::MAX; 8];
        let mut total = 0.0;
        for corner in 0..8 {
            let dx = corner >> 2 & 1;
            let dy = corner >> 1 & 1;
            let dz = corner & 1;
            let cx = base[0] as i64 + dx as i64;
            let cy = base[1] as i64 + dy as i64;
            let cz = base[2] as i64 + dz as i64;
            if cx < 0 || cy < 0 || cz < 0 {
                continue;
            }
            let key = [cx as u32, cy as u32, cz as u32];
            if let Ok(row) = grid.coords.binary_search(&key) {
                let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                    * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                    * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
                weights[corner] = w;
                rows[corner] = row;
                total += w;
            }
        }

        if total > 0.0 {
            for corner in 0..8 {
                if rows[corner] != usize::MAX && weights[corner] > 0.0 {
                    let w = weights[corner] / total;
                    let src = values.row(rows[corner]);
                    for ch in 0..c {
                        out[i * c + ch] += w * src[ch];
                    }
                }
            }
        } else {
            let src = values.row(grid.point_to_voxel[i] as usize);
            out[i * c..(i + 1) * c].copy_from_slice(src);
        }
    }
    Ok(Tensor::new(vec![n, c], out))
}
