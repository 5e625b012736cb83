//! Coordinate hierarchy for the sparse U-Net.
//!
//! From the level-0 occupied coordinates this precomputes, per level,
//! the 27 kernel-offset neighbor pairs used by submanifold convolution
//! and the child-to-parent map used by pooling and upsampling.

/// The 3x3x3 kernel offsets in a fixed order. Index 13 is the center.
pub const KERNEL_OFFSETS: [[i64; 3]; 27] = build_offsets();

const fn build_offsets() -> [[i64; 3]; 27] {
    let mut out = [[0i64; 3]; 27];
    let mut i = 0;
    let mut x = -1i64;
    while x <= 1 {
        let mut y = -1i64;
        while y <= 1 {
            let mut z = -1i64;
            while z <= 1 {
                out[i] = [x, y, z];
                i += 1;
                z += 1;
            }
            y += 1;
        }
        x += 1;
    }
    out
}

/// Per-offset (source_row, destination_row) pairs at one level.
pub type KernelMap = Vec<Vec<(u32, u32)>>;

/// One resolution level of the hierarchy.
#[derive(Debug, Clone)]
pub struct LevelPlan {
    /// Occupied coordinates, sorted and unique.
    pub coords: Vec<[u32; 3]>,
    /// Neighbor pairs for each of the 27 offsets.
    pub kernel: KernelMap,
    /// For each voxel here, its parent row at the next-coarser level.
    /// `None` at the top level.
    pub parent: Option<Vec<u32>>,
}

/// Full coordinate hierarchy for `levels` resolution levels.
#[derive(Debug, Clone)]
pub struct GridPlan {
    pub levels: Vec<LevelPlan>,
}

fn kernel_map(coords: &[[u32; 3]]) -> KernelMap {
    let mut maps = Vec::with_capacity(27);
    for offset in KERNEL_OFFSETS {
        let mut pairs = Vec::new();
        for (dst, c) in coords.iter().enumerate() {
            let sx = c[0] as i64 + offset[0];
            let sy = c[1] as i64 + offset[1];
            let sz = c[2] as i64 + offset[2];
            if sx < 0 || sy < 0 || sz < 0 {
                continue;
            }
            let key = [sx as u32, sy as u32, sz as u32];
            if let Ok(src) = coords.binary_search(&key) {
                pairs.push((src as u32, dst as u32));
            }
        }
        maps.push(pairs);
    }
    maps
}

/// Parent coordinates (`child / 2`, sorted unique) and child-to-parent rows.
fn pool_map(coords: &[[u32; 3]]) -> (Vec<[u32; 3]>, Vec<u32>) {
    let mut parents: Vec<[u32; 3]> = coords
        .iter()
        .map(|c| [c[0] / 2, c[1] / 2, c[2] / 2])
        .collect();
    parents.sort_unstable();
    parents.dedup();
    let child_to_parent = coords
        .iter()
        .map(|c| {
            parents
                .binary_search(&[c[0] / 2, c[1] / 2, c[2] / 2])
                .expect("parent exists by construction") as u32
        })
        .collect();
    (parents, child_to_parent)
}

impl GridPlan {
    /// Build the hierarchy from sorted unique level-0 coordinates.
    pub fn new(coords: &[[u32; 3]], levels: usize) -> GridPlan {
        assert!(levels >= 1, "need at least one level");
        debug_assert!(coords.windows(2).all(|w| w[0] < w[1]), "coords sorted unique");
        let mut out = Vec::with_capacity(levels);
        let mut current: Vec<[u32; 3]> = coords.to_vec();
        for level in 0..levels {
            let kernel = kernel_map(&current);
            if level + 1 < levels {
                let (parents, child_to_parent) = pool_map(&current);
                out.push(LevelPlan {
                    coords: current,
                    kernel,
                    parent: Some(child_to_parent),
                });
                current = parents;
            } else {
                out.push(LevelPlan {
                    coords: current,
                    kernel,
                    parent: None,
                });
                break;
            }
        }
        GridPlan { levels: out }
    }
}
