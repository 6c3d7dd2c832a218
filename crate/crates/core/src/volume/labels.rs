use std::collections::VecDeque;

use super::{offset, BinaryMask, Result, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LabelExtraction {
    pub mask: BinaryMask,
    /// No voxel carried the requested label.
    pub absent: bool,
}

/// Mask of voxels whose value equals `label_id`.
pub fn extract_label(grid: &VoxelGrid<f32>, label_id: i32) -> Result<LabelExtraction> {
    let want = label_id as f32;
    let data: Vec<u8> = grid.data().iter().map(|&v| (v == want) as u8).collect();
    let absent = !data.iter().any(|&v| v != 0);
    Ok(LabelExtraction { mask: BinaryMask::new(grid.geometry().clone(), data)?, absent })
}

/// Connected components as lists of linear indices, in scan order of their
/// first voxel. Each list is sorted.
pub fn components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Vec<usize>> {
    let geom = mask.geometry();
    let dims = geom.dims;
    let offs = connectivity.offsets();
    let mut seen = vec![false; geom.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..geom.len() {
        if !mask.is_set(start) || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let c = geom.coords(i);
            for &o in &offs {
                if let Some([x, y, z]) = offset(dims, c, o) {
                    let j = geom.index(x, y, z);
                    if mask.is_set(j) && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Keep only the component with the most voxels. Ties go to the component
/// whose lexicographically smallest (x, y, z) voxel index is smallest.
pub fn largest_component(mask: &BinaryMask, connectivity: Connectivity) -> Result<BinaryMask> {
    let geom = mask.geometry();
    let comps = components(mask, connectivity);
    let key = |c: &Vec<usize>| {
        let seed = c.iter().map(|&i| geom.coords(i)).min().unwrap_or([0; 3]);
        (std::cmp::Reverse(c.len()), seed)
    };
    let mut data = vec![0u8; geom.len()];
    if let Some(best) = comps.iter().min_by_key(|c| key(c)) {
        for &i in best {
            data[i] = 1;
        }
    }
    BinaryMask::new(geom.clone(), data)
}
