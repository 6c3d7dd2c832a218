//! Binary morphology on masks. Radii are in voxels, not millimetres.

use std::collections::VecDeque;

use super::{offset, BinaryMask, Geometry, Result, VoxelGrid, FACE_OFFSETS};
use crate::edt;

/// Foreground voxels with at least one 6-neighbour in the background. The
/// lattice edge counts as background.
pub fn boundary(mask: &BinaryMask) -> Vec<usize> {
    let g = mask.geometry();
    mask.foreground_indices()
        .filter(|&i| {
            let c = g.coords(i);
            FACE_OFFSETS.iter().any(|&o| match offset(g.dims, c, o) {
                None => true,
                Some([x, y, z]) => !mask.is_set(g.index(x, y, z)),
            })
        })
        .collect()
}

fn unit_lattice(g: &Geometry) -> Geometry {
    Geometry { spacing: [1.0; 3], ..g.clone() }
}

/// Voxels within `radius` voxels of the foreground.
pub fn dilate(mask: &BinaryMask, radius: f64) -> Result<BinaryMask> {
    let unit = BinaryMask::new(unit_lattice(mask.geometry()), mask.data().to_vec())?;
    let d = edt::distance_to(&unit);
    BinaryMask::new(mask.geometry().clone(), d.iter().map(|&v| (v <= radius) as u8).collect())
}

/// Foreground voxels farther than `radius` voxels from any background voxel.
/// Space outside the lattice is treated as background.
pub fn erode(mask: &BinaryMask, radius: f64) -> Result<BinaryMask> {
    let pad = radius.ceil() as usize + 1;
    let (padded, pg) = pad_zero(mask, pad)?;
    let comp: Vec<u8> = padded.data().iter().map(|&v| 1 - v).collect();
    let grown = dilate(&BinaryMask::new(pg.clone(), comp)?, radius)?;
    let g = mask.geometry();
    let data = (0..g.len())
        .map(|i| {
            let [x, y, z] = g.coords(i);
            (mask.is_set(i) && !grown.is_set(pg.index(x + pad, y + pad, z + pad))) as u8
        })
        .collect();
    BinaryMask::new(g.clone(), data)
}

fn pad_zero(mask: &BinaryMask, pad: usize) -> Result<(BinaryMask, Geometry)> {
    let g = mask.geometry();
    let pg = Geometry { dims: g.dims.map(|n| n + 2 * pad), ..unit_lattice(g) };
    let mut data = vec![0u8; pg.len()];
    for i in mask.foreground_indices() {
        let [x, y, z] = g.coords(i);
        data[pg.index(x + pad, y + pad, z + pad)] = 1;
    }
    Ok((BinaryMask::new(pg.clone(), data)?, pg))
}

/// Closing by a ball of `radius` voxels, computed on a padded lattice so that
/// structures touching the edge are not eroded away.
pub fn close(mask: &BinaryMask, radius: f64) -> Result<BinaryMask> {
    let pad = radius.ceil() as usize + 1;
    let (big, pg) = pad_zero(mask, pad)?;
    let closed = erode(&dilate(&big, radius)?, radius)?;
    let g = mask.geometry();
    let data = (0..g.len())
        .map(|i| {
            let [x, y, z] = g.coords(i);
            closed.data()[pg.index(x + pad, y + pad, z + pad)]
        })
        .collect();
    BinaryMask::new(g.clone(), data)
}

/// Background voxels of each axial (constant-z) slice that are not
/// 4-connected to the slice border.
pub fn axial_holes(mask: &BinaryMask) -> Result<BinaryMask> {
    let g = mask.geometry();
    let [nx, ny, nz] = g.dims;
    let mut holes = vec![0u8; g.len()];
    let mut outside = vec![false; nx * ny];
    let mut queue = VecDeque::new();
    for z in 0..nz {
        outside.iter_mut().for_each(|v| *v = false);
        let bg = |x: usize, y: usize| !mask.is_set(g.index(x, y, z));
        for y in 0..ny {
            for x in 0..nx {
                let border = x == 0 || y == 0 || x + 1 == nx || y + 1 == ny;
                if border && bg(x, y) {
                    outside[x + nx * y] = true;
                    queue.push_back((x, y));
                }
            }
        }
        while let Some((x, y)) = queue.pop_front() {
            let nb = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (a, b) in nb {
                if a < nx && b < ny && !outside[a + nx * b] && bg(a, b) {
                    outside[a + nx * b] = true;
                    queue.push_back((a, b));
                }
            }
        }
        for y in 0..ny {
            for x in 0..nx {
                if bg(x, y) && !outside[x + nx * y] {
                    holes[g.index(x, y, z)] = 1;
                }
            }
        }
    }
    BinaryMask::new(g.clone(), holes)
}

/// Mirror a grid across its first (left-right) axis, keeping the geometry.
pub fn mirror_x<T: Copy>(grid: &VoxelGrid<T>) -> Result<VoxelGrid<T>> {
    let g = grid.geometry();
    let nx = g.dims[0];
    let data = (0..g.len())
        .map(|i| {
            let [x, y, z] = g.coords(i);
            *grid.get(nx - 1 - x, y, z)
        })
        .collect();
    VoxelGrid::new(g.clone(), data)
}

pub fn mirror_mask_x(mask: &BinaryMask) -> Result<BinaryMask> {
    BinaryMask::try_from(mirror_x(mask.grid())?)
}
