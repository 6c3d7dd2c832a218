use super::{BinaryMask, Geometry, Result, VolumeError, VoxelGrid, ANISOTROPY_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Trilinear,
}

#[derive(Debug, Clone)]
pub struct Resampled<T> {
    pub grid: T,
    /// Source spacing ratio exceeded [`ANISOTROPY_LIMIT`].
    pub highly_anisotropic: bool,
}

pub fn anisotropy_ratio(spacing: [f64; 3]) -> f64 {
    let max = spacing.iter().cloned().fold(f64::MIN, f64::max);
    let min = spacing.iter().cloned().fold(f64::MAX, f64::min);
    max / min
}

/// Lattice with `target` spacing covering the same world extent (voxel
/// boundaries) as `src`, sharing its first corner.
fn target_geometry(src: &Geometry, target: [f64; 3]) -> Result<Geometry> {
    if target.iter().any(|&t| !(t.is_finite() && t > 0.0)) {
        return Err(VolumeError::Geometry(format!("target spacing must be > 0, got {target:?}")));
    }
    let dims: [usize; 3] = std::array::from_fn(|a| {
        let extent = src.dims[a] as f64 * src.spacing[a];
        ((extent / target[a]).round() as usize).max(1)
    });
    // First output centre sits half an output voxel inside the source corner.
    let first: [f64; 3] =
        std::array::from_fn(|a| (target[a] / src.spacing[a] - 1.0) / 2.0);
    let origin = src.index_to_world(first);
    Geometry::with_placement(dims, target, origin, src.direction)
}

/// Continuous source index for every output voxel, axis by axis.
fn source_coords(src: &Geometry, dst: &Geometry) -> [Vec<f64>; 3] {
    std::array::from_fn(|a| {
        let ratio = dst.spacing[a] / src.spacing[a];
        let first = (ratio - 1.0) / 2.0;
        (0..dst.dims[a]).map(|i| first + i as f64 * ratio).collect()
    })
}

#[inline]
fn nearest(c: f64, n: usize) -> usize {
    (c + 0.5).floor().clamp(0.0, (n - 1) as f64) as usize
}

fn resample_nearest<T: Copy>(src: &Geometry, data: &[T], dst: &Geometry) -> Vec<T> {
    let coords = source_coords(src, dst);
    let idx: [Vec<usize>; 3] =
        std::array::from_fn(|a| coords[a].iter().map(|&c| nearest(c, src.dims[a])).collect());
    let mut out = Vec::with_capacity(dst.len());
    for &z in &idx[2] {
        for &y in &idx[1] {
            for &x in &idx[0] {
                out.push(data[src.index(x, y, z)]);
            }
        }
    }
    out
}

/// Lower index and weight of the upper neighbour, edge-replicated.
#[inline]
fn linear_weight(c: f64, n: usize) -> (usize, usize, f64) {
    let c = c.clamp(0.0, (n - 1) as f64);
    let lo = c.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, c - lo as f64)
}

fn resample_trilinear(src: &Geometry, data: &[f32], dst: &Geometry) -> Vec<f32> {
    let coords = source_coords(src, dst);
    let w: [Vec<(usize, usize, f64)>; 3] =
        std::array::from_fn(|a| coords[a].iter().map(|&c| linear_weight(c, src.dims[a])).collect());
    let mut out = Vec::with_capacity(dst.len());
    for &(z0, z1, fz) in &w[2] {
        for &(y0, y1, fy) in &w[1] {
            for &(x0, x1, fx) in &w[0] {
                let v = |x, y, z| data[src.index(x, y, z)] as f64;
                let c00 = v(x0, y0, z0) * (1.0 - fx) + v(x1, y0, z0) * fx;
                let c10 = v(x0, y1, z0) * (1.0 - fx) + v(x1, y1, z0) * fx;
                let c01 = v(x0, y0, z1) * (1.0 - fx) + v(x1, y0, z1) * fx;
                let c11 = v(x0, y1, z1) * (1.0 - fx) + v(x1, y1, z1) * fx;
                let c0 = c00 * (1.0 - fy) + c10 * fy;
                let c1 = c01 * (1.0 - fy) + c11 * fy;
                out.push((c0 * (1.0 - fz) + c1 * fz) as f32);
            }
        }
    }
    out
}

/// Resample an intensity or label grid onto `target` spacing.
///
/// Label volumes must use [`Interpolation::Nearest`]. When the target equals
/// the source spacing the data is returned unchanged.
pub fn resample(
    grid: &VoxelGrid<f32>,
    target: [f64; 3],
    mode: Interpolation,
) -> Result<Resampled<VoxelGrid<f32>>> {
    let src = grid.geometry();
    let highly_anisotropic = anisotropy_ratio(src.spacing) > ANISOTROPY_LIMIT;
    let dst = target_geometry(src, target)?;
    let data = match mode {
        Interpolation::Nearest => resample_nearest(src, grid.data(), &dst),
        Interpolation::Trilinear => resample_trilinear(src, grid.data(), &dst),
    };
    Ok(Resampled { grid: VoxelGrid::new(dst, data)?, highly_anisotropic })
}

/// Nearest-neighbour resampling of a mask.
pub fn resample_mask(mask: &BinaryMask, target: [f64; 3]) -> Result<Resampled<BinaryMask>> {
    let src = mask.geometry();
    let highly_anisotropic = anisotropy_ratio(src.spacing) > ANISOTROPY_LIMIT;
    let dst = target_geometry(src, target)?;
    let data = resample_nearest(src, mask.data(), &dst);
    Ok(Resampled { grid: BinaryMask::new(dst, data)?, highly_anisotropic })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_keeps_data() {
        let g = Geometry::new([3, 2, 4], [0.8, 1.3, 2.0]).unwrap();
        let grid = VoxelGrid::new(g, (0..24).map(|v| v as f32).collect()).unwrap();
        for mode in [Interpolation::Nearest, Interpolation::Trilinear] {
            let r = resample(&grid, [0.8, 1.3, 2.0], mode).unwrap();
            assert_eq!(r.grid.data(), grid.data());
            assert_eq!(r.grid.geometry().origin, grid.geometry().origin);
        }
    }

    #[test]
    fn upsample_full_mask_stays_full() {
        let g = Geometry::new([2, 2, 2], [2.0; 3]).unwrap();
        let m = BinaryMask::new(g, vec![1; 8]).unwrap();
        let r = resample_mask(&m, [1.0; 3]).unwrap().grid;
        assert_eq!(r.dims(), [4, 4, 4]);
        assert_eq!(r.count(), 64);
        assert_eq!(r.geometry().origin, [-0.5, -0.5, -0.5]);
    }

    #[test]
    fn anisotropy_flag() {
        let g = Geometry::new([2, 2, 2], [0.5, 0.5, 12.0]).unwrap();
        let grid = VoxelGrid::filled(g, 0.0f32).unwrap();
        assert!(resample(&grid, [1.0; 3], Interpolation::Nearest).unwrap().highly_anisotropic);
        assert!(resample(&grid, [0.0, 1.0, 1.0], Interpolation::Nearest).is_err());
    }
}
