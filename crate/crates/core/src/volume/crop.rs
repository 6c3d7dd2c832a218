use super::{Geometry, Result, VolumeError, VoxelGrid};

/// Crop and/or pad to `target` dims centred on `center` (world mm), filling
/// with zero. The output lattice is snapped to the source lattice so every
/// retained voxel keeps its world position.
pub fn crop_or_pad<T: Copy + Default>(
    grid: &VoxelGrid<T>,
    target: [usize; 3],
    center: [f64; 3],
) -> Result<VoxelGrid<T>> {
    crop_or_pad_with(grid, target, center, T::default())
}

pub fn crop_or_pad_with<T: Copy>(
    grid: &VoxelGrid<T>,
    target: [usize; 3],
    center: [f64; 3],
    fill: T,
) -> Result<VoxelGrid<T>> {
    if target.contains(&0) {
        return Err(VolumeError::Geometry(format!("target dims must be > 0, got {target:?}")));
    }
    let src = grid.geometry();
    let c = src.world_to_index(center);
    let start: [i64; 3] =
        std::array::from_fn(|a| (c[a] - (target[a] as f64 - 1.0) / 2.0 + 0.5).floor() as i64);
    let origin = src.index_to_world(start.map(|s| s as f64));
    let geometry = Geometry::with_placement(target, src.spacing, origin, src.direction)?;

    let mut data = vec![fill; geometry.len()];
    let range = |a: usize| {
        let lo = (-start[a]).max(0) as usize;
        let hi = (src.dims[a] as i64 - start[a]).clamp(0, target[a] as i64) as usize;
        lo..hi.max(lo)
    };
    let (rx, ry, rz) = (range(0), range(1), range(2));
    for k in rz {
        let sz = (k as i64 + start[2]) as usize;
        for j in ry.clone() {
            let sy = (j as i64 + start[1]) as usize;
            for i in rx.clone() {
                let sx = (i as i64 + start[0]) as usize;
                data[geometry.index(i, j, k)] = grid.data()[src.index(sx, sy, sz)];
            }
        }
    }
    VoxelGrid::new(geometry, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> VoxelGrid<u8> {
        let g = Geometry::new([n; 3], [1.0; 3]).unwrap();
        VoxelGrid::new(g, (0..n * n * n).map(|v| v as u8).collect()).unwrap()
    }

    #[test]
    fn same_dims_is_identity() {
        let g = ramp(4);
        let c = g.geometry().center();
        assert_eq!(crop_or_pad(&g, [4; 3], c).unwrap(), g);
    }

    #[test]
    fn central_block() {
        let g = ramp(4);
        let out = crop_or_pad(&g, [2; 3], g.geometry().center()).unwrap();
        let mut want = Vec::new();
        for z in 1..3 {
            for y in 1..3 {
                for x in 1..3 {
                    want.push(*g.get(x, y, z));
                }
            }
        }
        assert_eq!(out.data(), want.as_slice());
        assert_eq!(out.geometry().origin, [1.0; 3]);
    }

    #[test]
    fn pad_places_data_in_middle() {
        let g = Geometry::new([2; 3], [1.0; 3]).unwrap();
        let src = VoxelGrid::new(g, vec![1u8; 8]).unwrap();
        let out = crop_or_pad(&src, [4; 3], src.geometry().center()).unwrap();
        assert_eq!(out.data().iter().filter(|&&v| v == 0).count(), 56);
        for z in 1..3 {
            for y in 1..3 {
                for x in 1..3 {
                    assert_eq!(*out.get(x, y, z), 1);
                }
            }
        }
    }

    #[test]
    fn fully_outside_is_all_fill() {
        let src = ramp(3);
        let out = crop_or_pad_with(&src, [2; 3], [100.0, 0.0, 0.0], 9).unwrap();
        assert!(out.data().iter().all(|&v| v == 9));
        assert!(crop_or_pad(&src, [0, 1, 1], [0.0; 3]).is_err());
    }
}
