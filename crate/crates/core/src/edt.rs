//! Exact Euclidean feature transform on anisotropic lattices.
//!
//! Separable lower-envelope-of-parabolas passes (x, then y, then z) carry the
//! index of the nearest feature voxel along with the squared distance, so the
//! final distance can be recomputed from integer offsets.

use rayon::prelude::*;

use crate::volume::BinaryMask;

pub const NO_FEATURE: usize = usize::MAX;

/// Distance in mm between two voxel centres given by lattice coordinates.
#[inline]
pub fn lattice_distance(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    let dx = (a[0] as f64 - b[0] as f64) * spacing[0];
    let dy = (a[1] as f64 - b[1] as f64) * spacing[1];
    let dz = (a[2] as f64 - b[2] as f64) * spacing[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// For each voxel, the linear index of the nearest feature voxel (ties are
/// resolved arbitrarily but deterministically), or [`NO_FEATURE`].
pub fn feature_transform(
    dims: [usize; 3],
    spacing: [f64; 3],
    is_feature: impl Fn(usize) -> bool + Sync,
) -> Vec<usize> {
    let n = dims[0] * dims[1] * dims[2];
    let mut dist = vec![f64::INFINITY; n];
    let mut feat = vec![NO_FEATURE; n];
    for i in 0..n {
        if is_feature(i) {
            dist[i] = 0.0;
            feat[i] = i;
        }
    }
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let len = dims[axis];
        if len < 2 {
            continue;
        }
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let starts: Vec<usize> = (0..dims[o2])
            .flat_map(|b| (0..dims[o1]).map(move |a| a * strides[o1] + b * strides[o2]))
            .collect();
        let stride = strides[axis];
        let w2 = spacing[axis] * spacing[axis];
        let results: Vec<(Vec<f64>, Vec<usize>)> = starts
            .par_iter()
            .map(|&s| {
                let f: Vec<f64> = (0..len).map(|k| dist[s + k * stride]).collect();
                let fi: Vec<usize> = (0..len).map(|k| feat[s + k * stride]).collect();
                envelope(&f, &fi, w2)
            })
            .collect();
        for (&s, (d, fi)) in starts.iter().zip(results) {
            for k in 0..len {
                dist[s + k * stride] = d[k];
                feat[s + k * stride] = fi[k];
            }
        }
    }
    feat
}

/// 1-D squared distance transform of sampled function `f` with squared
/// sample spacing `w2`.
fn envelope(f: &[f64], fi: &[usize], w2: f64) -> (Vec<f64>, Vec<usize>) {
    let n = f.len();
    let mut out_d = vec![f64::INFINITY; n];
    let mut out_i = vec![NO_FEATURE; n];
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let key = |q: usize| f[q] + w2 * (q * q) as f64;
    for (q, fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = (key(q) - key(p)) / (2.0 * w2 * (q as f64 - p as f64));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            continue;
                        }
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return (out_d, out_i);
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out_d[q] = w2 * d * d + f[p];
        out_i[q] = fi[p];
    }
    (out_d, out_i)
}

/// Distance (mm) from every voxel to the nearest foreground voxel of
/// `features`; infinite when `features` is empty.
pub fn distance_to(features: &BinaryMask) -> Vec<f64> {
    let g = features.geometry();
    let ft = feature_transform(g.dims, g.spacing, |i| features.is_set(i));
    ft.iter()
        .enumerate()
        .map(|(i, &f)| {
            if f == NO_FEATURE {
                f64::INFINITY
            } else {
                lattice_distance(g.coords(i), g.coords(f), g.spacing)
            }
        })
        .collect()
}

/// Distance (mm) from every foreground voxel to the nearest background voxel;
/// zero on background. Voxels outside the lattice do not count as background.
pub fn interior_distance(mask: &BinaryMask) -> Vec<f64> {
    let g = mask.geometry();
    let ft = feature_transform(g.dims, g.spacing, |i| !mask.is_set(i));
    ft.iter()
        .enumerate()
        .map(|(i, &f)| {
            if !mask.is_set(i) {
                0.0
            } else if f == NO_FEATURE {
                f64::INFINITY
            } else {
                lattice_distance(g.coords(i), g.coords(f), g.spacing)
            }
        })
        .collect()
}
