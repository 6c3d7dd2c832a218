//! Oriented, spaced voxel lattices and the operations that standardize them.
//!
//! All grids are stored with x varying fastest (`index = x + nx * (y + ny * z)`).
//! After [`read_volume`] the voxel axes are permuted and flipped so that they
//! point (as closely as the header allows) toward Right, Anterior and Superior.

mod crop;
mod labels;
pub mod morphology;
pub mod nifti;
mod resample;

pub use crop::{crop_or_pad, crop_or_pad_with};
pub use labels::{
    components, extract_label, largest_component, Connectivity, LabelExtraction,
};
pub use nifti::{read_volume, write_volume, write_volume_as, Datatype};
pub use resample::{anisotropy_ratio, resample, resample_mask, Interpolation, Resampled};

use thiserror::Error;

/// Spacing ratio above which a volume is considered too anisotropic to use.
pub const ANISOTROPY_LIMIT: f64 = 20.0;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("malformed NIfTI: {0}")]
    Format(String),
    #[error("unsupported NIfTI content: {0}")]
    Unsupported(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("data length {got} does not match dims {dims:?}")]
    DataLength { got: usize, dims: [usize; 3] },
    #[error("mask values must be 0 or 1, found {0}")]
    NonBinary(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VolumeError>;

/// Placement of a voxel lattice in world space (millimetres).
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// World position of the centre of voxel (0, 0, 0).
    pub origin: [f64; 3],
    /// Direction cosines; column `i` is the world direction of voxel axis `i`.
    pub direction: [[f64; 3]; 3],
}

pub const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::with_placement(dims, spacing, [0.0; 3], IDENTITY)
    }

    pub fn with_placement(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        direction: [[f64; 3]; 3],
    ) -> Result<Self> {
        let g = Geometry { dims, spacing, origin, direction };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(VolumeError::Geometry(format!("zero dimension in {:?}", self.dims)));
        }
        if self.dims.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).is_none() {
            return Err(VolumeError::Geometry("voxel count overflows".into()));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::Geometry(format!("spacing must be > 0, got {:?}", self.spacing)));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(VolumeError::Geometry("non-finite origin".into()));
        }
        let d = &self.direction;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|r| d[r][i] * d[r][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if !dot.is_finite() || (dot - want).abs() > 1e-6 {
                    return Err(VolumeError::Geometry("direction columns not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// World position of a (possibly fractional) voxel index.
    pub fn index_to_world(&self, ijk: [f64; 3]) -> [f64; 3] {
        let mut p = self.origin;
        for (r, pr) in p.iter_mut().enumerate() {
            for (c, x) in ijk.iter().enumerate() {
                *pr += self.direction[r][c] * self.spacing[c] * x;
            }
        }
        p
    }

    pub fn voxel_center(&self, index: usize) -> [f64; 3] {
        let [x, y, z] = self.coords(index);
        self.index_to_world([x as f64, y as f64, z as f64])
    }

    /// Continuous voxel index of a world position.
    pub fn world_to_index(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]];
        let mut out = [0.0; 3];
        for (c, oc) in out.iter_mut().enumerate() {
            let along: f64 = (0..3).map(|r| self.direction[r][c] * d[r]).sum();
            *oc = along / self.spacing[c];
        }
        out
    }

    /// Length of the volume diagonal in millimetres (voxel-boundary extent).
    pub fn diagonal_mm(&self) -> f64 {
        (0..3)
            .map(|i| (self.dims[i] as f64 * self.spacing[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// World position of the geometric centre of the lattice.
    pub fn center(&self) -> [f64; 3] {
        self.index_to_world([
            (self.dims[0] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[2] as f64 - 1.0) / 2.0,
        ])
    }

    pub fn same_lattice(&self, other: &Geometry) -> bool {
        self.dims == other.dims
            && (0..3).all(|i| (self.spacing[i] - other.spacing[i]).abs() <= 1e-6)
    }
}

/// A scalar lattice. `T = f32` carries intensities and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T = f32> {
    geometry: Geometry,
    data: Vec<T>,
}

impl<T> VoxelGrid<T> {
    pub fn new(geometry: Geometry, data: Vec<T>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(VolumeError::DataLength { got: data.len(), dims: geometry.dims });
        }
        Ok(VoxelGrid { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: T) -> Result<Self>
    where
        T: Clone,
    {
        let n = geometry.len();
        Self::new(geometry, vec![value; n])
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_parts(self) -> (Geometry, Vec<T>) {
        (self.geometry, self.data)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[self.geometry.index(x, y, z)]
    }

    /// Same lattice, new values.
    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> VoxelGrid<U> {
        VoxelGrid { geometry: self.geometry.clone(), data: self.data.iter().map(f).collect() }
    }

    /// Same values, different world placement (dims must match).
    pub fn with_geometry(self, geometry: Geometry) -> Result<Self> {
        Self::new(geometry, self.data)
    }
}

/// A lattice whose every voxel is 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(VoxelGrid<u8>);

impl BinaryMask {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = data.iter().find(|&&v| v > 1) {
            return Err(VolumeError::NonBinary(bad));
        }
        Ok(BinaryMask(VoxelGrid::new(geometry, data)?))
    }

    pub fn empty(geometry: Geometry) -> Result<Self> {
        Ok(BinaryMask(VoxelGrid::filled(geometry, 0u8)?))
    }

    pub fn from_fn(geometry: Geometry, f: impl Fn([usize; 3]) -> bool) -> Result<Self> {
        let data = (0..geometry.len()).map(|i| f(geometry.coords(i)) as u8).collect();
        Self::new(geometry, data)
    }

    /// Foreground wherever the grid is non-zero.
    pub fn from_nonzero(grid: &VoxelGrid<f32>) -> Self {
        BinaryMask(grid.map(|&v| (v != 0.0) as u8))
    }

    pub fn grid(&self) -> &VoxelGrid<u8> {
        &self.0
    }

    pub fn geometry(&self) -> &Geometry {
        self.0.geometry()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.0.dims()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.0.spacing()
    }

    pub fn data(&self) -> &[u8] {
        self.0.data()
    }

    #[inline]
    pub fn is_set(&self, index: usize) -> bool {
        self.0.data[index] != 0
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> bool {
        *self.0.get(x, y, z) != 0
    }

    pub fn count(&self) -> usize {
        self.0.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.iter().all(|&v| v == 0)
    }

    pub fn foreground_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.data.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i)
    }

    pub fn to_grid(&self) -> VoxelGrid<f32> {
        self.0.map(|&v| v as f32)
    }

    /// World-space centre of mass of the foreground, `None` when empty.
    pub fn centroid(&self) -> Option<[f64; 3]> {
        let mut acc = [0.0f64; 3];
        let mut n = 0usize;
        for i in self.foreground_indices() {
            let [x, y, z] = self.geometry().coords(i);
            acc[0] += x as f64;
            acc[1] += y as f64;
            acc[2] += z as f64;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        Some(self.geometry().index_to_world([acc[0] / nf, acc[1] / nf, acc[2] / nf]))
    }

    /// Voxel-wise union. Geometries must share a lattice.
    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a & b)
    }

    /// Voxels of `self` not in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a & (1 - b))
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(u8, u8) -> u8) -> Result<BinaryMask> {
        if self.dims() != other.dims() {
            return Err(VolumeError::Geometry(format!(
                "mask dims differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
        BinaryMask::new(self.geometry().clone(), data)
    }

    pub fn into_grid(self) -> VoxelGrid<u8> {
        self.0
    }
}

impl TryFrom<VoxelGrid<u8>> for BinaryMask {
    type Error = VolumeError;

    fn try_from(grid: VoxelGrid<u8>) -> Result<Self> {
        let (g, d) = grid.into_parts();
        BinaryMask::new(g, d)
    }
}

/// The six face-neighbour offsets.
pub(crate) const FACE_OFFSETS: [[i64; 3]; 6] =
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

/// Neighbour of `c` shifted by `off`, `None` when it leaves the lattice.
#[inline]
pub(crate) fn offset(dims: [usize; 3], c: [usize; 3], off: [i64; 3]) -> Option<[usize; 3]> {
    let mut out = [0usize; 3];
    for a in 0..3 {
        let v = c[a] as i64 + off[a];
        if v < 0 || v >= dims[a] as i64 {
            return None;
        }
        out[a] = v as usize;
    }
    Some(out)
}
