//! Minimal NIfTI-1 codec: single-file `.nii`, optionally gzip-compressed.
//!
//! Reading honours sform, then qform, then plain pixdim scaling, and
//! reorders the voxel axes to the canonical R-A-S layout. Writing always
//! emits a little-endian single-file image with an sform and a qform.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

use super::{BinaryMask, Geometry, Result, VolumeError, VoxelGrid};

pub const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
/// Upper bound on voxels accepted from a header; larger claims are malformed.
pub const MAX_VOXELS: usize = 1 << 30;

const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

/// On-disk voxel types this codec handles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Datatype::Uint8,
            4 => Datatype::Int16,
            8 => Datatype::Int32,
            16 => Datatype::Float32,
            _ => return None,
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Int32 | Datatype::Float32 => 4,
        }
    }
}

/// The header fields the reader consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: Datatype,
    pub pixdim: [f32; 8],
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
}

impl NiftiHeader {
    /// Spatial dims; trailing dimensions must all be singleton.
    pub fn spatial_dims(&self) -> Result<[usize; 3]> {
        let ndim = self.dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(VolumeError::Format(format!("dim[0] = {ndim} out of range")));
        }
        let ndim = ndim as usize;
        let mut dims = [1usize; 3];
        for (a, d) in dims.iter_mut().enumerate() {
            if a < ndim {
                let v = self.dim[a + 1];
                if v <= 0 {
                    return Err(VolumeError::Format(format!("dim[{}] = {v}", a + 1)));
                }
                *d = v as usize;
            }
        }
        for a in 4..=ndim {
            let v = self.dim[a];
            if v <= 0 {
                return Err(VolumeError::Format(format!("dim[{a}] = {v}")));
            }
            if v > 1 {
                return Err(VolumeError::Unsupported(format!("{ndim}-D image with dim[{a}] = {v}")));
            }
        }
        let n = dims[0] * dims[1] * dims[2];
        if n > MAX_VOXELS {
            return Err(VolumeError::Format(format!("{n} voxels exceeds limit")));
        }
        Ok(dims)
    }

    /// 3×4 voxel-to-world affine as stored (NIfTI world is R-A-S).
    pub fn affine(&self) -> Result<[[f64; 4]; 3]> {
        if self.sform_code > 0 {
            return Ok(self.srow.map(|row| row.map(f64::from)));
        }
        let px = [self.pixdim[1] as f64, self.pixdim[2] as f64, self.pixdim[3] as f64];
        if self.qform_code > 0 {
            let [b, c, d] = self.quatern.map(|v| v as f64);
            let rest = 1.0 - (b * b + c * c + d * d);
            let (a, b, c, d) = if rest > 1e-7 {
                (rest.sqrt(), b, c, d)
            } else {
                let n = (b * b + c * c + d * d).sqrt();
                if !(n.is_finite() && n > 0.0) {
                    return Err(VolumeError::Format("degenerate qform quaternion".into()));
                }
                (0.0, b / n, c / n, d / n)
            };
            let rot = [
                [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
                [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
                [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
            ];
            let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
            let scale = [px[0], px[1], px[2] * qfac];
            let mut aff = [[0.0; 4]; 3];
            for r in 0..3 {
                for col in 0..3 {
                    aff[r][col] = rot[r][col] * scale[col];
                }
                aff[r][3] = self.qoffset[r] as f64;
            }
            return Ok(aff);
        }
        Ok([
            [px[0], 0.0, 0.0, 0.0],
            [0.0, px[1], 0.0, 0.0],
            [0.0, 0.0, px[2], 0.0],
        ])
    }
}

/// Parse the 348-byte header at the start of `bytes` (already decompressed).
pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < HEADER_SIZE {
        return Err(VolumeError::Format(format!("{} bytes, header needs {HEADER_SIZE}", bytes.len())));
    }
    let sizeof_hdr = LittleEndian::read_i32(&bytes[0..4]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) == HEADER_SIZE as i32 {
            return Err(VolumeError::Unsupported("big-endian NIfTI".into()));
        }
        return Err(VolumeError::Format(format!("sizeof_hdr = {sizeof_hdr}")));
    }
    let magic = &bytes[344..348];
    if magic == MAGIC_PAIR {
        return Err(VolumeError::Unsupported("hdr/img file pairs".into()));
    }
    if magic != MAGIC_SINGLE {
        return Err(VolumeError::Format("bad magic".into()));
    }
    let mut dim = [0i16; 8];
    LittleEndian::read_i16_into(&bytes[40..56], &mut dim);
    let code = LittleEndian::read_i16(&bytes[70..72]);
    let datatype = Datatype::from_code(code)
        .ok_or_else(|| VolumeError::Unsupported(format!("datatype code {code}")))?;
    let mut pixdim = [0f32; 8];
    LittleEndian::read_f32_into(&bytes[76..108], &mut pixdim);
    let vox_offset = LittleEndian::read_f32(&bytes[108..112]);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32 && vox_offset.fract() == 0.0)
        || vox_offset > 1.0e9
    {
        return Err(VolumeError::Format(format!("vox_offset = {vox_offset}")));
    }
    let f = |o: usize| LittleEndian::read_f32(&bytes[o..o + 4]);
    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        LittleEndian::read_f32_into(&bytes[280 + 16 * r..296 + 16 * r], row);
    }
    Ok(NiftiHeader {
        dim,
        datatype,
        pixdim,
        vox_offset: vox_offset as usize,
        scl_slope: f(112),
        scl_inter: f(116),
        qform_code: LittleEndian::read_i16(&bytes[252..254]),
        sform_code: LittleEndian::read_i16(&bytes[254..256]),
        quatern: [f(256), f(260), f(264)],
        qoffset: [f(268), f(272), f(276)],
        srow,
    })
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Decode a complete NIfTI-1 image (plain or gzip) into canonical R-A-S order.
pub fn decode(bytes: &[u8]) -> Result<VoxelGrid<f32>> {
    if is_gzip(bytes) {
        let mut dec = GzDecoder::new(bytes);
        let mut head = Vec::with_capacity(HEADER_SIZE);
        (&mut dec).take(HEADER_SIZE as u64).read_to_end(&mut head).map_err(gz_err)?;
        let header = parse_header(&head)?;
        let needed = payload_end(&header)?;
        let mut rest = Vec::new();
        (&mut dec).take((needed - HEADER_SIZE) as u64).read_to_end(&mut rest).map_err(gz_err)?;
        head.extend_from_slice(&rest);
        decode_raw(&header, &head)
    } else {
        let header = parse_header(bytes)?;
        decode_raw(&header, bytes)
    }
}

fn gz_err(e: std::io::Error) -> VolumeError {
    VolumeError::Format(format!("gzip: {e}"))
}

fn payload_end(h: &NiftiHeader) -> Result<usize> {
    let dims = h.spatial_dims()?;
    let n = dims[0] * dims[1] * dims[2];
    n.checked_mul(h.datatype.bytes())
        .and_then(|b| b.checked_add(h.vox_offset))
        .ok_or_else(|| VolumeError::Format("payload size overflows".into()))
}

fn decode_raw(h: &NiftiHeader, bytes: &[u8]) -> Result<VoxelGrid<f32>> {
    let dims = h.spatial_dims()?;
    let end = payload_end(h)?;
    if bytes.len() < end {
        return Err(VolumeError::Format(format!("truncated: {} of {end} bytes", bytes.len())));
    }
    let raw = &bytes[h.vox_offset..end];
    let mut data: Vec<f32> = match h.datatype {
        Datatype::Uint8 => raw.iter().map(|&v| v as f32).collect(),
        Datatype::Int16 => raw.chunks_exact(2).map(|c| LittleEndian::read_i16(c) as f32).collect(),
        Datatype::Int32 => raw.chunks_exact(4).map(|c| LittleEndian::read_i32(c) as f32).collect(),
        Datatype::Float32 => raw.chunks_exact(4).map(LittleEndian::read_f32).collect(),
    };
    let (slope, inter) = (h.scl_slope, h.scl_inter);
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    let affine = h.affine()?;
    canonicalize(dims, &affine, data)
}

/// Reorder voxel axes so that axis `r` points (mostly) along world axis `r`
/// with a positive sense. Any residual obliquity stays in the direction matrix.
fn canonicalize(dims: [usize; 3], affine: &[[f64; 4]; 3], data: Vec<f32>) -> Result<VoxelGrid<f32>> {
    let mut spacing = [0.0; 3];
    let mut lin = Matrix3::<f64>::zeros();
    for c in 0..3 {
        let norm = (0..3).map(|r| affine[r][c].powi(2)).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(VolumeError::Format(format!("voxel axis {c} has zero length")));
        }
        spacing[c] = norm;
        for r in 0..3 {
            lin[(r, c)] = affine[r][c] / norm;
        }
    }
    // Nearest orthonormal matrix (polar factor) absorbs small shears.
    let svd = lin.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(VolumeError::Format("orientation not decomposable".into())),
    };
    if svd.singular_values.iter().any(|&s| !(s > 1e-3)) {
        return Err(VolumeError::Format("orientation is singular".into()));
    }
    let dir = u * vt;

    // Greedy axis assignment on the largest remaining |cosine|.
    let mut perm = [usize::MAX; 3];
    let mut used_world = [false; 3];
    let mut used_voxel = [false; 3];
    for _ in 0..3 {
        let mut best = (0usize, 0usize, -1.0f64);
        for r in 0..3 {
            for c in 0..3 {
                if !used_world[r] && !used_voxel[c] && dir[(r, c)].abs() > best.2 {
                    best = (r, c, dir[(r, c)].abs());
                }
            }
        }
        perm[best.0] = best.1;
        used_world[best.0] = true;
        used_voxel[best.1] = true;
    }
    let sign: [bool; 3] = std::array::from_fn(|r| dir[(r, perm[r])] >= 0.0);

    let new_dims: [usize; 3] = std::array::from_fn(|r| dims[perm[r]]);
    let new_spacing: [f64; 3] = std::array::from_fn(|r| spacing[perm[r]]);
    let mut direction = [[0.0; 3]; 3];
    for (r_new, &c_old) in perm.iter().enumerate() {
        let s = if sign[r_new] { 1.0 } else { -1.0 };
        for (row, dr) in direction.iter_mut().enumerate() {
            dr[r_new] = s * dir[(row, c_old)];
        }
    }
    let mut first = [0.0f64; 3];
    for r_new in 0..3 {
        if !sign[r_new] {
            first[perm[r_new]] = (dims[perm[r_new]] - 1) as f64;
        }
    }
    let mut origin = [0.0; 3];
    for (r, o) in origin.iter_mut().enumerate() {
        *o = affine[r][3] + (0..3).map(|c| affine[r][c] * first[c]).sum::<f64>();
    }

    let geometry = Geometry::with_placement(new_dims, new_spacing, origin, direction)?;
    let old_stride = [1, dims[0], dims[0] * dims[1]];
    let mut out = Vec::with_capacity(data.len());
    for k in 0..new_dims[2] {
        for j in 0..new_dims[1] {
            for i in 0..new_dims[0] {
                let new = [i, j, k];
                let mut idx = 0;
                for r in 0..3 {
                    let c = perm[r];
                    let v = if sign[r] { new[r] } else { dims[c] - 1 - new[r] };
                    idx += v * old_stride[c];
                }
                out.push(data[idx]);
            }
        }
    }
    VoxelGrid::new(geometry, out)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<VoxelGrid<f32>> {
    decode(&fs::read(path)?)
}

/// Read a mask file; any non-zero voxel is foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    Ok(BinaryMask::from_nonzero(&read_volume(path)?))
}

fn wants_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn write_volume(grid: &VoxelGrid<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_volume_as(grid, path, Datatype::Float32)
}

pub fn write_volume_as(grid: &VoxelGrid<f32>, path: impl AsRef<Path>, dt: Datatype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(grid.geometry(), grid.data(), dt, wants_gzip(path))?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    write_volume_as(&mask.to_grid(), path, Datatype::Uint8)
}

/// Serialize to NIfTI-1 bytes. Values must be representable in `dt`.
pub fn encode(geometry: &Geometry, data: &[f32], dt: Datatype, gzip: bool) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; VOX_OFFSET];
    let dims = geometry.dims;
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(VolumeError::Unsupported(format!("dims {dims:?} exceed NIfTI-1 limits")));
    }
    LittleEndian::write_i32(&mut buf[0..4], HEADER_SIZE as i32);
    buf[38] = b'r';
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    LittleEndian::write_i16_into(&dim, &mut buf[40..56]);
    LittleEndian::write_i16(&mut buf[70..72], dt.code());
    LittleEndian::write_i16(&mut buf[72..74], (dt.bytes() * 8) as i16);

    let d = &geometry.direction;
    let det = Matrix3::from_fn(|r, c| d[r][c]).determinant();
    let qfac: f32 = if det < 0.0 { -1.0 } else { 1.0 };
    let sp = geometry.spacing;
    let pixdim: [f32; 8] = [qfac, sp[0] as f32, sp[1] as f32, sp[2] as f32, 1.0, 1.0, 1.0, 1.0];
    LittleEndian::write_f32_into(&pixdim, &mut buf[76..108]);
    LittleEndian::write_f32(&mut buf[108..112], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut buf[112..116], 1.0);
    buf[123] = 2; // millimetres
    LittleEndian::write_i16(&mut buf[252..254], 1);
    LittleEndian::write_i16(&mut buf[254..256], 1);

    let mut rot = Matrix3::from_fn(|r, c| d[r][c]);
    if det < 0.0 {
        rot.column_mut(2).neg_mut();
    }
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
    let q = if q.w < 0.0 { UnitQuaternion::new_unchecked(-q.into_inner()) } else { q };
    let qv = [q.i as f32, q.j as f32, q.k as f32];
    LittleEndian::write_f32_into(&qv, &mut buf[256..268]);
    let o = geometry.origin.map(|v| v as f32);
    LittleEndian::write_f32_into(&o, &mut buf[268..280]);
    for r in 0..3 {
        let row: [f32; 4] = [
            (d[r][0] * sp[0]) as f32,
            (d[r][1] * sp[1]) as f32,
            (d[r][2] * sp[2]) as f32,
            geometry.origin[r] as f32,
        ];
        LittleEndian::write_f32_into(&row, &mut buf[280 + 16 * r..296 + 16 * r]);
    }
    buf[344..348].copy_from_slice(MAGIC_SINGLE);

    buf.reserve(data.len() * dt.bytes());
    for &v in data {
        match dt {
            Datatype::Float32 => buf.extend_from_slice(&v.to_le_bytes()),
            Datatype::Uint8 => buf.push(integral::<u8>(v)?),
            Datatype::Int16 => buf.extend_from_slice(&integral::<i16>(v)?.to_le_bytes()),
            Datatype::Int32 => buf.extend_from_slice(&integral::<i32>(v)?.to_le_bytes()),
        }
    }
    if !gzip {
        return Ok(buf);
    }
    let mut enc = GzEncoder::new(Vec::new(), Compression::new(6));
    enc.write_all(&buf)?;
    Ok(enc.finish()?)
}

fn integral<T: TryFrom<i64>>(v: f32) -> Result<T> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(VolumeError::Unsupported(format!("value {v} is not integral")));
    }
    T::try_from(v as i64).map_err(|_| VolumeError::Unsupported(format!("value {v} out of range")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: [usize; 3], spacing: [f64; 3]) -> VoxelGrid<f32> {
        let g = Geometry::with_placement(dims, spacing, [-3.0, 4.5, 10.0], super::super::IDENTITY)
            .unwrap();
        let n = g.len();
        VoxelGrid::new(g, (0..n).map(|i| i as f32 * 0.5 - 3.0).collect()).unwrap()
    }

    #[test]
    fn round_trip_plain_and_gzip() {
        let g = grid([3, 4, 5], [0.7, 1.1, 2.5]);
        for gz in [false, true] {
            let bytes = encode(g.geometry(), g.data(), Datatype::Float32, gz).unwrap();
            assert_eq!(is_gzip(&bytes), gz);
            let back = decode(&bytes).unwrap();
            assert_eq!(back.dims(), g.dims());
            assert_eq!(back.data(), g.data());
            for a in 0..3 {
                assert!((back.spacing()[a] - g.spacing()[a]).abs() < 1e-6);
                assert!((back.geometry().origin[a] - g.geometry().origin[a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_voxel() {
        let geom = Geometry::new([1, 1, 1], [2.0; 3]).unwrap();
        let g = VoxelGrid::new(geom, vec![7.0]).unwrap();
        let back = decode(&encode(g.geometry(), g.data(), Datatype::Int16, false).unwrap()).unwrap();
        assert_eq!(back.dims(), [1, 1, 1]);
        assert_eq!(back.data(), &[7.0]);
        assert_eq!(back.spacing(), [2.0; 3]);
    }

    #[test]
    fn integer_types_round_trip() {
        let geom = Geometry::new([2, 2, 1], [1.0; 3]).unwrap();
        let g = VoxelGrid::new(geom, vec![0.0, 1.0, 200.0, 3.0]).unwrap();
        for dt in [Datatype::Uint8, Datatype::Int16, Datatype::Int32] {
            let back = decode(&encode(g.geometry(), g.data(), dt, true).unwrap()).unwrap();
            assert_eq!(back.data(), g.data());
        }
        assert!(encode(g.geometry(), &[0.5, 0.0, 0.0, 0.0], Datatype::Uint8, false).is_err());
        assert!(encode(g.geometry(), &[300.0, 0.0, 0.0, 0.0], Datatype::Uint8, false).is_err());
    }

    #[test]
    fn malformed_headers_are_rejected() {
        let g = grid([2, 2, 2], [1.0; 3]);
        let good = encode(g.geometry(), g.data(), Datatype::Float32, false).unwrap();

        assert!(matches!(decode(&good[..100]), Err(VolumeError::Format(_))));
        let mut bad = good.clone();
        bad[344] = b'x';
        assert!(matches!(decode(&bad), Err(VolumeError::Format(_))));
        let mut bad = good.clone();
        LittleEndian::write_i16(&mut bad[70..72], 64);
        assert!(matches!(decode(&bad), Err(VolumeError::Unsupported(_))));
        let mut bad = good.clone();
        bad.truncate(good.len() - 1);
        assert!(matches!(decode(&bad), Err(VolumeError::Format(_))));
        let mut bad = good.clone();
        LittleEndian::write_i16(&mut bad[42..44], -4);
        assert!(matches!(decode(&bad), Err(VolumeError::Format(_))));
        let mut bad = good;
        bad[0..4].copy_from_slice(&(348i32).to_be_bytes());
        assert!(matches!(decode(&bad), Err(VolumeError::Unsupported(_))));
    }

    #[test]
    fn scaling_is_applied() {
        let geom = Geometry::new([2, 1, 1], [1.0; 3]).unwrap();
        let g = VoxelGrid::new(geom, vec![1.0, 2.0]).unwrap();
        let mut bytes = encode(g.geometry(), g.data(), Datatype::Int16, false).unwrap();
        LittleEndian::write_f32(&mut bytes[112..116], 2.0);
        LittleEndian::write_f32(&mut bytes[116..120], -1024.0);
        assert_eq!(decode(&bytes).unwrap().data(), &[-1022.0, -1020.0]);
    }
}
