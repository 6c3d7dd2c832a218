//! Digitally reconstructed radiographs from CT by parallel-ray projection.
//!
//! Intensities are clamped to a HU window and mapped affinely to a
//! non-negative attenuation in [0, 1] before integration. The AP view
//! integrates along the anterior-posterior axis. The LAT view integrates
//! along the AP direction rotated by `lat_angle_deg` about the
//! superior-inferior axis through the volume centre (90° is the orthogonal
//! lateral). Rows run from superior to inferior.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::VoxelGrid;

pub const DEFAULT_HU_WINDOW: (f64, f64) = (-1000.0, 2000.0);
pub const DEFAULT_MISALIGNMENT_ANGLES: [f64; 5] = [92.0, 94.0, 96.0, 98.0, 100.0];

#[derive(Debug, Error)]
pub enum DrrError {
    #[error("invalid projection spec: {0}")]
    Spec(String),
    #[error("misalignment series needs at least one angle")]
    NoAngles,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DrrError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum View {
    Ap,
    Lat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityMode {
    Mean,
    Sum,
}

impl std::str::FromStr for IntensityMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(IntensityMode::Mean),
            "sum" => Ok(IntensityMode::Sum),
            other => Err(format!("unknown intensity mode '{other}' (mean|sum)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub view: View,
    pub lat_angle_deg: f64,
    /// (rows, columns)
    pub output_size: [usize; 2],
    pub intensity: IntensityMode,
    pub hu_window: (f64, f64),
}

impl ProjectionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lat_angle_deg > 0.0 && self.lat_angle_deg < 180.0) {
            return Err(DrrError::Spec(format!("lat angle {} outside (0, 180)", self.lat_angle_deg)));
        }
        if self.output_size.contains(&0) {
            return Err(DrrError::Spec("output size must be > 0".into()));
        }
        let (lo, hi) = self.hu_window;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(DrrError::Spec(format!("HU window ({lo}, {hi}) must satisfy lo < hi")));
        }
        Ok(())
    }
}

/// Options shared by both views of a biplanar pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrrSettings {
    /// Defaults to (nz, max(nx, ny)) of the CT.
    pub output_size: Option<[usize; 2]>,
    pub intensity: IntensityMode,
    pub hu_window: (f64, f64),
}

impl Default for DrrSettings {
    fn default() -> Self {
        DrrSettings { output_size: None, intensity: IntensityMode::Mean, hu_window: DEFAULT_HU_WINDOW }
    }
}

impl DrrSettings {
    pub fn spec(&self, ct: &VoxelGrid<f32>, view: View, lat_angle_deg: f64) -> ProjectionSpec {
        let [nx, ny, nz] = ct.dims();
        ProjectionSpec {
            view,
            lat_angle_deg,
            output_size: self.output_size.unwrap_or([nz, nx.max(ny)]),
            intensity: self.intensity,
            hu_window: self.hu_window,
        }
    }
}

/// Unnormalized line integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct RawProjection {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// (row, column) spacing in mm.
    pub pixel_spacing: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrrImage {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, each in [0, 1].
    pub pixels: Vec<f32>,
    pub pixel_spacing: [f64; 2],
    pub provenance: ProjectionSpec,
}

impl DrrImage {
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.cols + col]
    }

    pub fn rms_difference(&self, other: &DrrImage) -> f64 {
        assert_eq!(self.pixels.len(), other.pixels.len(), "image sizes differ");
        let s: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        (s / self.pixels.len() as f64).sqrt()
    }
}

fn attenuation(v: f32, (lo, hi): (f64, f64)) -> f64 {
    let c = (v as f64).clamp(lo, hi);
    (c - lo) / (hi - lo)
}

/// Line integrals for `spec`, cropped/padded to its output size.
pub fn project_raw(ct: &VoxelGrid<f32>, spec: &ProjectionSpec) -> Result<RawProjection> {
    spec.validate()?;
    let g = ct.geometry();
    let [nx, ny, nz] = g.dims;
    let [sx, sy, sz] = g.spacing;
    let mu: Vec<f64> = ct.data().iter().map(|&v| attenuation(v, spec.hu_window)).collect();

    let (width, native): (usize, Vec<Vec<f64>>) = match spec.view {
        View::Ap => {
            let rows = (0..nz)
                .into_par_iter()
                .map(|r| {
                    let z = nz - 1 - r;
                    (0..nx)
                        .map(|x| {
                            let s: f64 = (0..ny).map(|y| mu[g.index(x, y, z)]).sum();
                            match spec.intensity {
                                IntensityMode::Sum => s * sy,
                                IntensityMode::Mean => s / ny as f64,
                            }
                        })
                        .collect()
                })
                .collect();
            (nx, rows)
        }
        View::Lat => {
            let step = sx;
            let m = ((nx as f64 * sx).max(ny as f64 * sy) / step).round().max(1.0) as usize;
            let half = (m as f64 - 1.0) / 2.0;
            let (sin, cos) = spec.lat_angle_deg.to_radians().sin_cos();
            let cx = (nx as f64 - 1.0) / 2.0 * sx;
            let cy = (ny as f64 - 1.0) / 2.0 * sy;
            let rows = (0..nz)
                .into_par_iter()
                .map(|r| {
                    let z = nz - 1 - r;
                    (0..m)
                        .map(|i| {
                            let qx = (i as f64 - half) * step;
                            let mut s = 0.0;
                            for j in 0..m {
                                let qy = (j as f64 - half) * step;
                                let px = (cx + cos * qx - sin * qy) / sx;
                                let py = (cy + sin * qx + cos * qy) / sy;
                                s += bilinear_zero(&mu, g.dims, px, py, |x, y| g.index(x, y, z));
                            }
                            match spec.intensity {
                                IntensityMode::Sum => s * step,
                                IntensityMode::Mean => s / m as f64,
                            }
                        })
                        .collect()
                })
                .collect();
            (m, rows)
        }
    };

    let [h, w] = spec.output_size;
    let start = |native: usize, out: usize| {
        ((native as f64 - 1.0) / 2.0 - (out as f64 - 1.0) / 2.0 + 0.5).floor() as i64
    };
    let (r0, c0) = (start(nz, h), start(width, w));
    let mut values = vec![0.0; h * w];
    for r in 0..h {
        let sr = r as i64 + r0;
        if sr < 0 || sr >= nz as i64 {
            continue;
        }
        for c in 0..w {
            let sc = c as i64 + c0;
            if sc >= 0 && sc < width as i64 {
                values[r * w + c] = native[sr as usize][sc as usize];
            }
        }
    }
    Ok(RawProjection { rows: h, cols: w, values, pixel_spacing: [sz, sx] })
}

/// In-plane bilinear sample with zero outside the lattice.
#[inline]
fn bilinear_zero(
    mu: &[f64],
    dims: [usize; 3],
    px: f64,
    py: f64,
    index: impl Fn(usize, usize) -> usize,
) -> f64 {
    let (x0, y0) = (px.floor(), py.floor());
    let (fx, fy) = (px - x0, py - y0);
    let mut s = 0.0;
    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
        let x = x0 + dx;
        if wx == 0.0 || x < 0.0 || x >= dims[0] as f64 {
            continue;
        }
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            let y = y0 + dy;
            if wy == 0.0 || y < 0.0 || y >= dims[1] as f64 {
                continue;
            }
            s += wx * wy * mu[index(x as usize, y as usize)];
        }
    }
    s
}

/// Min-max normalize to [0, 1]; a constant image becomes all zeros.
pub fn normalize(raw: &RawProjection, spec: ProjectionSpec) -> DrrImage {
    let min = raw.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let pixels = if range > 0.0 && range.is_finite() {
        raw.values.iter().map(|&v| (((v - min) / range).clamp(0.0, 1.0)) as f32).collect()
    } else {
        vec![0.0; raw.values.len()]
    };
    DrrImage {
        rows: raw.rows,
        cols: raw.cols,
        pixels,
        pixel_spacing: raw.pixel_spacing,
        provenance: spec,
    }
}

/// Normalized projection. A volume of constant attenuation yields an
/// all-zero image whatever the view.
pub fn project(ct: &VoxelGrid<f32>, spec: &ProjectionSpec) -> Result<DrrImage> {
    let raw = project_raw(ct, spec)?;
    let first = ct.data().first().map(|&v| attenuation(v, spec.hu_window));
    let constant = ct.data().iter().all(|&v| Some(attenuation(v, spec.hu_window)) == first);
    if constant {
        let pixels = vec![0.0; raw.values.len()];
        return Ok(DrrImage { rows: raw.rows, cols: raw.cols, pixels, pixel_spacing: raw.pixel_spacing, provenance: *spec });
    }
    Ok(normalize(&raw, *spec))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiplanarPair {
    pub ap: DrrImage,
    pub lat: DrrImage,
}

pub fn make_biplanar(ct: &VoxelGrid<f32>, lat_angle_deg: f64, settings: &DrrSettings) -> Result<BiplanarPair> {
    let ap = project(ct, &settings.spec(ct, View::Ap, lat_angle_deg))?;
    let lat = project(ct, &settings.spec(ct, View::Lat, lat_angle_deg))?;
    Ok(BiplanarPair { ap, lat })
}

/// One biplanar pair per angle, in the given order.
pub fn misalignment_series(
    ct: &VoxelGrid<f32>,
    angles: &[f64],
    settings: &DrrSettings,
) -> Result<Vec<BiplanarPair>> {
    if angles.is_empty() {
        return Err(DrrError::NoAngles);
    }
    angles.iter().map(|&a| make_biplanar(ct, a, settings)).collect()
}

fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Binary 16-bit PGM (P5, big-endian samples).
pub fn write_pgm16(img: &DrrImage, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("P5\n{} {}\n65535\n", img.cols, img.rows).into_bytes();
    for &p in &img.pixels {
        out.extend_from_slice(&(quantize(p, 65535.0) as u16).to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_png8(img: &DrrImage, path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, img.cols as u32, img.rows as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    let data: Vec<u8> = img.pixels.iter().map(|&p| quantize(p, 255.0) as u8).collect();
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    spec: &'a ProjectionSpec,
    rows: usize,
    cols: usize,
    pixel_spacing_mm: [f64; 2],
}

pub fn write_sidecar(img: &DrrImage, path: impl AsRef<Path>) -> Result<()> {
    let side = Sidecar { spec: &img.provenance, rows: img.rows, cols: img.cols, pixel_spacing_mm: img.pixel_spacing };
    let mut s = serde_json::to_string_pretty(&side)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
