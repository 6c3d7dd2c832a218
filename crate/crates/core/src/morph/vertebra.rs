//! Single-vertebra morphometry.
//!
//! The canal is the largest cavity left after a small closing: background of
//! each axial slice of the closed mask that is enclosed by bone. Its position
//! fixes an in-plane frame (anterior axis from the canal toward the mass
//! centroid) and the plane separating the body from the posterior elements.
//! Superior is world +z.

use serde::{Deserialize, Serialize};

use super::{voxel_centers, Flags, MorphError, ParamStatus, Result};
use crate::geometry::{v3, Vec3};
use crate::volume::{largest_component, morphology, BinaryMask, Connectivity};

/// Closing radius in voxels used before cavity detection.
pub const CLOSING_RADIUS_VOXELS: f64 = 3.0;

pub const VERTEBRA_PARAMS: [&str; 7] = ["vcl", "bh_ant", "bh_post", "epw_sup", "epd_sup", "spl", "bw"];

/// In-plane frame anchored at the canal centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanalFrame {
    pub origin: Vec3,
    pub anterior: Vec3,
    pub lateral: Vec3,
}

impl CanalFrame {
    fn ap(&self, p: &Vec3) -> f64 {
        (p - self.origin).dot(&self.anterior)
    }

    fn lr(&self, p: &Vec3) -> f64 {
        (p - self.origin).dot(&self.lateral)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertebraPartition {
    pub body: BinaryMask,
    pub posterior: BinaryMask,
    pub canal: BinaryMask,
    pub frame: CanalFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraMorphometry {
    pub vcl: Option<f64>,
    pub body_height_ant: Option<f64>,
    pub body_height_post: Option<f64>,
    pub endplate_width_sup: Option<f64>,
    pub endplate_depth_sup: Option<f64>,
    pub spinous_process_length: Option<f64>,
    pub body_width: Option<f64>,
    pub flags: Flags,
}

impl VertebraMorphometry {
    /// Values in [`VERTEBRA_PARAMS`] order.
    pub fn as_array(&self) -> [Option<f64>; 7] {
        [
            self.vcl,
            self.body_height_ant,
            self.body_height_post,
            self.endplate_width_sup,
            self.endplate_depth_sup,
            self.spinous_process_length,
            self.body_width,
        ]
    }

    fn from_array(v: [Option<f64>; 7]) -> Self {
        let mut flags = Flags::default();
        for (name, x) in VERTEBRA_PARAMS.iter().zip(v) {
            flags.set(name, if x.is_some() { ParamStatus::Valid } else { ParamStatus::Invalid });
        }
        VertebraMorphometry {
            vcl: v[0],
            body_height_ant: v[1],
            body_height_post: v[2],
            endplate_width_sup: v[3],
            endplate_depth_sup: v[4],
            spinous_process_length: v[5],
            body_width: v[6],
            flags,
        }
    }
}

/// Half width of the mid-sagittal band, from the in-plane spacing.
fn band_half_width(spacing: [f64; 3]) -> f64 {
    0.5 * spacing[0].max(spacing[1]) * std::f64::consts::SQRT_2
}

/// Length added to a centre-to-centre extent along an in-plane unit
/// direction; equals the spacing on isotropic lattices.
fn footprint(dir: &Vec3, spacing: [f64; 3]) -> f64 {
    (dir.x * spacing[0]).hypot(dir.y * spacing[1])
}

fn extent(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

pub fn segment_vertebral_body(mask: &BinaryMask) -> Result<VertebraPartition> {
    if mask.is_empty() {
        return Err(MorphError::Partition("empty mask".into()));
    }
    let mask = largest_component(mask, Connectivity::TwentySix)?;
    let g = mask.geometry().clone();
    let closed = morphology::close(&mask, CLOSING_RADIUS_VOXELS)?;
    let holes = morphology::axial_holes(&closed)?;
    if holes.is_empty() {
        return Err(MorphError::Partition("no enclosed cavity".into()));
    }
    let canal = largest_component(&holes, Connectivity::Six)?;
    let canal_idx: Vec<usize> = canal.foreground_indices().collect();
    let c = v3(canal.centroid().ok_or_else(|| MorphError::Partition("empty cavity".into()))?);
    let m = v3(mask.centroid().ok_or_else(|| MorphError::Partition("empty mask".into()))?);
    let toward = Vec3::new(m.x - c.x, m.y - c.y, 0.0);
    if !(toward.norm() > 1e-9) {
        return Err(MorphError::Partition("cavity centred on the mass".into()));
    }
    let anterior = toward.normalize();
    let frame = CanalFrame { origin: c, anterior, lateral: anterior.cross(&Vec3::z()) };
    let band = band_half_width(g.spacing);
    let front = canal_idx
        .iter()
        .map(|&i| v3(g.voxel_center(i)))
        .filter(|p| frame.lr(p).abs() <= band)
        .map(|p| frame.ap(&p))
        .fold(f64::NEG_INFINITY, f64::max);
    if !front.is_finite() {
        return Err(MorphError::Partition("cavity misses the mid-sagittal band".into()));
    }
    let mut body = vec![0u8; g.len()];
    let mut posterior = vec![0u8; g.len()];
    for i in mask.foreground_indices() {
        if frame.ap(&v3(g.voxel_center(i))) > front {
            body[i] = 1;
        } else {
            posterior[i] = 1;
        }
    }
    Ok(VertebraPartition {
        body: BinaryMask::new(g.clone(), body)?,
        posterior: BinaryMask::new(g.clone(), posterior)?,
        canal,
        frame,
    })
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Every parameter; a failed partition yields an all-invalid record.
pub fn vertebra_morphometry(mask: &BinaryMask) -> Result<VertebraMorphometry> {
    let part = match segment_vertebral_body(mask) {
        Ok(p) => p,
        Err(MorphError::Partition(_)) => return Ok(VertebraMorphometry::from_array([None; 7])),
        Err(e) => return Err(e),
    };
    let g = part.body.geometry();
    let sp = g.spacing;
    let f = part.frame;
    let band = band_half_width(sp);
    let s_ap = footprint(&f.anterior, sp);
    let s_lr = footprint(&f.lateral, sp);
    let in_band = |p: &Vec3| f.lr(p).abs() <= band;

    let canal: Vec<Vec3> = voxel_centers(&part.canal).into_iter().filter(in_band).collect();
    let body: Vec<Vec3> = voxel_centers(&part.body);
    let body_band: Vec<Vec3> = body.iter().copied().filter(in_band).collect();
    let all_band: Vec<Vec3> =
        voxel_centers(&part.body).into_iter().chain(voxel_centers(&part.posterior)).filter(in_band).collect();

    let mut per_slice: std::collections::BTreeMap<i64, (f64, f64)> = Default::default();
    for p in &canal {
        let key = (p.z / sp[2]).round() as i64;
        let a = f.ap(p);
        let e = per_slice.entry(key).or_insert((a, a));
        e.0 = e.0.min(a);
        e.1 = e.1.max(a);
    }
    let vcl = median(per_slice.values().map(|(lo, hi)| hi - lo + s_ap).collect());

    let z_extent = |pts: &mut dyn Iterator<Item = &Vec3>| extent(pts.map(|p| p.z)).map(|(lo, hi)| hi - lo + sp[2]);
    let body_ap = extent(body_band.iter().map(|p| f.ap(p)));
    let (bh_ant, bh_post) = match body_ap {
        Some((lo, hi)) => (
            z_extent(&mut body_band.iter().filter(|p| f.ap(p) >= hi - 1.5 * s_ap)),
            z_extent(&mut body_band.iter().filter(|p| f.ap(p) <= lo + 1.5 * s_ap)),
        ),
        None => (None, None),
    };

    let body_z = extent(body.iter().map(|p| p.z));
    let (epw, epd, bw) = match body_z {
        Some((zlo, zhi)) => {
            let top: Vec<&Vec3> = body.iter().filter(|p| p.z >= zhi - 1.5 * sp[2]).collect();
            let zmid = (zlo + zhi) / 2.0;
            let mid = body.iter().filter(|p| (p.z - zmid).abs() <= sp[2]);
            (
                extent(top.iter().map(|p| f.lr(p))).map(|(lo, hi)| hi - lo + s_lr),
                extent(top.iter().map(|p| f.ap(p))).map(|(lo, hi)| hi - lo + s_ap),
                extent(mid.map(|p| f.lr(p))).map(|(lo, hi)| hi - lo + s_lr),
            )
        }
        None => (None, None, None),
    };

    let spl = match (extent(canal.iter().map(|p| f.ap(p))), extent(all_band.iter().map(|p| f.ap(p)))) {
        (Some((canal_back, _)), Some((tail, _))) if canal_back > tail => Some(canal_back - tail),
        _ => None,
    };
    Ok(VertebraMorphometry::from_array([vcl, bh_ant, bh_post, epw, epd, spl, bw]))
}

/// Absolute differences in [`VERTEBRA_PARAMS`] order.
pub fn morphometry_errors(gt: &VertebraMorphometry, pred: &VertebraMorphometry) -> [Option<f64>; 7] {
    let (a, b) = (gt.as_array(), pred.as_array());
    std::array::from_fn(|i| super::abs_error(a[i], b[i]))
}
