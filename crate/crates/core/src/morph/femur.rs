//! Proximal femur morphometry: head sphere, diaphysis axis, neck axis and the
//! neck-shaft angle.
//!
//! Orientation rules: `fda` points distal to proximal, `fna` points from the
//! neck isthmus to the head centre. With these, `nsa = 180 - angle(fna, fda)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{surface_face_points, voxel_centers, Flags, MorphError, ParamStatus, Result};
use crate::edt;
use crate::geometry::{angle_deg, arr, fit_circle, fit_line, fit_sphere_trimmed, orthonormal_basis, principal_axes, v3, Sphere, Vec3};
use crate::volume::{largest_component, BinaryMask, Connectivity};

pub const MIN_HEAD_POINTS: usize = 30;
pub const MIN_SHAFT_SLICES: usize = 5;
pub const SLICE_STEP_MM: f64 = 2.0;
/// Accepted neck-shaft angles, half-open.
pub const NSA_WINDOW: (f64, f64) = (90.0, 180.0);
/// Accepted head radii, closed.
pub const FHR_WINDOW: (f64, f64) = (10.0, 40.0);
/// Shaft voxels farther than this from the localization segment are ignored.
const SHAFT_SELECT_RADIUS_MM: f64 = 40.0;
const MIN_SLICE_POINTS: usize = 8;
/// Seed ball radius relative to the largest inscribed distance.
const HEAD_SEED_SCALE: f64 = 1.1;
/// Neck sweep keeps voxels within this multiple of `fhr` of the sweep line.
const NECK_SWEEP_RADIUS: f64 = 2.0;
const NECK_ITERATIONS: usize = 4;

/// Manual localization, placed on the reference mask and reused unchanged
/// for predictions of the same sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FemurLocalization {
    #[serde(skip)]
    pub sample_id: String,
    /// Distal end of the subtrochanteric interval.
    pub axis_point_a_mm: [f64; 3],
    /// Proximal end of the subtrochanteric interval.
    pub axis_point_b_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_center_mm: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_radius_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neck_point_mm: Option<[f64; 3]>,
}

impl FemurLocalization {
    pub fn validate(&self) -> Result<()> {
        let a = v3(self.axis_point_a_mm);
        let b = v3(self.axis_point_b_mm);
        let len = (b - a).norm();
        if !(len.is_finite() && len > 0.0) {
            return Err(MorphError::invalid(&["fda"], format!("empty localization interval for {}", self.sample_id)));
        }
        Ok(())
    }
}

/// Parse a sidecar mapping sample ids to localizations.
pub fn parse_localization_sidecar(text: &str) -> Result<BTreeMap<String, FemurLocalization>> {
    let mut map: BTreeMap<String, FemurLocalization> =
        serde_json::from_str(text).map_err(|e| MorphError::Localization(e.to_string()))?;
    for (id, loc) in map.iter_mut() {
        loc.sample_id = id.clone();
        loc.validate().map_err(|e| MorphError::Localization(e.to_string()))?;
    }
    Ok(map)
}

/// Fitted shaft axis; `radius` is the median slice radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShaftAxis {
    pub point: Vec3,
    pub direction: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadSeed {
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FemurMorphometry {
    pub fhr: Option<f64>,
    pub fhc: Option<[f64; 3]>,
    pub fna: Option<[f64; 3]>,
    pub fda: Option<[f64; 3]>,
    pub nsa: Option<f64>,
    pub flags: Flags,
}

pub const FEMUR_PARAMS: [&str; 5] = ["fhr", "fhc", "fna", "fda", "nsa"];

/// Sphere fit on surface points with one trimming pass.
pub fn fit_head_points(points: &[Vec3]) -> Result<Sphere> {
    if points.len() < MIN_HEAD_POINTS {
        return Err(MorphError::invalid(&["fhr", "fhc"], format!("{} head points", points.len())));
    }
    fit_sphere_trimmed(points).ok_or_else(|| MorphError::invalid(&["fhr", "fhc"], "degenerate sphere fit"))
}

/// Sphere fit on the mask surface inside the seed ball.
pub fn fit_femoral_head(mask: &BinaryMask, seed: &HeadSeed) -> Result<Sphere> {
    let pts: Vec<Vec3> =
        surface_face_points(mask).into_iter().filter(|p| (p - seed.center).norm() <= seed.radius).collect();
    fit_head_points(&pts)
}

/// Deepest interior voxel, optionally restricted to the proximal side of a
/// plane. Ties resolve to the lowest voxel index.
pub fn locate_head_seed(mask: &BinaryMask, proximal_of: Option<(Vec3, Vec3)>) -> Option<HeadSeed> {
    let g = mask.geometry();
    let depth = edt::interior_distance(mask);
    let mut best: Option<(usize, f64)> = None;
    for i in mask.foreground_indices() {
        if let Some((p, dir)) = proximal_of {
            if (v3(g.voxel_center(i)) - p).dot(&dir) <= 0.0 {
                continue;
            }
        }
        if best.is_none_or(|(_, d)| depth[i] > d) {
            best = Some((i, depth[i]));
        }
    }
    let (i, d) = best?;
    d.is_finite().then(|| HeadSeed { center: v3(g.voxel_center(i)), radius: HEAD_SEED_SCALE * d })
}

/// Shaft axis from circle centres of slices across the localized interval.
pub fn estimate_diaphysis_axis(mask: &BinaryMask, loc: &FemurLocalization) -> Result<ShaftAxis> {
    loc.validate()?;
    let invalid = |reason: String| MorphError::invalid(&["fda", "nsa"], reason);
    let a = v3(loc.axis_point_a_mm);
    let b = v3(loc.axis_point_b_mm);
    let len = (b - a).norm();
    let guide = (b - a) / len;
    let in_interval = |p: &Vec3| {
        let t = (p - a).dot(&guide);
        (0.0..=len).contains(&t) && (p - a - t * guide).norm() <= SHAFT_SELECT_RADIUS_MM
    };
    let selected: Vec<Vec3> = voxel_centers(mask).into_iter().filter(in_interval).collect();
    let (center, _, axes) =
        principal_axes(&selected).filter(|_| selected.len() >= 10).ok_or_else(|| invalid("interval misses the mask".into()))?;
    let mut dir = axes[2];
    if dir.dot(&guide) < 0.0 {
        dir = -dir;
    }
    let (u, v) = orthonormal_basis(&dir);
    let along: Vec<(f64, Vec3)> = surface_face_points(mask)
        .into_iter()
        .filter(in_interval)
        .map(|p| ((p - center).dot(&dir), p))
        .collect();
    let (lo, hi) = along.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (s, _)| (l.min(*s), h.max(*s)));
    let mut centers = Vec::new();
    let mut radii = Vec::new();
    let mut s = lo + SLICE_STEP_MM / 2.0;
    while s <= hi - SLICE_STEP_MM / 2.0 {
        let slab: Vec<[f64; 2]> = along
            .iter()
            .filter(|(t, _)| (t - s).abs() <= 0.5)
            .map(|(_, p)| {
                let q = p - center;
                [q.dot(&u), q.dot(&v)]
            })
            .collect();
        if slab.len() >= MIN_SLICE_POINTS {
            if let Some(c) = fit_circle(&slab).filter(|c| c.radius < SHAFT_SELECT_RADIUS_MM) {
                centers.push(center + s * dir + c.center[0] * u + c.center[1] * v);
                radii.push(c.radius);
            }
        }
        s += SLICE_STEP_MM;
    }
    if centers.len() < MIN_SHAFT_SLICES {
        return Err(invalid(format!("{} usable shaft slices", centers.len())));
    }
    let (point, mut direction) = fit_line(&centers).ok_or_else(|| invalid("degenerate slice centres".into()))?;
    if direction.dot(&guide) < 0.0 {
        direction = -direction;
    }
    Ok(ShaftAxis { point, direction, radius: crate::geometry::median(&radii) })
}

/// Parameter along `(origin, dir)` of the closest approach to `line`.
fn closest_approach(origin: &Vec3, dir: &Vec3, line: &ShaftAxis) -> Option<f64> {
    let b = dir.dot(&line.direction);
    let denom = 1.0 - b * b;
    if denom < 1e-9 {
        return None;
    }
    let w0 = origin - line.point;
    Some((b * line.direction.dot(&w0) - dir.dot(&w0)) / denom)
}

/// Centroid of the thinnest section of the sweep from `fhc` along `dir`.
/// Fails on an empty section or when no section is thinner than the first.
fn sweep_isthmus(voxels: &[Vec3], fhc: &Vec3, fhr: f64, dir: &Vec3, t_end: f64, step: f64) -> Option<Vec3> {
    let t0 = 0.5 * fhr;
    let bins = ((t_end - t0) / step).floor();
    if !(bins >= 5.0) {
        return None;
    }
    let bins = bins as usize;
    let mut count = vec![0usize; bins];
    let mut sum = vec![Vec3::zeros(); bins];
    for p in voxels {
        let d = p - fhc;
        let t = d.dot(dir);
        if t < t0 || (d - t * dir).norm() > NECK_SWEEP_RADIUS * fhr {
            continue;
        }
        let k = ((t - t0) / step) as usize;
        if k < bins {
            count[k] += 1;
            sum[k] += p;
        }
    }
    if count.contains(&0) {
        return None;
    }
    let windows: Vec<usize> = count.windows(3).map(|w| w.iter().sum()).collect();
    let k = (0..windows.len()).min_by_key(|&k| (windows[k], k))?;
    if windows[k] >= windows[0] {
        return None;
    }
    let n: usize = windows[k];
    Some(sum[k..k + 3].iter().fold(Vec3::zeros(), |a, s| a + s) / n as f64)
}

/// Unit vector from the neck isthmus centroid to the head centre.
pub fn estimate_neck_axis(mask: &BinaryMask, fhc: &Vec3, fhr: f64, shaft: &ShaftAxis) -> Result<Vec3> {
    let invalid = |reason: &str| MorphError::invalid(&["fna", "nsa"], reason);
    let voxels = voxel_centers(mask);
    let step = mask.spacing().into_iter().fold(0.0, f64::max);
    let foot = shaft.point + (fhc - shaft.point).dot(&shaft.direction) * shaft.direction;
    let reach = (foot - fhc).norm();
    let mut dir = (foot - fhc) / reach;
    // Sections stop at the shaft surface.
    let mut t_end = reach - shaft.radius;
    if !dir.iter().all(|v| v.is_finite()) {
        return Err(invalid("head centre lies on the shaft axis"));
    }
    let mut fna = None;
    for _ in 0..NECK_ITERATIONS {
        let c = sweep_isthmus(&voxels, fhc, fhr, &dir, t_end, step).ok_or_else(|| invalid("no isthmus along the sweep"))?;
        let next = (c - fhc).normalize();
        let axis = -next;
        let converged = fna.is_some_and(|prev: Vec3| angle_deg(&prev, &axis) < 0.05);
        fna = Some(axis);
        if converged {
            break;
        }
        dir = next;
        let sin = dir.cross(&shaft.direction).norm();
        t_end = closest_approach(fhc, &dir, shaft).ok_or_else(|| invalid("neck parallel to the shaft"))?
            - shaft.radius / sin;
    }
    fna.ok_or_else(|| invalid("no isthmus along the sweep"))
}

pub fn neck_shaft_angle(fna: &Vec3, fda: &Vec3) -> f64 {
    180.0 - angle_deg(fna, fda)
}

fn window_status(value: f64, lo: f64, hi: f64, closed: bool) -> ParamStatus {
    let inside = value >= lo && if closed { value <= hi } else { value < hi };
    if inside {
        ParamStatus::Valid
    } else {
        ParamStatus::Implausible
    }
}

/// All femur parameters on the largest 26-connected component of `mask`.
/// Failures become per-parameter flags rather than errors.
pub fn femur_morphometry(mask: &BinaryMask, loc: Option<&FemurLocalization>) -> Result<FemurMorphometry> {
    let mut out = FemurMorphometry { fhr: None, fhc: None, fna: None, fda: None, nsa: None, flags: Flags::default() };
    for p in FEMUR_PARAMS {
        out.flags.set(p, ParamStatus::Invalid);
    }
    if mask.is_empty() {
        return Ok(out);
    }
    let mask = largest_component(mask, Connectivity::TwentySix)?;

    let shaft = loc.and_then(|l| estimate_diaphysis_axis(&mask, l).ok());
    if let Some(s) = &shaft {
        out.fda = Some(arr(&s.direction));
        out.flags.set("fda", ParamStatus::Valid);
    }

    let seed = match loc.and_then(|l| l.head_center_mm.zip(l.head_radius_mm)) {
        Some((c, r)) => Some(HeadSeed { center: v3(c), radius: HEAD_SEED_SCALE * r }),
        None => {
            let gate = loc.map(|l| {
                let a = v3(l.axis_point_a_mm);
                let b = v3(l.axis_point_b_mm);
                (b, (b - a).normalize())
            });
            locate_head_seed(&mask, gate)
        }
    };
    let head = seed.and_then(|s| fit_femoral_head(&mask, &s).ok());
    if let Some(h) = &head {
        out.fhr = Some(h.radius);
        out.fhc = Some(arr(&h.center));
        out.flags.set("fhc", ParamStatus::Valid);
        out.flags.set("fhr", window_status(h.radius, FHR_WINDOW.0, FHR_WINDOW.1, true));
    }

    if let Some(h) = &head {
        match shaft.as_ref().map(|s| estimate_neck_axis(&mask, &h.center, h.radius, s)) {
            Some(Ok(fna)) => {
                out.fna = Some(arr(&fna));
                out.flags.set("fna", ParamStatus::Valid);
            }
            _ => {
                if let Some(np) = loc.and_then(|l| l.neck_point_mm) {
                    let fna = (h.center - v3(np)).normalize();
                    if fna.iter().all(|v| v.is_finite()) {
                        out.fna = Some(arr(&fna));
                        out.flags.set("fna", ParamStatus::Transferred);
                    }
                }
            }
        }
    }
    if let (Some(fna), Some(fda)) = (out.fna, out.fda) {
        let nsa = neck_shaft_angle(&v3(fna), &v3(fda));
        out.nsa = Some(nsa);
        out.flags.set("nsa", window_status(nsa, NSA_WINDOW.0, NSA_WINDOW.1, false));
    }
    Ok(out)
}

/// Absolute parameter differences; angles between axes in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FemurErrors {
    pub fhr_mm: Option<f64>,
    pub nsa_deg: Option<f64>,
    pub fhc_mm: Option<f64>,
    pub fna_deg: Option<f64>,
    pub fda_deg: Option<f64>,
}

pub fn femur_errors(gt: &FemurMorphometry, pred: &FemurMorphometry) -> FemurErrors {
    let dist = |a: Option<[f64; 3]>, b: Option<[f64; 3]>| Some((v3(a?) - v3(b?)).norm());
    let ang = |a: Option<[f64; 3]>, b: Option<[f64; 3]>| {
        let (a, b) = (a?, b?);
        Some(if a == b { 0.0 } else { angle_deg(&v3(a), &v3(b)) })
    };
    FemurErrors {
        fhr_mm: super::abs_error(gt.fhr, pred.fhr),
        nsa_deg: super::abs_error(gt.nsa, pred.nsa),
        fhc_mm: dist(gt.fhc, pred.fhc),
        fna_deg: ang(gt.fna, pred.fna),
        fda_deg: ang(gt.fda, pred.fda),
    }
}
