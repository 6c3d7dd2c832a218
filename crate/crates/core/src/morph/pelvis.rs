//! Bilateral pelvic landmarks and the reference planes they define.
//!
//! Landmarks are directional extremes of the boundary of each hemipelvis
//! within fixed regional gates, in the canonical frame (+x right,
//! +y anterior, +z superior). "IS" is read as the ischial spine.

use serde::{Deserialize, Serialize};

use super::{Flags, MorphError, ParamStatus, Result};
use crate::geometry::{arr, fit_plane, v3, Vec3};
use crate::volume::{largest_component, morphology, BinaryMask, Connectivity};

pub const TOP_K: usize = 25;
pub const MIN_SIDE_VOXELS: usize = 500;
/// ASIS and PSIS search the superior fraction of the side's height.
pub const SUPERIOR_FRACTION: f64 = 0.4;
/// PT searches the inferior fraction of the height, medial half only.
pub const INFERIOR_FRACTION: f64 = 0.4;
/// IS searches this band of the height, posterior half only.
pub const IS_BAND: (f64, f64) = (0.2, 0.6);

pub const LANDMARK_NAMES: [&str; 8] = ["asis_l", "asis_r", "pt_l", "pt_r", "is_l", "is_r", "psis_l", "psis_r"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn suffix(self) -> &'static str {
        match self {
            Side::Left => "l",
            Side::Right => "r",
        }
    }
}

/// Landmark positions in mm; `None` marks an invalid landmark.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PelvicLandmarks {
    pub asis_l: Option<[f64; 3]>,
    pub asis_r: Option<[f64; 3]>,
    pub pt_l: Option<[f64; 3]>,
    pub pt_r: Option<[f64; 3]>,
    pub is_l: Option<[f64; 3]>,
    pub is_r: Option<[f64; 3]>,
    pub psis_l: Option<[f64; 3]>,
    pub psis_r: Option<[f64; 3]>,
    /// x coordinate of the sagittal plane separating the sides.
    pub mid_x: f64,
}

impl PelvicLandmarks {
    /// Landmarks in [`LANDMARK_NAMES`] order.
    pub fn as_array(&self) -> [Option<[f64; 3]>; 8] {
        [self.asis_l, self.asis_r, self.pt_l, self.pt_r, self.is_l, self.is_r, self.psis_l, self.psis_r]
    }

    pub fn get(&self, name: &str) -> Option<[f64; 3]> {
        LANDMARK_NAMES.iter().position(|n| *n == name).and_then(|i| self.as_array()[i])
    }

    fn slot(&mut self, name: &str) -> &mut Option<[f64; 3]> {
        match name {
            "asis_l" => &mut self.asis_l,
            "asis_r" => &mut self.asis_r,
            "pt_l" => &mut self.pt_l,
            "pt_r" => &mut self.pt_r,
            "is_l" => &mut self.is_l,
            "is_r" => &mut self.is_r,
            "psis_l" => &mut self.psis_l,
            _ => &mut self.psis_r,
        }
    }

    pub fn set(&mut self, name: &str, value: Option<[f64; 3]>) {
        *self.slot(name) = value;
    }

    pub fn flags(&self) -> Flags {
        let mut f = Flags::default();
        for (name, v) in LANDMARK_NAMES.iter().zip(self.as_array()) {
            f.set(name, if v.is_some() { ParamStatus::Valid } else { ParamStatus::Invalid });
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PlaneName {
    App,
    Sisp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub name: PlaneName,
    pub point: [f64; 3],
    pub normal: [f64; 3],
}

impl PlaneSpec {
    /// Sagittal tilt in degrees: for APP the angle of the normal above the
    /// anterior axis, for SISP the angle of the normal toward anterior from
    /// the superior axis.
    pub fn tilt_deg(&self) -> f64 {
        let [_, ny, nz] = self.normal;
        match self.name {
            PlaneName::App => nz.atan2(ny).to_degrees(),
            PlaneName::Sisp => ny.atan2(nz).to_degrees(),
        }
    }
}

/// Centroid of the `k` highest-scoring points and every point tied with the
/// `k`-th score.
fn top_k_centroid(points: &[(f64, Vec3)], k: usize) -> Option<Vec3> {
    if points.is_empty() {
        return None;
    }
    let mut scores: Vec<f64> = points.iter().map(|(s, _)| *s).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let cut = scores[k.min(scores.len()) - 1];
    let chosen: Vec<&Vec3> = points.iter().filter(|(s, _)| *s >= cut).map(|(_, p)| p).collect();
    Some(chosen.iter().fold(Vec3::zeros(), |a, p| a + *p) / chosen.len() as f64)
}

fn side_landmarks(side_mask: &BinaryMask, mid_x: f64) -> Result<Option<[Vec3; 4]>> {
    if side_mask.count() < MIN_SIDE_VOXELS {
        return Ok(None);
    }
    let part = largest_component(side_mask, Connectivity::TwentySix)?;
    if part.count() < MIN_SIDE_VOXELS {
        return Ok(None);
    }
    let g = part.geometry();
    let voxels: Vec<Vec3> = part.foreground_indices().map(|i| v3(g.voxel_center(i))).collect();
    let surface: Vec<Vec3> = morphology::boundary(&part).into_iter().map(|i| v3(g.voxel_center(i))).collect();
    let lateral = |p: &Vec3| (p.x - mid_x).abs();
    let (zmin, zmax) = voxels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.z), h.max(p.z)));
    let (mmin, mmax) =
        voxels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(lateral(p)), h.max(lateral(p))));
    let yc = voxels.iter().map(|p| p.y).sum::<f64>() / voxels.len() as f64;
    let height = zmax - zmin;
    let medial_limit = (mmin + mmax) / 2.0;
    let gated = |gate: &dyn Fn(&Vec3) -> bool, score: &dyn Fn(&Vec3) -> f64| {
        let pts: Vec<(f64, Vec3)> = surface.iter().filter(|p| gate(p)).map(|p| (score(p), *p)).collect();
        top_k_centroid(&pts, TOP_K)
    };
    let superior = |p: &Vec3| p.z >= zmax - SUPERIOR_FRACTION * height;
    let asis = gated(&superior, &|p| p.y);
    let psis = gated(&superior, &|p| -p.y);
    let pt = gated(&|p| p.z <= zmin + INFERIOR_FRACTION * height && lateral(p) <= medial_limit, &|p| {
        (p.y - p.z) * std::f64::consts::FRAC_1_SQRT_2
    });
    let is = gated(
        &|p| p.z >= zmin + IS_BAND.0 * height && p.z <= zmin + IS_BAND.1 * height && p.y < yc,
        &|p| -lateral(p),
    );
    Ok(asis.zip(pt).zip(is.zip(psis)).map(|((a, b), (c, d))| [a, b, c, d]))
}

/// Sagittal plane between the hemipelves: the mass centroid when both halves
/// of the lattice hold enough voxels, otherwise the lattice centre.
fn sagittal_mid_x(mask: &BinaryMask) -> f64 {
    let g = mask.geometry();
    let center_x = g.center()[0];
    let left = mask.foreground_indices().filter(|&i| g.voxel_center(i)[0] < center_x).count();
    let right = mask.count() - left;
    if left >= MIN_SIDE_VOXELS && right >= MIN_SIDE_VOXELS {
        mask.centroid().map_or(center_x, |c| c[0])
    } else {
        center_x
    }
}

pub fn extract_pelvic_landmarks(mask: &BinaryMask) -> Result<PelvicLandmarks> {
    let mut out = PelvicLandmarks::default();
    if mask.is_empty() {
        return Err(MorphError::invalid(&LANDMARK_NAMES, "empty mask"));
    }
    let g = mask.geometry();
    out.mid_x = sagittal_mid_x(mask);
    for side in [Side::Left, Side::Right] {
        let keep = |i: usize| {
            let x = g.voxel_center(i)[0];
            match side {
                Side::Left => x < out.mid_x,
                Side::Right => x >= out.mid_x,
            }
        };
        let data = (0..g.len()).map(|i| (mask.is_set(i) && keep(i)) as u8).collect();
        let side_mask = BinaryMask::new(g.clone(), data)?;
        if let Some(lm) = side_landmarks(&side_mask, out.mid_x)? {
            for (name, p) in ["asis", "pt", "is", "psis"].iter().zip(lm) {
                out.set(&format!("{name}_{}", side.suffix()), Some(arr(&p)));
            }
        }
    }
    Ok(out)
}

fn plane_error(plane: &'static str, reason: &str) -> MorphError {
    MorphError::Plane { plane, reason: reason.to_string() }
}

/// Plane through `asis_l`, `asis_r` and the PT midpoint, normal anterior.
pub fn anterior_pelvic_plane(lm: &PelvicLandmarks) -> Result<PlaneSpec> {
    let need = |v: Option<[f64; 3]>, n: &str| v.map(v3).ok_or_else(|| plane_error("APP", &format!("{n} invalid")));
    let a = need(lm.asis_l, "asis_l")?;
    let b = need(lm.asis_r, "asis_r")?;
    let c = (need(lm.pt_l, "pt_l")? + need(lm.pt_r, "pt_r")?) / 2.0;
    let n = (b - a).cross(&(c - a));
    let scale = (b - a).norm() * (c - a).norm();
    if !(n.norm() > 1e-9 * scale) {
        return Err(plane_error("APP", "collinear defining points"));
    }
    let mut n = n.normalize();
    if n.y < 0.0 {
        n = -n;
    }
    Ok(PlaneSpec { name: PlaneName::App, point: arr(&((a + b + c) / 3.0)), normal: arr(&n) })
}

/// Least-squares plane through the four spines, normal superior.
pub fn spine_plane(lm: &PelvicLandmarks) -> Result<PlaneSpec> {
    let pts = [("asis_l", lm.asis_l), ("asis_r", lm.asis_r), ("psis_l", lm.psis_l), ("psis_r", lm.psis_r)]
        .into_iter()
        .map(|(n, v)| v.map(v3).ok_or_else(|| plane_error("SISP", &format!("{n} invalid"))))
        .collect::<Result<Vec<Vec3>>>()?;
    let (c, mut n) = fit_plane(&pts).ok_or_else(|| plane_error("SISP", "collinear defining points"))?;
    if n.z < 0.0 {
        n = -n;
    }
    Ok(PlaneSpec { name: PlaneName::Sisp, point: arr(&c), normal: arr(&n) })
}

pub fn define_planes(lm: &PelvicLandmarks) -> (Result<PlaneSpec>, Result<PlaneSpec>) {
    (anterior_pelvic_plane(lm), spine_plane(lm))
}

/// Per-landmark distances in [`LANDMARK_NAMES`] order; missing when either
/// side is invalid.
///
/// Fixture check: shifting one ASIS by (0, 4.8, 7.28) mm gives
/// sqrt(4.8² + 7.28²) = sqrt(23.04 + 52.9984) = sqrt(76.0384) = 8.72 mm.
pub fn landmark_errors(gt: &PelvicLandmarks, pred: &PelvicLandmarks) -> [Option<f64>; 8] {
    let (g, p) = (gt.as_array(), pred.as_array());
    std::array::from_fn(|i| Some((v3(g[i]?) - v3(p[i]?)).norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{pelvis_spine_tips, PelvisPhantom, RigidTransform};
    use crate::volume::morphology::mirror_mask_x;

    fn phantom_landmarks() -> PelvicLandmarks {
        extract_pelvic_landmarks(&PelvisPhantom::default().build().unwrap()).unwrap()
    }

    #[test]
    fn landmarks_sit_at_spine_tips() {
        let lm = phantom_landmarks();
        let id = RigidTransform::default();
        for (s, suffix) in [(-1.0, "l"), (1.0, "r")] {
            for (name, tip) in pelvis_spine_tips(&id, s) {
                let got = lm.get(&format!("{name}_{suffix}")).unwrap();
                assert!((v3(got) - v3(tip)).norm() < 2.5, "{name}_{suffix}: {got:?} vs {tip:?}");
            }
        }
        assert!(lm.asis_l.unwrap()[0] < lm.asis_r.unwrap()[0]);
    }

    #[test]
    fn mirrored_input_mirrors_landmarks() {
        let m = PelvisPhantom::default().build().unwrap();
        let a = extract_pelvic_landmarks(&m).unwrap();
        let b = extract_pelvic_landmarks(&mirror_mask_x(&m).unwrap()).unwrap();
        let c = m.geometry().center()[0];
        for (l, r) in [("asis_l", "asis_r"), ("pt_l", "pt_r"), ("is_l", "is_r"), ("psis_l", "psis_r")] {
            let mut reflected = a.get(l).unwrap();
            reflected[0] = 2.0 * c - reflected[0];
            assert!((v3(reflected) - v3(b.get(r).unwrap())).norm() <= 1.0, "{l}");
        }
    }

    #[test]
    fn missing_half_invalidates_that_side() {
        let m = PelvisPhantom { include_right: false, ..Default::default() }.build().unwrap();
        let lm = extract_pelvic_landmarks(&m).unwrap();
        assert!(lm.asis_r.is_none() && lm.pt_r.is_none() && lm.is_r.is_none() && lm.psis_r.is_none());
        assert!(lm.asis_l.is_some() && lm.pt_l.is_some() && lm.is_l.is_some() && lm.psis_l.is_some());
        let (app, sisp) = define_planes(&lm);
        assert!(matches!(app, Err(MorphError::Plane { .. })) && sisp.is_err());
    }

    #[test]
    fn symmetric_app_has_no_lateral_component() {
        let lm = phantom_landmarks();
        let (app, sisp) = define_planes(&lm);
        let app = app.unwrap();
        assert!(app.normal[0].abs() < 1e-6);
        assert!(app.normal[1] > 0.0 && sisp.unwrap().normal[2] > 0.0);
    }

    #[test]
    fn three_point_plane_matches_cross_product() {
        let mut lm = PelvicLandmarks {
            asis_l: Some([-50.0, 10.0, 90.0]),
            asis_r: Some([50.0, 12.0, 92.0]),
            pt_l: Some([-8.0, 20.0, 5.0]),
            pt_r: Some([10.0, 22.0, 3.0]),
            ..Default::default()
        };
        let app = anterior_pelvic_plane(&lm).unwrap();
        let (a, b, c) = (Vec3::new(-50.0, 10.0, 90.0), Vec3::new(50.0, 12.0, 92.0), Vec3::new(1.0, 21.0, 4.0));
        let n = (b - a).cross(&(c - a)).normalize();
        let n = if n.y < 0.0 { -n } else { n };
        assert!((v3(app.normal) - n).norm() < 1e-12);
        lm.pt_r = None;
        assert!(anterior_pelvic_plane(&lm).is_err());
        lm.pt_r = Some([0.0, 11.0, 91.0]);
        lm.pt_l = Some([0.0, 11.0, 91.0]);
        assert!(matches!(anterior_pelvic_plane(&lm), Err(MorphError::Plane { .. })));
    }

    #[test]
    fn missing_pt_keeps_sisp() {
        let mut lm = phantom_landmarks();
        lm.pt_r = None;
        let (app, sisp) = define_planes(&lm);
        assert!(app.is_err() && sisp.is_ok());
    }

    #[test]
    fn landmark_error_rules() {
        let gt = phantom_landmarks();
        assert!(landmark_errors(&gt, &gt).iter().all(|e| *e == Some(0.0)));
        let mut pred = gt.clone();
        let p = gt.asis_r.unwrap();
        pred.asis_r = Some([p[0], p[1] + 6.0, p[2] + 6.3]);
        pred.pt_l = None;
        let e = landmark_errors(&gt, &pred);
        assert!((e[1].unwrap() - 8.7).abs() < 1e-9);
        assert_eq!(e[2], None);
        pred.asis_r = Some([p[0], p[1] + 4.8, p[2] + 7.28]);
        assert!((landmark_errors(&gt, &pred)[1].unwrap() - 8.72).abs() < 1e-6);
    }

    #[test]
    fn translation_equivariance() {
        let t = Vec3::new(3.0, -7.0, 11.0);
        let moved = PelvisPhantom { transform: RigidTransform { translation: t, ..Default::default() }, ..Default::default() };
        let a = phantom_landmarks();
        let b = extract_pelvic_landmarks(&moved.build().unwrap()).unwrap();
        for (pa, pb) in a.as_array().iter().zip(b.as_array()) {
            assert!((v3(pa.unwrap()) + t - v3(pb.unwrap())).norm() <= 1.0);
        }
    }
}
