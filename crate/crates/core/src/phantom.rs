//! Synthetic bone phantoms with known clinical parameters.
//!
//! Phantoms are defined as implicit shapes in a local frame (x toward the
//! patient's right, y anterior, z superior), optionally moved by a rigid
//! transform, and voxelized on an axis-aligned lattice. A per-voxel uniform
//! jitter of the implicit boundary emulates surface noise.

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{arr, v3, Vec3};
use crate::morph::femur::FemurLocalization;
use crate::volume::{BinaryMask, Geometry, Result, VoxelGrid};

/// Rotation followed by translation, mapping local to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }
}

impl RigidTransform {
    /// Rotation about a world axis through the origin, then translation.
    pub fn from_axis_angle(axis: Vec3, degrees: f64, translation: Vec3) -> Self {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), degrees.to_radians());
        RigidTransform { rotation: *rot.matrix(), translation }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse_apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }
}

/// Voxelize `sdf` (negative inside) over the world box spanned by the
/// transformed local box `[lo, hi]`.
fn voxelize(
    lo: Vec3,
    hi: Vec3,
    spacing: f64,
    transform: &RigidTransform,
    noise: Option<(f64, u64)>,
    sdf: impl Fn(&Vec3) -> f64,
) -> Result<BinaryMask> {
    let mut wlo = Vec3::repeat(f64::INFINITY);
    let mut whi = Vec3::repeat(f64::NEG_INFINITY);
    for corner in 0..8 {
        let c = Vec3::new(
            if corner & 1 == 0 { lo.x } else { hi.x },
            if corner & 2 == 0 { lo.y } else { hi.y },
            if corner & 4 == 0 { lo.z } else { hi.z },
        );
        let w = transform.apply(&c);
        wlo = wlo.inf(&w);
        whi = whi.sup(&w);
    }
    // Lattice centred on the box, so symmetric boxes give symmetric lattices.
    let dims: [usize; 3] = std::array::from_fn(|a| ((whi[a] - wlo[a]) / spacing).ceil() as usize + 1);
    // Centres are then snapped to odd multiples of half the spacing.
    let origin: Vec3 = Vec3::from_fn(|a, _| {
        let o = (wlo[a] + whi[a]) / 2.0 - (dims[a] - 1) as f64 * spacing / 2.0;
        ((o / spacing - 0.5).round() + 0.5) * spacing
    });
    let geom = Geometry::with_placement(dims, [spacing; 3], arr(&origin), crate::volume::IDENTITY)?;
    let mut rng = noise.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let amp = noise.map_or(0.0, |(a, _)| a);
    let mut data = Vec::with_capacity(geom.len());
    for i in 0..geom.len() {
        let p = transform.inverse_apply(&v3(geom.voxel_center(i)));
        let jitter = match rng.as_mut() {
            Some(r) => r.random_range(-amp..=amp),
            None => 0.0,
        };
        data.push((sdf(&p) <= jitter) as u8);
    }
    BinaryMask::new(geom, data)
}

fn sd_capsule(p: &Vec3, a: &Vec3, b: &Vec3, r: f64) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + t * ab)).norm() - r
}

fn sd_box(p: &Vec3, lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let mut outside = 0.0f64;
    let mut inside = f64::NEG_INFINITY;
    for a in 0..3 {
        let d = (lo[a] - p[a]).max(p[a] - hi[a]);
        inside = inside.max(d);
        outside += d.max(0.0).powi(2);
    }
    if inside > 0.0 {
        outside.sqrt()
    } else {
        inside
    }
}

/// Proximal femur: cylindrical shaft along local z, a cylindrical neck
/// leaving the shaft at the neck-shaft angle, and a spherical head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FemurPhantom {
    pub head_radius: f64,
    pub neck_shaft_angle_deg: f64,
    pub neck_radius: f64,
    pub neck_length: f64,
    pub shaft_radius: f64,
    /// Height of the neck-shaft junction on the shaft axis.
    pub junction_height: f64,
    pub spacing: f64,
    /// Mirror the neck toward -x (the other side's femur).
    pub mirrored: bool,
    /// Include only the head sphere.
    pub head_only: bool,
    pub noise: Option<(f64, u64)>,
    pub transform: RigidTransform,
}

impl Default for FemurPhantom {
    fn default() -> Self {
        FemurPhantom {
            head_radius: 24.0,
            neck_shaft_angle_deg: 130.0,
            neck_radius: 14.0,
            neck_length: 60.0,
            shaft_radius: 14.0,
            junction_height: 70.0,
            spacing: 1.0,
            mirrored: false,
            head_only: false,
            noise: None,
            transform: RigidTransform::default(),
        }
    }
}

/// Constructed parameters of a phantom, in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FemurTruth {
    pub fhr: f64,
    pub fhc: [f64; 3],
    pub fna: [f64; 3],
    pub fda: [f64; 3],
    pub nsa: f64,
}

impl FemurPhantom {
    fn local_frame(&self) -> (Vec3, Vec3, Vec3) {
        let medial = if self.mirrored { -1.0 } else { 1.0 };
        let between = (180.0 - self.neck_shaft_angle_deg).to_radians();
        let neck_dir = Vec3::new(medial * between.sin(), 0.0, between.cos());
        let junction = Vec3::new(0.0, 0.0, self.junction_height);
        let head = junction + self.neck_length * neck_dir;
        (junction, head, neck_dir)
    }

    pub fn truth(&self) -> FemurTruth {
        let (_, head, neck_dir) = self.local_frame();
        FemurTruth {
            fhr: self.head_radius,
            fhc: arr(&self.transform.apply(&head)),
            fna: arr(&self.transform.apply_vector(&neck_dir)),
            fda: arr(&self.transform.apply_vector(&Vec3::z())),
            nsa: self.neck_shaft_angle_deg,
        }
    }

    /// Subtrochanteric segment well below the neck, distal point first.
    pub fn localization(&self, sample_id: &str) -> FemurLocalization {
        let a = Vec3::new(0.0, 0.0, 8.0);
        let b = Vec3::new(0.0, 0.0, self.junction_height - 24.0);
        FemurLocalization {
            sample_id: sample_id.to_string(),
            axis_point_a_mm: arr(&self.transform.apply(&a)),
            axis_point_b_mm: arr(&self.transform.apply(&b)),
            head_center_mm: None,
            head_radius_mm: None,
            neck_point_mm: None,
        }
    }

    pub fn build(&self) -> Result<BinaryMask> {
        let (junction, head, _) = self.local_frame();
        let shaft_top = self.junction_height + 10.0;
        let r = self.head_radius;
        let reach = head.x.abs() + r;
        let (xlo, xhi) = if self.mirrored {
            (-reach - 2.0, self.shaft_radius + 2.0)
        } else {
            (-self.shaft_radius - 2.0, reach + 2.0)
        };
        let ymax = r.max(self.shaft_radius) + 2.0;
        let lo = Vec3::new(xlo, -ymax, if self.head_only { head.z - r - 2.0 } else { -2.0 });
        let hi = Vec3::new(xhi, ymax, head.z + r + 2.0);
        let s = *self;
        voxelize(lo, hi, self.spacing, &self.transform, self.noise, move |p| {
            let d_head = (p - head).norm() - r;
            if s.head_only {
                return d_head;
            }
            let radial = (p.x * p.x + p.y * p.y).sqrt() - s.shaft_radius;
            let d_shaft = radial.max(-p.z).max(p.z - shaft_top);
            let d_neck = sd_capsule(p, &junction, &head, s.neck_radius);
            d_head.min(d_shaft).min(d_neck)
        })
    }
}

/// A crude symmetric pelvis: per side an iliac plate with rounded anterior
/// (ASIS) and posterior (PSIS) spines, an acetabular block, a pubic ramus
/// ending in a tubercle spine, and a medial ischial spine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PelvisPhantom {
    pub spacing: f64,
    pub include_left: bool,
    pub include_right: bool,
    pub transform: RigidTransform,
}

impl Default for PelvisPhantom {
    fn default() -> Self {
        PelvisPhantom { spacing: 1.0, include_left: true, include_right: true, transform: RigidTransform::default() }
    }
}

enum Part {
    Box([f64; 3], [f64; 3]),
    Spine(Vec3, Vec3, f64),
}

impl Part {
    fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            Part::Box(lo, hi) => sd_box(p, *lo, *hi),
            Part::Spine(a, b, r) => sd_capsule(p, a, b, *r),
        }
    }
}

const PT_DIR: [f64; 3] = [0.0, std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];

/// Spine capsules of one side as (name, base, end, radius); `s` is -1 for
/// the left side and +1 for the right.
fn pelvis_spines(s: f64) -> [(&'static str, Vec3, Vec3, f64); 4] {
    let pt_base = Vec3::new(s * 8.5, 16.0, 14.0);
    [
        ("asis", Vec3::new(s * 35.0, 26.0, 94.0), Vec3::new(s * 35.0, 36.0, 94.0), 4.0),
        ("psis", Vec3::new(s * 35.0, -26.0, 92.0), Vec3::new(s * 35.0, -36.0, 92.0), 4.0),
        ("pt", pt_base, pt_base + 8.0 * v3(PT_DIR), 3.5),
        ("is", Vec3::new(s * 26.0, -11.5, 25.0), Vec3::new(s * 20.0, -11.5, 25.0), 3.5),
    ]
}

fn pelvis_side(s: f64) -> Vec<Part> {
    let xb = |a: f64, b: f64| if s > 0.0 { (a, b) } else { (-b, -a) };
    let bx = |x: (f64, f64), y: (f64, f64), z: (f64, f64)| Part::Box([x.0, y.0, z.0], [x.1, y.1, z.1]);
    let mut parts = vec![
        bx(xb(30.0, 40.0), (-30.0, 30.0), (40.0, 100.0)),
        bx(xb(25.0, 45.0), (-20.0, 10.0), (10.0, 40.0)),
        bx(xb(3.0, 25.0), (10.0, 20.0), (10.0, 20.0)),
    ];
    parts.extend(pelvis_spines(s).into_iter().map(|(_, a, b, r)| Part::Spine(a, b, r)));
    parts
}

/// Apex of each constructed spine in world coordinates; `s` is -1 for the
/// left side and +1 for the right.
pub fn pelvis_spine_tips(transform: &RigidTransform, s: f64) -> [(&'static str, [f64; 3]); 4] {
    pelvis_spines(s).map(|(name, a, b, r)| (name, arr(&transform.apply(&(b + r * (b - a).normalize())))))
}

impl PelvisPhantom {
    pub fn build(&self) -> Result<BinaryMask> {
        let mut parts = Vec::new();
        if self.include_left {
            parts.extend(pelvis_side(-1.0));
        }
        if self.include_right {
            parts.extend(pelvis_side(1.0));
        }
        let lo = Vec3::new(-48.5, -42.0, 1.0);
        let hi = Vec3::new(48.5, 42.0, 102.0);
        voxelize(lo, hi, self.spacing, &self.transform, None, move |p| {
            parts.iter().map(|part| part.sdf(p)).fold(f64::INFINITY, f64::min)
        })
    }
}

/// Single vertebra: elliptic-cylinder body, a posterior arch around a round
/// canal, pedicles joining arch and body, and a spinous process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertebraPhantom {
    pub body_half_width: f64,
    pub body_half_depth: f64,
    pub body_height: f64,
    /// Anterior-posterior diameter of the canal.
    pub canal_diameter: f64,
    pub arch_thickness: f64,
    pub spinous_length: f64,
    pub spacing: f64,
    /// Replace the whole vertebra by a solid ellipsoid (no canal).
    pub solid: bool,
    pub transform: RigidTransform,
}

impl Default for VertebraPhantom {
    fn default() -> Self {
        VertebraPhantom {
            body_half_width: 20.0,
            body_half_depth: 15.0,
            body_height: 22.0,
            canal_diameter: 14.0,
            arch_thickness: 5.0,
            spinous_length: 20.0,
            spacing: 1.0,
            solid: false,
            transform: RigidTransform::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertebraTruth {
    pub vcl: f64,
    pub body_height: f64,
    pub body_width: f64,
    pub body_depth: f64,
}

impl VertebraPhantom {
    pub fn truth(&self) -> VertebraTruth {
        VertebraTruth {
            vcl: self.canal_diameter,
            body_height: self.body_height,
            body_width: 2.0 * self.body_half_width,
            body_depth: 2.0 * self.body_half_depth,
        }
    }

    /// Membership of the body alone, in local coordinates.
    pub fn in_body(&self, p: &Vec3) -> bool {
        let e = (p.x / self.body_half_width).powi(2) + (p.y / self.body_half_depth).powi(2);
        e < 1.0 && p.z >= 0.0 && p.z < self.body_height
    }

    /// Voxelized body alone on the lattice of `like`.
    pub fn body_mask(&self, like: &Geometry) -> Result<BinaryMask> {
        BinaryMask::new(
            like.clone(),
            (0..like.len())
                .map(|i| self.in_body(&self.transform.inverse_apply(&v3(like.voxel_center(i)))) as u8)
                .collect(),
        )
    }

    pub fn build(&self) -> Result<BinaryMask> {
        let v = *self;
        let rc = v.canal_diameter / 2.0;
        let canal_y = -v.body_half_depth - rc;
        let outer = rc + v.arch_thickness;
        let tail = canal_y - outer - v.spinous_length;
        let lo = Vec3::new(-v.body_half_width - 3.0, tail - 3.0, -3.0);
        let hi = Vec3::new(v.body_half_width + 3.0, v.body_half_depth + 3.0, v.body_height + 3.0);
        let arch_z = (v.body_height * 0.25, v.body_height * 0.75);
        voxelize(lo, hi, v.spacing, &v.transform, None, move |p| {
            if v.solid {
                let e = (p.x / v.body_half_width).powi(2)
                    + ((p.y - tail / 2.0) / (v.body_half_depth - tail / 2.0)).powi(2)
                    + ((p.z - v.body_height / 2.0) / (v.body_height / 2.0)).powi(2);
                return e - 1.0;
            }
            if v.in_body(p) {
                return -1.0;
            }
            let in_arch_z = p.z >= arch_z.0 && p.z <= arch_z.1;
            if !in_arch_z {
                return 1.0;
            }
            let r = (p.x * p.x + (p.y - canal_y).powi(2)).sqrt();
            let ring = r >= rc && r <= outer && p.y <= canal_y;
            let pedicle = p.x.abs() >= rc && p.x.abs() <= outer && p.y >= canal_y && p.y <= -v.body_half_depth + 3.0;
            let spinous = p.x.abs() <= 2.5 && p.y <= canal_y - outer + 1.0 && p.y >= tail
                && p.z >= v.body_height * 0.3 && p.z <= v.body_height * 0.7;
            if ring || pedicle || spinous {
                -1.0
            } else {
                1.0
            }
        })
    }
}

/// CT-like volume from a mask: bone at `bone_hu`, elsewhere air.
pub fn mask_to_ct(mask: &BinaryMask, bone_hu: f32) -> VoxelGrid<f32> {
    mask.grid().map(|&v| if v != 0 { bone_hu } else { -1000.0 })
}
