//! Clinical parameter extraction from bone masks.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{v3, Vec3};
use crate::volume::{offset, BinaryMask, VolumeError, FACE_OFFSETS};

pub mod femur;
pub mod pelvis;
pub mod vertebra;

#[derive(Debug, Error)]
pub enum MorphError {
    #[error("invalid parameter(s) {params:?}: {reason}")]
    InvalidParameter { params: Vec<&'static str>, reason: String },
    #[error("plane {plane}: {reason}")]
    Plane { plane: &'static str, reason: String },
    #[error("partition failed: {0}")]
    Partition(String),
    #[error("localization: {0}")]
    Localization(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

impl MorphError {
    pub(crate) fn invalid(params: &[&'static str], reason: impl Into<String>) -> Self {
        MorphError::InvalidParameter { params: params.to_vec(), reason: reason.into() }
    }
}

pub type Result<T, E = MorphError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamStatus {
    Valid,
    /// Computed but outside its plausibility window.
    Implausible,
    /// Taken from a localization transferred from the reference mask.
    Transferred,
    Invalid,
}

impl ParamStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamStatus::Valid => "valid",
            ParamStatus::Implausible => "implausible",
            ParamStatus::Transferred => "transferred",
            ParamStatus::Invalid => "invalid",
        }
    }

    /// Whether a value exists (possibly flagged).
    pub fn has_value(self) -> bool {
        self != ParamStatus::Invalid
    }
}

/// Per-parameter status, ordered by parameter name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags(pub BTreeMap<String, ParamStatus>);

impl Flags {
    pub fn set(&mut self, param: &str, status: ParamStatus) {
        self.0.insert(param.to_string(), status);
    }

    pub fn get(&self, param: &str) -> ParamStatus {
        self.0.get(param).copied().unwrap_or(ParamStatus::Invalid)
    }

    pub fn all_invalid(&self) -> bool {
        self.0.values().all(|s| *s == ParamStatus::Invalid)
    }
}

/// Non-valid entries as `param:status` joined by `|`; empty when all valid.
impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .filter(|(_, s)| **s != ParamStatus::Valid)
            .map(|(k, s)| format!("{k}:{}", s.as_str()))
            .collect();
        f.write_str(&parts.join("|"))
    }
}

/// Centres of the exposed voxel faces of `mask` in world coordinates. The
/// lattice edge counts as background.
pub fn surface_face_points(mask: &BinaryMask) -> Vec<Vec3> {
    let g = mask.geometry();
    let mut out = Vec::new();
    for i in mask.foreground_indices() {
        let c = g.coords(i);
        for o in FACE_OFFSETS {
            let exposed = match offset(g.dims, c, o) {
                None => true,
                Some([x, y, z]) => !mask.is_set(g.index(x, y, z)),
            };
            if exposed {
                let f = [0, 1, 2].map(|a| c[a] as f64 + 0.5 * o[a] as f64);
                out.push(v3(g.index_to_world(f)));
            }
        }
    }
    out
}

/// World centres of the foreground voxels.
pub fn voxel_centers(mask: &BinaryMask) -> Vec<Vec3> {
    let g = mask.geometry();
    mask.foreground_indices().map(|i| v3(g.voxel_center(i))).collect()
}

/// Absolute difference when both values exist.
pub fn abs_error(gt: Option<f64>, pred: Option<f64>) -> Option<f64> {
    Some((gt? - pred?).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    #[test]
    fn single_voxel_has_six_faces() {
        let g = Geometry::new([3, 3, 3], [1.0, 2.0, 3.0]).unwrap();
        let m = BinaryMask::from_fn(g, |c| c == [1, 1, 1]).unwrap();
        let pts = surface_face_points(&m);
        assert_eq!(pts.len(), 6);
        let c = Vec3::new(1.0, 2.0, 3.0);
        let mut d: Vec<f64> = pts.iter().map(|p| (p - c).norm()).collect();
        d.sort_by(f64::total_cmp);
        assert_eq!(d, vec![0.5, 0.5, 1.0, 1.0, 1.5, 1.5]);
    }

    #[test]
    fn flags_render_only_non_valid() {
        let mut f = Flags::default();
        f.set("nsa", ParamStatus::Implausible);
        f.set("fhr", ParamStatus::Valid);
        f.set("fna", ParamStatus::Transferred);
        assert_eq!(f.to_string(), "fna:transferred|nsa:implausible");
        assert!(!f.all_invalid());
        assert_eq!(f.get("missing"), ParamStatus::Invalid);
    }
}
