//! Overlap and surface-distance metrics between a ground-truth and a
//! predicted mask: Dice, HD95, ASD and NSD at a tolerance.
//!
//! Surfaces are the boundary voxels of each mask (foreground with a
//! background face-neighbour; the lattice edge counts as background).
//! Distances between surfaces are measured between voxel centres in mm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edt::{self, NO_FEATURE};
use crate::volume::morphology::boundary;
use crate::volume::BinaryMask;

/// Default tolerance for NSD, in mm.
pub const DEFAULT_TAU_MM: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("mask lattices differ: {0}")]
    Shape(String),
    #[error("surface distances undefined: {0}")]
    Degenerate(&'static str),
    #[error("tolerance must be > 0, got {0}")]
    Tolerance(f64),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateFlag {
    #[default]
    None,
    EmptyGt,
    EmptyPred,
    BothEmpty,
}

impl DegenerateFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            DegenerateFlag::None => "none",
            DegenerateFlag::EmptyGt => "empty_gt",
            DegenerateFlag::EmptyPred => "empty_pred",
            DegenerateFlag::BothEmpty => "both_empty",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub dsc: f64,
    pub hd95: f64,
    pub asd: f64,
    pub nsd: f64,
    pub tau: f64,
    pub degenerate_flag: DegenerateFlag,
}

/// World-space boundary voxel centres of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<[f64; 3]>,
    pub spacing: [f64; 3],
}

impl SurfacePointSet {
    pub fn of(mask: &BinaryMask) -> Self {
        let g = mask.geometry();
        SurfacePointSet {
            points: boundary(mask).into_iter().map(|i| g.voxel_center(i)).collect(),
            spacing: g.spacing,
        }
    }
}

/// Directed surface distances in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDistances {
    pub gt_to_pred: Vec<f64>,
    pub pred_to_gt: Vec<f64>,
}

fn check_lattice(gt: &BinaryMask, pred: &BinaryMask) -> Result<()> {
    if !gt.geometry().same_lattice(pred.geometry()) {
        return Err(MetricError::Shape(format!(
            "{:?}@{:?} vs {:?}@{:?}",
            gt.dims(),
            gt.spacing(),
            pred.dims(),
            pred.spacing()
        )));
    }
    Ok(())
}

/// Dice coefficient and the degenerate flag (both empty gives 1.0).
pub fn dice(gt: &BinaryMask, pred: &BinaryMask) -> Result<(f64, DegenerateFlag)> {
    check_lattice(gt, pred)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in gt.data().iter().zip(pred.data()) {
        a += x as usize;
        b += y as usize;
        both += (x & y) as usize;
    }
    let flag = match (a == 0, b == 0) {
        (true, true) => DegenerateFlag::BothEmpty,
        (true, false) => DegenerateFlag::EmptyGt,
        (false, true) => DegenerateFlag::EmptyPred,
        _ => DegenerateFlag::None,
    };
    if a + b == 0 {
        return Ok((1.0, flag));
    }
    Ok((2.0 * both as f64 / (a + b) as f64, flag))
}

/// For every boundary voxel of `from`, the distance to the nearest boundary
/// voxel of `to`, in the scan order of `from`'s boundary.
fn directed(from: &BinaryMask, from_b: &[usize], to_b: &[usize]) -> Vec<f64> {
    let g = from.geometry();
    let mut is_target = vec![false; g.len()];
    for &i in to_b {
        is_target[i] = true;
    }
    let ft = edt::feature_transform(g.dims, g.spacing, |i| is_target[i]);
    from_b
        .iter()
        .map(|&i| {
            let f = ft[i];
            debug_assert_ne!(f, NO_FEATURE);
            edt::lattice_distance(g.coords(i), g.coords(f), g.spacing)
        })
        .collect()
}

pub fn surface_distances(gt: &BinaryMask, pred: &BinaryMask) -> Result<SurfaceDistances> {
    check_lattice(gt, pred)?;
    let gb = boundary(gt);
    let pb = boundary(pred);
    if gb.is_empty() {
        return Err(MetricError::Degenerate("ground truth is empty"));
    }
    if pb.is_empty() {
        return Err(MetricError::Degenerate("prediction is empty"));
    }
    Ok(SurfaceDistances { gt_to_pred: directed(gt, &gb, &pb), pred_to_gt: directed(pred, &pb, &gb) })
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(MetricError::Degenerate("no distances"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let frac = pos - lo as f64;
    Ok(v[lo] + (v[hi] - v[lo]) * frac)
}

fn require_both(d: &SurfaceDistances) -> Result<()> {
    if d.gt_to_pred.is_empty() || d.pred_to_gt.is_empty() {
        return Err(MetricError::Degenerate("no distances"));
    }
    Ok(())
}

/// Maximum of the two directed 95th percentiles.
pub fn hd95(d: &SurfaceDistances) -> Result<f64> {
    require_both(d)?;
    Ok(percentile(&d.gt_to_pred, 95.0)?.max(percentile(&d.pred_to_gt, 95.0)?))
}

/// Mean over both directed distance lists pooled together.
pub fn asd(d: &SurfaceDistances) -> Result<f64> {
    require_both(d)?;
    let n = d.gt_to_pred.len() + d.pred_to_gt.len();
    let sum: f64 = d.gt_to_pred.iter().chain(&d.pred_to_gt).sum();
    Ok(sum / n as f64)
}

/// Fraction of boundary points (both surfaces) within `tau` mm of the other
/// surface. A distance of exactly `tau` counts as within tolerance.
pub fn nsd(d: &SurfaceDistances, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(MetricError::Tolerance(tau));
    }
    require_both(d)?;
    let n = d.gt_to_pred.len() + d.pred_to_gt.len();
    let within = d.gt_to_pred.iter().chain(&d.pred_to_gt).filter(|&&x| x <= tau).count();
    Ok(within as f64 / n as f64)
}

/// All four metrics. Empty masks yield flagged records: the surface metrics
/// of a one-sided empty pair take the volume diagonal (mm) as sentinel.
pub fn evaluate_pair(gt: &BinaryMask, pred: &BinaryMask, tau: f64) -> Result<MetricRecord> {
    if !(tau > 0.0) {
        return Err(MetricError::Tolerance(tau));
    }
    let (dsc, flag) = dice(gt, pred)?;
    match flag {
        DegenerateFlag::None => {
            let d = surface_distances(gt, pred)?;
            Ok(MetricRecord {
                dsc,
                hd95: hd95(&d)?,
                asd: asd(&d)?,
                nsd: nsd(&d, tau)?,
                tau,
                degenerate_flag: flag,
            })
        }
        DegenerateFlag::BothEmpty => {
            Ok(MetricRecord { dsc, hd95: 0.0, asd: 0.0, nsd: 1.0, tau, degenerate_flag: flag })
        }
        DegenerateFlag::EmptyGt | DegenerateFlag::EmptyPred => {
            let diag = gt.geometry().diagonal_mm();
            Ok(MetricRecord { dsc: 0.0, hd95: diag, asd: diag, nsd: 0.0, tau, degenerate_flag: flag })
        }
    }
}
