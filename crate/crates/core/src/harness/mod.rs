//! Evaluation runs over a manifest and a prediction directory, with
//! disaggregation, domain-shift deltas, ranking stability and reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Anatomy, SampleRecord, Split};
use crate::metrics::{evaluate_pair, MetricError, MetricRecord};
use crate::morph::femur::{femur_errors, femur_morphometry, FemurLocalization};
use crate::morph::pelvis::{define_planes, extract_pelvic_landmarks, landmark_errors, PlaneSpec, LANDMARK_NAMES};
use crate::morph::vertebra::{morphometry_errors, vertebra_morphometry, VERTEBRA_PARAMS};
use crate::morph::{abs_error, MorphError};
use crate::volume::{nifti, BinaryMask, VolumeError};

pub mod ranking;
pub mod report;
pub mod shift;

pub use ranking::{ranking_stability, Resampling, RankingStabilityResult, TaskScores};
pub use shift::{domain_shift_delta, DomainShiftReport};

/// Group label for samples lacking a groupby key.
pub const UNKNOWN_GROUP: &str = "unknown";
pub const ALL_GROUP: &str = "all";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no test-split sample had a prediction in {0}")]
    EmptyRun(PathBuf),
    #[error("runs disagree: {0}")]
    Consistency(String),
    #[error("ranking: {0}")]
    Ranking(String),
    #[error("sample {sample_id}: {source}")]
    Metric { sample_id: String, source: MetricError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// One evaluated test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: String,
    pub anatomy: Anatomy,
    pub source_subset: String,
    pub metrics: MetricRecord,
    /// Absolute morphometry errors by parameter; `None` when either side is
    /// invalid.
    pub morph_errors: BTreeMap<String, Option<f64>>,
    pub subgroup: BTreeMap<String, String>,
    pub prediction_missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub run_id: String,
    pub manifest: String,
    pub model_name: String,
    pub tau: f64,
    /// Sorted by sample id, one per test-split sample.
    pub rows: Vec<SampleRow>,
}

impl EvaluationRun {
    pub fn missing(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| r.prediction_missing).map(|r| r.sample_id.as_str()).collect()
    }

    pub fn mean_dsc(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.metrics.dsc))
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub tau: f64,
    pub run_id: Option<String>,
    /// Also compare morphometry between ground truth and prediction.
    pub morphometry: bool,
    /// Femur localizations from the reference masks, by sample id.
    pub localizations: BTreeMap<String, FemurLocalization>,
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Morphometry error names per anatomy, in emission order.
pub fn morph_error_names(anatomy: Anatomy) -> Vec<String> {
    match anatomy {
        Anatomy::Femur => ["fhr_mm", "nsa_deg", "fhc_mm", "fna_deg", "fda_deg"].map(String::from).to_vec(),
        Anatomy::Hip => LANDMARK_NAMES
            .iter()
            .map(|n| format!("{n}_mm"))
            .chain(["app_tilt_deg".into(), "sisp_tilt_deg".into()])
            .collect(),
        Anatomy::Vertebra => VERTEBRA_PARAMS.iter().map(|n| format!("{n}_mm")).collect(),
        Anatomy::Rib => Vec::new(),
    }
}

/// Errors between morphometry of `gt` and `pred`.
pub fn morphometry_comparison(
    anatomy: Anatomy,
    gt: &BinaryMask,
    pred: &BinaryMask,
    loc: Option<&FemurLocalization>,
) -> std::result::Result<BTreeMap<String, Option<f64>>, MorphError> {
    let names = morph_error_names(anatomy);
    let values: Vec<Option<f64>> = match anatomy {
        Anatomy::Femur => {
            let e = femur_errors(&femur_morphometry(gt, loc)?, &femur_morphometry(pred, loc)?);
            vec![e.fhr_mm, e.nsa_deg, e.fhc_mm, e.fna_deg, e.fda_deg]
        }
        Anatomy::Hip => {
            let g = extract_pelvic_landmarks(gt)?;
            let p = extract_pelvic_landmarks(pred).unwrap_or_default();
            let (ga, gs) = define_planes(&g);
            let (pa, ps) = define_planes(&p);
            let tilt = |a: &Result<PlaneSpec, MorphError>, b: &Result<PlaneSpec, MorphError>| match (a, b) {
                (Ok(a), Ok(b)) => abs_error(Some(a.tilt_deg()), Some(b.tilt_deg())),
                _ => None,
            };
            landmark_errors(&g, &p).into_iter().chain([tilt(&ga, &pa), tilt(&gs, &ps)]).collect()
        }
        Anatomy::Vertebra => morphometry_errors(&vertebra_morphometry(gt)?, &vertebra_morphometry(pred)?).to_vec(),
        Anatomy::Rib => Vec::new(),
    };
    Ok(names.into_iter().zip(values).collect())
}

/// Evaluate one test sample given its masks.
pub fn evaluate_sample(
    record: &SampleRecord,
    gt: &BinaryMask,
    pred: Option<&BinaryMask>,
    opts: &EvalOptions,
) -> Result<SampleRow> {
    let empty;
    let pred_mask = match pred {
        Some(p) => p,
        None => {
            empty = BinaryMask::empty(gt.geometry().clone())?;
            &empty
        }
    };
    let metrics = evaluate_pair(gt, pred_mask, opts.tau)
        .map_err(|source| HarnessError::Metric { sample_id: record.sample_id.clone(), source })?;
    let morph_errors = if opts.morphometry && !gt.is_empty() {
        morphometry_comparison(record.anatomy, gt, pred_mask, opts.localizations.get(&record.sample_id))
            .unwrap_or_else(|_| morph_error_names(record.anatomy).into_iter().map(|n| (n, None)).collect())
    } else {
        BTreeMap::new()
    };
    Ok(SampleRow {
        sample_id: record.sample_id.clone(),
        anatomy: record.anatomy,
        source_subset: record.source_subset.clone(),
        metrics,
        morph_errors,
        subgroup: record.subgroup.clone(),
        prediction_missing: pred.is_none(),
    })
}

/// Score every test-split sample of `manifest` against
/// `<pred_dir>/<sample_id>.nii.gz`. Mask paths resolve against
/// `manifest_dir`. Missing predictions score as empty masks.
pub fn evaluate_run(
    manifest: &[SampleRecord],
    manifest_dir: &Path,
    manifest_name: &str,
    pred_dir: &Path,
    model_name: &str,
    opts: &EvalOptions,
) -> Result<EvaluationRun> {
    let mut test: Vec<&SampleRecord> = manifest.iter().filter(|r| r.split == Split::Test).collect();
    test.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let rows: Vec<SampleRow> = test
        .par_iter()
        .map(|rec| {
            let gt = nifti::read_mask(manifest_dir.join(&rec.mask_path))?;
            let pred_path = pred_dir.join(format!("{}.nii.gz", rec.sample_id));
            let pred = if pred_path.is_file() { Some(nifti::read_mask(&pred_path)?) } else { None };
            evaluate_sample(rec, &gt, pred.as_ref(), opts)
        })
        .collect::<Result<_>>()?;
    if rows.iter().all(|r| r.prediction_missing) {
        return Err(HarnessError::EmptyRun(pred_dir.to_path_buf()));
    }
    Ok(EvaluationRun {
        run_id: opts.run_id.clone().unwrap_or_else(|| format!("{model_name}@{manifest_name}")),
        manifest: manifest_name.to_string(),
        model_name: model_name.to_string(),
        tau: opts.tau,
        rows,
    })
}

/// Report name of each metric for a tolerance.
pub fn metric_names(tau: f64) -> [String; 4] {
    ["dsc".into(), "hd95_mm".into(), "asd_mm".into(), format!("nsd@{tau}mm")]
}

pub(crate) fn metric_values(m: &MetricRecord) -> [f64; 4] {
    [m.dsc, m.hd95, m.asd, m.nsd]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub key: String,
    pub group: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; zero for a single sample.
    pub std: f64,
    pub count: usize,
}

fn stats(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let m = mean(values.iter().copied());
    let std = if n > 1 {
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (m, std)
}

/// Per-group statistics of each metric for every key in `groupby`, followed
/// by the `all` rows. Missing or empty subgroup values fall under
/// `unknown`.
pub fn aggregate(run: &EvaluationRun, groupby: &[&str]) -> Vec<GroupStats> {
    let names = metric_names(run.tau);
    let mut out = Vec::new();
    let mut emit = |key: &str, group: &str, rows: &[&SampleRow]| {
        for (k, name) in names.iter().enumerate() {
            let vals: Vec<f64> = rows.iter().map(|r| metric_values(&r.metrics)[k]).collect();
            let (mean, std) = stats(&vals);
            out.push(GroupStats {
                key: key.to_string(),
                group: group.to_string(),
                metric: name.clone(),
                mean,
                std,
                count: vals.len(),
            });
        }
    };
    for key in groupby {
        let mut groups: BTreeMap<&str, Vec<&SampleRow>> = BTreeMap::new();
        for r in &run.rows {
            let g = r.subgroup.get(*key).map(String::as_str).filter(|v| !v.is_empty()).unwrap_or(UNKNOWN_GROUP);
            groups.entry(g).or_default().push(r);
        }
        for (g, rows) in &groups {
            emit(key, g, rows);
        }
    }
    let all: Vec<&SampleRow> = run.rows.iter().collect();
    emit(ALL_GROUP, ALL_GROUP, &all);
    out
}
