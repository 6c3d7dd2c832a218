//! Subcommand arguments, resolved configs and their execution.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use xr23d::drr::{self, DrrSettings, IntensityMode, DEFAULT_HU_WINDOW, DEFAULT_MISALIGNMENT_ANGLES};
use xr23d::geometry::Vec3;
use xr23d::harness::report::{self, write_file};
use xr23d::harness::{
    evaluate_run, ranking_stability, shift::domain_shift_delta, EvalOptions, EvaluationRun, HarnessError, Resampling,
    TaskScores,
};
use xr23d::ingest::{self, Anatomy, AnatomyConfig, IngestConfig, SampleRecord, Split};
use xr23d::metrics::DEFAULT_TAU_MM;
use xr23d::morph::femur::{femur_morphometry, parse_localization_sidecar, FemurLocalization, FemurMorphometry, FEMUR_PARAMS};
use xr23d::morph::pelvis::{extract_pelvic_landmarks, PelvicLandmarks};
use xr23d::morph::vertebra::{vertebra_morphometry, VertebraMorphometry};
use xr23d::morph::{Flags, ParamStatus};
use xr23d::phantom::{mask_to_ct, pelvis_spine_tips, FemurPhantom, PelvisPhantom, RigidTransform, VertebraPhantom};
use xr23d::volume::{nifti, BinaryMask};

use crate::error::{io_err, CliError};

type Result<T> = std::result::Result<T, CliError>;

fn parse_anatomy(s: &str) -> std::result::Result<Anatomy, String> {
    s.parse().map_err(|e: ingest::IngestError| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other:?} (train|val|test)")),
    }
}

fn parse_mode(s: &str) -> std::result::Result<IntensityMode, String> {
    s.parse()
}

/// What a command leaves behind, for the caller to print.
pub struct Outcome {
    pub summary: String,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn load_manifest(path: &Path) -> Result<(Vec<SampleRecord>, PathBuf)> {
    let records = ingest::parse_manifest(&read_to_string(path)?)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((records, dir))
}

fn file_stem(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for ext in [".nii.gz", ".nii", ".jsonl", ".json"] {
        if let Some(s) = name.strip_suffix(ext) {
            return s.to_string();
        }
    }
    name
}

fn load_localizations(path: Option<&PathBuf>) -> Result<BTreeMap<String, FemurLocalization>> {
    match path {
        Some(p) => Ok(parse_localization_sidecar(&read_to_string(p)?)?),
        None => Ok(BTreeMap::new()),
    }
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Dataset root laid out as <root>/<anatomy>/<subset>/<case>/
    #[arg(long, env = "XR23D_ROOT")]
    pub root: Option<PathBuf>,
    /// Restrict to these anatomies (comma separated)
    #[arg(long, value_delimiter = ',', value_parser = parse_anatomy, env = "XR23D_ANATOMY")]
    pub anatomy: Option<Vec<Anatomy>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub root: PathBuf,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anatomy: Vec<Anatomy>,
    #[serde(default)]
    pub femur: Option<AnatomyConfig>,
    #[serde(default)]
    pub hip: Option<AnatomyConfig>,
    #[serde(default)]
    pub rib: Option<AnatomyConfig>,
    #[serde(default)]
    pub vertebra: Option<AnatomyConfig>,
}

impl IngestSection {
    /// Fill standard settings: every anatomy when none is configured, or
    /// each listed anatomy lacking its own section.
    pub fn finalize(mut self) -> Self {
        let none_configured = [&self.femur, &self.hip, &self.rib, &self.vertebra].iter().all(|s| s.is_none());
        let wanted: Vec<Anatomy> = if !self.anatomy.is_empty() {
            self.anatomy.clone()
        } else if none_configured {
            Anatomy::ALL.to_vec()
        } else {
            Vec::new()
        };
        if !self.anatomy.is_empty() {
            for a in Anatomy::ALL {
                if !wanted.contains(&a) {
                    *self.slot(a) = None;
                }
            }
        }
        for a in wanted {
            let slot = self.slot(a);
            if slot.is_none() {
                *slot = Some(AnatomyConfig::standard(a));
            }
        }
        self.anatomy.clear();
        self
    }

    fn slot(&mut self, a: Anatomy) -> &mut Option<AnatomyConfig> {
        match a {
            Anatomy::Femur => &mut self.femur,
            Anatomy::Hip => &mut self.hip,
            Anatomy::Rib => &mut self.rib,
            Anatomy::Vertebra => &mut self.vertebra,
        }
    }
}

pub fn run_ingest(cfg: &IngestSection, seed: u64, out: &Path) -> Result<Outcome> {
    let config = IngestConfig {
        seed,
        femur: cfg.femur.clone(),
        hip: cfg.hip.clone(),
        rib: cfg.rib.clone(),
        vertebra: cfg.vertebra.clone(),
    };
    let result = ingest::build_manifest(&cfg.root, &config, out)?;
    write_file(out, "manifest.jsonl", &ingest::manifest_to_jsonl(&result.records))?;
    write_file(out, "skipped.jsonl", &ingest::skips_to_jsonl(&result.skips))?;
    let count = |s: Split| result.records.iter().filter(|r| r.split == s).count();
    Ok(Outcome {
        summary: format!(
            "{} samples ({} train / {} val / {} test), {} skipped",
            result.records.len(),
            count(Split::Train),
            count(Split::Val),
            count(Split::Test),
            result.skips.len()
        ),
    })
}

// ------------------------------------------------------------------- drr

#[derive(Debug, Args, Serialize)]
pub struct DrrArgs {
    /// A single CT volume
    #[arg(long, env = "XR23D_CT", conflicts_with = "manifest")]
    pub ct: Option<PathBuf>,
    /// Render every sample of a manifest
    #[arg(long, env = "XR23D_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Only samples of this split
    #[arg(long, value_parser = parse_split, env = "XR23D_SPLIT")]
    pub split: Option<Split>,
    /// Output name for a single CT (defaults to the file stem)
    #[arg(long, env = "XR23D_SAMPLE_ID")]
    pub sample_id: Option<String>,
    /// LAT angle relative to AP, degrees
    #[arg(long, env = "XR23D_ANGLE")]
    pub angle: Option<f64>,
    /// Line-integral mode: mean or sum
    #[arg(long, value_parser = parse_mode, env = "XR23D_MODE")]
    pub mode: Option<IntensityMode>,
    /// HU clamp window as lo,hi
    #[arg(long, value_delimiter = ',', num_args = 1, allow_negative_numbers = true, env = "XR23D_WINDOW")]
    pub window: Option<Vec<f64>>,
    /// Image size as rows,cols
    #[arg(long, value_delimiter = ',', env = "XR23D_SIZE")]
    pub size: Option<Vec<usize>>,
    /// Also render the LAT misalignment series
    #[arg(long, num_args = 0..=1, default_missing_value = "true", env = "XR23D_MISALIGNMENT")]
    pub misalignment: Option<bool>,
    /// Angles of the misalignment series
    #[arg(long, value_delimiter = ',', env = "XR23D_ANGLES")]
    pub angles: Option<Vec<f64>>,
}

fn default_angle() -> f64 {
    90.0
}

fn default_window() -> [f64; 2] {
    [DEFAULT_HU_WINDOW.0, DEFAULT_HU_WINDOW.1]
}

fn default_angles() -> Vec<f64> {
    DEFAULT_MISALIGNMENT_ANGLES.to_vec()
}

fn default_mode() -> IntensityMode {
    IntensityMode::Mean
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrrSection {
    #[serde(default)]
    pub ct: Option<PathBuf>,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub sample_id: Option<String>,
    #[serde(default = "default_angle")]
    pub angle: f64,
    #[serde(default = "default_mode")]
    pub mode: IntensityMode,
    #[serde(default = "default_window")]
    pub window: [f64; 2],
    #[serde(default)]
    pub size: Option<[usize; 2]>,
    #[serde(default)]
    pub misalignment: bool,
    #[serde(default = "default_angles")]
    pub angles: Vec<f64>,
}

fn write_view(img: &drr::DrrImage, out: &Path, stem: &str) -> Result<()> {
    drr::write_pgm16(img, out.join(format!("{stem}.pgm")))?;
    drr::write_png8(img, out.join(format!("{stem}.png")))?;
    drr::write_sidecar(img, out.join(format!("{stem}.json")))?;
    Ok(())
}

fn render(ct_path: &Path, id: &str, cfg: &DrrSection, out: &Path) -> Result<usize> {
    let ct = nifti::read_volume(ct_path)?;
    let settings = DrrSettings { output_size: cfg.size, intensity: cfg.mode, hu_window: (cfg.window[0], cfg.window[1]) };
    let pair = drr::make_biplanar(&ct, cfg.angle, &settings)?;
    write_view(&pair.ap, out, &format!("{id}_AP"))?;
    write_view(&pair.lat, out, &format!("{id}_LAT"))?;
    let mut n = 2;
    if cfg.misalignment {
        for (angle, p) in cfg.angles.iter().zip(drr::misalignment_series(&ct, &cfg.angles, &settings)?) {
            write_view(&p.lat, out, &format!("{id}_LAT_{angle}deg"))?;
            n += 1;
        }
    }
    Ok(n)
}

pub fn run_drr(cfg: &DrrSection, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let jobs: Vec<(PathBuf, String)> = match (&cfg.ct, &cfg.manifest) {
        (Some(ct), None) => vec![(ct.clone(), cfg.sample_id.clone().unwrap_or_else(|| file_stem(ct)))],
        (None, Some(m)) => {
            let (records, dir) = load_manifest(m)?;
            records
                .iter()
                .filter(|r| cfg.split.is_none_or(|s| r.split == s))
                .map(|r| (dir.join(&r.ct_path), r.sample_id.clone()))
                .collect()
        }
        _ => return Err(CliError::Config("drr needs exactly one of --ct or --manifest".into())),
    };
    let images: usize =
        jobs.par_iter().map(|(p, id)| render(p, id, cfg, out)).collect::<Result<Vec<_>>>()?.into_iter().sum();
    Ok(Outcome { summary: format!("{} samples, {images} images", jobs.len()) })
}

// ------------------------------------------------------------------ eval

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, env = "XR23D_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Directory of <sample_id>.nii.gz predictions
    #[arg(long, env = "XR23D_PRED")]
    pub pred: Option<PathBuf>,
    /// Model name (defaults to the prediction directory name)
    #[arg(long, env = "XR23D_MODEL")]
    pub model: Option<String>,
    /// NSD tolerance in mm
    #[arg(long, env = "XR23D_TAU")]
    pub tau: Option<f64>,
    /// Subgroup keys to disaggregate by (comma separated)
    #[arg(long, value_delimiter = ',', env = "XR23D_GROUPBY")]
    pub groupby: Option<Vec<String>>,
    /// Also compare morphometry of ground truth and prediction
    #[arg(long, num_args = 0..=1, default_missing_value = "true", env = "XR23D_MORPH")]
    pub morph: Option<bool>,
    /// Femur localization sidecar from the ground truth
    #[arg(long, env = "XR23D_LOCALIZATION")]
    pub localization: Option<PathBuf>,
    /// Dataset label for the summary table (defaults to the manifest name)
    #[arg(long, env = "XR23D_DATASET")]
    pub dataset: Option<String>,
    #[arg(long, env = "XR23D_RUN_ID")]
    pub run_id: Option<String>,
}

fn default_tau() -> f64 {
    DEFAULT_TAU_MM
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub manifest: PathBuf,
    pub pred: PathBuf,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub groupby: Vec<String>,
    #[serde(default)]
    pub morph: bool,
    #[serde(default)]
    pub localization: Option<PathBuf>,
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub run_id: Option<String>,
}

impl EvalSection {
    pub fn finalize(mut self) -> Self {
        self.model.get_or_insert_with(|| file_stem(&self.pred));
        self.dataset.get_or_insert_with(|| file_stem(&self.manifest));
        self
    }
}

pub fn run_eval(cfg: &EvalSection, out: &Path) -> Result<Outcome> {
    let (records, dir) = load_manifest(&cfg.manifest)?;
    let opts = EvalOptions {
        tau: cfg.tau,
        run_id: cfg.run_id.clone(),
        morphometry: cfg.morph,
        localizations: load_localizations(cfg.localization.as_ref())?,
    };
    let model = cfg.model.clone().unwrap_or_default();
    let dataset = cfg.dataset.clone().unwrap_or_default();
    let run = evaluate_run(&records, &dir, &file_stem(&cfg.manifest), &cfg.pred, &model, &opts)?;
    let groupby: Vec<&str> = cfg.groupby.iter().map(String::as_str).collect();
    report::emit_reports(&run, &dataset, &groupby, out)?;
    write_file(out, "run.json", &(serde_json::to_string_pretty(&run)? + "\n"))?;
    Ok(Outcome {
        summary: format!(
            "{} test samples, {} missing predictions, mean dsc {:.4}",
            run.rows.len(),
            run.missing().len(),
            run.mean_dsc()
        ),
    })
}

// ----------------------------------------------------------------- morph

#[derive(Debug, Args, Serialize)]
pub struct MorphArgs {
    #[arg(long, env = "XR23D_MANIFEST", conflicts_with = "mask")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_split, env = "XR23D_SPLIT")]
    pub split: Option<Split>,
    /// A single mask; requires --anatomy
    #[arg(long, env = "XR23D_MASK")]
    pub mask: Option<PathBuf>,
    #[arg(long, value_parser = parse_anatomy, env = "XR23D_ANATOMY")]
    pub anatomy: Option<Anatomy>,
    #[arg(long, env = "XR23D_SAMPLE_ID")]
    pub sample_id: Option<String>,
    /// Femur localization sidecar
    #[arg(long, env = "XR23D_LOCALIZATION")]
    pub localization: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphSection {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    #[serde(default)]
    pub anatomy: Option<Anatomy>,
    #[serde(default)]
    pub sample_id: Option<String>,
    #[serde(default)]
    pub localization: Option<PathBuf>,
}

enum MorphRow {
    Femur(FemurMorphometry),
    Pelvis(PelvicLandmarks),
    Vertebra(VertebraMorphometry),
    Unsupported,
}

fn invalid_femur() -> FemurMorphometry {
    let mut flags = Flags::default();
    for p in FEMUR_PARAMS {
        flags.set(p, ParamStatus::Invalid);
    }
    FemurMorphometry { fhr: None, fhc: None, fna: None, fda: None, nsa: None, flags }
}

fn measure(anatomy: Anatomy, mask: &BinaryMask, loc: Option<&FemurLocalization>) -> Result<MorphRow> {
    Ok(match anatomy {
        Anatomy::Femur => MorphRow::Femur(femur_morphometry(mask, loc).unwrap_or_else(|_| invalid_femur())),
        Anatomy::Hip => MorphRow::Pelvis(extract_pelvic_landmarks(mask).unwrap_or_default()),
        Anatomy::Vertebra => MorphRow::Vertebra(vertebra_morphometry(mask)?),
        Anatomy::Rib => MorphRow::Unsupported,
    })
}

pub fn run_morph(cfg: &MorphSection, out: &Path) -> Result<Outcome> {
    let locs = load_localizations(cfg.localization.as_ref())?;
    let jobs: Vec<(String, Anatomy, PathBuf)> = match (&cfg.manifest, &cfg.mask) {
        (Some(m), None) => {
            let (records, dir) = load_manifest(m)?;
            records
                .iter()
                .filter(|r| cfg.split.is_none_or(|s| r.split == s))
                .map(|r| (r.sample_id.clone(), r.anatomy, dir.join(&r.mask_path)))
                .collect()
        }
        (None, Some(mask)) => {
            let anatomy = cfg.anatomy.ok_or_else(|| CliError::Config("morph --mask needs --anatomy".into()))?;
            vec![(cfg.sample_id.clone().unwrap_or_else(|| file_stem(mask)), anatomy, mask.clone())]
        }
        _ => return Err(CliError::Config("morph needs exactly one of --manifest or --mask".into())),
    };
    let rows: Vec<(String, MorphRow)> = jobs
        .par_iter()
        .map(|(id, a, path)| Ok((id.clone(), measure(*a, &nifti::read_mask(path)?, locs.get(id))?)))
        .collect::<Result<_>>()?;
    let mut femur = Vec::new();
    let mut pelvis = Vec::new();
    let mut vertebra = Vec::new();
    for (id, r) in rows {
        match r {
            MorphRow::Femur(m) => femur.push((id, m)),
            MorphRow::Pelvis(m) => pelvis.push((id, m)),
            MorphRow::Vertebra(m) => vertebra.push((id, m)),
            MorphRow::Unsupported => {}
        }
    }
    if !femur.is_empty() {
        write_file(out, "morph_femur.csv", &report::femur_rows_csv(&femur))?;
    }
    if !pelvis.is_empty() {
        write_file(out, "morph_pelvis.csv", &report::pelvis_rows_csv(&pelvis))?;
    }
    if !vertebra.is_empty() {
        write_file(out, "morph_vertebra.csv", &report::vertebra_rows_csv(&vertebra))?;
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    Ok(Outcome {
        summary: format!("{} femur, {} pelvis, {} vertebra samples", femur.len(), pelvis.len(), vertebra.len()),
    })
}

// ---------------------------------------------------------------- report

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Evaluation run as DATASET=run.json (repeatable)
    #[arg(long = "run", env = "XR23D_RUNS", value_delimiter = ',')]
    pub runs: Option<Vec<String>>,
    /// In-domain run.json for domain-shift deltas
    #[arg(long, env = "XR23D_IN_DOMAIN")]
    pub in_domain: Option<PathBuf>,
    /// Out-of-domain run as SUBSET=run.json (repeatable)
    #[arg(long, env = "XR23D_OOD", value_delimiter = ',')]
    pub ood: Option<Vec<String>>,
    /// Bootstrap resamples for ranking stability
    #[arg(long, env = "XR23D_BOOTSTRAP")]
    pub bootstrap: Option<usize>,
}

fn default_bootstrap() -> usize {
    xr23d::harness::ranking::DEFAULT_BOOTSTRAP
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default)]
    pub runs: Vec<String>,
    #[serde(default)]
    pub in_domain: Option<PathBuf>,
    #[serde(default)]
    pub ood: Vec<String>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

fn load_run(path: &Path) -> Result<EvaluationRun> {
    Ok(serde_json::from_str(&read_to_string(path)?)?)
}

fn labelled(spec: &str) -> (Option<&str>, PathBuf) {
    match spec.split_once('=') {
        Some((label, path)) => (Some(label), PathBuf::from(path)),
        None => (None, PathBuf::from(spec)),
    }
}

/// (sample id, DSC) per model.
type ModelScores = BTreeMap<String, Vec<(String, f64)>>;

/// Per-sample DSC of every model on each dataset; models must cover the
/// same samples.
fn task_scores(runs: &[(String, EvaluationRun)]) -> Result<Vec<TaskScores>> {
    let mut tasks: BTreeMap<&str, ModelScores> = BTreeMap::new();
    for (dataset, run) in runs {
        let scores = run.rows.iter().map(|r| (r.sample_id.clone(), r.metrics.dsc)).collect();
        if tasks.entry(dataset).or_default().insert(run.model_name.clone(), scores).is_some() {
            return Err(HarnessError::Consistency(format!("model {} listed twice for {dataset}", run.model_name)).into());
        }
    }
    let mut out = Vec::new();
    for (task, models) in tasks {
        if models.len() < 2 {
            continue;
        }
        let ids: Vec<Vec<&String>> = models.values().map(|v| v.iter().map(|(id, _)| id).collect()).collect();
        if ids.windows(2).any(|w| w[0] != w[1]) {
            return Err(HarnessError::Consistency(format!("models on {task} were scored on different samples")).into());
        }
        out.push(TaskScores {
            task: task.to_string(),
            scores: models.into_iter().map(|(m, v)| (m, v.into_iter().map(|(_, d)| d).collect())).collect(),
        });
    }
    Ok(out)
}

pub fn run_report(cfg: &ReportSection, seed: u64, out: &Path) -> Result<Outcome> {
    let mut runs = Vec::new();
    for spec in &cfg.runs {
        let (label, path) = labelled(spec);
        let run = load_run(&path)?;
        runs.push((label.map_or_else(|| run.manifest.clone(), str::to_string), run));
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut written = 0;
    if !runs.is_empty() {
        let rows: Vec<(&str, &EvaluationRun)> = runs.iter().map(|(d, r)| (d.as_str(), r)).collect();
        write_file(out, "table1.csv", &report::table1_csv(&rows))?;
        let refs: Vec<&EvaluationRun> = runs.iter().map(|(_, r)| r).collect();
        write_file(out, "long.csv", &report::long_csv(&refs))?;
        written += 2;
        let tasks = task_scores(&runs)?;
        if !tasks.is_empty() {
            let result = ranking_stability(&tasks, Resampling::Bootstrap { n_bootstrap: cfg.bootstrap, seed })?;
            write_file(out, "ranking.json", &report::ranking_json(&result))?;
            write_file(out, "ranking.csv", &report::ranking_csv(&result))?;
            written += 2;
        }
    }
    if let Some(in_path) = &cfg.in_domain {
        let in_run = load_run(in_path)?;
        let mut ood = Vec::new();
        for spec in &cfg.ood {
            let (label, path) = labelled(spec);
            let run = load_run(&path)?;
            ood.push((label.map_or_else(|| run.manifest.clone(), str::to_string), run));
        }
        if ood.is_empty() {
            return Err(CliError::Config("--in-domain needs at least one --ood run".into()));
        }
        let refs: Vec<(&str, &EvaluationRun)> = ood.iter().map(|(n, r)| (n.as_str(), r)).collect();
        let shift = domain_shift_delta(&in_run, &refs)?;
        write_file(out, "domain_shift.json", &report::shift_json(&shift))?;
        write_file(out, "domain_shift.csv", &report::shift_csv(&[shift]))?;
        written += 2;
    } else if !cfg.ood.is_empty() {
        return Err(CliError::Config("--ood needs --in-domain".into()));
    }
    if written == 0 {
        return Err(CliError::Config("report needs --run or --in-domain".into()));
    }
    Ok(Outcome { summary: format!("{} runs, {written} report files", runs.len()) })
}

// --------------------------------------------------------------- phantom

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Femur,
    Pelvis,
    Vertebra,
}

impl PhantomKind {
    fn anatomy(self) -> Anatomy {
        match self {
            PhantomKind::Femur => Anatomy::Femur,
            PhantomKind::Pelvis => Anatomy::Hip,
            PhantomKind::Vertebra => Anatomy::Vertebra,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PhantomKind::Femur => "femur",
            PhantomKind::Pelvis => "pelvis",
            PhantomKind::Vertebra => "vertebra",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PhantomArgs {
    /// Phantoms to build (comma separated)
    #[arg(long, value_delimiter = ',', env = "XR23D_KIND")]
    pub kind: Option<Vec<PhantomKind>>,
    /// Voxel spacing in mm
    #[arg(long, env = "XR23D_SPACING")]
    pub spacing: Option<f64>,
    /// Femur surface jitter amplitude in mm (seeded by --seed)
    #[arg(long, env = "XR23D_NOISE")]
    pub noise: Option<f64>,
    /// Rotation about the superior axis, degrees
    #[arg(long, allow_negative_numbers = true, env = "XR23D_ROTATE_DEG")]
    pub rotate_deg: Option<f64>,
    /// Write an ingestible dataset tree of this many cases per kind
    #[arg(long, env = "XR23D_CASES")]
    pub cases: Option<usize>,
    /// CT value of bone voxels; background is -1000
    #[arg(long, allow_negative_numbers = true, env = "XR23D_BONE_HU")]
    pub bone_hu: Option<f32>,
}

fn all_kinds() -> Vec<PhantomKind> {
    vec![PhantomKind::Femur, PhantomKind::Pelvis, PhantomKind::Vertebra]
}

fn one_mm() -> f64 {
    1.0
}

fn bone_hu() -> f32 {
    700.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    #[serde(default = "all_kinds")]
    pub kind: Vec<PhantomKind>,
    #[serde(default = "one_mm")]
    pub spacing: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub rotate_deg: f64,
    #[serde(default)]
    pub cases: usize,
    #[serde(default = "bone_hu")]
    pub bone_hu: f32,
}

/// Maximum per-axis offset of dataset cases, mm.
const CASE_JITTER_MM: f64 = 3.0;

struct Built {
    mask: BinaryMask,
    truth: serde_json::Value,
    localization: Option<FemurLocalization>,
}

fn build_phantom(kind: PhantomKind, cfg: &PhantomSection, noise_seed: u64, offset: Vec3, id: &str) -> Result<Built> {
    if !(cfg.spacing > 0.0) || !(cfg.noise >= 0.0) {
        return Err(CliError::Config("phantom needs spacing > 0 and noise >= 0".into()));
    }
    let transform = RigidTransform::from_axis_angle(Vec3::z(), cfg.rotate_deg, offset);
    Ok(match kind {
        PhantomKind::Femur => {
            let p = FemurPhantom {
                spacing: cfg.spacing,
                noise: (cfg.noise > 0.0).then_some((cfg.noise, noise_seed)),
                transform,
                ..Default::default()
            };
            Built { mask: p.build()?, truth: serde_json::to_value(p.truth())?, localization: Some(p.localization(id)) }
        }
        PhantomKind::Pelvis => {
            let p = PelvisPhantom { spacing: cfg.spacing, transform, ..Default::default() };
            let tips: BTreeMap<String, [f64; 3]> = [(-1.0, "l"), (1.0, "r")]
                .into_iter()
                .flat_map(|(s, side)| pelvis_spine_tips(&transform, s).map(|(n, p)| (format!("{n}_{side}"), p)))
                .collect();
            Built { mask: p.build()?, truth: serde_json::to_value(tips)?, localization: None }
        }
        PhantomKind::Vertebra => {
            let p = VertebraPhantom { spacing: cfg.spacing, transform, ..Default::default() };
            Built { mask: p.build()?, truth: serde_json::to_value(p.truth())?, localization: None }
        }
    })
}

fn sidecar_json(locs: &BTreeMap<String, FemurLocalization>) -> Result<String> {
    Ok(serde_json::to_string_pretty(locs)? + "\n")
}

pub fn run_phantom(cfg: &PhantomSection, seed: u64, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut locs = BTreeMap::new();
    let mut written = 0;
    if cfg.cases == 0 {
        for &kind in &cfg.kind {
            let name = kind.name();
            let b = build_phantom(kind, cfg, seed, Vec3::zeros(), name)?;
            nifti::write_mask(&b.mask, out.join(format!("{name}_mask.nii.gz")))?;
            nifti::write_volume(&mask_to_ct(&b.mask, cfg.bone_hu), out.join(format!("{name}_ct.nii.gz")))?;
            write_file(out, &format!("{name}_truth.json"), &(serde_json::to_string_pretty(&b.truth)? + "\n"))?;
            if let Some(l) = b.localization {
                locs.insert(name.to_string(), l);
            }
            written += 1;
        }
    } else {
        let jobs: Vec<(PhantomKind, usize)> =
            cfg.kind.iter().flat_map(|&k| (0..cfg.cases).map(move |c| (k, c))).collect();
        let built: Vec<(String, Option<FemurLocalization>)> = jobs
            .par_iter()
            .map(|&(kind, case)| {
                let case_seed = seed.wrapping_add(case as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
                let offset = Vec3::from_fn(|_, _| rng.random_range(-CASE_JITTER_MM..=CASE_JITTER_MM));
                let anatomy = kind.anatomy();
                let case_name = format!("case{case:03}");
                let id = format!("{anatomy}-PHANTOM-{case_name}");
                let b = build_phantom(kind, cfg, case_seed, offset, &id)?;
                let dir = out.join(anatomy.as_str()).join("PHANTOM").join(&case_name);
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                nifti::write_mask(&b.mask, dir.join("seg.nii.gz"))?;
                nifti::write_volume(&mask_to_ct(&b.mask, cfg.bone_hu), dir.join("ct.nii.gz"))?;
                let meta = serde_json::json!({
                    "patient_id": case_name,
                    "subgroup": { "phantom": kind.name() },
                    "truth": b.truth,
                });
                write_file(&dir, "meta.json", &(serde_json::to_string_pretty(&meta)? + "\n"))?;
                Ok((id, b.localization))
            })
            .collect::<Result<_>>()?;
        written = built.len();
        locs.extend(built.into_iter().filter_map(|(id, l)| l.map(|l| (id, l))));
    }
    if !locs.is_empty() {
        write_file(out, "femur_localization.json", &sidecar_json(&locs)?)?;
    }
    Ok(Outcome { summary: format!("{written} phantoms") })
}
