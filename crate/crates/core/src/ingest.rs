//! Dataset curation, preparation and manifest generation.
//!
//! Expected layout under a dataset root:
//!
//! ```text
//! <root>/<anatomy>/<subset>/<case>/ct.nii.gz
//! <root>/<anatomy>/<subset>/<case>/seg.nii.gz
//! <root>/<anatomy>/<subset>/<case>/meta.json   (optional)
//! ```
//!
//! `meta.json` may carry `patient_id`, a `subgroup` map, `centroid_mm`,
//! `rib_labels` (false when ribs are not individually labelled) and, for
//! vertebra scans, a `vertebrae` list of `{label, centroid_mm, subgroup}`
//! entries that each become one sample.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{
    crop_or_pad, crop_or_pad_with, extract_label, nifti, resample, resample_mask, BinaryMask, Interpolation,
    VolumeError, VoxelGrid,
};

pub const RIB_LABELS: std::ops::RangeInclusive<i32> = 1..=24;
pub const CT_PAD_HU: f32 = -1024.0;
pub const TRAIN_FRACTION: f64 = 0.85;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("config: {0}")]
    Config(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("preparation of {sample_id}: {reason}")]
    Preparation { sample_id: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anatomy {
    Femur,
    Hip,
    Rib,
    Vertebra,
}

impl Anatomy {
    pub const ALL: [Anatomy; 4] = [Anatomy::Femur, Anatomy::Hip, Anatomy::Rib, Anatomy::Vertebra];

    pub fn as_str(self) -> &'static str {
        match self {
            Anatomy::Femur => "femur",
            Anatomy::Hip => "hip",
            Anatomy::Rib => "rib",
            Anatomy::Vertebra => "vertebra",
        }
    }
}

impl fmt::Display for Anatomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Anatomy {
    type Err = IngestError;
    fn from_str(s: &str) -> Result<Self> {
        Anatomy::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| IngestError::Config(format!("unknown anatomy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Completeness {
    #[default]
    None,
    FullRibSet,
}

/// Curation and preparation settings for one anatomy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnatomyConfig {
    pub min_voxels: usize,
    #[serde(default)]
    pub completeness: Completeness,
    /// Text file of rejected sample ids, one per line, relative to the
    /// dataset root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_list: Option<PathBuf>,
    pub spacing_mm: f64,
    pub size: usize,
    /// Label to extract from the segmentation; any nonzero label when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i32>,
    /// Minimum superior-inferior extent for the rib heuristic.
    #[serde(default = "default_rib_extent")]
    pub rib_min_extent_mm: f64,
}

fn default_rib_extent() -> f64 {
    200.0
}

impl AnatomyConfig {
    /// Standard sizes and resolutions per anatomy.
    pub fn standard(anatomy: Anatomy) -> Self {
        let (min_voxels, completeness, spacing_mm, size) = match anatomy {
            Anatomy::Femur => (30_000, Completeness::None, 1.0, 128),
            Anatomy::Hip => (150_000, Completeness::None, 2.25, 128),
            Anatomy::Rib => (0, Completeness::FullRibSet, 2.5, 128),
            Anatomy::Vertebra => (0, Completeness::None, 1.5, 64),
        };
        AnatomyConfig {
            min_voxels,
            completeness,
            reject_list: None,
            spacing_mm,
            size,
            label: None,
            rib_min_extent_mm: default_rib_extent(),
        }
    }
}

/// Ingestion config; each anatomy section is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub femur: Option<AnatomyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hip: Option<AnatomyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rib: Option<AnatomyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertebra: Option<AnatomyConfig>,
}

impl IngestConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: IngestConfig = toml::from_str(text).map_err(|e| IngestError::Config(e.to_string()))?;
        for (a, c) in cfg.sections() {
            if !(c.spacing_mm > 0.0 && c.spacing_mm.is_finite()) || c.size == 0 {
                return Err(IngestError::Config(format!("[{a}] needs spacing_mm > 0 and size > 0")));
            }
        }
        Ok(cfg)
    }

    /// Every anatomy with its standard settings.
    pub fn standard() -> Self {
        IngestConfig {
            seed: 0,
            femur: Some(AnatomyConfig::standard(Anatomy::Femur)),
            hip: Some(AnatomyConfig::standard(Anatomy::Hip)),
            rib: Some(AnatomyConfig::standard(Anatomy::Rib)),
            vertebra: Some(AnatomyConfig::standard(Anatomy::Vertebra)),
        }
    }

    pub fn sections(&self) -> Vec<(Anatomy, &AnatomyConfig)> {
        [
            (Anatomy::Femur, &self.femur),
            (Anatomy::Hip, &self.hip),
            (Anatomy::Rib, &self.rib),
            (Anatomy::Vertebra, &self.vertebra),
        ]
        .into_iter()
        .filter_map(|(a, c)| c.as_ref().map(|c| (a, c)))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurationRule {
    pub anatomy: Anatomy,
    pub min_voxels: usize,
    pub completeness: Completeness,
    pub manual_reject_list: BTreeSet<String>,
    pub rib_min_extent_mm: u64,
}

impl CurationRule {
    pub fn threshold(anatomy: Anatomy, min_voxels: usize) -> Self {
        CurationRule {
            anatomy,
            min_voxels,
            completeness: Completeness::None,
            manual_reject_list: BTreeSet::new(),
            rib_min_extent_mm: 200,
        }
    }
}

/// Parse a reject list: one id per line, `#` starts a comment.
pub fn parse_reject_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    BelowThreshold,
    IncompleteStructure,
    ManualList,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::BelowThreshold => "below-threshold",
            RejectReason::IncompleteStructure => "incomplete-structure",
            RejectReason::ManualList => "manual-list",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curation {
    /// `heuristic` is set when completeness was judged without per-structure
    /// labels.
    Accept { heuristic: bool },
    Reject(RejectReason),
}

/// Source of the completeness decision.
pub enum Structure<'a> {
    /// Per-structure label volume.
    Labels(&'a VoxelGrid<f32>),
    /// No per-structure labels; fall back to the mask's extent.
    Unlabelled,
}

/// Curation checks in order: manual list, voxel threshold, completeness.
pub fn curate_sample(sample_id: &str, mask: &BinaryMask, structure: Structure<'_>, rule: &CurationRule) -> Curation {
    if rule.manual_reject_list.contains(sample_id) {
        return Curation::Reject(RejectReason::ManualList);
    }
    if mask.count() < rule.min_voxels {
        return Curation::Reject(RejectReason::BelowThreshold);
    }
    match (rule.completeness, structure) {
        (Completeness::None, _) => Curation::Accept { heuristic: false },
        (Completeness::FullRibSet, Structure::Labels(labels)) => {
            let present: BTreeSet<i32> =
                labels.data().iter().filter(|v| v.fract() == 0.0).map(|&v| v as i32).collect();
            if RIB_LABELS.clone().all(|l| present.contains(&l)) {
                Curation::Accept { heuristic: false }
            } else {
                Curation::Reject(RejectReason::IncompleteStructure)
            }
        }
        (Completeness::FullRibSet, Structure::Unlabelled) => {
            let g = mask.geometry();
            let zs = mask.foreground_indices().map(|i| g.voxel_center(i)[2]);
            let (lo, hi) = zs.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), z| (l.min(z), h.max(z)));
            let extent = if hi >= lo { hi - lo + g.spacing[2] } else { 0.0 };
            if extent >= rule.rib_min_extent_mm as f64 {
                Curation::Accept { heuristic: true }
            } else {
                Curation::Reject(RejectReason::IncompleteStructure)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Counts for `n` units: test gets what remains after the train fraction,
/// then the pool is split again the same way.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let pool = (TRAIN_FRACTION * n as f64).floor() as usize;
    let train = (TRAIN_FRACTION * pool as f64).floor() as usize;
    (train, pool - train, n - pool)
}

/// Split groups of samples (e.g. all vertebrae of one scan) so that each
/// group lands in one split. `members` maps sample id to group id.
pub fn assign_splits(members: &BTreeMap<String, String>, seed: u64) -> BTreeMap<String, Split> {
    let mut groups: Vec<&String> = members.values().collect::<BTreeSet<_>>().into_iter().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, val, _) = split_counts(groups.len());
    let of_group: BTreeMap<&String, Split> = groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let s = if k < train {
                Split::Train
            } else if k < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (*g, s)
        })
        .collect();
    members.iter().map(|(id, g)| (id.clone(), of_group[g])).collect()
}

/// One benchmark case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub sample_id: String,
    pub anatomy: Anatomy,
    pub source_subset: String,
    pub ct_path: String,
    pub mask_path: String,
    pub subgroup: BTreeMap<String, String>,
    pub split: Split,
}

/// Serialize records, one JSON object per line, sorted by id.
pub fn manifest_to_jsonl(records: &[SampleRecord]) -> String {
    let mut sorted: Vec<&SampleRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    sorted.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

/// Parse a manifest; blank lines are skipped and ids must be unique.
pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(line)
            .map_err(|e| IngestError::Manifest { line: k + 1, reason: e.to_string() })?;
        if !seen.insert(rec.sample_id.clone()) {
            return Err(IngestError::Manifest { line: k + 1, reason: format!("duplicate sample_id {}", rec.sample_id) });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    parse_manifest(&fs::read_to_string(path).map_err(io_err(path))?)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SkipEntry {
    pub sample_id: String,
    pub reason: String,
}

/// Resample to the anatomy spacing and crop or pad to its cube, centred on
/// `centroid_mm` or the mask's centre of mass.
pub fn prepare_sample(
    sample_id: &str,
    ct: &VoxelGrid<f32>,
    mask: &BinaryMask,
    spacing_mm: f64,
    size: usize,
    centroid_mm: Option<[f64; 3]>,
) -> Result<(VoxelGrid<f32>, BinaryMask)> {
    let fail = |reason: &str| IngestError::Preparation { sample_id: sample_id.to_string(), reason: reason.to_string() };
    if mask.is_empty() {
        return Err(fail("empty mask"));
    }
    if !ct.geometry().same_lattice(mask.geometry()) {
        return Err(fail("CT and mask lattices differ"));
    }
    let center = centroid_mm.or_else(|| mask.centroid()).ok_or_else(|| fail("empty mask"))?;
    let target = [spacing_mm; 3];
    let ct_r = resample(ct, target, Interpolation::Trilinear)?.grid;
    let mask_r = resample_mask(mask, target)?.grid;
    let ct_out = crop_or_pad_with(&ct_r, [size; 3], center, CT_PAD_HU)?;
    let (g, d) = crop_or_pad(mask_r.grid(), [size; 3], center)?.into_parts();
    let mask_out = BinaryMask::new(g, d)?;
    Ok((ct_out, mask_out))
}

#[derive(Debug, Clone, Default, Deserialize)]
struct VertebraMeta {
    label: i32,
    #[serde(default)]
    centroid_mm: Option<[f64; 3]>,
    #[serde(default)]
    subgroup: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, Deserialize)]
struct CaseMeta {
    #[serde(default)]
    patient_id: Option<String>,
    #[serde(default)]
    subgroup: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    centroid_mm: Option<[f64; 3]>,
    #[serde(default = "yes")]
    rib_labels: bool,
    #[serde(default)]
    vertebrae: Vec<VertebraMeta>,
}

fn yes() -> bool {
    true
}

fn value_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// A sample found on disk, before curation.
#[derive(Debug, Clone)]
struct Candidate {
    sample_id: String,
    group: String,
    anatomy: Anatomy,
    subset: String,
    case_dir: PathBuf,
    label: Option<i32>,
    centroid_mm: Option<[f64; 3]>,
    subgroup: BTreeMap<String, String>,
    rib_labels: bool,
}

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(io_err(path))? {
        let p = entry.map_err(io_err(path))?.path();
        if p.is_dir() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn discover(root: &Path, anatomy: Anatomy, cfg: &AnatomyConfig, skips: &mut Vec<SkipEntry>) -> Result<Vec<Candidate>> {
    let base = root.join(anatomy.as_str());
    if !base.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for subset_dir in sorted_dirs(&base)? {
        let subset = file_name(&subset_dir);
        for case_dir in sorted_dirs(&subset_dir)? {
            let case = file_name(&case_dir);
            let case_id = format!("{anatomy}-{subset}-{case}");
            let meta_path = case_dir.join("meta.json");
            let meta: CaseMeta = if meta_path.exists() {
                let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
                match serde_json::from_str(&text) {
                    Ok(m) => m,
                    Err(e) => {
                        skips.push(SkipEntry { sample_id: case_id, reason: format!("bad-meta: {e}") });
                        continue;
                    }
                }
            } else {
                CaseMeta { rib_labels: true, ..Default::default() }
            };
            let missing: Vec<&str> =
                ["ct.nii.gz", "seg.nii.gz"].into_iter().filter(|f| !case_dir.join(f).is_file()).collect();
            if !missing.is_empty() {
                skips.push(SkipEntry { sample_id: case_id, reason: format!("missing-file: {}", missing.join(",")) });
                continue;
            }
            let group = meta.patient_id.clone().unwrap_or_else(|| case_id.clone());
            let mut subgroup: BTreeMap<String, String> =
                meta.subgroup.iter().map(|(k, v)| (k.clone(), value_string(v))).collect();
            subgroup.entry("patient_id".into()).or_insert_with(|| group.clone());
            if anatomy == Anatomy::Vertebra && !meta.vertebrae.is_empty() {
                for v in &meta.vertebrae {
                    let mut sg = subgroup.clone();
                    sg.extend(v.subgroup.iter().map(|(k, x)| (k.clone(), value_string(x))));
                    let tag = sg.get("level").cloned().unwrap_or_else(|| v.label.to_string());
                    out.push(Candidate {
                        sample_id: format!("{case_id}-{tag}"),
                        group: group.clone(),
                        anatomy,
                        subset: subset.clone(),
                        case_dir: case_dir.clone(),
                        label: Some(v.label),
                        centroid_mm: v.centroid_mm,
                        subgroup: sg,
                        rib_labels: meta.rib_labels,
                    });
                }
            } else {
                out.push(Candidate {
                    sample_id: case_id,
                    group,
                    anatomy,
                    subset: subset.clone(),
                    case_dir,
                    label: cfg.label,
                    centroid_mm: meta.centroid_mm,
                    subgroup,
                    rib_labels: meta.rib_labels,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestOutput {
    pub records: Vec<SampleRecord>,
    pub skips: Vec<SkipEntry>,
}

enum Outcome {
    Kept { cand: Candidate, heuristic: bool, ct: String, mask: String },
    Skipped(SkipEntry),
}

fn process(cand: Candidate, cfg: &AnatomyConfig, rule: &CurationRule, out_dir: &Path) -> Result<Outcome> {
    let skip = |reason: String| Ok(Outcome::Skipped(SkipEntry { sample_id: cand.sample_id.clone(), reason }));
    let seg = match nifti::read_volume(cand.case_dir.join("seg.nii.gz")) {
        Ok(s) => s,
        Err(e) => return skip(format!("unreadable-seg: {e}")),
    };
    let mask = match cand.label {
        Some(l) => {
            let ex = extract_label(&seg, l)?;
            if ex.absent {
                return skip(format!("label-absent: {l}"));
            }
            ex.mask
        }
        None => BinaryMask::from_nonzero(&seg),
    };
    let structure = if cand.rib_labels { Structure::Labels(&seg) } else { Structure::Unlabelled };
    let heuristic = match curate_sample(&cand.sample_id, &mask, structure, rule) {
        Curation::Accept { heuristic } => heuristic,
        Curation::Reject(r) => return skip(r.as_str().to_string()),
    };
    let ct = match nifti::read_volume(cand.case_dir.join("ct.nii.gz")) {
        Ok(c) => c,
        Err(e) => return skip(format!("unreadable-ct: {e}")),
    };
    let (ct2, mask2) = match prepare_sample(&cand.sample_id, &ct, &mask, cfg.spacing_mm, cfg.size, cand.centroid_mm) {
        Ok(p) => p,
        Err(IngestError::Preparation { reason, .. }) => return skip(format!("preparation: {reason}")),
        Err(e) => return Err(e),
    };
    let ct_rel = format!("volumes/{}_ct.nii.gz", cand.sample_id);
    let mask_rel = format!("volumes/{}_mask.nii.gz", cand.sample_id);
    nifti::write_volume(&ct2, out_dir.join(&ct_rel))?;
    nifti::write_mask(&mask2, out_dir.join(&mask_rel))?;
    Ok(Outcome::Kept { cand, heuristic, ct: ct_rel, mask: mask_rel })
}

/// Curate, prepare and split every case under `root`, writing prepared
/// volumes below `out_dir/volumes`. Paths in the records are relative to
/// `out_dir`.
pub fn build_manifest(root: &Path, config: &IngestConfig, out_dir: &Path) -> Result<ManifestOutput> {
    let vol_dir = out_dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(io_err(&vol_dir))?;
    let mut skips = Vec::new();
    let mut jobs = Vec::new();
    for (anatomy, cfg) in config.sections() {
        let manual = match &cfg.reject_list {
            Some(p) => {
                let path = root.join(p);
                parse_reject_list(&fs::read_to_string(&path).map_err(io_err(&path))?)
            }
            None => BTreeSet::new(),
        };
        let rule = CurationRule {
            anatomy,
            min_voxels: cfg.min_voxels,
            completeness: cfg.completeness,
            manual_reject_list: manual,
            rib_min_extent_mm: cfg.rib_min_extent_mm.max(0.0).round() as u64,
        };
        for cand in discover(root, anatomy, cfg, &mut skips)? {
            jobs.push((cand, cfg, rule.clone()));
        }
    }
    let mut ids = BTreeSet::new();
    for (c, _, _) in &jobs {
        if !ids.insert(c.sample_id.clone()) {
            return Err(IngestError::Config(format!("duplicate sample id {}", c.sample_id)));
        }
    }
    let outcomes: Vec<Outcome> =
        jobs.into_par_iter().map(|(c, cfg, rule)| process(c, cfg, &rule, out_dir)).collect::<Result<_>>()?;
    let mut kept = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Kept { cand, heuristic, ct, mask } => kept.push((cand, heuristic, ct, mask)),
            Outcome::Skipped(s) => skips.push(s),
        }
    }
    let mut records = Vec::new();
    for anatomy in Anatomy::ALL {
        let members: BTreeMap<String, String> = kept
            .iter()
            .filter(|(c, ..)| c.anatomy == anatomy)
            .map(|(c, ..)| (c.sample_id.clone(), c.group.clone()))
            .collect();
        let splits = assign_splits(&members, config.seed);
        for (cand, heuristic, ct, mask) in kept.iter().filter(|(c, ..)| c.anatomy == anatomy) {
            let mut subgroup = cand.subgroup.clone();
            if *heuristic {
                subgroup.insert("completeness".into(), "heuristic".into());
            }
            records.push(SampleRecord {
                sample_id: cand.sample_id.clone(),
                anatomy,
                source_subset: cand.subset.clone(),
                ct_path: ct.clone(),
                mask_path: mask.clone(),
                subgroup,
                split: splits[&cand.sample_id],
            });
        }
    }
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    skips.sort();
    Ok(ManifestOutput { records, skips })
}

pub fn skips_to_jsonl(skips: &[SkipEntry]) -> String {
    skips.iter().map(|s| serde_json::to_string(s).expect("skip serializes") + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn mask_with(count: usize) -> BinaryMask {
        let g = Geometry::new([100, 100, 20], [1.0; 3]).unwrap();
        BinaryMask::new(g, (0..200_000).map(|i| (i < count) as u8).collect()).unwrap()
    }

    #[test]
    fn threshold_boundaries() {
        let femur = CurationRule::threshold(Anatomy::Femur, 30_000);
        assert_eq!(
            curate_sample("a", &mask_with(29_999), Structure::Unlabelled, &femur),
            Curation::Reject(RejectReason::BelowThreshold)
        );
        assert_eq!(curate_sample("a", &mask_with(30_000), Structure::Unlabelled, &femur), Curation::Accept { heuristic: false });
        let hip = CurationRule::threshold(Anatomy::Hip, 150_000);
        assert_eq!(curate_sample("h", &mask_with(150_001), Structure::Unlabelled, &hip), Curation::Accept { heuristic: false });
        let mut listed = hip.clone();
        listed.manual_reject_list.insert("h".into());
        assert_eq!(
            curate_sample("h", &mask_with(150_001), Structure::Unlabelled, &listed),
            Curation::Reject(RejectReason::ManualList)
        );
    }

    #[test]
    fn rib_completeness() {
        let g = Geometry::new([24, 1, 1], [1.0; 3]).unwrap();
        let rule = CurationRule { completeness: Completeness::FullRibSet, ..CurationRule::threshold(Anatomy::Rib, 0) };
        let full = VoxelGrid::new(g.clone(), (1..=24).map(|v| v as f32).collect()).unwrap();
        let mask = BinaryMask::from_nonzero(&full);
        assert_eq!(curate_sample("r", &mask, Structure::Labels(&full), &rule), Curation::Accept { heuristic: false });
        let partial = VoxelGrid::new(g, (1..=24).map(|v| if v == 7 { 0.0 } else { v as f32 }).collect()).unwrap();
        assert_eq!(
            curate_sample("r", &BinaryMask::from_nonzero(&partial), Structure::Labels(&partial), &rule),
            Curation::Reject(RejectReason::IncompleteStructure)
        );
        assert_eq!(
            curate_sample("r", &mask, Structure::Unlabelled, &rule),
            Curation::Reject(RejectReason::IncompleteStructure)
        );
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_counts(100), (72, 13, 15));
        let members: BTreeMap<String, String> = (0..100).map(|i| (format!("s{i:03}"), format!("s{i:03}"))).collect();
        let s = assign_splits(&members, 5);
        let count = |k: Split| s.values().filter(|v| **v == k).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (72, 13, 15));
        assert_eq!(s, assign_splits(&members, 5));
        assert_ne!(s, assign_splits(&members, 6));
    }

    #[test]
    fn groups_share_a_split() {
        let mut members = BTreeMap::new();
        for scan in 0..20 {
            for v in ["L1", "L2", "L3"] {
                members.insert(format!("scan{scan}-{v}"), format!("scan{scan}"));
            }
        }
        let s = assign_splits(&members, 1);
        for scan in 0..20 {
            let l1 = s[&format!("scan{scan}-L1")];
            assert!(["L2", "L3"].iter().all(|v| s[&format!("scan{scan}-{v}")] == l1));
        }
    }

    #[test]
    fn manifest_round_trip_and_duplicates() {
        let rec = SampleRecord {
            sample_id: "b".into(),
            anatomy: Anatomy::Vertebra,
            source_subset: "RSNA".into(),
            ct_path: "volumes/b_ct.nii.gz".into(),
            mask_path: "volumes/b_mask.nii.gz".into(),
            subgroup: [("level".to_string(), "L1".to_string())].into(),
            split: Split::Test,
        };
        let a = SampleRecord { sample_id: "a".into(), ..rec.clone() };
        let text = manifest_to_jsonl(&[rec.clone(), a.clone()]);
        assert!(text.starts_with("{\"sample_id\":\"a\""));
        assert_eq!(parse_manifest(&text).unwrap(), vec![a, rec.clone()]);
        let dup = manifest_to_jsonl(&[rec.clone(), rec]);
        assert!(matches!(parse_manifest(&dup), Err(IngestError::Manifest { line: 2, .. })));
    }

    #[test]
    fn prepare_standardizes_and_keeps_centroid() {
        let g = Geometry::with_placement([40, 30, 20], [0.8, 0.8, 2.0], [5.0, -3.0, 10.0], crate::volume::IDENTITY).unwrap();
        let mask = BinaryMask::from_fn(g.clone(), |[x, y, z]| (10..25).contains(&x) && (8..20).contains(&y) && (5..12).contains(&z))
            .unwrap();
        let ct = mask.to_grid().map(|v| v * 1000.0);
        let (ct2, m2) = prepare_sample("v", &ct, &mask, 1.5, 64, None).unwrap();
        assert_eq!(ct2.dims(), [64; 3]);
        assert_eq!(m2.spacing(), [1.5; 3]);
        let (a, b) = (mask.centroid().unwrap(), m2.centroid().unwrap());
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        assert!(d <= 1.5, "{d}");
        assert!(prepare_sample("e", &ct, &BinaryMask::empty(g).unwrap(), 1.5, 64, None).is_err());
    }

    #[test]
    fn config_parsing() {
        let cfg = IngestConfig::parse("seed = 3\n[femur]\nmin_voxels = 30000\nspacing_mm = 1.0\nsize = 128\n").unwrap();
        assert_eq!(cfg.sections().len(), 1);
        assert_eq!(cfg.femur, Some(AnatomyConfig::standard(Anatomy::Femur)));
        assert!(IngestConfig::parse("[femur]\nmin_voxels = 1\nspacing_mm = 0\nsize = 1\n").is_err());
        assert!(IngestConfig::parse("bogus = 1").is_err());
        assert_eq!(parse_reject_list("a\n# c\n b # x\n\n"), ["a".to_string(), "b".to_string()].into());
    }
}
