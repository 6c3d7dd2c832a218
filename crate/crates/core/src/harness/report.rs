//! Byte-deterministic report emission. Rounding happens only here: two
//! decimals for percentages and mm, four for ratios in per-sample tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::ranking::RankingStabilityResult;
use super::shift::DomainShiftReport;
use super::{aggregate, io_err, mean, metric_names, metric_values, EvaluationRun, GroupStats, Result};
use crate::morph::femur::FemurMorphometry;
use crate::morph::pelvis::{define_planes, PelvicLandmarks, LANDMARK_NAMES};
use crate::morph::vertebra::{VertebraMorphometry, VERTEBRA_PARAMS};
use crate::morph::Flags;

pub const SCHEMA_VERSION: u32 = 1;

fn csv_string(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 fields")
}

fn strings(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

fn fixed(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|v| fixed(v, decimals)).unwrap_or_default()
}

fn xyz(v: Option<[f64; 3]>, decimals: usize) -> String {
    v.map(|p| p.map(|c| fixed(c, decimals)).join(" ")).unwrap_or_default()
}

fn subgroup_cell(m: &BTreeMap<String, String>) -> String {
    m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

/// Table header for a tolerance, e.g. `NSD@1.5mm`.
pub fn table1_header(tau: f64) -> Vec<String> {
    strings(&["Dataset", "Method", "Dice(%)", "HD95(mm)", "ASD(mm)"]).into_iter().chain([format!("NSD@{tau}mm")]).collect()
}

/// Summary table with one row per (dataset, run). All runs must share a
/// tolerance; the first run's tolerance names the NSD column.
pub fn table1_csv(rows: &[(&str, &EvaluationRun)]) -> String {
    let tau = rows.first().map_or(crate::metrics::DEFAULT_TAU_MM, |(_, r)| r.tau);
    csv_string(
        &table1_header(tau),
        rows.iter().map(|(dataset, run)| {
            let m = |k: usize| mean(run.rows.iter().map(|r| metric_values(&r.metrics)[k]));
            vec![dataset.to_string(), run.model_name.clone(), fixed(100.0 * m(0), 2), fixed(m(1), 2), fixed(m(2), 2), fixed(m(3), 2)]
        }),
    )
}

pub fn per_sample_csv(run: &EvaluationRun) -> String {
    let mut header = strings(&["sample_id", "anatomy", "source_subset"]);
    header.extend(metric_names(run.tau));
    header.extend(strings(&["degenerate_flag", "prediction_missing", "subgroup"]));
    csv_string(
        &header,
        run.rows.iter().map(|r| {
            let v = metric_values(&r.metrics);
            vec![
                r.sample_id.clone(),
                r.anatomy.to_string(),
                r.source_subset.clone(),
                fixed(v[0], 4),
                fixed(v[1], 2),
                fixed(v[2], 2),
                fixed(v[3], 4),
                r.metrics.degenerate_flag.as_str().to_string(),
                r.prediction_missing.to_string(),
                subgroup_cell(&r.subgroup),
            ]
        }),
    )
}

/// Long format: one line per sample, parameter and absolute error.
pub fn morph_errors_csv(run: &EvaluationRun) -> String {
    csv_string(
        &strings(&["sample_id", "anatomy", "parameter", "error"]),
        run.rows.iter().flat_map(|r| {
            r.morph_errors
                .iter()
                .map(|(p, e)| vec![r.sample_id.clone(), r.anatomy.to_string(), p.clone(), opt(*e, 4)])
        }),
    )
}

pub fn groups_csv(stats: &[GroupStats]) -> String {
    csv_string(
        &strings(&["key", "group", "metric", "mean", "std", "count"]),
        stats.iter().map(|s| {
            let d = if s.metric.ends_with("mm") && !s.metric.starts_with("nsd") { 2 } else { 4 };
            vec![s.key.clone(), s.group.clone(), s.metric.clone(), fixed(s.mean, d), fixed(s.std, d), s.count.to_string()]
        }),
    )
}

/// Plot-ready long format over several runs.
pub fn long_csv(runs: &[&EvaluationRun]) -> String {
    csv_string(
        &strings(&["model", "sample_id", "anatomy", "source_subset", "metric", "value"]),
        runs.iter().flat_map(|run| {
            let names = metric_names(run.tau);
            run.rows.iter().flat_map(move |r| {
                let v = metric_values(&r.metrics);
                let names = names.clone();
                (0..4).map(move |k| {
                    vec![
                        run.model_name.clone(),
                        r.sample_id.clone(),
                        r.anatomy.to_string(),
                        r.source_subset.clone(),
                        names[k].clone(),
                        fixed(v[k], 4),
                    ]
                })
            })
        }),
    )
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    schema_version: u32,
    run_id: &'a str,
    manifest: &'a str,
    model_name: &'a str,
    tau: f64,
    n_samples: usize,
    n_missing_predictions: usize,
    missing_predictions: Vec<&'a str>,
    degenerate_counts: BTreeMap<&'static str, usize>,
    means: BTreeMap<String, f64>,
    groups: &'a [GroupStats],
}

pub fn summary_json(run: &EvaluationRun, groups: &[GroupStats]) -> String {
    let mut degenerate_counts = BTreeMap::new();
    for r in &run.rows {
        *degenerate_counts.entry(r.metrics.degenerate_flag.as_str()).or_insert(0) += 1;
    }
    let means = metric_names(run.tau)
        .into_iter()
        .enumerate()
        .map(|(k, n)| (n, mean(run.rows.iter().map(|r| metric_values(&r.metrics)[k]))))
        .collect();
    let missing = run.missing();
    let s = Summary {
        schema_version: SCHEMA_VERSION,
        run_id: &run.run_id,
        manifest: &run.manifest,
        model_name: &run.model_name,
        tau: run.tau,
        n_samples: run.rows.len(),
        n_missing_predictions: missing.len(),
        missing_predictions: missing,
        degenerate_counts,
        means,
        groups,
    };
    serde_json::to_string_pretty(&s).expect("summary serializes") + "\n"
}

#[derive(Debug, Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

pub fn shift_json(report: &DomainShiftReport) -> String {
    serde_json::to_string_pretty(&Versioned { schema_version: SCHEMA_VERSION, body: report }).expect("serializes") + "\n"
}

pub fn shift_csv(reports: &[DomainShiftReport]) -> String {
    csv_string(
        &strings(&["model", "in_domain_dice_pct", "subset", "ood_dice_pct", "delta"]),
        reports.iter().flat_map(|r| {
            r.ood.iter().map(move |o| {
                vec![r.model_name.clone(), fixed(r.in_domain_mean, 2), o.subset.clone(), fixed(o.ood_mean, 2), fixed(o.delta, 2)]
            })
        }),
    )
}

pub fn ranking_json(result: &RankingStabilityResult) -> String {
    serde_json::to_string_pretty(&Versioned { schema_version: SCHEMA_VERSION, body: result }).expect("serializes") + "\n"
}

/// Blob-plot input: one line per task, model and rank.
pub fn ranking_csv(result: &RankingStabilityResult) -> String {
    csv_string(
        &strings(&["task", "model", "rank", "probability"]),
        result.tasks.iter().flat_map(|t| {
            t.distribution.iter().flat_map(move |(m, masses)| {
                masses.iter().map(move |x| vec![t.task.clone(), m.clone(), format!("{}", x.rank), fixed(x.probability, 6)])
            })
        }),
    )
}

pub fn femur_rows_csv(rows: &[(String, FemurMorphometry)]) -> String {
    csv_string(
        &strings(&["sample_id", "fhr_mm", "nsa_deg", "fda_xyz", "fna_xyz", "fhc_xyz", "flags"]),
        rows.iter().map(|(id, m)| {
            vec![id.clone(), opt(m.fhr, 2), opt(m.nsa, 2), xyz(m.fda, 4), xyz(m.fna, 4), xyz(m.fhc, 2), m.flags.to_string()]
        }),
    )
}

/// Landmark columns hold `x y z` positions in mm.
pub fn pelvis_rows_csv(rows: &[(String, PelvicLandmarks)]) -> String {
    let mut header = vec!["sample_id".to_string()];
    header.extend(LANDMARK_NAMES.iter().map(|n| format!("{n}_mm")));
    header.extend(strings(&["app_tilt_deg", "sisp_tilt_deg", "flags"]));
    csv_string(
        &header,
        rows.iter().map(|(id, lm)| {
            let (app, sisp) = define_planes(lm);
            let mut flags: Flags = lm.flags();
            flags.set("app", if app.is_ok() { crate::morph::ParamStatus::Valid } else { crate::morph::ParamStatus::Invalid });
            flags.set("sisp", if sisp.is_ok() { crate::morph::ParamStatus::Valid } else { crate::morph::ParamStatus::Invalid });
            let mut r = vec![id.clone()];
            r.extend(lm.as_array().into_iter().map(|p| xyz(p, 2)));
            r.push(opt(app.ok().map(|p| p.tilt_deg()), 2));
            r.push(opt(sisp.ok().map(|p| p.tilt_deg()), 2));
            r.push(flags.to_string());
            r
        }),
    )
}

pub fn vertebra_rows_csv(rows: &[(String, VertebraMorphometry)]) -> String {
    let mut header = vec!["sample_id".to_string()];
    header.extend(VERTEBRA_PARAMS.iter().map(|n| format!("{n}_mm")));
    header.push("flags".into());
    csv_string(
        &header,
        rows.iter().map(|(id, m)| {
            let mut r = vec![id.clone()];
            r.extend(m.as_array().into_iter().map(|v| opt(v, 2)));
            r.push(m.flags.to_string());
            r
        }),
    )
}

/// Write `contents` to `dir/name`, creating `dir`.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))?;
    Ok(path)
}

/// Every report for one run.
pub fn emit_reports(run: &EvaluationRun, dataset: &str, groupby: &[&str], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let groups = aggregate(run, groupby);
    let mut written = vec![
        write_file(out_dir, "per_sample.csv", &per_sample_csv(run))?,
        write_file(out_dir, "groups.csv", &groups_csv(&groups))?,
        write_file(out_dir, "long.csv", &long_csv(&[run]))?,
        write_file(out_dir, "table1.csv", &table1_csv(&[(dataset, run)]))?,
        write_file(out_dir, "summary.json", &summary_json(run, &groups))?,
    ];
    if run.rows.iter().any(|r| !r.morph_errors.is_empty()) {
        written.push(write_file(out_dir, "morph_errors.csv", &morph_errors_csv(run))?);
    }
    Ok(written)
}
