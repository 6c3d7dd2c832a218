//! End-to-end runs of the `xr23d` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[ingest]
anatomy = ["femur", "vertebra"]
femur = { min_voxels = 1000, spacing_mm = 2.0, size = 48 }
vertebra = { min_voxels = 0, spacing_mm = 1.5, size = 32 }
"#;

fn xr23d(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_xr23d"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("XR23D_")) {
        cmd.env_remove(k);
    }
    cmd.current_dir(dir).args(args).envs(env.iter().copied()).output().unwrap()
}

#[track_caller]
fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = xr23d(dir, args, &[]);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Phantom dataset, curated manifest and predictions for two models. The
/// second model misses one test sample.
fn pipeline(dir: &Path, threads: &str) {
    fs::write(dir.join("small.toml"), SMALL).unwrap();
    ok(dir, &["--threads", threads, "phantom", "--cases", "4", "--out", "data"]);
    ok(dir, &["--threads", threads, "--config", "small.toml", "ingest", "--root", "data", "--out", "ing"]);
    let manifest = fs::read_to_string(dir.join("ing/manifest.jsonl")).unwrap();
    let test: Vec<(String, String)> = manifest
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["split"] == "test")
        .map(|v| (v["sample_id"].as_str().unwrap().to_string(), v["mask_path"].as_str().unwrap().to_string()))
        .collect();
    assert!(test.len() >= 2);
    for (model, skip) in [("a", usize::MAX), ("b", 0)] {
        let pred = dir.join(format!("pred_{model}"));
        fs::create_dir_all(&pred).unwrap();
        for (i, (id, mask)) in test.iter().enumerate() {
            if i != skip {
                fs::copy(dir.join("ing").join(mask), pred.join(format!("{id}.nii.gz"))).unwrap();
            }
        }
    }
    let m = "ing/manifest.jsonl";
    ok(dir, &["--threads", threads, "drr", "--manifest", m, "--split", "test", "--misalignment", "--out", "drr"]);
    ok(dir, &["--threads", threads, "morph", "--manifest", m, "--split", "test", "--out", "morph"]);
    for model in ["a", "b"] {
        let (pred, out) = (format!("pred_{model}"), format!("eval_{model}"));
        ok(dir, &["--threads", threads, "eval", "--manifest", m, "--pred", &pred, "--groupby", "phantom", "--out", &out]);
    }
    ok(dir, &["--threads", threads, "report", "--run", "P=eval_a/run.json", "--run", "P=eval_b/run.json", "--out", "report"]);
}

#[test]
fn pipeline_outputs_and_determinism() {
    let one = tempfile::tempdir().unwrap();
    pipeline(one.path(), "1");
    let d = one.path();
    for f in ["ing/manifest.jsonl", "morph/morph_femur.csv", "morph/morph_vertebra.csv", "report/table1.csv", "report/ranking.json"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    assert!(fs::read_dir(d.join("drr")).unwrap().count() > 6);
    let per_sample = fs::read_to_string(d.join("eval_b/per_sample.csv")).unwrap();
    assert!(per_sample.contains("empty_pred"));
    let run_a: serde_json::Value = serde_json::from_slice(&fs::read(d.join("eval_a/run.json")).unwrap()).unwrap();
    assert!(run_a["rows"].as_array().unwrap().iter().all(|r| r["metrics"]["dsc"] == 1.0));

    let two = tempfile::tempdir().unwrap();
    pipeline(two.path(), "3");
    assert_eq!(files(one.path()), files(two.path()));
}

#[test]
fn effective_config_reproduces_run() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["--seed", "9", "phantom", "--cases", "3", "--noise", "0.2", "--kind", "femur", "--out", "first"]);
    fs::copy(d.join("first/effective_config.toml"), d.join("again.toml")).unwrap();
    let out = ok(d, &["--config", "again.toml", "phantom", "--out", "second"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed = 9"));
    assert_eq!(files(&d.join("first")), files(&d.join("second")));
}

#[test]
fn flag_beats_env_beats_file() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fs::write(d.join("small.toml"), SMALL.to_string() + "\n[eval]\ntau = 2.0\n").unwrap();
    ok(d, &["phantom", "--cases", "2", "--kind", "vertebra", "--out", "data"]);
    ok(d, &["--config", "small.toml", "ingest", "--root", "data", "--out", "ing"]);
    fs::create_dir_all(d.join("pred")).unwrap();
    for e in fs::read_dir(d.join("ing/volumes")).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_string();
        if let Some(id) = name.strip_suffix("_mask.nii.gz") {
            fs::copy(&p, d.join("pred").join(format!("{id}.nii.gz"))).unwrap();
        }
    }
    let tau = |out: &str| {
        let text = fs::read_to_string(d.join(out).join("effective_config.toml")).unwrap();
        text.parse::<toml::Table>().unwrap()["eval"]["tau"].as_float().unwrap()
    };
    let base = ["--config", "small.toml", "eval", "--manifest", "ing/manifest.jsonl", "--pred", "pred"];
    let run = |out: &str, extra: &[&str], env: &[(&str, &str)]| {
        let args: Vec<&str> = base.iter().copied().chain(extra.iter().copied()).chain(["--out", out]).collect();
        let o = xr23d(d, &args, env);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("file", &[], &[]);
    run("env", &[], &[("XR23D_TAU", "3.0")]);
    run("flag", &["--tau", "4.0"], &[("XR23D_TAU", "3.0")]);
    assert_eq!((tau("file"), tau("env"), tau("flag")), (2.0, 3.0, 4.0));
}

#[test]
fn usage_and_runtime_errors() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    assert_eq!(xr23d(d, &[], &[]).status.code(), Some(2));
    assert_eq!(xr23d(d, &["eval", "--bogus"], &[]).status.code(), Some(2));

    fs::write(d.join("bad.toml"), "[eval]\nnot_a_key = 1\n").unwrap();
    let o = xr23d(d, &["--config", "bad.toml", "eval", "--out", "x"], &[]);
    assert_eq!(o.status.code(), Some(2));

    let o = xr23d(d, &["eval", "--manifest", "missing.jsonl", "--pred", "p", "--out", "x"], &[]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    let last = stderr.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    assert!(v["error"]["kind"].is_string() && v["error"]["message"].is_string());
}
