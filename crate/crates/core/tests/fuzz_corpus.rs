//! Replays the fuzz seed corpus through each parser: valid seeds parse,
//! malformed seeds are rejected with an error rather than a panic.

use std::fs;
use std::path::PathBuf;

use xr23d::ingest::{parse_manifest, IngestConfig};
use xr23d::morph::femur::parse_localization_sidecar;
use xr23d::volume::nifti;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn nifti_seeds() {
    for (name, bytes) in seeds("nifti_decode") {
        let r = nifti::decode(&bytes);
        assert_eq!(r.is_ok(), !name.starts_with("truncated"), "{name}: {r:?}");
        if let Ok(g) = r {
            assert_eq!(g.geometry().dims, [3, 2, 2]);
        }
    }
    for (name, bytes) in seeds("nifti_header") {
        assert!(nifti::parse_header(&bytes).is_ok(), "{name}");
        assert!(nifti::parse_header(&bytes[..347]).is_err());
    }
}

#[test]
fn manifest_seeds() {
    for (name, bytes) in seeds("manifest_jsonl") {
        let r = parse_manifest(text(&bytes));
        assert_eq!(r.is_ok(), name == "three_records.jsonl", "{name}: {r:?}");
    }
}

#[test]
fn sidecar_seeds() {
    for (name, bytes) in seeds("localization_sidecar") {
        let r = parse_localization_sidecar(text(&bytes));
        assert_eq!(r.is_ok(), name == "two_cases.json", "{name}: {r:?}");
    }
}

#[test]
fn config_seeds() {
    for (name, bytes) in seeds("ingest_config") {
        let r = IngestConfig::parse(text(&bytes));
        assert_eq!(r.is_ok(), name == "standard.toml", "{name}: {r:?}");
    }
}
