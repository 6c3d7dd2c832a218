//! Manifest building over a small on-disk dataset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use proptest::prelude::*;

use xr23d::ingest::{
    assign_splits, build_manifest, curate_sample, manifest_to_jsonl, split_counts, AnatomyConfig, Anatomy,
    Completeness, Curation, CurationRule, IngestConfig, Split, Structure,
};
use xr23d::volume::{nifti, BinaryMask, Geometry, VoxelGrid};

fn write_case(root: &Path, anatomy: &str, case: &str, seg: &VoxelGrid<f32>, meta: Option<&str>) {
    let dir = root.join(anatomy).join("SUB").join(case);
    fs::create_dir_all(&dir).unwrap();
    nifti::write_volume(&seg.map(|&v| if v > 0.0 { 700.0 } else { -1000.0 }), dir.join("ct.nii.gz")).unwrap();
    nifti::write_volume(seg, dir.join("seg.nii.gz")).unwrap();
    if let Some(m) = meta {
        fs::write(dir.join("meta.json"), m).unwrap();
    }
}

/// Labelled slabs along z: label k occupies z = 2k..2k+2.
fn slabs(labels: &[i32]) -> VoxelGrid<f32> {
    let g = Geometry::new([8, 8, 2 * labels.len().max(1) + 2], [1.0; 3]).unwrap();
    let [nx, ny, nz] = g.dims;
    let data = (0..nx * ny * nz)
        .map(|i| {
            let z = i / (nx * ny);
            labels.get(z / 2).copied().unwrap_or(0) as f32
        })
        .collect();
    VoxelGrid::new(g, data).unwrap()
}

fn small(anatomy: Anatomy) -> AnatomyConfig {
    AnatomyConfig { min_voxels: 10, size: 8, spacing_mm: 1.0, ..AnatomyConfig::standard(anatomy) }
}

fn dataset(root: &Path) {
    for k in 0..6 {
        write_case(root, "femur", &format!("c{k}"), &slabs(&[1, 1]), None);
    }
    write_case(root, "femur", "tiny", &slabs(&[]), None);
    let missing = root.join("femur/SUB/nofile");
    fs::create_dir_all(&missing).unwrap();
    nifti::write_volume(&slabs(&[1]), missing.join("seg.nii.gz")).unwrap();
    let meta = r#"{"patient_id": "P9", "vertebrae": [
        {"label": 20, "subgroup": {"level": "L1", "severity": "mild"}},
        {"label": 21, "subgroup": {"level": "L2", "severity": "severe"}},
        {"label": 22, "subgroup": {"level": "L3"}}]}"#;
    write_case(root, "vertebra", "scan", &slabs(&[20, 21, 23]), Some(meta));
    let full: Vec<i32> = (1..=24).collect();
    write_case(root, "rib", "full", &slabs(&full), None);
    write_case(root, "rib", "partial", &slabs(&full[..23]), None);
    write_case(root, "rib", "unlabelled", &slabs(&[1; 24]), Some(r#"{"rib_labels": false}"#));
    fs::write(root.join("reject.txt"), "femur-SUB-c5\n").unwrap();
}

fn config() -> IngestConfig {
    let mut femur = small(Anatomy::Femur);
    femur.reject_list = Some("reject.txt".into());
    let rib = AnatomyConfig { min_voxels: 0, rib_min_extent_mm: 40.0, ..small(Anatomy::Rib) };
    IngestConfig {
        seed: 11,
        femur: Some(femur),
        hip: None,
        rib: Some(rib),
        vertebra: Some(AnatomyConfig { min_voxels: 0, ..small(Anatomy::Vertebra) }),
    }
}

#[test]
fn manifest_records_skips_and_reruns() {
    let root = tempfile::tempdir().unwrap();
    dataset(root.path());
    let out_a = tempfile::tempdir().unwrap();
    let a = build_manifest(root.path(), &config(), out_a.path()).unwrap();
    let skips: BTreeMap<&str, &str> = a.skips.iter().map(|s| (s.sample_id.as_str(), s.reason.as_str())).collect();
    assert_eq!(skips["femur-SUB-tiny"], "below-threshold");
    assert_eq!(skips["femur-SUB-c5"], "manual-list");
    assert!(skips["femur-SUB-nofile"].starts_with("missing-file"));
    assert_eq!(skips["rib-SUB-partial"], "incomplete-structure");
    assert_eq!(skips["vertebra-SUB-scan-L3"], "label-absent: 22");

    let ids: Vec<&str> = a.records.iter().map(|r| r.sample_id.as_str()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    assert!(ids.contains(&"rib-SUB-full") && ids.contains(&"rib-SUB-unlabelled"));
    let unlabelled = a.records.iter().find(|r| r.sample_id == "rib-SUB-unlabelled").unwrap();
    assert_eq!(unlabelled.subgroup["completeness"], "heuristic");

    let l1 = a.records.iter().find(|r| r.sample_id == "vertebra-SUB-scan-L1").unwrap();
    let l2 = a.records.iter().find(|r| r.sample_id == "vertebra-SUB-scan-L2").unwrap();
    assert_eq!(l1.split, l2.split);
    assert_eq!(l1.subgroup["severity"], "mild");
    assert_eq!(l1.subgroup["patient_id"], "P9");

    for r in &a.records {
        let m = nifti::read_mask(out_a.path().join(&r.mask_path)).unwrap();
        assert_eq!(m.dims(), [8; 3]);
        assert!(out_a.path().join(&r.ct_path).is_file());
    }

    let out_b = tempfile::tempdir().unwrap();
    let b = build_manifest(root.path(), &config(), out_b.path()).unwrap();
    assert_eq!(manifest_to_jsonl(&a.records), manifest_to_jsonl(&b.records));
    for r in &a.records {
        assert_eq!(fs::read(out_a.path().join(&r.mask_path)).unwrap(), fs::read(out_b.path().join(&r.mask_path)).unwrap());
    }
}

proptest! {
    #[test]
    fn curation_is_monotone_in_threshold(count in 0usize..512, t1 in 0usize..600, t2 in 0usize..600) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let g = Geometry::new([8, 8, 8], [1.0; 3]).unwrap();
        let mask = BinaryMask::new(g, (0..512).map(|i| u8::from(i < count)).collect()).unwrap();
        let accepted = |t| matches!(
            curate_sample("s", &mask, Structure::Unlabelled, &CurationRule::threshold(Anatomy::Femur, t)),
            Curation::Accept { .. }
        );
        prop_assert!(!accepted(hi) || accepted(lo));
    }

    #[test]
    fn splits_partition_groups(n_groups in 1usize..60, per_group in 1usize..4, seed in 0u64..100) {
        let members: BTreeMap<String, String> = (0..n_groups)
            .flat_map(|g| (0..per_group).map(move |k| (format!("g{g}-s{k}"), format!("g{g}"))))
            .collect();
        let s = assign_splits(&members, seed);
        prop_assert_eq!(s.len(), members.len());
        let (train, val, test) = split_counts(n_groups);
        prop_assert_eq!(train + val + test, n_groups);
        let groups_in = |want: Split| {
            members.iter().filter(|(id, _)| s[*id] == want).map(|(_, g)| g.clone()).collect::<std::collections::BTreeSet<_>>().len()
        };
        prop_assert_eq!((groups_in(Split::Train), groups_in(Split::Val), groups_in(Split::Test)), (train, val, test));
        prop_assert_eq!(&s, &assign_splits(&members, seed));
    }
}

#[test]
fn rib_rule_without_labels_uses_extent() {
    let g = Geometry::new([4, 4, 100], [1.0, 1.0, 2.5]).unwrap();
    let tall = BinaryMask::from_fn(g.clone(), |[_, _, z]| z < 80).unwrap();
    let short = BinaryMask::from_fn(g, |[_, _, z]| z < 40).unwrap();
    let rule = CurationRule { completeness: Completeness::FullRibSet, ..CurationRule::threshold(Anatomy::Rib, 0) };
    assert_eq!(curate_sample("t", &tall, Structure::Unlabelled, &rule), Curation::Accept { heuristic: true });
    assert!(matches!(curate_sample("s", &short, Structure::Unlabelled, &rule), Curation::Reject(_)));
}
