use std::fs;
use std::path::Path;

use momaplan::pipeline::{
    export_trajectory, load_task_spec, prepare_task, read_binary, read_dataset, report_stats, run_batch, stats_from_dir,
    BatchOptions, DatasetRecord, ExportFormat, PipelineError, Provenance, BINARY_FILE, JSONL_FILE, RECORD_SCHEMA,
};
use momaplan::scenarios::{toy_generation, write_toy_door_assets};
use momaplan::validate::{EffortStats, FailureReason, ValidationReport, Verdict};

fn small_generation() -> momaplan::pipeline::GenerationSpec {
    let mut g = toy_generation(3);
    g.start_samples = 12;
    g.max_starts = Some(2);
    g
}

fn batch(spec: &Path, workers: usize, out: &Path, format: ExportFormat) -> momaplan::pipeline::BatchStats {
    let spec = load_task_spec(spec).unwrap();
    run_batch(&spec, &BatchOptions { workers, out_dir: out.into(), format, debug_trace: false }).unwrap()
}

fn record(t: usize, width: usize) -> DatasetRecord {
    DatasetRecord {
        version: 1,
        problem_index: 0,
        joint_names: (0..width).map(|i| format!("j{i}")).collect(),
        dt: 0.1,
        waypoints: (0..t).map(|i| (0..width).map(|c| (i * width + c) as f64 * 0.1f64.sqrt()).collect()).collect(),
        grasp_index: 0,
        start_index: 0,
        goal: vec![0.5],
        validation: ValidationReport {
            per_waypoint: Vec::new(),
            limit_violations: Vec::new(),
            collision_hits: Vec::new(),
            verdict: Verdict::Pass,
        },
        effort: EffortStats { base_translation: 0.25, arm_rotation: 1.5 },
        provenance: Provenance { spec_hash: "0".repeat(64), seed: 7, tool_version: "0.1.0".into() },
    }
}

#[test]
fn minimal_spec_gets_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_toy_door_assets(dir.path(), &[0.4], Default::default()).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("generation");
    fs::write(&path, v.to_string()).unwrap();
    let spec = load_task_spec(&path).unwrap();
    assert_eq!(spec.generation.horizon, 30);
    assert_eq!(spec.generation.voxel_size, 0.02);
    let echo: serde_json::Value = serde_json::from_str(&spec.effective_config()).unwrap();
    assert_eq!(echo["generation"]["margin"], 0.3);
    assert_eq!(echo["generation"]["clustering"]["ap_upper"], 80);
}

fn edited(f: impl FnOnce(&mut serde_json::Value)) -> (tempfile::TempDir, Result<momaplan::pipeline::TaskSpec, PipelineError>) {
    let dir = tempfile::tempdir().unwrap();
    let path = write_toy_door_assets(dir.path(), &[0.4], Default::default()).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    fs::write(&path, v.to_string()).unwrap();
    let r = load_task_spec(&path);
    (dir, r)
}

#[test]
fn negative_scale_names_field() {
    let (_d, r) = edited(|v| v["object"]["scale"] = (-1.0).into());
    let e = r.unwrap_err().to_string();
    assert!(e.contains("object.scale"), "{e}");
}

#[test]
fn unknown_key_rejected() {
    let (_d, r) = edited(|v| v["generation"]["voxle_size"] = 0.1.into());
    let e = r.unwrap_err().to_string();
    assert!(e.contains("voxle_size"), "{e}");
}

#[test]
fn missing_mesh_file_reported() {
    let (_d, r) = edited(|v| v["scene"] = "nowhere.json".into());
    let e = r.unwrap_err().to_string();
    assert!(e.contains("scene") && e.contains("nowhere.json"), "{e}");
}

#[test]
fn missing_spec_is_io_error() {
    let e = load_task_spec(Path::new("/definitely/not/here.json")).unwrap_err();
    assert!(e.is_io());
}

#[test]
fn assets_reproduce_the_in_code_task() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_toy_door_assets(dir.path(), &[0.4], toy_generation(0)).unwrap();
    let prepared = prepare_task(&load_task_spec(&path).unwrap()).unwrap();
    let task = momaplan::scenarios::toy_door_task(0.4, 0);
    let akr = task.assemble(0).unwrap();
    let strip = |t: &momaplan::kinematics::KinematicTree| {
        let (mut links, joints) = t.clone().into_parts();
        links.iter_mut().for_each(|l| l.collision.clear());
        (links, joints)
    };
    assert_eq!(strip(&prepared.akrs[0].tree), strip(&akr.tree));
    assert_eq!(prepared.akrs[0].collision_pairs, akr.collision_pairs);
}

#[test]
fn singleton_batch() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = small_generation();
    g.max_starts = Some(1);
    let spec = write_toy_door_assets(dir.path(), &[0.4], g).unwrap();
    let out = dir.path().join("out");
    let stats = batch(&spec, 1, &out, ExportFormat::Jsonl);
    assert_eq!(stats.attempted, 1);
    assert!(stats.valid <= stats.attempted);
    let (again, records) = stats_from_dir(&out).unwrap();
    assert_eq!(again.valid, stats.valid);
    assert_eq!(records.len(), stats.valid);
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_toy_door_assets(dir.path(), &[0.35, 0.5], small_generation()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let sa = batch(&spec, 1, &a, ExportFormat::Binary);
    let sb = batch(&spec, 3, &b, ExportFormat::Binary);
    assert_eq!(sa.attempted, 4);
    assert_eq!((sa.attempted, sa.valid, &sa.failures), (sb.attempted, sb.valid, &sb.failures));
    for f in [BINARY_FILE, "dataset.meta.jsonl", "failures.jsonl", "effective_config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exported_records_revalidate() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = write_toy_door_assets(dir.path(), &[0.3, 0.45, 0.6], small_generation()).unwrap();
    let out = dir.path().join("out");
    let stats = batch(&spec_path, 1, &out, ExportFormat::Jsonl);
    assert!(stats.valid > 0, "{stats:?}");
    let records = read_dataset(&out.join(JSONL_FILE)).unwrap();
    assert_eq!(records.len(), stats.valid);
    let prepared = prepare_task(&load_task_spec(&spec_path).unwrap()).unwrap();
    assert_eq!(prepared.revalidate(&records).unwrap(), Vec::<usize>::new());

    let schema: serde_json::Value = serde_json::from_str(RECORD_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    for line in fs::read_to_string(out.join(JSONL_FILE)).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(validator.is_valid(&v), "{line}");
    }
}

#[test]
fn binary_layout_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = record(30, 11);
    let path = export_trajectory(&r, dir.path(), ExportFormat::Binary).unwrap();
    let bytes = fs::read(&path).unwrap();
    let header = 4 + 2 + 4 + 4 + 8 + r.joint_names.iter().map(|n| 4 + n.len()).sum::<usize>();
    assert_eq!(bytes.len() - header, 30 * 11 * 8);
    assert_eq!(&bytes[..4], b"AKRT");
    let b = read_binary(&mut bytes.as_slice()).unwrap().unwrap();
    assert_eq!(b.waypoints, r.waypoints);
    assert_eq!(read_dataset(&path).unwrap(), vec![r]);
}

#[test]
fn jsonl_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = record(5, 4);
    r.waypoints[2][1] = std::f64::consts::PI / 7.0;
    r.waypoints[3][3] = -1e-17;
    let path = export_trajectory(&r, dir.path(), ExportFormat::Jsonl).unwrap();
    let back = read_dataset(&path).unwrap();
    let bits = |r: &DatasetRecord| r.waypoints.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back[0]), bits(&r));
}

#[test]
fn throughput_arithmetic() {
    let records: Vec<_> = (0..10).map(|_| record(2, 3)).collect();
    let s = report_stats(&records, &[FailureReason::Collision], 5.0);
    assert_eq!(s.throughput, 2.0);
    assert_eq!((s.attempted, s.valid), (11, 10));
}

#[test]
fn effort_statistics_match_direct_computation() {
    let base = [0.1, 0.7, 0.25, 1.3, 0.0, 0.9];
    let arm = [2.0, 0.5, 1.25, 3.0, 0.75, 1.1];
    let records: Vec<_> = base
        .iter()
        .zip(&arm)
        .map(|(&b, &a)| DatasetRecord { effort: EffortStats { base_translation: b, arm_rotation: a }, ..record(2, 3) })
        .collect();
    let e = report_stats(&records, &[], 1.0).effort.unwrap();
    let oracle = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().fold(0.0, |s, v| s + v) / n;
        let var = x.iter().fold(0.0, |s, v| s + (v - m).powi(2)) / (n - 1.0);
        (m, var.sqrt())
    };
    let (bm, bs) = oracle(&base);
    let (am, as_) = oracle(&arm);
    assert!((e.base_translation.mean - bm).abs() < 1e-12 && (e.base_translation.stddev - bs).abs() < 1e-12);
    assert!((e.arm_rotation.mean - am).abs() < 1e-12 && (e.arm_rotation.stddev - as_).abs() < 1e-12);
}
