use std::path::Path;
use std::process::{Command, Output};

fn zeropose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zeropose")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset plus a 60-view template store.
fn setup(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    let ds = dir.join("ds");
    let store = dir.join("store");
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"template_count": 60}"#).unwrap();
    assert!(zeropose(&["synth-dataset", "--out", s(&ds), "--images", "4"]).status.success());
    let out = zeropose(&["render-templates", "--config", s(&cfg), "--dataset", s(&ds), "--out", s(&store)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (ds, store, cfg)
}

#[test]
fn estimate_evaluate_ablate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, store, cfg) = setup(dir.path());
    let results = dir.path().join("r.csv");
    let common = ["--config", s(&cfg), "--dataset", s(&ds), "--store", s(&store)];

    let out = zeropose(&[&["estimate"][..], &common, &["--out", s(&results)]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&results).unwrap();
    assert!(csv.starts_with("scene_id,im_id,obj_id,score,R,t,time\n"));
    assert_eq!(csv.lines().count(), 1 + 8);
    assert!(dir.path().join("r.diagnostics.json").exists());

    let report = dir.path().join("report.json");
    let out = zeropose(&["evaluate", "--dataset", s(&ds), "--results", s(&results), "--out", s(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["metric"], "AR(MSSD,MSPD)");
    assert!(v["summary"]["ar"].as_f64().unwrap() > 0.5);

    let abl = dir.path().join("abl.csv");
    let out = zeropose(&[&["ablate"][..], &common, &["--sweep", "correspondences", "--values", "20", "--out", s(&abl)]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&abl).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("value,ar\n20,"));
}

#[test]
fn missing_mask_is_a_diagnostic_not_an_abort() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, store, cfg) = setup(dir.path());
    std::fs::remove_file(ds.join("test/000001/mask_visib/000002_000001.png")).unwrap();
    let results = dir.path().join("r.csv");
    let out = zeropose(&["estimate", "--config", s(&cfg), "--dataset", s(&ds), "--store", s(&store), "--out", s(&results)]);
    assert!(out.status.success());
    let diags: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.diagnostics.json")).unwrap()).unwrap();
    let diags = diags.as_array().unwrap();
    assert_eq!(diags.len(), 1);
    assert_eq!(diags[0]["stage"], "segmentation-missing");
    assert_eq!((diags[0]["im_id"].as_u64(), diags[0]["obj_id"].as_u64()), (Some(2), Some(2)));
    assert_eq!(std::fs::read_to_string(&results).unwrap().lines().count(), 1 + 7);
}

#[test]
fn detections_json_replaces_gt_masks() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, store, cfg) = setup(dir.path());
    let dets = serde_json::json!([
        {"scene_id": 1, "im_id": 0, "obj_id": 1, "bbox": [0, 0, 1, 1], "mask_png_path": "ds/test/000001/mask_visib/000000_000000.png"},
        {"scene_id": 1, "im_id": 3, "obj_id": 2, "bbox": [0, 0, 1, 1], "mask_png_path": "ds/test/000001/mask_visib/000003_000001.png"}
    ]);
    let det_path = dir.path().join("dets.json");
    std::fs::write(&det_path, serde_json::to_vec(&dets).unwrap()).unwrap();
    let results = dir.path().join("r.csv");
    let out = zeropose(&[
        "estimate", "--config", s(&cfg), "--dataset", s(&ds), "--store", s(&store), "--masks", s(&det_path), "--out", s(&results),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&results).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("1,0,1,") && rows[1].starts_with("1,3,2,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"correspondence_top_k": 2}"#).unwrap();
    assert_eq!(zeropose(&["estimate", "--config", s(&bad)]).status.code(), Some(2));
    assert_eq!(zeropose(&["estimate"]).status.code(), Some(2));
    assert_eq!(zeropose(&["estimate", "--backend", "magic"]).status.code(), Some(2));

    let missing = dir.path().join("nope");
    let out = zeropose(&["estimate", "--dataset", s(&missing), "--store", s(&missing), "--out", s(&dir.path().join("r.csv"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn selftest_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("selftest.json");
    let out = zeropose(&["selftest", "--out", s(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
}
