use std::path::{Path, PathBuf};
use std::process::Command;

use ctrobust::calibration::NoiseModelParams;
use ctrobust::ctsim::{GeometryOverrides, ScannerGeometry};
use ctrobust::io::{load_case_annotations, read_box_csv, DatasetManifest};
use ctrobust::metrics::{geometric_weights, iou, DEFAULT_IOU_THRESHOLDS};
use ctrobust::{AnnotationKind, AnnotationSet, Box3};
use ctrobust_cli::augment::{AugmentManifest, RecordStatus};
use ctrobust_cli::calibrate::{DistributionFile, NoiseModelFile};
use ctrobust_cli::phantom::{generate, PhantomOptions};
use ctrobust_cli::report::Summary;
use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_ctrobust");

fn dataset(dir: &Path, cases: usize, annotation: AnnotationKind) -> PathBuf {
    let options = PhantomOptions {
        cases,
        size: 96,
        pixel_mm: 2.0,
        slices: 6,
        annotation,
        params: NoiseModelParams { q0: 1e6, sigma: 0.0, n_theta: 720 },
        geometry: GeometryOverrides { phi: None, n_det: Some(384) },
        seed: 11,
        ..PhantomOptions::default()
    };
    generate(&dir.join("data"), &options).unwrap()
}

fn stub(task: &str, extra: &str) -> Value {
    json!({
        "name": task,
        "task": task,
        "command_template": format!("{BIN} stub-model --task {task} {extra} {{input}} {{output}}"),
        "timeout_secs": 120
    })
}

fn config(manifest: &Path, ladders: Value, models: Value) -> Value {
    json!({
        "manifest": manifest,
        "output_dir": "out",
        "seed": 5,
        "geometry": {"n_det": 384},
        "tuning": {
            "grid": {"q0": [1e5, 1e6], "sigma": [0], "n_theta": [720], "fine_factors": [1.0], "fine_n_theta_offsets": [0]},
            "max_cases": 2
        },
        "ladders": ladders,
        "models": models
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn ctrobust(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn stage(stage: &str, cfg: &Path, out: &str) -> (i32, String) {
    let out_dir = cfg.parent().unwrap().join(out);
    ctrobust(&[stage, "--config", cfg.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap()])
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn calibrate_writes_valid_artifacts_deterministically() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), 3, AnnotationKind::Segmentation);
    let cfg = write_config(tmp.path(), &config(&manifest, json!([{"kind": "noise"}]), json!([stub("segmentation", "")])));
    for out in ["a", "b"] {
        let (code, log) = stage("calibrate", &cfg, out);
        assert_eq!(code, 0, "{log}");
    }
    let dir = |o: &str| tmp.path().join(o).join("calibration");
    for f in ["geometry.json", "noise_model.json", "noise_distribution.json"] {
        assert_eq!(std::fs::read(dir("a").join(f)).unwrap(), std::fs::read(dir("b").join(f)).unwrap(), "{f}");
    }
    let text = |f: &str| std::fs::read_to_string(dir("a").join(f)).unwrap();
    let geometry: ScannerGeometry = serde_json::from_str(&text("geometry.json")).unwrap();
    geometry.validate().unwrap();
    assert_eq!(geometry.n_det, 384);
    let model: NoiseModelFile = serde_json::from_str(&text("noise_model.json")).unwrap();
    assert_eq!(model.params.q0, 1e6);
    assert_eq!(model.tuning_cases, vec!["case_000", "case_001"]);
    let dist: DistributionFile = serde_json::from_str(&text("noise_distribution.json")).unwrap();
    assert_eq!(dist.cases.len(), 3);
    assert!(dist.excluded.is_empty());
}

#[test]
fn corrupt_case_is_excluded_and_reported() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), 3, AnnotationKind::Segmentation);
    std::fs::write(tmp.path().join("data/case_001.nii.gz"), b"not a volume").unwrap();
    let cfg = write_config(tmp.path(), &config(&manifest, json!([{"kind": "noise"}]), json!([stub("segmentation", "")])));
    let (code, log) = stage("calibrate", &cfg, "out");
    assert_eq!(code, 3, "{log}");
    assert!(log.contains("case_001"), "{log}");
    let dist: DistributionFile =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/calibration/noise_distribution.json")).unwrap())
            .unwrap();
    assert_eq!(dist.cases.iter().map(|c| c.case_id.as_str()).collect::<Vec<_>>(), ["case_000", "case_002"]);
    assert_eq!(dist.excluded.len(), 1);
    assert_eq!(dist.excluded[0].case_id, "case_001");
    assert!(dist.excluded[0].error.contains("checksum"), "{}", dist.excluded[0].error);
}

#[test]
fn noise_ladder_gives_seven_volumes_per_case_and_repeats_exactly() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), 2, AnnotationKind::Segmentation);
    let cfg = write_config(tmp.path(), &config(&manifest, json!([{"kind": "noise"}]), json!([stub("segmentation", "")])));
    for out in ["a", "b"] {
        assert_eq!(stage("calibrate", &cfg, out).0, 0);
        let (code, log) = stage("augment", &cfg, out);
        assert_eq!(code, 0, "{log}");
    }
    let root = |o: &str| tmp.path().join(o).join("augmented");
    let m = AugmentManifest::load(&ctrobust_cli::output::Layout::new(tmp.path().join("a"))).unwrap();
    assert_eq!(m.records.len(), 14);
    assert!(m.records.iter().all(|r| r.status == RecordStatus::Ok));
    let files = files_under(&root("a"));
    assert_eq!(files.iter().filter(|f| f.to_string_lossy().ends_with(".nii.gz")).count(), 14);
    assert_eq!(files, files_under(&root("b")));
    for f in &files {
        assert_eq!(std::fs::read(root("a").join(f)).unwrap(), std::fs::read(root("b").join(f)).unwrap(), "{}", f.display());
    }
    assert_eq!(m.records[0].path.as_deref(), Some("augmented/noise/10/case_000.nii.gz"));
    assert_eq!(m.records[1].case_id, "case_001");
}

#[test]
fn annotation_free_case_skips_metal() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), 2, AnnotationKind::Segmentation);
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    let case = m["cases"][1].as_object_mut().unwrap();
    case.remove("annotation_path");
    case.remove("annotation_kind");
    case.remove("annotation_sha256");
    std::fs::write(&manifest, serde_json::to_string(&m).unwrap()).unwrap();
    let cfg = write_config(
        tmp.path(),
        &config(&manifest, json!([{"kind": "metal", "levels": [5]}]), json!([stub("segmentation", "")])),
    );
    assert_eq!(stage("calibrate", &cfg, "out").0, 0);
    let (code, log) = stage("augment", &cfg, "out");
    assert_eq!(code, 0, "{log}");
    assert!(log.contains("case_001: metal ladder skipped"), "{log}");
    let m = AugmentManifest::load(&ctrobust_cli::output::Layout::new(tmp.path().join("out"))).unwrap();
    let status: Vec<_> = m.records.iter().map(|r| (r.case_id.as_str(), r.status)).collect();
    assert_eq!(status, [("case_000", RecordStatus::Ok), ("case_001", RecordStatus::Skipped)]);
    assert_eq!(m.records[1].message.as_deref(), Some("no annotation"));
}

#[test]
fn evaluation_rows_and_partial_failure() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), 3, AnnotationKind::Segmentation);
    let script = tmp.path().join("flaky.sh");
    std::fs::write(
        &script,
        format!("#!/bin/sh\ncase \"$1\" in */data/case_001.nii.gz) exit 1;; esac\nexec {BIN} stub-model \"$1\" \"$2\"\n"),
    )
    .unwrap();
    Command::new("chmod").args(["+x", script.to_str().unwrap()]).status().unwrap();
    let flaky = json!({
        "name": "flaky", "task": "segmentation",
        "command_template": format!("{} {{input}} {{output}}", script.display()), "timeout_secs": 120
    });
    let ladders = json!([{"kind": "noise", "levels": [10, 20]}, {"kind": "motion_mag", "levels": [5]}]);
    let cfg = write_config(tmp.path(), &config(&manifest, ladders, json!([stub("segmentation", ""), stub("detection", ""), flaky])));
    for s in ["calibrate", "augment"] {
        assert_eq!(stage(s, &cfg, "out").0, 0);
    }
    let (code, log) = stage("evaluate", &cfg, "out");
    assert_eq!(code, 3, "{log}");
    let eval = tmp.path().join("out/evaluation");
    // one metric per model: models × cases × (1 + Σ levels)
    let seg = read_csv(&eval.join("segmentation/metrics.csv"));
    let det = read_csv(&eval.join("detection/metrics.csv"));
    assert_eq!(seg.len() + det.len(), 2 * 3 * (1 + 3));
    assert!(seg.iter().all(|r| r[3] == "dice"));
    assert!(det.iter().all(|r| r[3] == "map"));
    assert!(read_csv(&eval.join("segmentation/failures.csv")).is_empty());

    let flaky_rows = read_csv(&eval.join("flaky/metrics.csv"));
    assert_eq!(flaky_rows.len(), 3 * 4 - 1);
    assert!(!flaky_rows.iter().any(|r| r[0] == "clean" && r[2] == "case_001"));
    let failures = read_csv(&eval.join("flaky/failures.csv"));
    assert_eq!(failures.len(), 1);
    assert_eq!(&failures[0][..3], ["clean", "clean", "case_001"]);
    assert_eq!(failures[0][3], "model failure (exit 1)");

    let (code, log) = stage("report", &cfg, "out");
    assert_eq!(code, 3, "{log}");
    let summary: Summary =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/report/summary.json")).unwrap()).unwrap();
    let flaky = summary.models.iter().find(|m| m.model == "flaky").unwrap();
    assert_eq!(flaky.failures, 1);
    assert_eq!(flaky.metrics[0].base.n, 2);
    assert_eq!(summary.missing.len(), 1);
    assert_eq!(summary.missing[0].model, "flaky");
    assert!(tmp.path().join("out/report/plots/flaky_noise_dice.png").exists());
}

/// Greedy matching of equally confident boxes in input order.
fn precision_times_recall(preds: &[Box3], truths: &[Box3], thr: f64) -> f64 {
    if truths.is_empty() {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    let mut used = vec![false; truths.len()];
    let mut tp = 0;
    for p in preds {
        let best = (0..truths.len())
            .filter(|&j| !used[j] && iou(p, &truths[j]) > 0.0 && iou(p, &truths[j]) >= thr)
            .max_by(|&a, &b| iou(p, &truths[a]).total_cmp(&iou(p, &truths[b])).then(b.cmp(&a)));
        if let Some(j) = best {
            used[j] = true;
            tp += 1;
        }
    }
    if preds.is_empty() {
        return 0.0;
    }
    (tp as f64 / preds.len() as f64) * (tp as f64 / truths.len() as f64)
}

#[test]
fn fixed_confidence_map_is_precision_times_recall() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), 3, AnnotationKind::Detection);
    let det = stub("detection", "--fixed-confidence 0.5");
    // heavy noise gives speckle components in the lungs
    let cfg = write_config(tmp.path(), &config(&manifest, json!([{"kind": "noise", "levels": [200]}]), json!([det])));
    for s in ["calibrate", "augment", "evaluate"] {
        let (code, log) = stage(s, &cfg, "out");
        assert_eq!(code, 0, "{s}: {log}");
    }
    let rows = read_csv(&tmp.path().join("out/evaluation/detection/metrics.csv"));
    let data = DatasetManifest::load(&manifest).unwrap();
    let mut with_false_positives = 0;
    for case in &data.cases {
        let augmented = tmp.path().join(format!("out/augmented/noise/200/{}.nii.gz", case.case_id));
        for (kind, volume) in [("clean", case.volume_path.clone()), ("noise", augmented)] {
            let pred_path = tmp.path().join(format!("{}_{kind}.csv", case.case_id));
            let (code, log) = ctrobust(&[
                "stub-model",
                "--task",
                "detection",
                "--fixed-confidence",
                "0.5",
                volume.to_str().unwrap(),
                pred_path.to_str().unwrap(),
            ]);
            assert_eq!(code, 0, "{log}");
            let preds = read_box_csv(&pred_path).unwrap();
            let AnnotationSet::Detection(truths) =
                load_case_annotations(case.annotation_path.as_ref().unwrap(), AnnotationKind::Detection, None, &case.case_id)
                    .unwrap()
            else {
                unreachable!()
            };
            let want = DEFAULT_IOU_THRESHOLDS.iter().map(|&t| precision_times_recall(&preds, &truths, t)).sum::<f64>()
                / DEFAULT_IOU_THRESHOLDS.len() as f64;
            let row = rows.iter().find(|r| r[0] == kind && r[2] == case.case_id).unwrap();
            let got: f64 = row[4].parse().unwrap();
            assert!((got - want).abs() < 1e-12, "{} {kind}: {got} vs {want}", case.case_id);
            with_false_positives += usize::from(preds.len() > truths.len() && want > 0.0);
        }
    }
    assert!(with_false_positives > 0, "no volume had both hits and false positives");
}

/// Sets up an output tree holding only a hand-written metrics file.
fn report_fixture(ladder: Value, rows: &[(&str, &str, &str, f64)]) -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    let cases: Vec<Value> = (0..3)
        .map(|i| {
            let p = data.join(format!("c{i}.nii.gz"));
            std::fs::write(&p, b"").unwrap();
            json!({"case_id": format!("c{i}"), "volume_path": p})
        })
        .collect();
    let manifest = data.join("manifest.json");
    std::fs::write(&manifest, json!({"cases": cases}).to_string()).unwrap();
    let mut cfg = config(&manifest, json!([ladder]), json!([stub("segmentation", "")]));
    cfg["models"][0]["name"] = json!("m");
    let cfg_path = write_config(tmp.path(), &cfg);
    let eval = tmp.path().join("out/evaluation/m");
    std::fs::create_dir_all(&eval).unwrap();
    let mut text = String::from("kind,severity,case_id,metric,value\n");
    for (kind, sev, case, v) in rows {
        text.push_str(&format!("{kind},{sev},{case},dice,{v}\n"));
    }
    std::fs::write(eval.join("metrics.csv"), text).unwrap();
    (tmp, cfg_path)
}

fn rows_for(levels: &[(&'static str, [f64; 3])]) -> Vec<(&'static str, &'static str, &'static str, f64)> {
    let mut rows = Vec::new();
    for (sev, vals) in levels {
        let kind = if *sev == "clean" { "clean" } else { "noise" };
        for (case, v) in ["c0", "c1", "c2"].into_iter().zip(vals) {
            rows.push((kind, *sev, case, *v));
        }
    }
    rows
}

fn summary(tmp: &TempDir) -> Summary {
    serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/report/summary.json")).unwrap()).unwrap()
}

#[test]
fn report_degradation_matches_formula() {
    let levels = [
        ("clean", [0.9, 0.8, 0.85]),
        ("10", [0.7, 0.75, 0.8]),
        ("20", [0.6, 0.5, 0.7]),
        ("50", [0.2, 0.3, 0.1]),
    ];
    let (tmp, cfg) = report_fixture(json!({"kind": "noise", "levels": [10, 20, 50]}), &rows_for(&levels));
    let (code, log) = stage("report", &cfg, "out");
    assert_eq!(code, 0, "{log}");
    let mean = |v: &[f64; 3]| v.iter().sum::<f64>() / 3.0;
    let w = geometric_weights(3);
    let clean = mean(&levels[0].1);
    let want = (1..4).map(|i| w[i - 1] * (clean - mean(&levels[i].1))).sum::<f64>() / w.iter().sum::<f64>();
    let s = summary(&tmp);
    let got = s.models[0].metrics[0].degradation[0].mean_deg;
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    let csv = read_csv(&tmp.path().join("out/report/summary.csv"));
    assert_eq!(csv[0][6].parse::<f64>().unwrap(), got);
}

#[test]
fn report_all_equal_scores_zero() {
    let v = [0.8, 0.7, 0.9];
    let (tmp, cfg) = report_fixture(
        json!({"kind": "noise", "levels": [10, 20]}),
        &rows_for(&[("clean", v), ("10", v), ("20", v)]),
    );
    assert_eq!(stage("report", &cfg, "out").0, 0);
    let d = &summary(&tmp).models[0].metrics[0].degradation[0];
    assert_eq!(d.mean_deg, 0.0);
    assert_eq!(d.sd_deg, 0.0);
}

#[test]
fn report_explicit_weights_ignore_zero_weight_levels() {
    let weights = [0.221, 0.044, 0.006, 0.0, 0.0, 0.0];
    let ladder = json!({"kind": "noise", "levels": [10, 20, 50, 100, 200, 350], "weights": weights});
    let mut scores = Vec::new();
    for tail in [0.5, 0.0] {
        let levels = [
            ("clean", [0.9, 0.9, 0.9]),
            ("10", [0.8, 0.85, 0.9]),
            ("20", [0.7, 0.75, 0.8]),
            ("50", [0.6, 0.65, 0.7]),
            ("100", [tail; 3]),
            ("200", [tail; 3]),
            ("350", [tail; 3]),
        ];
        let (tmp, cfg) = report_fixture(ladder.clone(), &rows_for(&levels));
        assert_eq!(stage("report", &cfg, "out").0, 0);
        let s = summary(&tmp);
        let d = &s.models[0].metrics[0].degradation[0];
        assert_eq!(d.weights, weights);
        let text = std::fs::read_to_string(tmp.path().join("out/report/summary.json")).unwrap();
        assert!(text.contains("0.221,\n") && text.contains("0.044,\n") && text.contains("0.006,\n"));
        scores.push(d.mean_deg);
    }
    assert_eq!(scores[0], scores[1]);
}

#[test]
fn missing_level_renormalises_weights() {
    let levels = [("clean", [0.9, 0.9, 0.9]), ("10", [0.8, 0.8, 0.8]), ("50", [0.5, 0.5, 0.5])];
    let (tmp, cfg) = report_fixture(json!({"kind": "noise", "levels": [10, 20, 50]}), &rows_for(&levels));
    let (code, _) = stage("report", &cfg, "out");
    assert_eq!(code, 3);
    let s = summary(&tmp);
    let d = &s.models[0].metrics[0].degradation[0];
    assert_eq!(d.missing_levels, [20.0]);
    let w = geometric_weights(3);
    let want = (w[0] * 0.1 + w[2] * 0.4) / (w[0] + w[2]);
    assert!((d.mean_deg - want).abs() < 1e-12);
    assert!(s.missing.iter().any(|m| m.severity == "20" && m.n == 0));
}

#[test]
fn configuration_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    let manifest = tmp.path().join("nope.json");
    let cfg = write_config(tmp.path(), &config(&manifest, json!([{"kind": "noise"}]), json!([stub("segmentation", "")])));
    let (code, log) = stage("calibrate", &cfg, "out");
    assert_eq!(code, 2, "{log}");
    let cfg = write_config(tmp.path(), &config(&manifest, json!([{"kind": "noise"}]), json!([])));
    assert_eq!(stage("augment", &cfg, "out").0, 2);
    assert_eq!(ctrobust(&["report", "--config", "/definitely/missing.json"]).0, 2);
}
