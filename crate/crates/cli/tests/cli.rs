use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spraygrid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spraygrid"))
        .current_dir(dir)
        .env_remove("SPRAYGRID_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(dir: &Path, args: &[&str]) -> Value {
    let mut full = vec!["--format", "json"];
    full.extend_from_slice(args);
    let out = spraygrid(dir, &full);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_of(out: &Output) -> (i32, Value) {
    let body: Value = serde_json::from_slice(&out.stderr).unwrap();
    (out.status.code().unwrap(), body["error"].clone())
}

/// Small synthetic field (40x40 satellite pixels, 400x400 drone pixels) in `dir/field`.
fn field(dir: &Path) {
    std::fs::write(
        dir.join("spec.json"),
        r#"{"width_m": 400, "height_m": 400, "drone_pixel_m": 1.0, "weed_patch_count": 25}"#,
    )
    .unwrap();
    ok_json(dir, &["--seed", "5", "synth", "--spec", "spec.json", "--out", "field"]);
}

#[test]
fn help_lists_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = spraygrid(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "synth",
        "softmask",
        "features",
        "fit",
        "eval",
        "plan",
        "report",
        "composite",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert!(text.contains("8  integrity error"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = error_of(&spraygrid(dir.path(), &["plan", "--bogus"]));
    assert_eq!(code, 2);
    assert_eq!(err["kind"], "usage");
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = error_of(&spraygrid(
        dir.path(),
        &["eval", "--pred", "nope.grf", "--truth", "nope.grf"],
    ));
    assert_eq!(code, 3);
    assert_eq!(err["exit_code"], 3);
}

#[test]
fn synth_writes_rasters_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    field(dir.path());
    let f = dir.path().join("field");
    for name in [
        "drone_mask.grf",
        "satellite.grf",
        "fraction.grf",
        "prediction.grf",
        "split.grf",
        "spec.json",
    ] {
        assert!(f.join(name).exists(), "{name}");
    }
    let summary: Value = serde_json::from_slice(&std::fs::read(f.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["field"]["sat_width"], 40);
    assert_eq!(summary["field"]["drone_width"], 400);
    let config: Value = serde_json::from_slice(&std::fs::read(f.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["command"], "synth");
    assert_eq!(config["seed"], 5);
    assert_eq!(config["args"]["split"]["train"], 0.45);
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("spec.json"),
        r#"{"width_m": 100, "height_m": 100, "drone_pixel_m": 1.0, "weed_patch_count": 5}"#,
    )
    .unwrap();
    let run = |out: &str, env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_spraygrid"));
        cmd.current_dir(dir.path()).env_remove("SPRAYGRID_SEED");
        if let Some(s) = env {
            cmd.env("SPRAYGRID_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd
            .args(["synth", "--spec", "spec.json", "--out", out])
            .output()
            .unwrap()
            .status
            .success());
        std::fs::read(dir.path().join(out).join("drone_mask.bin")).unwrap()
    };
    let from_env = run("a", Some("9"), None);
    let from_flag = run("b", None, Some("9"));
    let other = run("c", None, Some("10"));
    assert_eq!(from_env, from_flag);
    assert_ne!(from_env, other);
}

#[test]
fn softmask_matches_the_synthetic_fraction() {
    let dir = tempfile::tempdir().unwrap();
    field(dir.path());
    let summary = ok_json(
        dir.path(),
        &[
            "softmask",
            "--mask",
            "field/drone_mask.grf",
            "--reference",
            "field/fraction.grf",
            "--out",
            "soft.grf",
        ],
    );
    assert_eq!(summary["factor"], 10);
    let a = std::fs::read(dir.path().join("soft.bin")).unwrap();
    let b = std::fs::read(dir.path().join("field/fraction.bin")).unwrap();
    assert_eq!(a, b);
    let by_factor = ok_json(
        dir.path(),
        &[
            "softmask",
            "--mask",
            "field/drone_mask.grf",
            "--factor",
            "20",
            "--out",
            "coarse.grf",
        ],
    );
    assert_eq!(by_factor["width"], 20);
    let mask_weed = summary["mask_area"]["weed_acres"].as_f64().unwrap();
    let coarse_weed = by_factor["fraction_area"]["weed_acres"].as_f64().unwrap();
    assert!((mask_weed - coarse_weed).abs() < 1e-9 * mask_weed);
}

#[test]
fn plan_rejects_mismatched_grids() {
    let dir = tempfile::tempdir().unwrap();
    field(dir.path());
    let out = spraygrid(
        dir.path(),
        &[
            "plan",
            "--pred",
            "field/prediction.grf",
            "--truth",
            "field/drone_mask.grf",
            "--out",
            "p",
        ],
    );
    let (code, err) = error_of(&out);
    assert_eq!(code, 5);
    assert_eq!(err["kind"], "alignment");
}

#[test]
fn plan_writes_one_plan_per_target() {
    let dir = tempfile::tempdir().unwrap();
    field(dir.path());
    let summary = ok_json(
        dir.path(),
        &[
            "plan",
            "--pred",
            "field/prediction.grf",
            "--truth",
            "field/fraction.grf",
            "--target",
            "95",
            "--target",
            "99",
            "--out",
            "p",
        ],
    );
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let land = row["land_sprayed_acres"].as_f64().unwrap();
        let weed = row["weed_acres"].as_f64().unwrap();
        let excess = row["excess_pct"].as_f64().unwrap();
        assert!((excess - (land - weed) / weed * 100.0).abs() < 1e-9);
        assert!(row["achieved_coverage_pct"].as_f64().unwrap() >= row["target_coverage_pct"].as_f64().unwrap());
    }
    assert!(rows[1]["land_pct"].as_f64() >= rows[0]["land_pct"].as_f64());
    let p = dir.path().join("p");
    assert!(p.join("target_99/plan.json").exists());
    assert!(p.join("target_99/spray_mask.grf").exists());
    let csv = std::fs::read_to_string(p.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn plan_with_an_unreachable_target_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    field(dir.path());
    // Blank out the first half of the prediction so part of the weed is unsprayable.
    let grf = dir.path().join("field/prediction.grf");
    let bin = dir.path().join("field/prediction.bin");
    let mut header: Value = serde_json::from_slice(&std::fs::read(&grf).unwrap()).unwrap();
    header["nodata"] = "nan".into();
    std::fs::write(&grf, serde_json::to_vec(&header).unwrap()).unwrap();
    let mut data = std::fs::read(&bin).unwrap();
    let half = data.len() / 2;
    for chunk in data[..half].chunks_mut(4) {
        chunk.copy_from_slice(&f32::NAN.to_le_bytes());
    }
    std::fs::write(&bin, data).unwrap();
    let out = spraygrid(
        dir.path(),
        &[
            "plan",
            "--pred",
            "field/prediction.grf",
            "--truth",
            "field/fraction.grf",
            "--target",
            "100",
            "--out",
            "p",
        ],
    );
    let (code, err) = error_of(&out);
    assert_eq!(code, 7, "{err}");
    assert_eq!(err["kind"], "infeasible");
}

#[test]
fn features_fit_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    field(dir.path());
    let feats = ok_json(
        dir.path(),
        &[
            "features",
            "--satellite",
            "field/satellite.grf",
            "--fraction",
            "field/fraction.grf",
            "--split",
            "field/split.grf",
            "--out",
            "t/features.csv",
        ],
    );
    assert_eq!(feats["rows"], 1600);
    let fit = ok_json(
        dir.path(),
        &[
            "--seed",
            "3",
            "fit",
            "--features",
            "t/features.csv",
            "--out",
            "m",
            "--satellite",
            "field/satellite.grf",
        ],
    );
    let weights: Vec<f64> = serde_json::from_value(fit["weights"]["values"].clone()).unwrap();
    assert_eq!(weights.len(), 3);
    assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let test_r2 = fit["test"][1]["metrics"]["r2"].as_f64().unwrap();
    let eval = ok_json(
        dir.path(),
        &[
            "eval",
            "--pred",
            "m/prediction.grf",
            "--truth",
            "field/fraction.grf",
            "--split",
            "field/split.grf",
            "--on",
            "test",
        ],
    );
    // prediction.grf stores f32, so the rounded values score slightly differently.
    assert!((eval["r2"].as_f64().unwrap() - test_r2).abs() < 1e-4);
    assert!(test_r2 > 0.5);
    assert!(dir.path().join("m/model.json").exists());
}

#[test]
fn report_reproduces_the_best_per_loss_table() {
    let dir = tempfile::tempdir().unwrap();
    let registry = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/registry");
    let reg = registry.to_str().unwrap();
    let a = ok_json(
        dir.path(),
        &[
            "report",
            "--registry",
            reg,
            "--architecture",
            "UNET",
            "--plot",
            "plot.svg",
            "--csv",
            "plot.csv",
        ],
    );
    let b = ok_json(dir.path(), &["report", "--registry", reg, "--architecture", "UNET"]);
    assert_eq!(a, b);
    let bce = a["best_per_loss"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["loss"] == "BCE")
        .unwrap();
    assert_eq!(bce["encoder"], "VGG19");
    assert_eq!(bce["excess"]["99"], 29.22);
    assert_eq!(a["winners"][3]["loss"], "BCE");
    assert_eq!(a["ranking"].as_array().unwrap().len(), 12);
    let svg = std::fs::read_to_string(dir.path().join("plot.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("plot.csv"))
            .unwrap()
            .lines()
            .count(),
        13
    );
}

#[test]
fn report_ingest_recomputes_and_checks_integrity() {
    let dir = tempfile::tempdir().unwrap();
    field(dir.path());
    let d = dir.path();
    std::fs::write(
        d.join("good.json"),
        r#"{"schema_version": 1, "architecture": "UNET", "encoder": "VGG11", "loss": "BCE", "size_mb": 73, "relative_speed": 6.18}"#,
    )
    .unwrap();
    let eval = [
        "--pred",
        "field/prediction.grf",
        "--truth",
        "field/fraction.grf",
        "--split",
        "field/split.grf",
    ];
    let mut args = vec!["report", "--registry", "reg", "--ingest", "good.json"];
    args.extend_from_slice(&eval);
    let rep = ok_json(d, &args);
    let rec: Value = serde_json::from_slice(&std::fs::read(d.join("reg/unet_vgg11_bce.json")).unwrap()).unwrap();
    assert_eq!(rec["provenance"], "recomputed");
    assert_eq!(rec["excess"].as_object().unwrap().len(), 4);
    assert_eq!(rep["records"], 1);

    std::fs::write(
        d.join("bad.json"),
        r#"{"schema_version": 1, "architecture": "UNET", "encoder": "VGG13", "loss": "BCE", "size_mb": 74, "relative_speed": 5.06, "excess": {"99": -50.0}}"#,
    )
    .unwrap();
    let mut args = vec!["report", "--registry", "reg", "--ingest", "bad.json"];
    args.extend_from_slice(&eval);
    let (code, err) = error_of(&spraygrid(d, &args));
    assert_eq!(code, 8);
    assert_eq!(err["kind"], "integrity");
    assert!(!d.join("reg/unet_vgg13_bce.json").exists());
}

#[test]
fn composite_writes_a_png() {
    let dir = tempfile::tempdir().unwrap();
    field(dir.path());
    let summary = ok_json(
        dir.path(),
        &["composite", "--satellite", "field/satellite.grf", "--out", "rgb.png"],
    );
    assert_eq!(summary["width"], 40);
    let bytes = std::fs::read(dir.path().join("rgb.png")).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
    let (code, _) = error_of(&spraygrid(
        dir.path(),
        &[
            "composite",
            "--satellite",
            "field/satellite.grf",
            "--red",
            "purple",
            "--out",
            "x.png",
        ],
    ));
    assert_eq!(code, 6);
}
