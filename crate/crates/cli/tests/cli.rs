use std::path::Path;
use std::process::{Command, Output};

use outpaint_core::io::{read_mask, read_raw, write_raw};
use outpaint_core::metrics::{self, Region, RegionSelector};
use outpaint_core::VideoTensor;
use serde_json::Value;

fn hlop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlop"))
        .args(args)
        .env_remove("HLOP_SEED")
        .output()
        .expect("spawn hlop")
}

fn ok(args: &[&str]) -> Output {
    let out = hlop(args);
    assert!(
        out.status.success(),
        "hlop {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    synth_preset(dir, "pan", extra);
}

fn synth_preset(dir: &Path, preset: &str, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--preset",
        preset,
        "--frames",
        "12",
        "--size",
        "24",
        "--seed",
        "3",
        "-o",
        s(dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn synth_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    synth(&a, &[]);
    synth(&b, &[]);
    for f in [
        "input.hlvd",
        "gt.hlvd",
        "mask.hlvd",
        "config.json",
        "case.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn crop_equal_to_full_leaves_nothing_to_outpaint() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth_preset(
        d,
        "textured",
        &["--crop", "0,0,24,24", "--full", "0,0,24,24"],
    );
    assert_eq!(
        std::fs::read(d.join("input.hlvd")).unwrap(),
        std::fs::read(d.join("gt.hlvd")).unwrap()
    );
    let out = d.join("out.hlvd");
    ok(&[
        "outpaint",
        s(&d.join("config.json")),
        s(&d.join("input.hlvd")),
        s(&out),
    ]);
    assert_eq!(
        read_raw(&out).unwrap(),
        read_raw(d.join("input.hlvd")).unwrap()
    );
}

#[test]
fn config_problems_exit_with_two() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, &[]);
    let mut cfg = json(&d.join("config.json"));
    cfg.as_object_mut().unwrap().remove("pad");
    let broken = d.join("broken.json");
    std::fs::write(&broken, cfg.to_string()).unwrap();
    let out = hlop(&[
        "outpaint",
        s(&broken),
        s(&d.join("input.hlvd")),
        s(&d.join("o.hlvd")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&broken, "{ not json").unwrap();
    let out = hlop(&[
        "outpaint",
        s(&broken),
        s(&d.join("input.hlvd")),
        s(&d.join("o.hlvd")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = hlop(&["outpaint"]);
    assert_eq!(out.status.code(), Some(2));

    let mut cfg = json(&d.join("config.json"));
    cfg["gcg"]["K"] = 0.into();
    std::fs::write(&broken, cfg.to_string()).unwrap();
    let out = hlop(&[
        "outpaint",
        s(&broken),
        s(&d.join("input.hlvd")),
        s(&d.join("o.hlvd")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn runtime_failures_exit_with_one_and_name_the_stage() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, &[]);
    // an input larger than the target cannot be padded
    let big = VideoTensor::zeros(12, 40, 40, 3);
    write_raw(d.join("big.hlvd"), &big).unwrap();
    let out = hlop(&[
        "outpaint",
        s(&d.join("config.json")),
        s(&d.join("big.hlvd")),
        s(&d.join("o.hlvd")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `pad`"));

    let out = hlop(&[
        "outpaint",
        s(&d.join("config.json")),
        s(&d.join("missing.hlvd")),
        s(&d.join("o.hlvd")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rerun_from_manifest_is_bit_identical() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, &[]);
    let (o1, o2) = (d.join("o1.hlvd"), d.join("o2.hlvd"));
    let m1 = d.join("m1.json");
    ok(&[
        "outpaint",
        s(&d.join("config.json")),
        s(&d.join("input.hlvd")),
        s(&o1),
        "--seed",
        "77",
        "--workers",
        "2",
        "--manifest",
        s(&m1),
    ]);
    let manifest = json(&m1);
    assert_eq!(manifest["seed"], 77);
    assert_eq!(manifest["config"]["seed"], 77);
    assert!(manifest["timings"]["gcg"].is_number());
    ok(&[
        "outpaint",
        s(&m1),
        s(&d.join("input.hlvd")),
        s(&o2),
        "--workers",
        "1",
    ]);
    assert_eq!(std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
}

#[test]
fn seed_flag_beats_environment_beats_config() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, &[]);
    let run = |extra: &[&str], env: Option<&str>| -> u64 {
        let m = d.join("m.json");
        let mut args = vec![
            "outpaint".to_string(),
            s(&d.join("config.json")).into(),
            s(&d.join("input.hlvd")).into(),
            s(&d.join("o.hlvd")).into(),
            "--manifest".into(),
            s(&m).into(),
        ];
        args.extend(extra.iter().map(|a| a.to_string()));
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hlop"));
        cmd.args(&args).env_remove("HLOP_SEED");
        if let Some(v) = env {
            cmd.env("HLOP_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        json(&m)["seed"].as_u64().unwrap()
    };
    assert_eq!(run(&[], None), 3);
    assert_eq!(run(&[], Some("11")), 11);
    assert_eq!(run(&["--seed", "5"], Some("11")), 5);
}

#[test]
fn modes_produce_different_outputs_on_late_reveal() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(&["synth", "--preset", "late-reveal", "--frames", "48", "--size", "32", "-o", s(d)]);
    let (full, base) = (d.join("full.hlvd"), d.join("base.hlvd"));
    ok(&[
        "outpaint",
        s(&d.join("config.json")),
        s(&d.join("input.hlvd")),
        s(&full),
    ]);
    ok(&[
        "outpaint",
        s(&d.join("config.json")),
        s(&d.join("input.hlvd")),
        s(&base),
        "--mode",
        "baseline",
    ]);
    let (a, b) = (read_raw(&full).unwrap(), read_raw(&base).unwrap());
    assert_eq!(a.extent(), b.extent());
    assert!(a.max_abs_diff(&b) > 1e-3);
}

#[test]
fn eval_report_matches_library_metrics() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, &[]);
    let out = d.join("out.hlvd");
    ok(&[
        "outpaint",
        s(&d.join("config.json")),
        s(&d.join("input.hlvd")),
        s(&out),
        "--gt",
        s(&d.join("gt.hlvd")),
    ]);
    let report = d.join("r.json");
    ok(&[
        "eval",
        s(&out),
        s(&d.join("gt.hlvd")),
        s(&d.join("mask.hlvd")),
        s(&report),
    ]);
    let r = json(&report);
    assert_eq!(r["data_range"], 2.0);

    let (o, g) = (
        read_raw(&out).unwrap(),
        read_raw(d.join("gt.hlvd")).unwrap(),
    );
    let mask = read_mask(d.join("mask.hlvd")).unwrap();
    let sel = RegionSelector::from_mask(&mask, Region::Outpainted).unwrap();
    assert_eq!(
        r["psnr"]["outpainted"].as_f64().unwrap(),
        metrics::psnr(&o, &g, &sel).unwrap()
    );
    assert_eq!(
        r["mse"]["outpainted"].as_f64().unwrap(),
        metrics::mse(&o, &g, &sel).unwrap()
    );
    assert_eq!(
        r["ssim"]["all"].as_f64().unwrap(),
        metrics::ssim(&o, &g).unwrap()
    );
    // the observed region is copied verbatim
    assert_eq!(r["psnr"]["observed"], "+inf");

    let manifest = json(&d.join("out.hlvd.manifest.json"));
    assert_eq!(manifest["metrics"], r);
}

#[test]
fn eval_identical_inputs() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, &[]);
    let gt = d.join("gt.hlvd");
    let report = d.join("r.json");
    ok(&["eval", s(&gt), s(&gt), s(&d.join("mask.hlvd")), s(&report)]);
    let r = json(&report);
    for region in ["all", "observed", "outpainted"] {
        assert_eq!(r["psnr"][region], "+inf");
        assert_eq!(r["mse"][region], 0.0);
    }
    assert_eq!(r["ssim"]["all"], 1.0);

    // no outpainted voxels: that region reports null
    let e = tempfile::tempdir().unwrap();
    synth_preset(
        e.path(),
        "textured",
        &["--crop", "0,0,24,24", "--full", "0,0,24,24"],
    );
    let gt = e.path().join("gt.hlvd");
    ok(&[
        "eval",
        s(&gt),
        s(&gt),
        s(&e.path().join("mask.hlvd")),
        s(&report),
    ]);
    assert!(json(&report)["psnr"]["outpainted"].is_null());
}

#[test]
fn ppm_export_maps_bytes_and_strides() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let mut v = VideoTensor::zeros(3, 1, 3, 3);
    for f in 0..3 {
        for c in 0..3 {
            v.set(f, 0, 0, c, -1.0);
            v.set(f, 0, 1, c, 1.0);
        }
    }
    let input = d.join("v.hlvd");
    write_raw(&input, &v).unwrap();
    let dir = d.join("ppm");
    ok(&["export-ppm", s(&input), s(&dir), "--every", "10"]);
    let files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(files.len(), 1);
    let bytes = std::fs::read(&files[0]).unwrap();
    let header = b"P6\n3 1\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(
        &bytes[header.len()..],
        &[0, 0, 0, 255, 255, 255, 128, 128, 128]
    );

    let all = d.join("all");
    ok(&["export-ppm", s(&input), s(&all)]);
    assert_eq!(std::fs::read_dir(&all).unwrap().count(), 3);
    assert_eq!(
        hlop(&["export-ppm", s(&input), s(&all), "--every", "0"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn ablate_prints_all_modes() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, &[]);
    let report = d.join("ab.json");
    let out = ok(&[
        "ablate",
        s(&d.join("config.json")),
        s(&d.join("input.hlvd")),
        s(&d.join("gt.hlvd")),
        "--report",
        s(&report),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    for m in ["full", "spatial_only", "temporal_only", "baseline"] {
        assert!(text.contains(m), "{text}");
    }
    assert_eq!(json(&report)["modes"].as_array().unwrap().len(), 4);
}

#[test]
fn eval_rejects_shape_mismatch() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(d, &[]);
    let report = d.join("r.json");
    let out = hlop(&["eval", s(&d.join("input.hlvd")), s(&d.join("gt.hlvd")), s(&d.join("mask.hlvd")), s(&report)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!report.exists());
}
