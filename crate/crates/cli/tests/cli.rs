use std::path::Path;
use std::process::{Command, Output};

fn qdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdm"))
        .args(args)
        .output()
        .expect("run qdm")
}

fn ok(args: &[&str]) {
    let out = qdm(args);
    assert!(
        out.status.success(),
        "qdm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn rabi_fit_then_stats_reports_percentiles() {
    let dir = tempfile::tempdir().unwrap();
    let (syn, fit, st) = (dir.path().join("syn"), dir.path().join("fit"), dir.path().join("st"));
    ok(&[
        "synth", "--kind", "rabi", "--out", s(&syn), "--width", "20", "--height", "20",
        "--noise", "0.002", "--vary", "frequency", "--spread", "0.1", "--seed", "4",
    ]);
    ok(&["fit", "--input", s(&syn.join("cube.qdc")), "--model", "rabi", "--dicing", "4", "--out", s(&fit)]);
    ok(&["stats", "--input", s(&fit.join("frequency.qdc")), "--out", s(&st), "--percentiles", "10,90"]);

    let table = std::fs::read_to_string(st.join("percentiles.csv")).unwrap();
    let rows: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    // Truth runs linearly from 0.9 to 1.1 MHz across x.
    assert!((rows[0] - 0.92).abs() < 0.01, "{rows:?}");
    assert!((rows[1] - 1.08).abs() < 0.01, "{rows:?}");

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fit.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "fit");
    assert!(manifest["results"]["converged_fraction"].as_f64().unwrap() > 0.99);
}

#[test]
fn model_quantity_mismatch_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    ok(&["synth", "--kind", "rabi", "--out", s(&syn), "--width", "4", "--height", "4"]);
    // Rabi cubes hold contrast; the Hahn model wants visibility.
    let out_dir = dir.path().join("fit");
    let out = qdm(&["fit", "--input", s(&syn.join("cube.qdc")), "--model", "hahn", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(error_json(&out)["error"]["category"], "mismatch");
    assert!(!out_dir.exists(), "no partial output on failure");
}

#[test]
fn usage_io_and_format_errors() {
    let out = qdm(&["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["category"], "usage");

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.qdc");
    let out = qdm(&["fit", "--input", s(&missing), "--model", "rabi", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["category"], "io");

    let junk = dir.path().join("junk.qdc");
    std::fs::write(&junk, b"not a cube at all, definitely not").unwrap();
    let out = qdm(&["fit", "--input", s(&junk), "--model", "rabi", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"]["category"], "format");
}

fn strip_volatile(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("timestamp_unix_s");
    obj.remove("wall_time_s");
    v
}

#[test]
fn identical_runs_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let syn = dir.path().join("syn");
        let fit = dir.path().join("fit");
        ok(&["synth", "--kind", "hahn", "--out", s(&syn), "--width", "8", "--height", "8",
            "--noise", "0.003", "--seed", "17"]);
        ok(&["fit", "--input", s(&syn.join("cube.qdc")), "--model", "hahn", "--dicing", "2",
            "--out", s(&fit)]);
        let copy = dir.path().join(tag);
        std::fs::create_dir(&copy).unwrap();
        for sub in ["syn", "fit"] {
            for entry in std::fs::read_dir(dir.path().join(sub)).unwrap() {
                let e = entry.unwrap();
                std::fs::copy(e.path(), copy.join(format!("{sub}_{}", e.file_name().to_string_lossy())))
                    .unwrap();
            }
        }
        copy
    };
    let a = run("a");
    let b = run("b");
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() > 5);
    for name in names {
        let x = std::fs::read(a.join(&name)).unwrap();
        let y = std::fs::read(b.join(&name)).unwrap();
        if name.to_string_lossy().ends_with("manifest.json") {
            assert_eq!(strip_volatile(&x), strip_volatile(&y));
        } else {
            assert_eq!(x, y, "{name:?} differs");
        }
    }
}

#[test]
fn odmr_scene_through_stress() {
    let dir = tempfile::tempdir().unwrap();
    let (syn, fit, st) = (dir.path().join("syn"), dir.path().join("fit"), dir.path().join("st"));
    ok(&["synth", "--kind", "odmr-scene", "--out", s(&syn), "--width", "12", "--height", "12",
        "--noise", "0.0001", "--seed", "2"]);
    ok(&["fit", "--input", s(&syn.join("cube.qdc")), "--model", "odmr", "--dicing", "2", "--out", s(&fit)]);
    for g in 0..8 {
        assert!(fit.join(format!("group{g}_f_center.qdc")).exists());
    }
    ok(&["stress", "--input", s(&fit), "--out", s(&st)]);
    for name in ["sigma_diag", "sigma_xy", "sigma_xz", "sigma_yz", "lineshift_1"] {
        assert!(st.join(format!("{name}.qdc")).exists());
    }

    let out = qdm(&["fit", "--input", s(&syn.join("cube.qdc")), "--model", "odmr", "--groups", "6",
        "--out", s(&dir.path().join("bad"))]);
    assert_eq!(out.status.code(), Some(7));
    let msg = error_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("found 8"), "{msg}");
}

#[test]
fn biref_round_trip_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let (syn, out) = (dir.path().join("syn"), dir.path().join("out"));
    ok(&["synth", "--kind", "biref", "--out", s(&syn), "--width", "6", "--height", "5"]);
    ok(&["biref", "--input", s(&syn.join("stack.qdc")), "--out", s(&out), "--thickness-m", "1e-3"]);
    for name in ["phi", "sin_delta", "i0", "stress_pa", "ambiguous"] {
        assert!(out.join(format!("{name}.qdc")).exists());
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["constants"]["thickness_m"], 1e-3);
}
