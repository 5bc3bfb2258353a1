use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rawnoise"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn rawnoise")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}\n{}", out.status, String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sim_params(dir: &Path) -> PathBuf {
    let p = dir.join("sim.json");
    fs::write(&p, r#"{"n_frames": 20, "scene": {"kind": "ramp", "width": 64, "height": 64, "low": 0.05}}"#).unwrap();
    p
}

/// Every file under `dir` with its bytes, sorted by relative path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["calibrate", "simulate", "augment", "develop", "validate", "bench"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    assert_eq!(run(&["validate", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one_with_json() {
    for args in [&["--bogus"][..], &["frobnicate"], &["augment", "--mode", "sideways"], &[]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        let last = err.lines().last().unwrap();
        let v: serde_json::Value = serde_json::from_str(last).unwrap();
        assert_eq!(v["error"], "usage");
    }
}

#[test]
fn data_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["develop", "--in", s(&tmp.path().join("missing")), "--out", s(&tmp.path().join("x.ppm"))]);
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(v["error"], "missing_sidecar");

    let bad = tmp.path().join("sim.json");
    fs::write(&bad, r#"{"fractions": [1.5]}"#).unwrap();
    let out = run(&["simulate", "burst", "--params", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn smoke_pipeline() {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let params = sim_params(d);
    let sim = d.join("sim");
    ok(&["simulate", "burst", "--params", s(&params), "--out", s(&sim), "--seed", "3"]);

    let mut args = vec!["calibrate".to_string(), "--bursts".into()];
    let mut bursts: Vec<PathBuf> =
        fs::read_dir(&sim).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    bursts.sort();
    assert_eq!(bursts.len(), 6);
    args.extend(bursts.iter().map(|b| s(b).to_string()));
    let model = d.join("model.json");
    let report = d.join("report.json");
    for a in ["--regions", s(&sim.join("regions.json")), "--out", s(&model), "--report", s(&report)] {
        args.push(a.into());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    let alpha = m["alpha"].as_f64().unwrap();
    assert!((alpha - 1.2).abs() < 0.1, "alpha {alpha}");

    let aug = d.join("aug");
    ok(&["augment", "--in", s(&bursts[0]), "--model", s(&model), "--mode", "ours", "--out", s(&aug)]);
    assert!(aug.join("frame_0019.raw16").exists());
    let ks = d.join("ks");
    ok(&[
        "augment",
        "--in",
        s(&bursts[0].join("frame_0000.raw16")),
        "--model",
        s(&model),
        "--mode",
        "ksigma",
        "--out",
        s(&ks),
    ]);
    assert_eq!(fs::metadata(ks.join("frame_0000.f64")).unwrap().len(), 64 * 64 * 8);

    let ppm = d.join("dev.ppm");
    ok(&["develop", "--in", s(&aug.join("frame_0000.raw16")), "--out", s(&ppm)]);
    assert_eq!(fs::read(&ppm).unwrap().len(), 13 + 64 * 64 * 3);

    let rep = d.join("rep");
    ok(&[
        "validate",
        "alignment",
        "--model",
        s(&model),
        "--frames",
        "50",
        "--contrast",
        "0.5",
        "--methods",
        "ours",
        "--out",
        s(&rep),
    ]);
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(rep.join("alignment_ours_x0.5.json")).unwrap()).unwrap();
    assert!(r["slope_rel_err"].as_f64().unwrap() < 0.05);
    let csv = fs::read_to_string(rep.join("alignment_ours_x0.5_pairs.csv")).unwrap();
    assert!(csv.starts_with("mu,var,source\n"));

    let norm = d.join("norm");
    ok(&[
        "validate",
        "normality",
        "--burst",
        s(&bursts[0]),
        "--regions",
        s(&sim.join("regions.json")),
        "--out",
        s(&norm),
    ]);
    assert!(norm.join("normality.csv").exists());
    assert!(t.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn outputs_independent_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let params = sim_params(d);
    let mut snaps = Vec::new();
    for threads in ["1", "4"] {
        let root = d.join(format!("t{threads}"));
        let sim = root.join("sim");
        ok(&["--threads", threads, "simulate", "burst", "--params", s(&params), "--gains", "6,24", "--out", s(&sim)]);
        let model = d.join("m.json");
        fs::write(&model, r#"{"alpha": 1.2, "sigma_d2": 6.0, "sigma_r2": 25.0}"#).unwrap();
        ok(&[
            "augment",
            "--threads",
            threads,
            "--seed",
            "9",
            "--in",
            s(&sim.join("burst_g01_f00")),
            "--model",
            s(&model),
            "--out",
            s(&root.join("aug")),
        ]);
        snaps.push(snapshot(&root));
    }
    assert!(snaps[0].len() > 40);
    assert_eq!(snaps[0], snaps[1]);
}
