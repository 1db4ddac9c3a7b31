use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const REFS: &str = "\
5
{\"name\": \"methane\"}
C 0.000 0.000 0.000
H 0.629 0.629 0.629
H -0.629 -0.629 0.629
H -0.629 0.629 -0.629
H 0.629 -0.629 -0.629
5
{\"name\": \"methane-2\"}
C 0.000 0.000 0.000
H 1.089 0.000 0.000
H -0.363 1.027 0.000
H -0.363 -0.513 0.889
H -0.363 -0.513 -0.889
";

fn gpff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpff"))
        .args(args)
        .output()
        .unwrap()
}

fn refs(dir: &Path) -> PathBuf {
    let p = dir.join("refs.xyz");
    std::fs::write(&p, REFS).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_is_reproducible_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let r = refs(dir.path());
    let args = [
        "generate",
        "--refs",
        s(&r),
        "--sampler",
        "sdd",
        "--steps",
        "32",
        "--count",
        "4",
        "--seed",
        "9",
        "--jobs",
        "2",
    ];
    let a = gpff(&args);
    let b = gpff(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(gpff::xyz::parse_xyz(&text).unwrap().len(), 4);
    assert!(String::from_utf8_lossy(&a.stderr).contains("mean NFE"));

    let other = gpff(&[
        "generate",
        "--refs",
        s(&r),
        "--sampler",
        "sdd",
        "--steps",
        "32",
        "--count",
        "4",
        "--seed",
        "10",
    ]);
    assert_ne!(other.stdout, text.as_bytes());
}

#[test]
fn traces_feed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let r = refs(dir.path());
    let out = dir.path().join("gen.xyz");
    let traces = dir.path().join("t.jsonl");
    let st = gpff(&[
        "generate",
        "--refs",
        s(&r),
        "--count",
        "3",
        "-o",
        s(&out),
        "--traces",
        s(&traces),
        "--snapshot-stride",
        "1",
    ]);
    assert!(st.status.success());
    let lines: Vec<Value> = std::fs::read_to_string(&traces)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["record"], "header");
    assert_eq!(lines[0]["seed"], 0);
    assert_eq!(lines.iter().filter(|l| l["record"] == "summary").count(), 3);
    assert!(lines
        .iter()
        .any(|l| l["record"] == "step" && l["positions"].is_array()));

    let csv = dir.path().join("csv");
    let m = gpff(&[
        "metrics",
        "--generated",
        s(&out),
        "--reference",
        s(&r),
        "--traces",
        s(&traces),
        "--bins",
        "20",
        "--csv-dir",
        s(&csv),
    ]);
    assert!(m.status.success(), "{}", String::from_utf8_lossy(&m.stderr));
    let report: Value = serde_json::from_slice(&m.stdout).unwrap();
    assert_eq!(report["count"], 3);
    assert_eq!(report["validity"]["fraction"], 1.0);
    for f in [
        "mpd_histogram.csv",
        "validity_vs_nfe.csv",
        "shape_points.csv",
    ] {
        assert!(csv.join(f).exists(), "{f}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let r = refs(dir.path());
    let bad = dir.path().join("bad.xyz");
    std::fs::write(&bad, "3\nx\nC 0 0 0\nH 1 0\n").unwrap();

    let m = gpff(&["metrics", "--generated", s(&bad), "--reference", s(&r)]);
    assert_eq!(m.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&m.stderr).contains("line 4"));

    let g = gpff(&["generate", "--refs", "/nonexistent/refs.xyz"]);
    assert_eq!(g.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&g.stderr).contains("/nonexistent/refs.xyz"));

    assert_eq!(gpff(&["generate", "--bogus"]).status.code(), Some(2));
    assert_eq!(gpff(&["generate"]).status.code(), Some(2));
    assert_eq!(
        gpff(&["generate", "--refs", s(&r), "--sampler", "sdd+shape"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        gpff(&["generate", "--refs", s(&r), "--shape", "1,2"])
            .status
            .code(),
        Some(2)
    );

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"version": 3}"#).unwrap();
    assert_eq!(
        gpff(&["generate", "--config", s(&cfg), "--zero-provider"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn unreachable_remote_is_runtime_failure() {
    let g = gpff(&[
        "generate",
        "--remote",
        "http://127.0.0.1:1",
        "--count",
        "2",
        "--steps",
        "4",
    ]);
    // No references: the element list has to come from the config.
    assert_eq!(g.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"version": 1, "elements": ["C", "H"], "provider": {"kind": "remote", "endpoint": "http://127.0.0.1:1", "timeout_secs": 2}}"#,
    )
    .unwrap();
    let g = gpff(&[
        "generate",
        "--config",
        s(&cfg),
        "--count",
        "2",
        "--steps",
        "4",
    ]);
    assert_eq!(
        g.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&g.stderr)
    );
    assert!(String::from_utf8_lossy(&g.stderr).contains("2 trajectories failed"));
}

#[test]
fn config_values_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let r = refs(dir.path());
    let cfg = dir.path().join("cfg.json");
    let body = serde_json::json!({
        "version": 1,
        "provider": {"kind": "oracle", "refs": r},
        "count": 2,
        "seed": 4,
        "sampler": {"kind": "heun", "steps": 16}
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let a = gpff(&["generate", "--config", s(&cfg)]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(
        gpff::xyz::parse_xyz(std::str::from_utf8(&a.stdout).unwrap())
            .unwrap()
            .len(),
        2
    );
    let b = gpff(&["generate", "--config", s(&cfg), "--count", "3"]);
    assert_eq!(
        gpff::xyz::parse_xyz(std::str::from_utf8(&b.stdout).unwrap())
            .unwrap()
            .len(),
        3
    );
    assert!(String::from_utf8_lossy(&b.stderr).contains("mean NFE 31.00"));
}

#[test]
fn shape_fit_then_shaped_generation() {
    let dir = tempfile::tempdir().unwrap();
    let r = refs(dir.path());
    let model = dir.path().join("shape.json");
    let f = gpff(&[
        "shape-fit",
        "--structures",
        s(&r),
        "-k",
        "2",
        "-o",
        s(&model),
    ]);
    assert!(f.status.success(), "{}", String::from_utf8_lossy(&f.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(m["version"], 1);

    let g = gpff(&[
        "generate",
        "--refs",
        s(&r),
        "--rigid",
        "--sampler",
        "dd+shape",
        "--shape",
        "rod",
        "--shape-model",
        s(&model),
        "--steps",
        "16",
        "--count",
        "2",
    ]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
}

#[test]
fn scaffold_atoms_are_kept() {
    let dir = tempfile::tempdir().unwrap();
    let r = refs(dir.path());
    let sc = dir.path().join("scaffold.xyz");
    std::fs::write(&sc, "2\n\nC 0.1 0.2 0.3\nH 0.7 0.8 0.9\n").unwrap();
    let g = gpff(&[
        "generate",
        "--refs",
        s(&r),
        "--sampler",
        "dd+scaffold",
        "--scaffold",
        s(&sc),
        "--count",
        "2",
    ]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    for frame in gpff::xyz::parse_xyz(std::str::from_utf8(&g.stdout).unwrap()).unwrap() {
        assert_eq!(frame.positions[0], [0.1, 0.2, 0.3]);
        assert_eq!(frame.positions[1], [0.7, 0.8, 0.9]);
    }
}

#[test]
fn loss_audit_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let r = refs(dir.path());
    let z = gpff(&[
        "loss-audit",
        "--zero-provider",
        "--references",
        s(&r),
        "--draws",
        "4000",
        "--seed",
        "1",
    ]);
    assert!(z.status.success(), "{}", String::from_utf8_lossy(&z.stderr));
    let v: Value = serde_json::from_slice(&z.stdout).unwrap();
    let (loss, analytic) = (
        v["loss"].as_f64().unwrap(),
        v["zero_force_value"].as_f64().unwrap(),
    );
    assert_eq!(analytic, 60.0);
    assert!((loss - analytic).abs() / analytic < 0.1, "{loss}");
}

#[test]
fn serve_on_occupied_port_exits_2() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = gpff(&["serve", "--zero-provider", "--bind", &addr]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot bind"));
}
