//! End-to-end CLI tests: exit codes, golden values, reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fibred"))
}

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn fibred")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn metric_golden_swapped_pair() {
    let a = fixtures().join("measures/swapped_a.json");
    let b = fixtures().join("measures/swapped_b.json");
    for metric in ["fibred", "classical"] {
        let out = run(&[
            "metric",
            a.to_str().unwrap(),
            b.to_str().unwrap(),
            "--metric",
            metric,
        ]);
        assert!(out.status.success());
        let value: f64 = stdout(&out).trim().parse().unwrap();
        // |x1 - x2| = 0.65 < d_label = 0.7, so both metrics agree here
        assert!((value - 0.65).abs() < 1e-10, "{metric}: {value}");
    }
}

#[test]
fn metric_identical_files_is_zero() {
    let a = fixtures().join("measures/swapped_a.json");
    let out = run(&["metric", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert!(out.status.success());
    let value: f64 = stdout(&out).trim().parse().unwrap();
    assert_eq!(value, 0.0);
}

#[test]
fn metric_exit_codes() {
    let a = fixtures().join("measures/swapped_a.json");
    let other = fixtures().join("measures/other_marginal.json");
    // mismatched marginals under the fibred metric: contract violation
    let out = run(&[
        "metric",
        a.to_str().unwrap(),
        other.to_str().unwrap(),
        "--metric",
        "fibred",
    ]);
    assert_eq!(out.status.code(), Some(2));
    // the classical metric does not require matching marginals
    let out = run(&[
        "metric",
        a.to_str().unwrap(),
        other.to_str().unwrap(),
        "--metric",
        "classical",
    ]);
    assert!(out.status.success());
    // unparsable measure file
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let out = run(&["metric", bad.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn metric_plan_dump() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixtures().join("measures/swapped_a.json");
    let b = fixtures().join("measures/swapped_b.json");
    let plan = dir.path().join("plan.json");
    let out = run(&[
        "metric",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--plan",
        plan.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    assert_eq!(doc["metric"], "fibred");
    assert!(doc["cells"].as_array().unwrap().len() == 2);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("cfg.json");
    std::fs::write(&bad, "{\"model\": \"nope\"}").unwrap();
    let out = run(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["simulate", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("kuramoto.json");
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let out = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["trajectory.csv", "curve.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    // a different seed changes the trajectories
    let out_dir = dir.path().join("c");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert!(out.status.success());
    let a = std::fs::read(dir.path().join("a/trajectory.csv")).unwrap();
    let c = std::fs::read(dir.path().join("c/trajectory.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn simulate_linear_barycentre_matches_closed_form() {
    // b₀-constant linear model: the ensemble barycentre follows X̄(0)e^{b₀t}
    let dir = tempfile::tempdir().unwrap();
    let b0 = 0.6;
    let cfg = serde_json::json!({
        "model": {"type": "linear", "a": {"type": "constant", "value": 0.0},
                   "b": {"type": "constant", "value": b0}},
        "marginal": {"kind": "uniform"},
        "initial": {"product": {"points": [[0.2, 0.5], [0.8, 0.5]]}},
        "T": 1.0, "steps": 10, "substeps": 10,
        "particles": {"n": 4, "m": 8},
        "master_seed": 5
    });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    // group the x_0 column by time and compare means
    let csv = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    let mut by_t: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for line in csv.lines().skip(1) {
        let mut parts = line.split(',');
        let t = parts.next().unwrap().to_string();
        let x: f64 = parts.nth(2).unwrap().parse().unwrap();
        by_t.entry(t).or_default().push(x);
    }
    let mean0: f64 = by_t["0"].iter().sum::<f64>() / by_t["0"].len() as f64;
    for (t, xs) in &by_t {
        let t: f64 = t.parse().unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let expect = mean0 * (b0 * t).exp();
        assert!((mean - expect).abs() < 1e-8, "t={t}: {mean} vs {expect}");
    }
}

#[test]
fn converge_is_thread_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("conv.json");
    let mut cfg: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fixtures().join("converge.json")).unwrap(),
    )
    .unwrap();
    // shrink the sweep so the test stays quick
    cfg["sweep"]["n"] = serde_json::json!([2, 4]);
    cfg["seeds"] = serde_json::json!([1, 2]);
    cfg["reference"] = serde_json::json!({"mode": "high_res", "n_ref": 8, "m_ref": 64, "seed": 9});
    cfg["substeps"] = serde_json::json!(4);
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();

    for (sub, threads) in [("t1", "1"), ("t4", "4")] {
        let out_dir = dir.path().join(sub);
        let out = run(&[
            "converge",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    // records are identical apart from the measured runtime column
    let strip = |path: &Path| -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(
        strip(&dir.path().join("t1/records.csv")),
        strip(&dir.path().join("t4/records.csv"))
    );
    // the summary (which omits runtimes) is byte-identical
    let a = std::fs::read(dir.path().join("t1/summary.json")).unwrap();
    let b = std::fs::read(dir.path().join("t4/summary.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn validate_passes_on_doc_configs() {
    for cfg in ["kuramoto.json", "mm.json"] {
        let out = run(&[
            "validate",
            "--config",
            fixtures().join(cfg).to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{cfg}: {}\n{}",
            stdout(&out),
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(stdout(&out).contains("PASS"));
    }
}

#[test]
fn validate_fails_on_understated_growth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("mm.json")).unwrap())
            .unwrap();
    cfg["declared_m"] = serde_json::json!(0.01);
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = run(&["validate", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn blow_up_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let cfg = serde_json::json!({
        "model": {"type": "linear", "a": {"type": "constant", "value": 3.0},
                   "b": {"type": "constant", "value": 0.0}},
        "marginal": {"kind": "uniform"},
        "initial": {"product": {"points": [[1.0, 1.0]]}},
        "T": 4.0, "steps": 40, "substeps": 2,
        "particles": {"n": 2, "m": 2},
        "master_seed": 1,
        "declared_m": 0.01
    });
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = run(&["simulate", "--config", cfg_path.to_str().unwrap(), "--out",
        dir.path().join("out").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
