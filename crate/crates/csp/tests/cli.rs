use std::fs;
use std::path::Path;
use std::process::Command;

use csp::cli::{run_cli_with, EXIT_FAIL, EXIT_PASS, EXIT_USAGE};
use csp::fit_order;
use csp::io::{write_json, SweepReport};
use csp::{run_sweep, Experiment, ExperimentKind, RunConfig};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("csp").chain(args.iter().copied());
    let code = run_cli_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn help_and_usage_errors() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, EXIT_PASS);
    assert!(out.contains("sweep") && out.contains("validate-mmh"));
    assert_eq!(run(&["--version"]).0, EXIT_PASS);
    assert_eq!(run(&["sweep", "--exp", "manifold_error", "--frobnicate"]).0, EXIT_USAGE);
    assert_eq!(run(&["sweep", "--exp", "nonsense"]).0, EXIT_USAGE);
    assert_eq!(run(&["sweep", "--exp", "manifold_error", "--q", "7"]).0, EXIT_USAGE);
    assert_eq!(
        run(&["sweep", "--exp", "manifold_error", "--eps", "1e-3,1e-2"]).0,
        EXIT_USAGE
    );
    assert_eq!(
        run(&["sweep", "--exp", "fiber_angle", "--system", "linear2d"]).0,
        EXIT_USAGE
    );
    assert_eq!(run(&["manifold", "--eps", "-1"]).0, EXIT_USAGE);
    assert_eq!(run(&[]).0, EXIT_USAGE);
}

#[test]
fn critical_manifold_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let (code, _, err) = run(&[
        "manifold",
        "--system",
        "mmh",
        "--q",
        "0",
        "--eps",
        "0",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_PASS, "{err}");
    let (header, rows) = read_csv(&path);
    assert_eq!(header, ["y1", "z1", "order", "eps", "residual"]);
    assert_eq!(rows.len(), 32);
    for row in rows {
        let s: f64 = row[0].parse().unwrap();
        let c: f64 = row[1].parse().unwrap();
        assert!((c - s / (s + 1.0)).abs() < 1e-12, "s = {s}, c = {c}");
        assert_eq!(row[2], "0");
    }
}

#[test]
fn sweep_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = dir.path().join(name);
        let args = [
            "sweep",
            "--exp",
            "fiber_angle",
            "--q",
            "1",
            "--grid-nodes",
            "12",
            "--out",
            path.to_str().unwrap(),
        ];
        let (code, out, err) = run(&args);
        assert_eq!(code, EXIT_PASS, "{out}{err}");
        assert!(out.starts_with("# fiber_angle q=1"));
        outputs.push(fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    assert!(text.starts_with("eps,metric,status\n0.03162277660168379,"));
    assert_eq!(text.lines().count(), 8);
}

#[test]
fn first_order_manifold_sweep_passes() {
    let (code, out, err) = run(&["sweep", "--exp", "manifold_error", "--q", "1"]);
    assert_eq!(code, EXIT_PASS, "{out}{err}");
    let summary = out.lines().last().unwrap();
    assert!(summary.contains("PASS"), "{summary}");
    let slope: f64 = summary
        .split("slope=")
        .nth(1)
        .unwrap()
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(slope >= 1.8, "{slope}");
}

#[test]
fn slope_is_insensitive_to_grid_density() {
    let slope = |nodes: usize| {
        let cfg = RunConfig {
            q: 1,
            grid_nodes: nodes,
            ..RunConfig::default()
        };
        let exp = Experiment::from_config(ExperimentKind::ManifoldError, &cfg).unwrap();
        run_sweep(&exp, &ExperimentKind::ManifoldError.default_eps())
            .unwrap()
            .fit
            .unwrap()
            .slope
    };
    let (coarse, fine) = (slope(64), slope(128));
    assert!((coarse - fine).abs() < 0.05, "{coarse} vs {fine}");
}

#[test]
fn config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let csv_path = dir.path().join("sweep.csv");
    fs::write(
        &cfg,
        format!(
            "# linear test system\nsystem = linear2d\nq = 1\ngrid.nodes = 10\neps.list = 1e-4, 1e-3, 3e-3, 1e-2, 3e-2\nout = {}\n",
            csv_path.display()
        ),
    )
    .unwrap();
    let (code, out, err) = run(&[
        "sweep",
        "--exp",
        "invariance_defect",
        "--config",
        cfg.to_str().unwrap(),
        "--q",
        "0",
    ]);
    assert_eq!(code, EXIT_PASS, "{out}{err}");
    assert!(out.contains("invariance_defect q=0"));
    let (_, rows) = read_csv(&csv_path);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0][0], "0.03");

    fs::write(&cfg, "system = mmh\nsystem = mmh\n").unwrap();
    let (code, _, err) = run(&["sweep", "--exp", "manifold_error", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("already set"), "{err}");
    fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(
        run(&["manifold", "--eps", "0", "--config", cfg.to_str().unwrap()]).0,
        EXIT_USAGE
    );
}

#[test]
fn fibers_and_projection_commands() {
    let dir = tempfile::tempdir().unwrap();
    let fibers = dir.path().join("f.csv");
    let (code, _, err) = run(&[
        "fibers",
        "--q",
        "1",
        "--eps",
        "0.01",
        "--grid-nodes",
        "6",
        "--policy",
        "previous",
        "--out",
        fibers.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_PASS, "{err}");
    let (header, rows) = read_csv(&fibers);
    assert_eq!(header, ["y1", "z1", "a1_1", "a1_2", "order", "policy"]);
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[5] == "previous"));

    let (code, out, err) = run(&[
        "project",
        "--system",
        "tilted",
        "--q",
        "1",
        "--x0",
        "1,0.5",
        "--eps",
        "0.1",
        "--horizon",
        "2",
    ]);
    assert_eq!(code, EXIT_PASS, "{err}");
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["scheme"], "fiber_search");
    let base_y = report["base"][0].as_f64().unwrap();
    assert!((base_y - 1.0 / 1.075).abs() < 1e-12, "{base_y}");
    assert!(report["slow_phase_error"].as_f64().unwrap() < 1e-6);
    assert_eq!(run(&["project", "--x0", "1", "--eps", "0.01"]).0, EXIT_USAGE);
}

#[test]
fn validate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("oracle");
    let (code, out, err) = run(&["validate-mmh", "--json", prefix.to_str().unwrap()]);
    assert_eq!(code, EXIT_PASS, "{out}{err}");
    assert_eq!(out.lines().filter(|l| l.contains("PASS")).count(), 2);
    let q1 = dir.path().join("oracle_q1.json");
    let q2 = dir.path().join("oracle_q2.json");
    let (code, table, _) = run(&["report", q1.to_str().unwrap(), q2.to_str().unwrap()]);
    assert_eq!(code, EXIT_PASS);
    assert_eq!(table.lines().count(), 3);

    let mut failing: SweepReport = serde_json::from_str(&fs::read_to_string(&q1).unwrap()).unwrap();
    failing.pass = false;
    let bad = dir.path().join("bad.json");
    write_json(&failing, fs::File::create(&bad).unwrap()).unwrap();
    let (code, table, _) = run(&["report", q1.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(code, EXIT_FAIL);
    assert!(table.contains("FAIL"));
    assert_eq!(
        run(&["report", dir.path().join("missing.json").to_str().unwrap()]).0,
        EXIT_USAGE
    );
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_csp");
    let status = Command::new(bin).args(["sweep", "--bogus"]).output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_USAGE));
    assert!(!status.stderr.is_empty());
    let status = Command::new(bin)
        .args(["manifold", "--q", "0", "--eps", "0", "--grid-nodes", "4"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_PASS));
    assert_eq!(String::from_utf8(status.stdout).unwrap().lines().count(), 5);
}

#[test]
fn fit_matches_hand_slope() {
    let eps = [1e-2, 1e-3, 1e-4, 3e-3, 3e-4];
    let fit = fit_order(&eps, &eps.map(|e| 5.0 * e * e)).unwrap();
    assert!((fit.slope - 2.0).abs() < 1e-12);
}
