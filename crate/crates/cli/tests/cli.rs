use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const HEADER: &str = "iter,res_norm,alpha,delta,err_ref,rank_min,rank_max,res_rank_max,wall_ms";

const BASE: &str = "\
problem = laplacian
d = 3
n = 4
epsilon = 1e-4
reference = dense
seed = 5
";

fn htsoft(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htsoft"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn setup(extra: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), format!("{BASE}{extra}")).unwrap();
    dir
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn field(row: &[String], i: usize) -> f64 {
    row[i].parse().unwrap()
}

#[test]
fn st_run_meets_stopping_rule() {
    let dir = setup("solver = st\n");
    let out = htsoft(&["solve", "--config", "run.cfg", "--out", "trace.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&dir.path().join("trace.csv"));
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 9);
        assert_eq!(r[0], k.to_string());
        assert!(r[3].is_empty() && r[8].is_empty());
    }
    // gamma of the d = 3 Laplacian with h = 1/5
    let h: f64 = 0.2;
    let gamma = 3.0 * 4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
    let last = rows.last().unwrap();
    assert!(field(last, 1) <= gamma * 1e-4);
    assert!(field(last, 4) <= 1e-4);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup("solver = ie\nrhs = random\n");
    for name in ["a.csv", "b.csv"] {
        let out = htsoft(&["solve", "--config", "run.cfg", "--out", name], dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
}

#[test]
fn ie_deltas_are_proportional_to_residuals() {
    let dir = setup("solver = ie\n");
    let out = htsoft(&["solve", "--config", "run.cfg", "--out", "trace.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let rows = rows(&dir.path().join("trace.csv"));
    assert!(rows.len() > 2);
    for r in &rows {
        let delta = field(r, 3);
        assert!(delta <= 0.1 * field(r, 1) * (1.0 + 1e-12), "row {r:?}");
    }
}

#[test]
fn overrides_and_out_path() {
    let dir = setup("out_path = from_config.csv\n");
    let out = htsoft(
        &[
            "solve",
            "--config",
            "run.cfg",
            "--set",
            "epsilon=1e-2",
            "--set",
            "timing=true",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let rows = rows(&dir.path().join("from_config.csv"));
    assert!(rows.iter().all(|r| field(r, 8) >= 0.0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("converged"));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = setup("");
    let cases: [(&[&str], &str); 4] = [
        (&["--set", "theta=1.5"], "theta"),
        (&["--set", "colour=blue"], "colour"),
        (&["--set", "d=x"], "\"d\""),
        (&["--set", "solver=apriori", "--set", "rho_tilde=0.1"], "rho_tilde"),
    ];
    for (extra, key) in cases {
        let mut args = vec!["solve", "--config", "run.cfg", "--out", "t.csv"];
        args.extend_from_slice(extra);
        let out = htsoft(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{extra:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(key), "{extra:?}");
    }
    let out = htsoft(&["solve", "--config", "missing.cfg", "--out", "t.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn max_iter_exits_3_with_partial_trace() {
    let dir = setup("max_iter = 5\n");
    let out = htsoft(&["solve", "--config", "run.cfg", "--out", "t.csv"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(rows(&dir.path().join("t.csv")).len(), 6);
}

#[test]
fn apriori_schedule_runs_fixed_steps() {
    let dir = setup("problem = synthetic\nkappa = 3\nsolver = apriori\nrho_tilde = 0.8\nsteps = 12\n");
    let out = htsoft(&["solve", "--config", "run.cfg", "--out", "t.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&dir.path().join("t.csv"));
    assert_eq!(rows.len(), 13);
    for w in rows.windows(2) {
        let ratio = field(&w[1], 2) / field(&w[0], 2);
        assert!((ratio - 0.8).abs() < 1e-12);
    }
}

#[test]
fn validate_passes_without_touching_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = htsoft(&["validate"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{stdout}");
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn sweep_writes_one_trace_per_point() {
    let dir = setup("");
    fs::write(dir.path().join("grid.txt"), "solver = st, ie\nepsilon = 1e-2, 1e-3\n").unwrap();
    let out = htsoft(
        &["sweep", "--config", "run.cfg", "--grid", "grid.txt", "--out-dir", "out"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..4 {
        assert!(!rows(&dir.path().join(format!("out/run_{i:03}.csv"))).is_empty());
    }
    let index = fs::read_to_string(dir.path().join("out/runs.csv")).unwrap();
    assert_eq!(index.lines().count(), 5);
    assert!(index.contains("solver=ie epsilon=1e-3"));

    fs::write(dir.path().join("bad.txt"), "theta = 0.5, 2\n").unwrap();
    let out = htsoft(
        &["sweep", "--config", "run.cfg", "--grid", "bad.txt", "--out-dir", "bad"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("bad").exists());
}
