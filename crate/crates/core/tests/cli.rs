use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_rq-spice");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_scenario(dir: &Path, trials: usize) -> String {
    let path = dir.join("scenario.json");
    let body = format!(
        r#"{{
  "n_samples": 16,
  "n_grid": 64,
  "components": [{{ "magnitude": 1.0 }}, {{ "magnitude": 1.0 }}],
  "snr_db": [10.0, 20.0],
  "trials": {trials},
  "seed": 11,
  "solvers": [{{ "q": 1.0, "rel_tolerance": 1e-4 }}, {{ "q": 2.0, "rel_tolerance": 1e-4 }}]
}}"#
    );
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn version_names_the_file_format() {
    let out = run(&["--version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(rq_spice::VERSION));
    assert!(text.contains("file formats 1"));
}

#[test]
fn q_below_one_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 2);
    let out_file = dir.path().join("estimate.csv");
    let out = run(&[
        "solve",
        "--input",
        &scenario,
        "--q",
        "0.5",
        "--out",
        &path_str(&out_file),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_file.exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("q"));
}

#[test]
fn missing_scenario_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results");
    let out = run(&[
        "simulate",
        "--scenario",
        "/nonexistent/scenario.json",
        "--out",
        &path_str(&results),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!results.exists());
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 2);
    let out_file = dir.path().join("estimate.csv");
    let out = run(&[
        "solve",
        "--input",
        &scenario,
        "--max-iter",
        "3",
        "--out",
        &path_str(&out_file),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn solve_writes_estimate_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 2);
    let estimate = dir.path().join("estimate.csv");
    let trace = dir.path().join("trace.csv");
    let out = run(&[
        "solve",
        "--input",
        &scenario,
        "--q",
        "2",
        "--tol",
        "1e-6",
        "--max-iter",
        "100000",
        "--out",
        &path_str(&estimate),
        "--trace",
        &path_str(&trace),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let text = fs::read_to_string(&estimate).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,frequency,p,abs_x,arg_x"));
    assert_eq!(lines.count(), 64);

    let text = fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("iter,objective,lambda,active_set,rel_change")
    );
    let objectives: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(objectives.len() >= 2);
    for pair in objectives.windows(2) {
        assert!(pair[1] <= pair[0] * (1.0 + 1e-12));
    }
}

#[test]
fn solve_reads_csv_signal_on_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let signal = dir.path().join("y.csv");
    let mut body = String::from("real,imag\n");
    for t in 0..12 {
        let phase = std::f64::consts::TAU * 3.0 * t as f64 / 24.0;
        body.push_str(&format!("{},{}\n", phase.cos(), phase.sin()));
    }
    fs::write(&signal, body).unwrap();
    let estimate = dir.path().join("estimate.csv");
    let peaks = dir.path().join("peaks.csv");
    let out = run(&[
        "solve",
        "--input",
        &path_str(&signal),
        "--grid",
        "24",
        "--out",
        &path_str(&estimate),
        "--peaks",
        &path_str(&peaks),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&peaks).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{text}");
    // Atom k sits at frequency (k + 1) / M, so the tone at 3/24 is index 2.
    assert!(rows[0].starts_with("2,0.125,"), "{text}");
}

#[test]
fn trace_is_refused_for_r_above_one() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 2);
    let estimate = dir.path().join("estimate.csv");
    let trace = dir.path().join("trace.csv");
    let out = run(&[
        "solve",
        "--input",
        &scenario,
        "--r",
        "2",
        "--out",
        &path_str(&estimate),
        "--trace",
        &path_str(&trace),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!trace.exists());
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 6);
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    for (out_dir, threads) in [(&first, "1"), (&second, "3")] {
        let out = run(&[
            "simulate",
            "--scenario",
            &scenario,
            "--out",
            &path_str(out_dir),
            "--threads",
            threads,
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let mut curves: Vec<_> = fs::read_dir(&first)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().starts_with("curve_"))
        .collect();
    curves.sort();
    assert_eq!(curves.len(), 2);
    for name in curves {
        assert_eq!(
            fs::read(first.join(&name)).unwrap(),
            fs::read(second.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn check_equivalence_passes_on_small_problems() {
    let out = run(&[
        "check-equivalence",
        "--n",
        "8",
        "--m",
        "16",
        "--trials",
        "3",
        "--q",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
