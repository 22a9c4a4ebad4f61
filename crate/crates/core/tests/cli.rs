mod common;

use std::path::Path;

use common::example_path;
use fraclq::cli::{self, RunReport, SpecFile, VerifyReport};
use fraclq::problems::example1;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["fraclq"];
    argv.extend_from_slice(args);
    let code = cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn write_spec(dir: &Path, name: &str, file: &SpecFile) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(file).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn bundled_spec_loads() {
    let spec = cli::load_spec(&example_path()).unwrap();
    assert_eq!(
        (spec.state_dim(), spec.input_dim(), spec.horizon),
        (2, 1, 4)
    );
    assert_eq!(spec, example1());
}

#[test]
fn solve_reports_round_trip() {
    let path = example_path();
    for method in ["riccati", "dp"] {
        let (code, out, _) = run(&["solve", "--method", method, path.to_str().unwrap()]);
        assert_eq!(code, 0);
        let report: RunReport = serde_json::from_str(&out).unwrap();
        assert!((report.optimal_cost - 28.086).abs() < 5e-3 * 28.086);
        let again: RunReport =
            serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
        assert_eq!(again, report);
        assert_eq!(report.gains.len(), 10);
        assert_eq!(report.epsilon.is_some(), method == "riccati");
        assert_eq!(report.term_counts.is_some(), method == "dp");
        assert!(report.timings.is_some() && report.generated_at_unix.is_some());
    }
}

#[test]
fn reports_are_reproducible_without_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let path = example_path();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let (code, _, _) = run(&[
            "solve",
            "--method",
            "dp",
            "--no-timestamp",
            "--out",
            out.to_str().unwrap(),
            path.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn verify_passes_on_bundled_spec() {
    let (code, out, err) = run(&["verify", "--no-timestamp", example_path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let report: VerifyReport = serde_json::from_str(&out).unwrap();
    assert!(report.pass);
    assert_eq!(report.costs.len(), 4);
    assert_eq!(report.deltas.len(), 6);
    assert_eq!(report.reference_checks.len(), 2);
}

#[test]
fn verify_fails_on_strict_reference() {
    let (code, out, _) = run(&[
        "verify",
        "--tol-paper",
        "1e-9",
        example_path().to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    let report: VerifyReport = serde_json::from_str(&out).unwrap();
    assert!(!report.pass);
}

#[test]
fn simulate_from_method_and_from_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = example_path();
    let report = dir.path().join("solve.json");
    let csv = dir.path().join("paths.csv");
    let (code, _, _) = run(&[
        "solve",
        "--out",
        report.to_str().unwrap(),
        spec.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let base = [
        "simulate",
        "--paths",
        "2000",
        "--seed",
        "4",
        "--no-timestamp",
    ];
    let mut with_method = base.to_vec();
    with_method.extend([
        "--trajectories",
        csv.to_str().unwrap(),
        "--keep",
        "3",
        spec.to_str().unwrap(),
    ]);
    let (code, a, err) = run(&with_method);
    assert_eq!(code, 0, "{err}");
    let mut with_report = base.to_vec();
    with_report.extend(["--policy", report.to_str().unwrap(), spec.to_str().unwrap()]);
    let (code, b, _) = run(&with_report);
    assert_eq!(code, 0);

    let a: cli::SimulateReport = serde_json::from_str(&a).unwrap();
    let b: cli::SimulateReport = serde_json::from_str(&b).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.estimate.n_paths, 2000);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 5);
}

#[test]
fn bench_follows_term_law() {
    let (code, out, _) = run(&["bench", "--n-max", "7", "--repeats", "1"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], cli::BENCH_HEADER);
    assert_eq!(lines.len(), 1 + 4);
    for (i, line) in lines[1..].iter().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let n = 4 + i;
        assert_eq!(f[0].parse::<usize>().unwrap(), n);
        let p = 1usize << n;
        assert_eq!(
            f[3..6],
            [p.to_string(), (p - 1).to_string(), (p - 2).to_string()]
        );
    }
}

#[test]
fn invalid_specs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = SpecFile::from_spec(&example1());
    file.alpha = 2.5;
    let p = write_spec(dir.path(), "alpha.json", &file);
    let (code, _, err) = run(&["solve", &p]);
    assert_eq!(code, 2);
    assert!(err.contains("alpha") && err.contains("(0, 2)"), "{err}");

    let mut file = SpecFile::from_spec(&example1());
    file.s = vec![vec![2.0, 1.0], vec![0.0, 2.0]];
    let p = write_spec(dir.path(), "s.json", &file);
    let (code, _, err) = run(&["solve", &p]);
    assert_eq!(code, 2);
    assert!(err.contains("`S`") && err.contains("symmetric"), "{err}");

    let mut file = SpecFile::from_spec(&example1());
    file.k = vec![vec![-0.02]];
    let p = write_spec(dir.path(), "k.json", &file);
    let (code, _, err) = run(&["solve", &p]);
    assert_eq!(code, 2);
    assert!(
        err.contains("`K`") && err.contains("λ_min = -0.02"),
        "{err}"
    );

    let bad = dir.path().join("broken.json");
    std::fs::write(&bad, "{\n  \"alpha\": 0.5,\n  \"h\": oops\n}").unwrap();
    let (code, _, err) = run(&["solve", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("line 3"), "{err}");

    let (code, _, _) = run(&["solve", "--epsilon", "0", example_path().to_str().unwrap()]);
    assert_eq!(code, 2);
    let (code, _, _) = run(&[
        "solve",
        "--method",
        "newton",
        example_path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn missing_file_exits_with_one() {
    let (code, out, err) = run(&["solve", "/nonexistent/spec.json"]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(!err.is_empty());
}

#[test]
fn term_guard_exits_with_four() {
    let exe = env!("CARGO_BIN_EXE_fraclq");
    let status = std::process::Command::new(exe)
        .args(["solve", "--method", "dp", example_path().to_str().unwrap()])
        .env(cli::MAX_TERMS_ENV, "44")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(4));
    let ok = std::process::Command::new(exe)
        .args(["solve", "--method", "dp", example_path().to_str().unwrap()])
        .env(cli::MAX_TERMS_ENV, "45")
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(serde_json::from_slice::<RunReport>(&ok.stdout).is_ok());
}

#[test]
fn horizon_above_oracle_cap_is_rejected_by_verify() {
    let dir = tempfile::tempdir().unwrap();
    let file = SpecFile::from_spec(&example1().with_horizon(9));
    let p = write_spec(dir.path(), "long.json", &file);
    let (code, _, err) = run(&["verify", &p]);
    assert_eq!(code, 2);
    assert!(err.contains("cap"), "{err}");
}
