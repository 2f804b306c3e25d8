use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gopp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gopp")).args(args).output().expect("spawn gopp")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generated(dir: &Path) -> std::path::PathBuf {
    let g = dir.join("inst");
    let out = gopp(&["generate", "--n", "5", "--m", "8", "--d", "2", "--sigma", "0.05", "--seed", "3", "--out", p(&g)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    g
}

#[test]
fn generate_solve_certify_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let g = generated(dir.path());
    for f in ["clouds.txt", "truth.txt", "rotations.txt", "gram.txt"] {
        assert!(g.join(f).is_file(), "missing {f}");
    }
    let report = dir.path().join("report.json");
    let sol = dir.path().join("sol.txt");
    let out = gopp(&["solve", "--input", p(&g.join("clouds.txt")), "--out", p(&report), "--solution-out", p(&sol)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["converged"], true);
    assert_eq!(json["n"], 5);

    let out = gopp(&["certify", "--gram", p(&g.join("gram.txt")), "--stack", p(&sol)]);
    assert_eq!(code(&out), 0);
    let cert: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(cert.get("lambda_blocks").is_some());
}

#[test]
fn bm_runs_on_generated_instance() {
    let dir = tempfile::tempdir().unwrap();
    let g = generated(dir.path());
    let out = gopp(&["bm", "--input", p(&g.join("clouds.txt")), "--max-iter", "500"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["d"], 2);
}

#[test]
fn phase_writes_csv_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("phase.csv");
    let out = gopp(&[
        "phase", "--m-list", "6", "--n-list", "4,5", "--sigma-list", "0,0.1", "--trials", "2", "--out", p(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("model,n,m,d,sigma,trials,successes,mean_iters,mean_df_truth,timeouts"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.cfg");
    fs::write(&cfg, "# small grid\nm_list = 6\nn_list = 4\nsigma_list = 0\ntrials = 1\n").unwrap();
    let out = gopp(&["phase", "--config", p(&cfg), "--trials", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[5], "3");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&gopp(&[])), 1);
    assert_eq!(code(&gopp(&["frobnicate"])), 1);
    assert_eq!(code(&gopp(&["solve", "--input", "/nonexistent/clouds.txt"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "1\n2 3\n1 2\n").unwrap();
    assert_eq!(code(&gopp(&["solve", "--input", p(&bad)])), 1);
    assert_eq!(code(&gopp(&["--help"])), 0);
}

#[test]
fn overflow_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let big = dir.path().join("big.txt");
    fs::write(&big, "2\n2 3\n1e300 -1e300 3e300\n1e300 1e300 -2e300\n2 3\n1e300 1e300 2e300\n-1e300 1e300 -5e300\n").unwrap();
    assert_eq!(code(&gopp(&["solve", "--input", p(&big)])), 2);
    assert_eq!(code(&gopp(&["bm", "--input", p(&big)])), 2);
}

#[test]
fn mostly_timed_out_grid_exits_three() {
    let out = gopp(&["phase", "--m-list", "6", "--n-list", "4", "--sigma-list", "0.1", "--trials", "3", "--timeout", "1e-9"]);
    assert_eq!(code(&out), 3);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().ends_with(",3"));
}
