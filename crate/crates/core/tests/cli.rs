use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signed-beta"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_fit_compare_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(&["simulate", "--n", "200", "--seed", "7", "--out-dir", "sim"], d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(d.join("sim/edges.tsv").exists() && d.join("sim/truth.json").exists());

    let out = run(&["fit", "sim/edges.tsv", "--out", "fit.json"], d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let out = run(
        &["compare", "fit.json", "--facet", "beta", "--focal", "3", "--candidates", "0-50", "--alpha", "0.05"],
        d,
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(d.join("comparison.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "focal,candidate,facet,point,delta_hat,p_value,lower,upper,indiv_sig,multi_sig"
    );
    // 0..=50 without the focal node.
    assert_eq!(lines.count(), 50);

    let out = run(&["report", "fit.json", "--edges", "sim/edges.tsv", "--out-dir", "rep"], d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(d.join("rep/ranking.csv").exists());
}

#[test]
fn missing_input_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["fit", "missing.tsv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("missing.tsv"), "{msg}");
}

#[test]
fn usage_error_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["fit"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["bench", "--cell", "n=abc"], dir.path());
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn bench_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out_dir in ["a", "b"] {
        let out = run(
            &["bench", "--cell", "n=200,kappa01=0.05", "--reps", "100", "--seed", "11", "--out-dir", out_dir],
            d,
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let mut names: Vec<_> = std::fs::read_dir(d.join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == "table1_linf.csv"));
    for name in names {
        let a = std::fs::read(d.join("a").join(&name)).unwrap();
        let b = std::fs::read(d.join("b").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs");
    }
}
