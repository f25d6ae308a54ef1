use std::path::Path;
use std::process::{Command, Output};

fn farfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_farfield")).args(args).output().expect("run farfield")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn out_arg(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

#[test]
fn validate_passes_on_the_parabola() {
    let dir = tempfile::tempdir().unwrap();
    let o = farfield(&["validate", "--scenario", "parabola_line", "--out", out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS discrepancy_slope"));
    for f in ["comparison.csv", "field.csv", "expansion.csv", "bridges.csv", "convergence.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn failed_check_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = farfield(&["validate", "--scenario", "three_lines", "--out", out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL first_relative_discrepancy"));
}

#[test]
fn converge_reads_a_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("comparison.csv");
    let mut text = String::from("r,re_numeric,im_numeric,re_asymptotic,im_asymptotic,abs_diff,rel_diff\n");
    for r in [2.0f64, 4.0, 8.0, 16.0] {
        let d = 0.5 / (r * r);
        text.push_str(&format!("{r},{},0,1,0,{d},{d}\n", 1.0 + d));
    }
    std::fs::write(&path, text).unwrap();
    let o = farfield(&["converge", "--input", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("slope = -2.000000"));
    let o = farfield(&["converge", "--input", path.to_str().unwrap(), "--slope-min", "-1.5", "--slope-max", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analysis_subcommands_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert!(farfield(&["trace", "--scenario", "three_lines", "--out", out]).status.success());
    assert!(dir.path().join("trace_g3.csv").exists());
    let o = farfield(&["bridge", "--scenario", "circle", "--out", out]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(dir.path().join("bridges.csv")).unwrap().contains("c,1"));
    let o = farfield(&["classify", "--scenario", "three_lines", "--out", out]);
    assert_eq!(stdout(&o).lines().filter(|l| l.contains("crossing")).count(), 3);
    let o = farfield(&["asym", "--scenario", "parabola_line", "--out", out, "--r-list", "3,6"]);
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn scenario_files_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lines.scn");
    std::fs::write(
        &path,
        "[scenario]\nname = pair\ndirection = 1, 1\n[components]\ng1 = xi1 + i*kappa\ng2 = xi2 + i*kappa\n[terms]\nterm = 1 ; g1^0.5 g2^0.5\n",
    )
    .unwrap();
    let o = farfield(&["classify", "--scenario", path.to_str().unwrap(), "--out", out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("active"));

    std::fs::write(&path, "[components]\ng1 = xi1 +\n").unwrap();
    let o = farfield(&["classify", "--scenario", path.to_str().unwrap(), "--out", out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let o = farfield(&["surface", "--scenario", "no_such_scenario", "--out", out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}
