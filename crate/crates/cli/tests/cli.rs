use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn neaf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neaf"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("failed to launch neaf")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = neaf(args, dir);
    assert!(
        out.status.success(),
        "neaf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], dir: &Path) -> i32 {
    neaf(args, dir).status.code().unwrap()
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        [
            "synth", "--shape", "torus", "--points", "500", "--noise", "0.0065", "--density", "stripes", "--seed", "4",
            "-o", out,
        ]
    };
    ok(&args("a.xyz"), dir.path());
    ok(&args("b.xyz"), dir.path());
    let a = fs::read(dir.path().join("a.xyz")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.xyz")).unwrap());
    let lines = String::from_utf8(a).unwrap();
    let first = lines.lines().next().unwrap();
    assert_eq!(first.split_whitespace().count(), 6);
}

#[test]
fn eval_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--shape", "sphere", "--points", "300", "-o", "s.xyz"], dir.path());
    let out = ok(&["eval", "--pred", "s.xyz", "--gt", "s.xyz"], dir.path());
    assert_eq!(out, "RMSE 0.0000 deg\n");
}

#[test]
fn baseline_pca_on_a_plane() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--shape", "plane", "--points", "500", "-o", "p.xyz"], dir.path());
    ok(&["baseline", "pca", "-i", "p.xyz", "-o", "n.xyz", "--k", "16"], dir.path());
    let out = ok(&["eval", "--pred", "n.xyz", "--gt", "p.xyz"], dir.path());
    let deg: f64 = out.trim().trim_start_matches("RMSE ").trim_end_matches(" deg").parse().unwrap();
    assert!(deg < 0.1, "{out}");
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&["--help"], d), 0);
    assert_eq!(code(&["synth", "--shape", "cube", "-o", "x.xyz"], d), 1);
    assert_eq!(code(&["synth", "--shape", "plane", "--radius", "2", "-o", "x.xyz"], d), 1);
    assert_eq!(code(&["baseline", "pca", "-i", "missing.xyz", "-o", "n.xyz"], d), 2);
    fs::write(d.join("bad.xyz"), "0 0 0\n1 2\n").unwrap();
    assert_eq!(code(&["baseline", "pca", "-i", "bad.xyz", "-o", "n.xyz"], d), 2);

    // Every neighbourhood of a line is rank deficient.
    let line: String = (0..20).map(|i| format!("{} 0 0\n", i as f64 * 0.1)).collect();
    fs::write(d.join("line.xyz"), line).unwrap();
    assert_eq!(code(&["baseline", "pca", "-i", "line.xyz", "-o", "n.xyz", "--k", "8"], d), 3);
}
