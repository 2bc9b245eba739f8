use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const GOOD: &str = r#"
name = "tiny"

[model]
kind = "blackstock"

[mesh]
geometry = "interval"
degree = 2
dofs = [61]
length = 0.4

[time]
t_end = 1e-5
steps = 20

[initial.psi1]
kind = "gaussian"
amplitude = 3e5
mu = [0.2]
sigma2 = 1e-4

[output]
sample_points = 61
snapshots = [5e-6, 1e-5]
"#;

fn blackstock(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blackstock")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", GOOD);
    let out = dir.path().join("out");
    let o = blackstock(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.toml", "run.log", "manifest.txt", "profile_00.csv", "profile_01.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config.model.kind"));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &GOOD.replace("kind = \"blackstock\"", "kind = \"blackstock\"\nb = -1.0"));
    let o = blackstock(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.b"));
}

#[test]
fn missing_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    let o = blackstock(&["simulate", "--config", missing.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = GOOD.replace("steps = 20", "steps = 20\nmax_iters = 1").replace("amplitude = 3e5", "amplitude = 3e7");
    let cfg = write(dir.path(), "div.toml", &text);
    let out = dir.path().join("o");
    let o = blackstock(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("run.log").exists());
}

#[test]
fn compare_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", GOOD);
    for d in ["a", "b"] {
        let o = blackstock(&["simulate", "--config", &cfg, "--out", dir.path().join(d).to_str().unwrap()]);
        assert!(o.status.success());
    }
    let o = blackstock(&[
        "compare",
        "--a",
        dir.path().join("a").to_str().unwrap(),
        "--b",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "snapshot,file,max_abs_error_MPa");
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let e: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(e, 0.0);
    }
}

#[test]
fn unknown_preset_is_rejected() {
    let o = blackstock(&["preset", "--id", "fig9", "--out", "/tmp/never"]);
    assert!(!o.status.success());
}
