use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hypoips(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypoips")).args(args).output().unwrap()
}

fn write_config(dir: &Path, reps: usize, ns: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(
        &path,
        format!(
            r#"
[model]
tag = "MeanFieldLangevin"
mu = [0.5, 1.0]
sigma = [1.0]

[grid]
n_particles = {ns}
obs_steps = [10]
fine_factor = [2]

[run]
replications = {reps}
output_dir = "{}"

[optimizer]
starts = 1

[oracle]
n_particles = 200
obs_steps = 10
fine_factor = 4
seeds = 2
seed = 1
"#,
            dir.join("out").display()
        ),
    )
    .unwrap();
    path.display().to_string()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn simulate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1, "[5]");
    let out = dir.path().join("out");
    ok(&hypoips(&["simulate", "--config", &cfg, "--seed", "3"]));
    for f in ["trajectories.bin", "observations.csv", "manifest.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let data = out.join("observations.csv").display().to_string();
    let text = ok(&hypoips(&["fit", "--config", &cfg, "--data", &data]));
    assert!(text.contains("mode=C") && text.contains("mode=P"));
    let est = fs::read_to_string(out.join("estimates.csv")).unwrap();
    assert_eq!(est.lines().count(), 3);
}

#[test]
fn replicate_clt_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 130, "[10]");
    let out = dir.path().join("out");
    let other = dir.path().join("elsewhere").display().to_string();
    ok(&hypoips(&["replicate", "--config", &cfg, "--threads", "1", "--stop-after", "40"]));
    let text = ok(&hypoips(&["replicate", "--config", &cfg, "--threads", "1"]));
    assert!(text.starts_with("130 jobs"));
    assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap().lines().count(), 261);
    ok(&hypoips(&["clt", "--config", &cfg]));
    assert!(out.join("clt_summary.csv").exists());
    assert!(out.join("plots").join("cell0_C_mu1_qq.csv").exists());
    ok(&hypoips(&["oracle", "--config", &cfg, "--out", &other]));
    assert_eq!(fs::read_to_string(dir.path().join("elsewhere").join("oracle.csv")).unwrap().lines().count(), 7);
}

#[test]
fn hypo_check_and_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 3, "[4, 8, 16]");
    let text = ok(&hypoips(&["hypo-check", "--config", &cfg]));
    assert!(text.contains("full rank at 12 of 12"), "{text}");
    let text = ok(&hypoips(&["scaling", "--config", &cfg]));
    assert!(text.contains("rmse_mu1_C_vs_n") && text.contains("poc_gap_vs_n"));
    assert!(dir.path().join("out").join("scaling.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\ntag = \"Nope\"\n").unwrap();
    assert_eq!(hypoips(&["simulate", "--config", &bad.display().to_string()]).status.code(), Some(2));
    assert_eq!(hypoips(&["simulate", "--config", "/nonexistent.toml"]).status.code(), Some(2));

    let cfg = write_config(dir.path(), 5, "[4]");
    ok(&hypoips(&["replicate", "--config", &cfg]));
    assert_eq!(hypoips(&["clt", "--config", &cfg, "--no-oracle"]).status.code(), Some(3));
}
