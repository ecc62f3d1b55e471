use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seeds = [0, 1]
recon_samples = 4

[data.synth]
source_regions = 20
target_regions = 14
n_features = 5
n_missing = 2
flow_keep_fraction = 0.3

[causal]
n_episodes = 10
batch_size = 8

[cevae]
latent_dim = 2
hidden = 8
max_epochs = 4

[odpred]
k = 3
n_layers = 1
hidden = 8
head_hidden = 8

[odpred.teacher]
max_epochs = 2

[odpred.student]
max_epochs = 2

[sweep]
counts = [0, 1]
"#;

fn ceofp(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("tiny.toml");
    if !config.exists() {
        fs::write(&config, TINY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_ceofp"))
        .args(args)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stages_run_in_order_for_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["synth", "discover", "train-cevae", "reconstruct", "train-teacher", "train-student", "predict", "evaluate"] {
        let o = ceofp(dir.path(), &[stage, "--seed", "1"]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let seed = dir.path().join("out").join("seed-1");
    for f in ["data/target/truth/flows.csv", "discover/dag.json", "reconstruct/features_reconstructed.csv", "metrics.json"] {
        assert!(seed.join(f).exists(), "missing {f}");
    }
    assert!(!dir.path().join("out").join("seed-0").exists());
    let o = ceofp(dir.path(), &["figures"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn a_stage_before_its_inputs_fails_with_the_stage_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = ceofp(dir.path(), &["reconstruct", "--seed", "0"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("stage reconstruct failed"), "{e}");
    assert!(e.contains("missing artifacts"), "{e}");
}

#[test]
fn figures_without_runs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = ceofp(dir.path(), &["figures"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage figures failed"), "{}", stderr(&o));
}

#[test]
fn bad_config_is_a_config_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "seeds = []\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ceofp"))
        .args(["pipeline", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage config failed"), "{}", stderr(&o));
}

#[test]
fn pipeline_reports_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = ceofp(d.path(), &["pipeline"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ra = fs::read(a.path().join("out/report.json")).unwrap();
    assert_eq!(ra, fs::read(b.path().join("out/report.json")).unwrap());
    for cmd in ["bench", "sweep", "ablate", "figures"] {
        let o = ceofp(a.path(), &[cmd]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    for f in ["comparison.csv", "sweep.csv", "ablation.json", "figures/sweep_rmse.svg", "figures/reward_curve_seed-0.svg"] {
        assert!(a.path().join("out").join(f).exists(), "missing {f}");
    }
}
