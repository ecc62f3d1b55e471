use std::fs;
use std::path::Path;

use ceofp::pipeline::{self, PipelineConfig, SeedRun};
use ceofp::Error;

const TINY: &str = r#"
seeds = [0, 1]
recon_samples = 4

[data.synth]
source_regions = 24
target_regions = 16
n_features = 6
n_missing = 2
flow_keep_fraction = 0.3

[causal]
n_episodes = 20
batch_size = 8
refine_moves = 50

[causal.policy]
embed_dim = 8

[cevae]
latent_dim = 2
hidden = 8
max_epochs = 6
patience = 3

[odpred]
k = 4
n_layers = 1
hidden = 8
head_hidden = 8

[odpred.teacher]
max_epochs = 3
patience = 2

[odpred.student]
max_epochs = 3
patience = 2

[sweep]
counts = [0, 2]
"#;

fn tiny(out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::from_toml_str(TINY).unwrap();
    c.output_dir = out.to_path_buf();
    c
}

#[test]
fn pipeline_is_deterministic_and_resumable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let report = pipeline::run_pipeline(&tiny(a.path())).unwrap();
    pipeline::run_pipeline(&tiny(b.path())).unwrap();
    let ra = fs::read(a.path().join("report.json")).unwrap();
    assert_eq!(ra, fs::read(b.path().join("report.json")).unwrap());

    assert_eq!(report.seeds.len(), 2);
    for s in &report.seeds {
        // observed columns, then a mean and a deviation per latent dimension
        assert_eq!(s.student_input_width, 4 + 2 * 2);
        for arm in ["ce_ofp", "gat_only", "vae_gat", "gravity"] {
            assert!(s.flows.contains_key(arm), "missing arm {arm}");
            assert!(s.flows[arm].rmse.is_finite());
        }
        assert!(s.shd.is_some());
    }

    // drop downstream artifacts; a rerun rebuilds them identically
    fs::remove_dir_all(a.path().join("seed-1").join("teacher")).unwrap();
    fs::remove_dir_all(a.path().join("seed-1").join("arms")).unwrap();
    pipeline::run_pipeline(&tiny(a.path())).unwrap();
    assert_eq!(ra, fs::read(a.path().join("report.json")).unwrap());
}

#[test]
fn changed_settings_refuse_stale_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path());
    config.seeds = vec![0];
    SeedRun::new(&config, 0).unwrap().discovery().unwrap();
    config.cevae.hidden = 12;
    let err = SeedRun::new(&config, 0).and_then(|r| r.discovery()).unwrap_err();
    assert!(err.to_string().contains("artifact"), "{err}");
}

#[test]
fn strict_stage_without_prerequisites_names_them() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path());
    let mut run = SeedRun::new(&config, 0).unwrap();
    run.strict = true;
    let err = run.reconstruct().unwrap_err();
    let text = err.to_string();
    assert!(text.contains("reconstruct"), "{text}");
    assert!(text.contains("cevae"), "{text}");
}

#[test]
fn sweep_and_ablation_write_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path());
    config.seeds = vec![3];
    let rows = pipeline::sweep_missing_features(&config, &config.sweep.counts).unwrap();
    assert_eq!(rows.len(), 2 * 2);
    let at_zero: Vec<_> = rows.iter().filter(|r| r.count == 0).collect();
    assert_eq!(at_zero[0].rmse, at_zero[1].rmse);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + rows.len());
    assert!(dir.path().join("figures").join("sweep_rmse.svg").exists());

    let ablation = pipeline::ablate(&config).unwrap();
    assert_eq!(ablation.rows.len(), 1 + config.ablation.arms.len());
    assert!(dir.path().join("ablation.csv").exists());

    let figures = pipeline::emit_figures(dir.path()).unwrap();
    assert!(figures.iter().any(|p| p.ends_with("sweep_rmse.svg")));
    assert!(figures.iter().any(|p| p.to_string_lossy().contains("reward_curve")));
}

#[test]
fn figures_on_an_empty_directory_list_what_is_missing() {
    let dir = tempfile::tempdir().unwrap();
    match pipeline::emit_figures(dir.path()) {
        Err(Error::MissingArtifacts(v)) => assert!(!v.is_empty()),
        Err(Error::Stage { source, .. }) => assert!(matches!(*source, Error::MissingArtifacts(_))),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let err = PipelineConfig::from_toml_str("seeds = [0]\nbogus = 1\n").unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");
}
