//! Experiment orchestration: configuration, per-seed stages with on-disk
//! artifacts, reports, ablations, the missing-feature sweep and figures.
//!
//! Every stage writes its artifacts under `<out>/seed-<s>/` and loads them
//! instead of recomputing when they are already present, so an interrupted
//! run resumes where it stopped. Derived outputs (reconstructions,
//! predictions, metrics) are recomputed from the persisted models.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{evaluate_flow_model, fit_gravity_observed, held_out_metrics, latent_input_names, BaselineArm, GravityFit};
use crate::causal::{train_causal_discovery, CausalSearchConfig};
use crate::cevae::{
    baseline_log_likelihood, cevae_log_likelihood, reconstruct_baseline, reconstruct_target, train_baseline, train_cevae, BaselineKind, BaselineParams,
    CevaeConfig, CevaeParams, Reconstruction, TrainHistory,
};
use crate::dag::{cpdag_shd, hex, shd, CausalDag};
use crate::data::{CityDataset, FeatureMatrix, OdMatrix};
use crate::error::{Error, Result};
use crate::io::{read_city, read_truth, write_city, write_features, write_truth, TruthFiles};
use crate::matrix::Matrix;
use crate::metrics::{recon_metrics, FlowMetricReport, ReconMetricReport};
use crate::odpred::{build_region_graph, teacher_targets, train_student, train_teacher, InputAdapter, OdConfig, OdModelParams, RegionGraph};
use crate::plot::{line_chart, Chart, Series};
use crate::seed;
use crate::synthcity::{generate_city_pair, remask_target, CityPair, CityPairConfig};

/// Where the two cities come from. Both directories or neither; without
/// directories the pair is generated from `synth` with the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source_dir: Option<PathBuf>,
    pub target_dir: Option<PathBuf>,
    pub synth: CityPairConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Masked-feature counts; the arms share the masking order, so larger
    /// counts hide a superset of the columns hidden by smaller ones.
    pub counts: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { counts: vec![0, 5, 10, 15] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    /// Observed features only, still distilled.
    NoCevae,
    /// Vanilla VAE reconstruction instead of the causal one.
    NoGraph,
    /// CE-VAE trained with β = 0.
    NoAux,
    /// Only μ_Z reaches the student.
    NoSigma,
}

impl AblationArm {
    pub const ALL: [AblationArm; 4] = [AblationArm::NoCevae, AblationArm::NoGraph, AblationArm::NoAux, AblationArm::NoSigma];

    pub fn name(self) -> &'static str {
        match self {
            AblationArm::NoCevae => "no_cevae",
            AblationArm::NoGraph => "no_graph",
            AblationArm::NoAux => "no_aux",
            AblationArm::NoSigma => "no_sigma",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub arms: Vec<AblationArm>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { arms: AblationArm::ALL.to_vec() }
    }
}

/// Full experiment configuration, read from TOML. The `seed` fields of the
/// causal, cevae and odpred sections are replaced per run by sub-seeds of
/// the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Monte Carlo samples for reported reconstruction likelihoods.
    pub recon_samples: usize,
    pub data: DataConfig,
    pub causal: CausalSearchConfig,
    pub cevae: CevaeConfig,
    pub odpred: OdConfig,
    pub sweep: SweepConfig,
    pub ablation: AblationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("runs"),
            recon_samples: 32,
            data: DataConfig::default(),
            causal: CausalSearchConfig::default(),
            cevae: CevaeConfig::default(),
            odpred: OdConfig::default(),
            sweep: SweepConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn sha256_json<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: "<config>".into(),
            detail: e.to_string(),
        })
    }

    /// Relative data paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut config: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for dir in [&mut config.data.source_dir, &mut config.data.target_dir].into_iter().flatten() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config serialisation: {e}")))
    }

    pub fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must be nonempty"));
        }
        if self.recon_samples == 0 {
            return Err(Error::invalid("recon_samples must be positive"));
        }
        match (&self.data.source_dir, &self.data.target_dir) {
            (None, None) => {}
            (Some(s), Some(t)) => {
                let absent: Vec<String> = [s, t].iter().filter(|p| !p.is_dir()).map(|p| p.display().to_string()).collect();
                if !absent.is_empty() {
                    return Err(Error::MissingArtifacts(absent));
                }
            }
            _ => return Err(Error::invalid("set both data.source_dir and data.target_dir, or neither")),
        }
        self.causal.check()?;
        self.cevae.check()?;
        self.odpred.check()
    }

    /// SHA-256 of the configuration with `output_dir` cleared.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_json(&c)
    }

    /// Hash of the settings that shape per-seed artifacts.
    fn artifact_key(&self) -> Result<String> {
        sha256_json(&(&self.data, &self.causal, &self.cevae, &self.odpred, self.recon_samples))
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed-{seed}"))
    }

    fn is_synthetic(&self) -> bool {
        self.data.source_dir.is_none()
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifacts(vec![path.display().to_string()]));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train", "validation"])?;
    for (e, (t, v)) in history.train.iter().zip(&history.validation).enumerate() {
        w.write_record([e.to_string(), t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_reward_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "mean_reward"])?;
    for (e, r) in curve.iter().enumerate() {
        w.write_record([e.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `origin_id,dest_id,flow` for the given pairs.
pub fn write_predictions(path: &Path, city: &CityDataset, pairs: &[(usize, usize)], pred: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["origin_id", "dest_id", "flow"])?;
    let ids = city.regions.ids();
    for (&(o, d), f) in pairs.iter().zip(pred) {
        w.write_record([ids[o].as_str(), ids[d].as_str(), &f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Discovery output as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryArtifact {
    pub dag: CausalDag,
    pub reward_curve: Vec<f64>,
}

/// A trained model with its loss history, as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact<M> {
    pub model: M,
    pub history: TrainHistory,
}

/// Which CE-VAE checkpoint a stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CevaeVariant {
    Main,
    /// β = 0.
    NoAux,
}

/// `features` with `missing` columns hidden.
pub fn hide_columns(features: &FeatureMatrix, missing: &[usize]) -> FeatureMatrix {
    let mut f = features.clone();
    for &m in missing {
        f.observed[m] = false;
        for r in 0..f.n_regions() {
            f.values.set(r, m, f64::NAN);
        }
    }
    f
}

/// One student input on the source (for the teacher adapter) and on the
/// target, with column names.
struct StudentInput {
    source: Matrix,
    target: Matrix,
    names: Vec<String>,
}

/// CE-OFP row of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub rmse: f64,
    pub smape: f64,
    pub cpc: f64,
    pub recon: ReconMetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub dag_hash: String,
    pub dag_edges: usize,
    /// Against the generating DAG, when known.
    pub shd: Option<usize>,
    pub cpdag_shd: Option<usize>,
    pub student_input_width: usize,
    pub recon: BTreeMap<String, ReconMetricReport>,
    pub flows: BTreeMap<String, FlowMetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub median_rmse: f64,
    pub median_smape: f64,
    pub median_cpc: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconSummary {
    pub median_mse: f64,
    #[serde(rename = "median_L")]
    pub median_log_likelihood: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seeds: Vec<SeedReport>,
    pub flows: BTreeMap<String, ArmSummary>,
    pub recon: BTreeMap<String, ReconSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn summarize_flows<'a>(rows: impl IntoIterator<Item = (&'a str, &'a FlowMetricReport)>) -> BTreeMap<String, ArmSummary> {
    let mut by_arm: BTreeMap<String, Vec<&FlowMetricReport>> = BTreeMap::new();
    for (arm, r) in rows {
        by_arm.entry(arm.to_string()).or_default().push(r);
    }
    by_arm
        .into_iter()
        .map(|(arm, rs)| {
            let col = |f: fn(&FlowMetricReport) -> f64| median(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let s = ArmSummary {
                median_rmse: col(|r| r.rmse),
                median_smape: col(|r| r.smape),
                median_cpc: col(|r| r.cpc),
                n_seeds: rs.len(),
            };
            (arm, s)
        })
        .collect()
}

/// State of one seed's run. With `strict` set, prerequisites of a stage
/// must already be on disk; otherwise they are computed on demand.
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub source: CityDataset,
    pub target: CityDataset,
    pub truth: Option<TruthFiles>,
    pub causal: CausalSearchConfig,
    pub cevae: CevaeConfig,
    pub odpred: OdConfig,
    pub recon_samples: usize,
    pub strict: bool,
    pair: Option<(CityPair, CityPairConfig)>,
}

impl SeedRun {
    pub fn new(config: &PipelineConfig, seed: u64) -> Result<Self> {
        config.check()?;
        let dir = config.seed_dir(seed);
        fs::create_dir_all(&dir)?;
        let key = config.artifact_key()?;
        let key_path = dir.join("artifact_key.txt");
        if key_path.exists() {
            let old = fs::read_to_string(&key_path)?;
            if old.trim() != key {
                return Err(Error::invalid(format!(
                    "{} holds artifacts from a different configuration; use another output directory",
                    dir.display()
                )));
            }
        } else {
            write_atomic(&key_path, format!("{key}\n").as_bytes())?;
        }

        let (source, target, truth, pair) = match (&config.data.source_dir, &config.data.target_dir) {
            (Some(s), Some(t)) => {
                let source = read_city(s)?;
                let target = read_city(t)?;
                let truth = match read_truth(t, &target.regions) {
                    Ok(tr) => Some(tr),
                    Err(Error::MissingArtifacts(_)) => None,
                    Err(e) => return Err(e),
                };
                (source, target, truth, None)
            }
            _ => {
                let synth = CityPairConfig { seed, ..config.data.synth.clone() };
                let pair = generate_city_pair(&synth)?;
                let truth = TruthFiles {
                    dag: Some(pair.truth.dag.clone()),
                    features: pair.truth.target_features.clone(),
                    od: pair.truth.target_od.clone(),
                };
                (pair.source.clone(), pair.target.clone(), Some(truth), Some((pair, synth)))
            }
        };
        if source.features.names != target.features.names {
            return Err(Error::ObservedSetMismatch("source and target feature names differ".into()));
        }
        if !source.features.is_complete() {
            return Err(Error::invalid("the source city must observe every feature"));
        }
        Ok(Self {
            seed,
            dir,
            source,
            target,
            truth,
            causal: CausalSearchConfig { seed: seed::derive(seed, "causal"), ..config.causal.clone() },
            cevae: CevaeConfig { seed: seed::derive(seed, "cevae"), ..config.cevae },
            odpred: OdConfig { seed: seed::derive(seed, "odpred"), ..config.odpred },
            recon_samples: config.recon_samples,
            strict: false,
            pair,
        })
    }

    fn truth(&self) -> Result<&TruthFiles> {
        self.truth
            .as_ref()
            .ok_or_else(|| Error::MissingArtifacts(vec![self.dir.join("target/truth").display().to_string()]))
    }

    fn truth_od(&self) -> Result<&OdMatrix> {
        Ok(&self.truth()?.od)
    }

    /// Load `path`, or build and persist it. Prerequisites in strict mode
    /// must exist.
    fn artifact<T: Serialize + DeserializeOwned>(&self, path: &Path, prerequisite: bool, make: impl FnOnce() -> Result<T>) -> Result<T> {
        if path.exists() {
            return read_json(path);
        }
        if prerequisite && self.strict {
            return Err(Error::MissingArtifacts(vec![path.display().to_string()]));
        }
        let value = make()?;
        write_json(path, &value)?;
        Ok(value)
    }

    /// Copies of both cities (and the target truth) under `data/`.
    pub fn write_data(&self) -> Result<PathBuf> {
        let d = self.dir.join("data");
        if !d.join("target/flows.csv").exists() {
            write_city(&d.join("source"), &self.source)?;
            write_city(&d.join("target"), &self.target)?;
            if let Some(t) = &self.truth {
                let dag = t.dag.clone().unwrap_or_else(|| CausalDag::empty(self.target.features.names.clone()));
                write_truth(&d.join("target"), &self.target.regions, &dag, &t.features, &t.od)?;
            }
        }
        Ok(d)
    }

    fn discovery_at(&self, prerequisite: bool) -> Result<DiscoveryArtifact> {
        let d = self.dir.join("discover");
        let out = self.artifact(&d.join("discovery.json"), prerequisite, || {
            let found = train_causal_discovery(&self.source.features, &self.causal)?;
            Ok(DiscoveryArtifact {
                dag: found.dag,
                reward_curve: found.reward_curve,
            })
        })?;
        if !d.join("reward_curve.csv").exists() {
            write_json(&d.join("dag.json"), &out.dag)?;
            write_reward_curve(&d.join("reward_curve.csv"), &out.reward_curve)?;
        }
        Ok(out)
    }

    pub fn discovery(&self) -> Result<DiscoveryArtifact> {
        self.discovery_at(false).map_err(|e| e.in_stage("discover"))
    }

    fn cevae_path(&self, variant: CevaeVariant, missing: &[usize]) -> PathBuf {
        if missing != self.target.features.missing_indices() {
            return self.dir.join(format!("sweep/k{}/cevae", missing.len()));
        }
        match variant {
            CevaeVariant::Main => self.dir.join("cevae"),
            CevaeVariant::NoAux => self.dir.join("cevae_beta0"),
        }
    }

    fn cevae_for(&self, variant: CevaeVariant, missing: &[usize], prerequisite: bool) -> Result<CevaeParams> {
        let dir = self.cevae_path(variant, missing);
        let art: ModelArtifact<CevaeParams> = self.artifact(&dir.join("model.json"), prerequisite, || {
            let dag = self.discovery_at(true)?.dag;
            let config = match variant {
                CevaeVariant::Main => self.cevae,
                CevaeVariant::NoAux => CevaeConfig { beta: 0.0, ..self.cevae },
            };
            let (model, history) = train_cevae(&self.source, &dag, missing, &config)?;
            Ok(ModelArtifact { model, history })
        })?;
        if !dir.join("history.csv").exists() {
            write_history(&dir.join("history.csv"), &art.history)?;
        }
        Ok(art.model)
    }

    pub fn train_cevae(&self, variant: CevaeVariant) -> Result<CevaeParams> {
        let missing = self.target.features.missing_indices();
        self.cevae_for(variant, &missing, false).map_err(|e| e.in_stage("train-cevae"))
    }

    fn baseline_model(&self, kind: BaselineKind, prerequisite: bool) -> Result<BaselineParams> {
        let dir = self.dir.join(match kind {
            BaselineKind::Ae => "ae",
            BaselineKind::Vae => "vae",
        });
        let art: ModelArtifact<BaselineParams> = self.artifact(&dir.join("model.json"), prerequisite, || {
            let (model, history) = train_baseline(kind, &self.source, &self.target.features.missing_indices(), &self.cevae)?;
            Ok(ModelArtifact { model, history })
        })?;
        if !dir.join("history.csv").exists() {
            write_history(&dir.join("history.csv"), &art.history)?;
        }
        Ok(art.model)
    }

    /// Reconstruct the target with the main CE-VAE and persist
    /// `features_reconstructed.csv` and `latent_mu_sigma.csv`.
    pub fn reconstruct(&self) -> Result<Reconstruction> {
        let run = || {
            let model = self.cevae_for(CevaeVariant::Main, &self.target.features.missing_indices(), true)?;
            let rec = reconstruct_target(&self.target.features, &model)?;
            let d = self.dir.join("reconstruct");
            fs::create_dir_all(&d)?;
            write_features(&d.join("features_reconstructed.csv"), &self.target.regions, &rec.features)?;
            let latent = Matrix::hcat(&[&rec.z_mean, &rec.z_std]);
            let mut names: Vec<String> = (0..model.latent_dim).map(|k| format!("z_mean_{k}")).collect();
            names.extend((0..model.latent_dim).map(|k| format!("z_std_{k}")));
            write_features(&d.join("latent_mu_sigma.csv"), &self.target.regions, &FeatureMatrix::complete(latent, names)?)?;
            Ok(rec)
        };
        run().map_err(|e: Error| e.in_stage("reconstruct"))
    }

    fn source_graph(&self) -> Result<RegionGraph> {
        build_region_graph(&self.source.topology, self.odpred.k)
    }

    pub fn target_graph(&self) -> Result<RegionGraph> {
        build_region_graph(&self.target.topology, self.odpred.k)
    }

    fn teacher_at(&self, prerequisite: bool) -> Result<OdModelParams> {
        let dir = self.dir.join("teacher");
        let art: ModelArtifact<OdModelParams> = self.artifact(&dir.join("model.json"), prerequisite, || {
            let (model, history) = train_teacher(&self.source, &self.source_graph()?, &self.odpred)?;
            Ok(ModelArtifact { model, history })
        })?;
        if !dir.join("history.csv").exists() {
            write_history(&dir.join("history.csv"), &art.history)?;
        }
        Ok(art.model)
    }

    pub fn teacher(&self) -> Result<OdModelParams> {
        self.teacher_at(false).map_err(|e| e.in_stage("train-teacher"))
    }

    fn cevae_input(&self, model: &CevaeParams, target: &CityDataset, with_sigma: bool) -> Result<StudentInput> {
        let observed = target.features.observed_indices();
        let src = reconstruct_target(&hide_columns(&self.source.features, &model.missing), model)?;
        let tar = reconstruct_target(&target.features, model)?;
        Ok(StudentInput {
            source: src.student_input(&observed, with_sigma),
            target: tar.student_input(&observed, with_sigma),
            names: latent_input_names(target, model.latent_dim, with_sigma),
        })
    }

    fn observed_input(&self, target: &CityDataset) -> StudentInput {
        let observed = target.features.observed_indices();
        StudentInput {
            source: self.source.features.values.select_columns(&observed),
            target: target.features.values.select_columns(&observed),
            names: observed.iter().map(|&j| target.features.names[j].clone()).collect(),
        }
    }

    /// Train (or load) a student at `dir` and score it on held-out pairs.
    fn student(&self, dir: &Path, target: &CityDataset, input: &StudentInput, distill: bool, prerequisite: bool) -> Result<(OdModelParams, FlowMetricReport)> {
        let graph = build_region_graph(&target.topology, self.odpred.k)?;
        let art: ModelArtifact<OdModelParams> = self.artifact(&dir.join("model.json"), prerequisite, || {
            let targets = if distill {
                let teacher = self.teacher_at(true)?;
                let adapter = InputAdapter::fit(&input.source, &self.source.features.values)?;
                Some(teacher_targets(&teacher, &adapter, &input.target, &graph)?)
            } else {
                None
            };
            let (model, history) = train_student(target, &input.target, input.names.clone(), &graph, targets.as_deref(), &self.odpred)?;
            Ok(ModelArtifact { model, history })
        })?;
        if !dir.join("history.csv").exists() {
            write_history(&dir.join("history.csv"), &art.history)?;
        }
        let report = evaluate_flow_model(&art.model, &input.target, &graph, target, self.truth_od()?)?;
        Ok((art.model, report))
    }

    fn arm_dir(&self, name: &str) -> PathBuf {
        self.dir.join("arms").join(name)
    }

    fn ce_ofp_input(&self, prerequisite: bool) -> Result<StudentInput> {
        let model = self.cevae_for(CevaeVariant::Main, &self.target.features.missing_indices(), prerequisite)?;
        self.cevae_input(&model, &self.target, true)
    }

    /// The distilled student on `observed ‖ μ_Z ‖ σ_Z`.
    pub fn train_ce_ofp(&self) -> Result<(OdModelParams, FlowMetricReport)> {
        let run = || {
            let input = self.ce_ofp_input(true)?;
            self.student(&self.arm_dir("ce_ofp"), &self.target, &input, true, false)
        };
        run().map_err(|e: Error| e.in_stage("train-student"))
    }

    /// CE-OFP metrics plus reconstruction metrics; writes `metrics.json` and
    /// the held-out predictions.
    pub fn evaluate(&self) -> Result<SeedMetrics> {
        let run = || {
            let input = self.ce_ofp_input(true)?;
            let (model, flows) = self.student(&self.arm_dir("ce_ofp"), &self.target, &input, true, true)?;
            let pairs = self.target.od.held_out_pairs();
            let pred = model.predict(&input.target, &self.target_graph()?, &self.target.topology, &pairs)?;
            write_predictions(&self.arm_dir("ce_ofp").join("flows_pred.csv"), &self.target, &pairs, &pred)?;
            let recon = self.recon_cevae(true)?;
            let m = SeedMetrics {
                rmse: flows.rmse,
                smape: flows.smape,
                cpc: flows.cpc,
                recon,
            };
            write_json(&self.dir.join("metrics.json"), &m)?;
            Ok(m)
        };
        run().map_err(|e: Error| e.in_stage("evaluate"))
    }

    /// Held-out predictions of the trained CE-OFP student; needs no truth.
    pub fn predict(&self) -> Result<PathBuf> {
        let run = || {
            let input = self.ce_ofp_input(true)?;
            let dir = self.arm_dir("ce_ofp");
            let art: ModelArtifact<OdModelParams> = read_json(&dir.join("model.json"))?;
            let pairs = self.target.od.held_out_pairs();
            let pred = art.model.predict(&input.target, &self.target_graph()?, &self.target.topology, &pairs)?;
            let path = dir.join("flows_pred.csv");
            write_predictions(&path, &self.target, &pairs, &pred)?;
            Ok(path)
        };
        run().map_err(|e: Error| e.in_stage("predict"))
    }

    fn masked_truth(&self) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        let truth = self.truth()?;
        let missing = self.target.features.missing_indices();
        let cols = missing.iter().map(|&m| truth.features.values.column(m)).collect();
        Ok((missing, cols))
    }

    fn recon_cevae(&self, prerequisite: bool) -> Result<ReconMetricReport> {
        let model = self.cevae_for(CevaeVariant::Main, &self.target.features.missing_indices(), prerequisite)?;
        let rec = reconstruct_target(&self.target.features, &model)?;
        self.recon_report(&rec, Some(&|truth: &Matrix| {
            cevae_log_likelihood(&model, &self.target.features, truth, self.recon_samples, seed::derive(self.seed, "recon-ll"))
        }))
    }

    fn recon_baseline(&self, kind: BaselineKind) -> Result<ReconMetricReport> {
        let model = self.baseline_model(kind, false)?;
        let rec = reconstruct_baseline(&self.target.features, &model)?;
        let mut report = self.recon_report(&rec, None)?;
        report.log_likelihood = baseline_log_likelihood(&model, &self.target.features, &self.truth()?.features.values, self.recon_samples, seed::derive(self.seed, "recon-ll"))?;
        Ok(report)
    }

    fn recon_report(&self, rec: &Reconstruction, loglik: Option<&dyn Fn(&Matrix) -> Result<f64>>) -> Result<ReconMetricReport> {
        let (missing, truth_cols) = self.masked_truth()?;
        let beliefs: Vec<_> = missing
            .iter()
            .map(|&m| rec.y_beliefs[&self.target.features.names[m]].clone())
            .collect();
        let mut report = recon_metrics(&truth_cols, &beliefs, true)?;
        if let Some(f) = loglik {
            report.log_likelihood = Some(f(&self.truth()?.features.values)?);
        }
        Ok(report)
    }

    pub fn baseline(&self, arm: BaselineArm) -> Result<FlowMetricReport> {
        let run = || match arm {
            BaselineArm::Gravity => {
                let fit: GravityFit = self.artifact(&self.arm_dir("gravity").join("fit.json"), false, || fit_gravity_observed(&self.target))?;
                let pairs = self.target.od.held_out_pairs();
                let pred: Vec<f64> = pairs.iter().map(|&(o, d)| fit.predict(&self.target, o, d)).collect();
                held_out_metrics(&self.target, self.truth_od()?, &pairs, &pred)
            }
            BaselineArm::GatOnly => {
                let input = self.observed_input(&self.target);
                Ok(self.student(&self.arm_dir("gat_only"), &self.target, &input, false, false)?.1)
            }
            BaselineArm::AeGat | BaselineArm::VaeGat => {
                let kind = if arm == BaselineArm::AeGat { BaselineKind::Ae } else { BaselineKind::Vae };
                let model = self.baseline_model(kind, false)?;
                let input = self.baseline_input(&model, kind == BaselineKind::Vae)?;
                Ok(self.student(&self.arm_dir(arm.name()), &self.target, &input, false, false)?.1)
            }
        };
        run().map_err(|e: Error| e.in_stage("baselines"))
    }

    fn baseline_input(&self, model: &BaselineParams, with_sigma: bool) -> Result<StudentInput> {
        let observed = self.target.features.observed_indices();
        let src = reconstruct_baseline(&hide_columns(&self.source.features, &self.target.features.missing_indices()), model)?;
        let tar = reconstruct_baseline(&self.target.features, model)?;
        Ok(StudentInput {
            source: src.student_input(&observed, with_sigma),
            target: tar.student_input(&observed, with_sigma),
            names: latent_input_names(&self.target, model.latent_dim, with_sigma),
        })
    }

    /// Width of the stage-3 student input.
    pub fn student_input_width(&self) -> Result<usize> {
        Ok(self.ce_ofp_input(false)?.target.cols())
    }

    pub fn ablation(&self, arm: AblationArm) -> Result<FlowMetricReport> {
        let run = || {
            let input = match arm {
                AblationArm::NoCevae => self.observed_input(&self.target),
                AblationArm::NoGraph => self.baseline_input(&self.baseline_model(BaselineKind::Vae, false)?, true)?,
                AblationArm::NoAux => {
                    let model = self.cevae_for(CevaeVariant::NoAux, &self.target.features.missing_indices(), false)?;
                    self.cevae_input(&model, &self.target, true)?
                }
                AblationArm::NoSigma => {
                    let model = self.cevae_for(CevaeVariant::Main, &self.target.features.missing_indices(), false)?;
                    self.cevae_input(&model, &self.target, false)?
                }
            };
            Ok(self.student(&self.arm_dir(arm.name()), &self.target, &input, true, false)?.1)
        };
        run().map_err(|e: Error| e.in_stage("ablate"))
    }

    /// CE-OFP and CE-OFP without reconstruction with `count` masked columns.
    /// At count 0 there is nothing to reconstruct and both rows share one
    /// model.
    pub fn sweep_point(&self, count: usize) -> Result<(FlowMetricReport, FlowMetricReport)> {
        let run = || {
            let (pair, synth) = self
                .pair
                .as_ref()
                .ok_or_else(|| Error::invalid("the sweep needs a synthetic pair"))?;
            let default_count = self.target.features.missing_indices().len();
            let target = if count == default_count { self.target.clone() } else { remask_target(pair, synth, count)? };
            let dir = |arm: &str| {
                if count == default_count {
                    self.arm_dir(arm)
                } else {
                    self.dir.join(format!("sweep/k{count}/{arm}"))
                }
            };
            let plain = self.observed_input(&target);
            let (_, without) = self.student(&dir("no_cevae"), &target, &plain, true, false)?;
            if count == 0 {
                return Ok((without, without));
            }
            let model = self.cevae_for(CevaeVariant::Main, &target.features.missing_indices(), false)?;
            let input = self.cevae_input(&model, &target, true)?;
            let (_, with) = self.student(&dir("ce_ofp"), &target, &input, true, false)?;
            Ok((with, without))
        };
        run().map_err(|e: Error| e.in_stage("sweep"))
    }

    /// Every stage of the main pipeline plus the baselines.
    pub fn run_all(&self) -> Result<SeedReport> {
        self.write_data().map_err(|e| e.in_stage("data"))?;
        let found = self.discovery()?;
        self.train_cevae(CevaeVariant::Main)?;
        let width = self.reconstruct().map(|r| r.student_input(&self.target.features.observed_indices(), true).cols())?;
        self.teacher()?;
        self.train_ce_ofp()?;
        let metrics = self.evaluate()?;

        let mut flows = BTreeMap::new();
        flows.insert("ce_ofp".to_string(), FlowMetricReport {
            rmse: metrics.rmse,
            smape: metrics.smape,
            cpc: metrics.cpc,
            n_pairs: self.target.od.held_out_pairs().len(),
        });
        for arm in BaselineArm::ALL {
            flows.insert(arm.name().to_string(), self.baseline(arm)?);
        }
        let mut recon = BTreeMap::new();
        recon.insert("ce_vae".to_string(), metrics.recon);
        let baseline_recon = || -> Result<(ReconMetricReport, ReconMetricReport)> { Ok((self.recon_baseline(BaselineKind::Vae)?, self.recon_baseline(BaselineKind::Ae)?)) };
        let (vae, ae) = baseline_recon().map_err(|e| e.in_stage("evaluate"))?;
        recon.insert("vae".to_string(), vae);
        recon.insert("ae".to_string(), ae);

        let true_dag = self.truth.as_ref().and_then(|t| t.dag.as_ref());
        Ok(SeedReport {
            seed: self.seed,
            dag_hash: found.dag.hash(),
            dag_edges: found.dag.edge_count(),
            shd: true_dag.map(|t| shd(t.adjacency(), found.dag.adjacency())),
            cpdag_shd: true_dag.map(|t| cpdag_shd(t.adjacency(), found.dag.adjacency())),
            student_input_width: width,
            recon,
            flows,
        })
    }
}

fn write_comparison(path: &Path, seeds: &[SeedReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["arm", "seed", "rmse", "smape", "cpc"])?;
    for s in seeds {
        for (arm, r) in &s.flows {
            w.write_record([arm.clone(), s.seed.to_string(), r.rmse.to_string(), r.smape.to_string(), r.cpc.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Run every stage for every seed; writes `report.json` and
/// `comparison.csv` under the output directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<ExperimentReport> {
    config.check().map_err(|e| e.in_stage("config"))?;
    let mut seeds = Vec::new();
    for &s in &config.seeds {
        let run = SeedRun::new(config, s).map_err(|e| e.in_stage("data"))?;
        seeds.push(run.run_all()?);
    }
    let flows = summarize_flows(seeds.iter().flat_map(|s| s.flows.iter().map(|(a, r)| (a.as_str(), r))));
    let mut recon = BTreeMap::new();
    for arm in ["ce_vae", "vae", "ae"] {
        let rows: Vec<&ReconMetricReport> = seeds.iter().filter_map(|s| s.recon.get(arm)).collect();
        let ll: Option<Vec<f64>> = rows.iter().map(|r| r.log_likelihood).collect();
        recon.insert(arm.to_string(), ReconSummary {
            median_mse: median(&rows.iter().map(|r| r.mse).collect::<Vec<_>>()),
            median_log_likelihood: ll.map(|v| median(&v)),
        });
    }
    let report = ExperimentReport {
        config_hash: config.hash()?,
        seeds,
        flows,
        recon,
    };
    write_json(&config.output_dir.join("report.json"), &report)?;
    write_comparison(&config.output_dir.join("comparison.csv"), &report.seeds)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub arm: String,
    pub seed: u64,
    pub metrics: FlowMetricReport,
}

/// CE-OFP and every baseline arm per seed; writes `comparison.csv`.
pub fn bench(config: &PipelineConfig) -> Result<Vec<ArmRow>> {
    config.check().map_err(|e| e.in_stage("config"))?;
    let mut rows = Vec::new();
    for &s in &config.seeds {
        let run = SeedRun::new(config, s).map_err(|e| e.in_stage("data"))?;
        let (_, m) = run.train_ce_ofp()?;
        rows.push(ArmRow { arm: "ce_ofp".into(), seed: s, metrics: m });
        for arm in BaselineArm::ALL {
            rows.push(ArmRow {
                arm: arm.name().into(),
                seed: s,
                metrics: run.baseline(arm)?,
            });
        }
    }
    write_rows_csv(&config.output_dir.join("comparison.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub rows: Vec<ArmRow>,
    pub summary: BTreeMap<String, ArmSummary>,
}

/// The full model and each configured ablation; writes `ablation.json`
/// and `ablation.csv`.
pub fn ablate(config: &PipelineConfig) -> Result<AblationReport> {
    config.check().map_err(|e| e.in_stage("config"))?;
    let mut rows = Vec::new();
    for &s in &config.seeds {
        let run = SeedRun::new(config, s).map_err(|e| e.in_stage("data"))?;
        let (_, full) = run.train_ce_ofp()?;
        rows.push(ArmRow { arm: "ce_ofp".into(), seed: s, metrics: full });
        for &arm in &config.ablation.arms {
            rows.push(ArmRow {
                arm: arm.name().into(),
                seed: s,
                metrics: run.ablation(arm)?,
            });
        }
    }
    let report = AblationReport {
        config_hash: config.hash()?,
        summary: summarize_flows(rows.iter().map(|r| (r.arm.as_str(), &r.metrics))),
        rows,
    };
    write_json(&config.output_dir.join("ablation.json"), &report)?;
    write_rows_csv(&config.output_dir.join("ablation.csv"), &report.rows)?;
    Ok(report)
}

fn write_rows_csv(path: &Path, rows: &[ArmRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["arm", "seed", "rmse", "smape", "cpc"])?;
    for r in rows {
        w.write_record([r.arm.clone(), r.seed.to_string(), r.metrics.rmse.to_string(), r.metrics.smape.to_string(), r.metrics.cpc.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub count: usize,
    pub arm: String,
    pub seed: u64,
    pub rmse: f64,
    pub smape: f64,
    pub cpc: f64,
}

/// Median RMSE per arm and count, counts ascending.
pub fn sweep_medians(rows: &[SweepRow]) -> BTreeMap<String, Vec<(usize, f64)>> {
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.arm.clone(), r.count)).or_default().push(r.rmse);
    }
    let mut out: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for ((arm, count), v) in groups {
        out.entry(arm).or_default().push((count, median(&v)));
    }
    out
}

/// Least-squares slope of `y` on `x`.
pub fn slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
    sxy / sxx
}

fn sweep_series(rows: &[SweepRow]) -> Vec<Series> {
    sweep_medians(rows)
        .into_iter()
        .map(|(arm, pts)| Series::new(arm, pts.into_iter().map(|(c, r)| (c as f64, r)).collect()))
        .collect()
}

/// RMSE against the number of masked features; writes `sweep.csv` and the
/// `sweep_rmse` chart.
pub fn sweep_missing_features(config: &PipelineConfig, counts: &[usize]) -> Result<Vec<SweepRow>> {
    config.check().map_err(|e| e.in_stage("config"))?;
    if !config.is_synthetic() {
        return Err(Error::invalid("the sweep needs a synthetic pair").in_stage("sweep"));
    }
    let nf = config.data.synth.n_features;
    if let Some(&c) = counts.iter().find(|&&c| c >= nf) {
        return Err(Error::invalid(format!("count {c} leaves no observed feature of {nf}")).in_stage("sweep"));
    }
    let mut rows = Vec::new();
    for &s in &config.seeds {
        let run = SeedRun::new(config, s).map_err(|e| e.in_stage("data"))?;
        for &count in counts {
            let (with, without) = run.sweep_point(count)?;
            for (arm, m) in [("ce_ofp", with), ("no_cevae", without)] {
                rows.push(SweepRow {
                    count,
                    arm: arm.into(),
                    seed: s,
                    rmse: m.rmse,
                    smape: m.smape,
                    cpc: m.cpc,
                });
            }
        }
    }
    let out = &config.output_dir;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let chart = Chart { title: "RMSE vs masked features", x_label: "masked features", y_label: "median RMSE" };
    line_chart(&out.join("figures").join("sweep_rmse"), &chart, &sweep_series(&rows)).map_err(|e| e.in_stage("sweep"))?;
    Ok(rows)
}

fn read_curve(path: &Path, x_col: usize, y_cols: &[(usize, &str)]) -> Result<Vec<Series>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut series: Vec<Series> = y_cols.iter().map(|(_, n)| Series::new(*n, Vec::new())).collect();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })
        };
        let x = parse(x_col)?;
        for (s, (c, _)) in series.iter_mut().zip(y_cols) {
            s.points.push((x, parse(*c)?));
        }
    }
    Ok(series)
}

fn seed_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    if out.is_dir() {
        for entry in fs::read_dir(out)? {
            let p = entry?.path();
            if p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed-")) {
                dirs.push(p);
            }
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Reward curves and CE-VAE loss curves for every seed directory, plus the
/// sweep chart when `sweep.csv` exists. Returns the written image paths.
pub fn emit_figures(out: &Path) -> Result<Vec<PathBuf>> {
    let seeds = seed_dirs(out)?;
    let mut absent = Vec::new();
    if seeds.is_empty() {
        absent.push(out.join("seed-*/discover/reward_curve.csv").display().to_string());
        absent.push(out.join("seed-*/cevae/history.csv").display().to_string());
    }
    for d in &seeds {
        for f in ["discover/reward_curve.csv", "cevae/history.csv"] {
            if !d.join(f).exists() {
                absent.push(d.join(f).display().to_string());
            }
        }
    }
    if !absent.is_empty() {
        return Err(Error::MissingArtifacts(absent).in_stage("figures"));
    }
    let fig = out.join("figures");
    fs::create_dir_all(&fig)?;
    let mut written = Vec::new();
    for d in &seeds {
        let name = d.file_name().and_then(|n| n.to_str()).unwrap_or("seed");
        let reward = read_curve(&d.join("discover/reward_curve.csv"), 0, &[(1, "mean reward")])?;
        let stem = fig.join(format!("reward_curve_{name}"));
        line_chart(&stem, &Chart { title: "Discovery reward", x_label: "episode", y_label: "mean batch reward" }, &reward)?;
        written.push(stem.with_extension("svg"));
        let loss = read_curve(&d.join("cevae/history.csv"), 0, &[(1, "train"), (2, "validation")])?;
        let stem = fig.join(format!("loss_curve_{name}"));
        line_chart(&stem, &Chart { title: "CE-VAE loss", x_label: "epoch", y_label: "negative objective" }, &loss)?;
        written.push(stem.with_extension("svg"));
    }
    let sweep = out.join("sweep.csv");
    if sweep.exists() {
        let mut r = csv::Reader::from_path(&sweep)?;
        let rows: Vec<SweepRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        let stem = fig.join("sweep_rmse");
        line_chart(&stem, &Chart { title: "RMSE vs masked features", x_label: "masked features", y_label: "median RMSE" }, &sweep_series(&rows))?;
        written.push(stem.with_extension("svg"));
    }
    Ok(written)
}
