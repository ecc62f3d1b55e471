//! Reconstruction baselines without graph conditioning: a deterministic
//! autoencoder and a vanilla VAE, both mapping observed columns to all
//! columns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cevae::model::{gaussian_head, sum_scalars, CevaeConfig, GaussianBelief, Monitor};
use crate::cevae::train::{check_observed_set, check_source, early_stopping_loop, marginal_log_likelihood, split_regions, Reconstruction, TrainHistory};
use crate::data::{CityDataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{gaussian_log_density, standard_normal, Activation, Adam, AdamConfig, Bound, Mlp, Params, Tape, Var};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Ae,
    Vae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub kind: BaselineKind,
    pub params: Params,
    pub features: Vec<String>,
    pub observed: Vec<usize>,
    pub missing: Vec<usize>,
    pub latent_dim: usize,
    pub(crate) encoder: Mlp,
    pub(crate) decoder: Mlp,
}

/// Per-batch loss parts; `kl` is the closed-form latent KL (0 for the AE).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

impl BaselineParams {
    pub fn new(kind: BaselineKind, features: &[String], missing: &[usize], config: &CevaeConfig) -> Result<Self> {
        config.check()?;
        let p = features.len();
        let mut missing = missing.to_vec();
        missing.sort_unstable();
        missing.dedup();
        if missing.iter().any(|&m| m >= p) {
            return Err(Error::invalid("missing feature index out of range"));
        }
        let observed: Vec<usize> = (0..p).filter(|j| missing.binary_search(j).is_err()).collect();
        if observed.is_empty() {
            return Err(Error::NoObservedFeatures);
        }
        let (h, l) = (config.hidden, config.latent_dim);
        let (enc_out, dec_out) = match kind {
            BaselineKind::Ae => (l, p),
            BaselineKind::Vae => (2 * l, 2 * p),
        };
        let mut params = Params::new();
        let mut rng = seed::rng(seed::derive(config.seed, &format!("{kind:?}-init")));
        let encoder = Mlp::new(&mut params, "enc", &[observed.len(), h, enc_out], Activation::Elu, &mut rng);
        let decoder = Mlp::new(&mut params, "dec", &[l, h, dec_out], Activation::Elu, &mut rng);
        Ok(Self {
            kind,
            params,
            features: features.to_vec(),
            observed,
            missing,
            latent_dim: l,
            encoder,
            decoder,
        })
    }

    fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Latent mean and std (std is `None` for the AE).
    fn encode<'t>(&self, tape: &'t Tape, p: &Bound<'t>, x: &Matrix) -> (Var<'t>, Option<Var<'t>>) {
        let obs = tape.constant(x.select_columns(&self.observed));
        let out = self.encoder.forward(p, obs);
        match self.kind {
            BaselineKind::Ae => (out, None),
            BaselineKind::Vae => {
                let (m, s) = gaussian_head(out, self.latent_dim);
                (m, Some(s))
            }
        }
    }

    fn decode<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> (Var<'t>, Option<Var<'t>>) {
        let out = self.decoder.forward(p, z);
        match self.kind {
            BaselineKind::Ae => (out, None),
            BaselineKind::Vae => {
                let (m, s) = gaussian_head(out, self.n_features());
                (m, Some(s))
            }
        }
    }

    /// AE: mean squared error over all columns. VAE: negative ELBO with
    /// the closed-form latent KL.
    pub fn loss<'t>(&self, tape: &'t Tape, p: &Bound<'t>, x_full: &Matrix, eps: &Matrix) -> (Var<'t>, BaselineLoss) {
        let rows = x_full.rows() as f64;
        let target = tape.constant(x_full.clone());
        let (z_mean, z_std) = self.encode(tape, p, x_full);
        match z_std {
            None => {
                let (recon, _) = self.decode(p, z_mean);
                let loss = recon.sub(target).square().mean();
                let v = loss.scalar_value();
                (loss, BaselineLoss { total: v, reconstruction: v, kl: 0.0 })
            }
            Some(z_std) => {
                let z = z_mean.add(z_std.mul(tape.constant(eps.clone())));
                let (mean, std) = self.decode(p, z);
                let nll = gaussian_log_density(target, mean, std.expect("vae decoder std")).sum().scale(-1.0 / rows);
                // KL(N(μ, σ²) ‖ N(0, 1)) = ½ Σ (μ² + σ² − 1) − Σ log σ
                let kl = sum_scalars(
                    tape,
                    &[
                        z_mean.square().add(z_std.square()).offset(-1.0).sum().scale(0.5),
                        z_std.ln().sum().neg(),
                    ],
                )
                .scale(1.0 / rows);
                let total = nll.add(kl);
                let parts = BaselineLoss {
                    total: total.scalar_value(),
                    reconstruction: nll.scalar_value(),
                    kl: kl.scalar_value(),
                };
                (total, parts)
            }
        }
    }

    fn draw_eps(&self, rows: usize, seed: u64) -> Matrix {
        standard_normal(rows, self.latent_dim, &mut seed::rng(seed))
    }

    /// Evaluation mode: latent mean, decoded means (and stds for the VAE).
    pub fn evaluate(&self, x: &Matrix) -> (Matrix, Option<Matrix>, Matrix, Option<Matrix>) {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let (z_mean, z_std) = self.encode(&tape, &p, x);
        let (mean, std) = self.decode(&p, z_mean);
        let out = (
            z_mean.value().clone(),
            z_std.map(|s| s.value().clone()),
            mean.value().clone(),
            std.map(|s| s.value().clone()),
        );
        out
    }
}

pub fn train_baseline(kind: BaselineKind, source: &CityDataset, missing: &[usize], config: &CevaeConfig) -> Result<(BaselineParams, TrainHistory)> {
    check_source(source)?;
    let mut model = BaselineParams::new(kind, &source.features.names, missing, config)?;
    let x = &source.features.values;
    let (train_rows, val_rows) = split_regions(x.rows(), config.validation_fraction, config.seed);
    let val_x = x.select_rows(&val_rows);
    let val_eps = model.draw_eps(val_x.rows(), seed::derive(config.seed, "validation-noise"));
    let mut adam = Adam::new(&model.params, AdamConfig::with_lr(config.learning_rate));
    let missing_cols = model.missing.clone();
    let monitor = config.monitor;
    let history = early_stopping_loop(
        &mut model,
        &train_rows,
        config.batch_size,
        config.max_epochs,
        config.patience,
        seed::derive(config.seed, &format!("{kind:?}-train")),
        "train-baseline",
        |m, batch, s| {
            let xb = x.select_rows(batch);
            let eps = m.draw_eps(xb.rows(), s);
            let tape = Tape::new();
            let p = m.params.bind(&tape);
            let (loss, parts) = m.loss(&tape, &p, &xb, &eps);
            if parts.total.is_finite() {
                let grads = p.grads(&tape.backward(loss));
                adam.step(&mut m.params, &grads);
            }
            parts.total
        },
        |m| match monitor {
            Monitor::Objective => {
                let tape = Tape::new();
                let p = m.params.bind(&tape);
                m.loss(&tape, &p, &val_x, &val_eps).1.total
            }
            Monitor::Auxiliary => {
                let (_, _, mean, _) = m.evaluate(&val_x);
                let mut se = 0.0;
                for &c in &missing_cols {
                    for r in 0..val_x.rows() {
                        se += (mean.get(r, c) - val_x.get(r, c)).powi(2);
                    }
                }
                se / (val_x.rows() * missing_cols.len().max(1)) as f64
            }
        },
    )?;
    Ok((model, history))
}

/// Missing columns filled with decoded means; `z_std` is zero for the AE.
pub fn reconstruct_baseline(target: &FeatureMatrix, params: &BaselineParams) -> Result<Reconstruction> {
    check_observed_set(target, &params.features, &params.observed)?;
    let x = target.values.map(|v| if v.is_nan() { 0.0 } else { v });
    let (z_mean, z_std, mean, std) = params.evaluate(&x);
    let mut filled = x.clone();
    let mut y_beliefs = BTreeMap::new();
    let mut decoded = BTreeMap::new();
    for j in 0..params.features.len() {
        let col = mean.column(j);
        let sd = std.as_ref().map_or_else(|| vec![0.0; col.len()], |s| s.column(j));
        let belief = GaussianBelief { mean: col.clone(), std: sd };
        if params.missing.binary_search(&j).is_ok() {
            filled.set_column(j, &col);
            y_beliefs.insert(params.features[j].clone(), belief.clone());
        }
        decoded.insert(params.features[j].clone(), belief);
    }
    let z_std = z_std.unwrap_or_else(|| Matrix::zeros(z_mean.rows(), z_mean.cols()));
    Ok(Reconstruction {
        features: FeatureMatrix::complete(filled, params.features.clone())?,
        y_beliefs,
        decoded,
        z_mean,
        z_std,
    })
}

/// VAE counterpart of the reconstruction likelihood: decoder beliefs for
/// the missing columns under `n_samples` latent draws. `None` for the AE,
/// which has no likelihood.
pub fn baseline_log_likelihood(params: &BaselineParams, target: &FeatureMatrix, truth: &Matrix, n_samples: usize, seed: u64) -> Result<Option<f64>> {
    check_observed_set(target, &params.features, &params.observed)?;
    if params.kind == BaselineKind::Ae {
        return Ok(None);
    }
    if params.missing.is_empty() {
        return Err(Error::invalid("no masked columns to score"));
    }
    let x = target.values.map(|v| if v.is_nan() { 0.0 } else { v });
    let samples: Vec<BTreeMap<usize, GaussianBelief>> = (0..n_samples.max(1))
        .map(|s| {
            let tape = Tape::new();
            let p = params.params.bind(&tape);
            let (z_mean, z_std) = params.encode(&tape, &p, &x);
            let eps = params.draw_eps(x.rows(), seed::derive_idx(seed, "loglik", s as u64));
            let z = z_mean.add(z_std.expect("vae latent std").mul(tape.constant(eps)));
            let (mean, std) = params.decode(&p, z);
            let (mean, std) = (mean.value().clone(), std.expect("vae decoder std").value().clone());
            params
                .missing
                .iter()
                .map(|&m| (m, GaussianBelief { mean: mean.column(m), std: std.column(m) }))
                .collect()
        })
        .collect();
    Ok(Some(marginal_log_likelihood(truth, &params.missing, |s, m| &samples[s][&m], samples.len())))
}
