use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cevae::model::{CevaeConfig, CevaeParams, GaussianBelief, Monitor};
use crate::dag::CausalDag;
use crate::data::{CityDataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{gaussian_log_density_f64, Adam, AdamConfig, Tape};
use crate::seed;

/// Shuffle region indices and hold out `round(fraction · n)` (at least
/// one) for validation. Shared by every reconstructor so they see the same
/// rows.
pub fn split_regions(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed::derive(seed, "split")));
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Per-epoch mean training loss and validation loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_validation(&self) -> f64 {
        self.validation.get(self.best_epoch).copied().unwrap_or(f64::NAN)
    }
}

/// Generic mini-batch loop with early stopping on a validation score.
/// `step` returns the batch loss after updating; `validate` scores the
/// current state. Keeps a copy of the best state.
pub(crate) fn early_stopping_loop<S: Clone>(
    state: &mut S,
    train_rows: &[usize],
    batch_size: usize,
    max_epochs: usize,
    patience: usize,
    seed: u64,
    stage: &'static str,
    mut step: impl FnMut(&mut S, &[usize], u64) -> f64,
    mut validate: impl FnMut(&S) -> f64,
) -> Result<TrainHistory> {
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, S)> = None;
    let mut since_best = 0;
    let mut order = train_rows.to_vec();
    let mut counter = 0u64;
    for epoch in 0..max_epochs {
        order.shuffle(&mut seed::rng(seed::derive_idx(seed, "epoch", epoch as u64)));
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(batch_size) {
            let loss = step(state, batch, seed::derive_idx(seed, "batch", counter));
            counter += 1;
            if !loss.is_finite() {
                if let Some((_, s)) = best.take() {
                    *state = s;
                }
                return Err(Error::Diverged {
                    stage,
                    detail: format!("non-finite training loss at epoch {epoch}; last finite state restored"),
                });
            }
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        let val = validate(state);
        history.train.push(total / count.max(1) as f64);
        history.validation.push(val);
        if !val.is_finite() {
            if let Some((_, s)) = best.take() {
                *state = s;
            }
            return Err(Error::Diverged {
                stage,
                detail: format!("non-finite validation loss at epoch {epoch}"),
            });
        }
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, state.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= patience {
                break;
            }
        }
    }
    if let Some((_, s)) = best {
        *state = s;
    }
    Ok(history)
}

pub(crate) fn check_source(source: &CityDataset) -> Result<()> {
    if !source.features.is_complete() {
        return Err(Error::invalid("training needs a fully observed source city"));
    }
    Ok(())
}

/// Train on the source city with the target's missing set hidden from the
/// encoder inputs; returns the best-validation parameters.
pub fn train_cevae(source: &CityDataset, dag: &CausalDag, missing: &[usize], config: &CevaeConfig) -> Result<(CevaeParams, TrainHistory)> {
    check_source(source)?;
    if dag.features() != source.features.names.as_slice() {
        return Err(Error::invalid("dag features differ from the source feature names"));
    }
    let mut model = CevaeParams::new(dag, missing, config)?;
    let x = &source.features.values;
    let (train_rows, val_rows) = split_regions(x.rows(), config.validation_fraction, config.seed);
    let val_x = x.select_rows(&val_rows);
    let val_noise = model.draw_noise(val_x.rows(), seed::derive(config.seed, "validation-noise"));
    let monitor = config.monitor;

    let mut adam = Adam::new(&model.params, AdamConfig::with_lr(config.learning_rate));
    let state = &mut model;
    let history = early_stopping_loop(
        state,
        &train_rows,
        config.batch_size,
        config.max_epochs,
        config.patience,
        seed::derive(config.seed, "cevae-train"),
        "train-cevae",
        |m, batch, s| {
            let xb = x.select_rows(batch);
            let noise = m.draw_noise(xb.rows(), s);
            let tape = Tape::new();
            let p = m.params.bind(&tape);
            let (loss, _, _) = m.objective(&tape, &p, &xb, &noise);
            let value = loss.scalar_value();
            if value.is_finite() {
                let grads = p.grads(&tape.backward(loss));
                adam.step(&mut m.params, &grads);
            }
            value
        },
        |m| {
            let tape = Tape::new();
            let p = m.params.bind(&tape);
            let (loss, _, aux) = m.objective(&tape, &p, &val_x, &val_noise);
            match monitor {
                Monitor::Objective => loss.scalar_value(),
                Monitor::Auxiliary => -aux,
            }
        },
    )?;
    Ok((model, history))
}

/// Target city with missing columns filled in, plus per-region latent
/// statistics for the flow predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub features: FeatureMatrix,
    /// Per missing feature name, over regions.
    pub y_beliefs: BTreeMap<String, GaussianBelief>,
    pub decoded: BTreeMap<String, GaussianBelief>,
    pub z_mean: Matrix,
    pub z_std: Matrix,
}

impl Reconstruction {
    /// `observed ‖ μ_Z ‖ σ_Z` (σ_Z dropped when `with_sigma` is false).
    pub fn student_input(&self, observed: &[usize], with_sigma: bool) -> Matrix {
        let obs = self.features.values.select_columns(observed);
        if with_sigma {
            Matrix::hcat(&[&obs, &self.z_mean, &self.z_std])
        } else {
            Matrix::hcat(&[&obs, &self.z_mean])
        }
    }
}

pub(crate) fn check_observed_set(target: &FeatureMatrix, features: &[String], observed: &[usize]) -> Result<()> {
    if target.names.as_slice() != features {
        return Err(Error::ObservedSetMismatch("target feature names differ from the trained schema".into()));
    }
    let got = target.observed_indices();
    if got != observed {
        return Err(Error::ObservedSetMismatch(format!(
            "target observes columns {got:?}, model was trained with {observed:?} observed"
        )));
    }
    Ok(())
}

/// Evaluation mode: encoder means fill the missing columns.
pub fn reconstruct_target(target: &FeatureMatrix, params: &CevaeParams) -> Result<Reconstruction> {
    check_observed_set(target, params.features(), &params.observed)?;
    let x = target.values.map(|v| if v.is_nan() { 0.0 } else { v });
    let out = params.evaluate(&x);
    let mut filled = x.clone();
    let names = params.features();
    let mut y_beliefs = BTreeMap::new();
    for (&m, belief) in &out.y_beliefs {
        filled.set_column(m, &belief.mean);
        y_beliefs.insert(names[m].clone(), belief.clone());
    }
    let decoded = out.decoded.iter().map(|(&j, b)| (names[j].clone(), b.clone())).collect();
    let features = FeatureMatrix::complete(filled, names.to_vec())?;
    if !features.values.is_finite() || !out.z_mean.is_finite() || !out.z_std.is_finite() {
        return Err(Error::NonFinite("reconstruction produced non-finite values".into()));
    }
    Ok(Reconstruction {
        features,
        y_beliefs,
        decoded,
        z_mean: out.z_mean,
        z_std: out.z_std,
    })
}

/// Mean over rows and missing features of the Monte Carlo marginal
/// log-density of the true values under the encoder beliefs
/// (`log mean_s N(y; μ_s, σ_s)` over `n_samples` sample paths).
pub fn cevae_log_likelihood(params: &CevaeParams, target: &FeatureMatrix, truth: &Matrix, n_samples: usize, seed: u64) -> Result<f64> {
    check_observed_set(target, params.features(), &params.observed)?;
    if params.missing.is_empty() {
        return Err(Error::invalid("no masked columns to score"));
    }
    let x = target.values.map(|v| if v.is_nan() { 0.0 } else { v });
    let samples: Vec<BTreeMap<usize, GaussianBelief>> = (0..n_samples.max(1))
        .map(|s| params.missing_beliefs(&x, Some(seed::derive_idx(seed, "loglik", s as u64))))
        .collect();
    Ok(marginal_log_likelihood(truth, &params.missing, |s, m| &samples[s][&m], samples.len()))
}

pub(crate) fn marginal_log_likelihood<'a>(truth: &Matrix, missing: &[usize], belief: impl Fn(usize, usize) -> &'a GaussianBelief, n_samples: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for &m in missing {
        for r in 0..truth.rows() {
            let logs: Vec<f64> = (0..n_samples)
                .map(|s| {
                    let b = belief(s, m);
                    gaussian_log_density_f64(truth.get(r, m), b.mean[r], b.std[r])
                })
                .collect();
            total += log_mean_exp(&logs);
            count += 1;
        }
    }
    total / count as f64
}

pub(crate) fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}

