//! Reconstruction of masked feature columns. Each missing column is
//! modelled conditionally on its causal parents, in topological order, with
//! a latent code summarising the whole row.

mod baseline;
mod model;
pub(crate) mod train;

pub use baseline::{baseline_log_likelihood, reconstruct_baseline, train_baseline, BaselineKind, BaselineLoss, BaselineParams};
pub use model::{CevaeConfig, CevaeParams, ElboComponents, EvalOutputs, GaussianBelief, Monitor, Noise, Pass, SIGMA_FLOOR};
pub use train::{cevae_log_likelihood, reconstruct_target, split_regions, train_cevae, Reconstruction, TrainHistory};
