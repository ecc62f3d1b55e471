//! Cross-city origin-destination flow prediction with causally informed
//! feature reconstruction.
//!
//! Pipeline stages: reinforcement-learning causal discovery over feature
//! columns ([`causal`]), causality-conditioned variational reconstruction of
//! missing columns ([`cevae`]), and graph-attention OD flow prediction with
//! teacher/student distillation ([`odpred`]).

pub mod error;
pub mod matrix;
pub mod seed;
pub mod nn;
pub mod data;
pub mod causal;
pub mod baselines;
pub mod cevae;
pub mod dag;
pub mod io;
pub mod metrics;
pub mod odpred;
pub mod pipeline;
pub mod plot;
pub mod synthcity;

pub use error::{Error, Result};
pub use matrix::Matrix;
