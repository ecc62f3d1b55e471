//! Causal structure discovery over feature columns.

mod bic;
mod exact;
mod penalty;
mod policy;
mod prune;
mod refine;
mod search;

pub use bic::{bic_score, BicScore, BicScorer};
pub use exact::{enumerate_dags, exact_dag_search, MAX_EXACT_FEATURES};
pub use penalty::acyclicity_penalty;
pub use policy::{bernoulli_log_mass, feature_tokens, log_prob, sample_action, sample_from_logits, surrogate, PolicyConfig, PolicyParams};
pub use prune::prune_to_dag;
pub use search::{penalized_reward, train_causal_discovery, CausalSearchConfig, DiscoveryOutput, EpisodeResult};

#[cfg(test)]
mod tests;
