use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::causal::bic::BicScorer;
use crate::causal::penalty::acyclicity_penalty;
use crate::causal::policy::{feature_tokens, sample_from_logits, surrogate, PolicyConfig, PolicyParams};
use crate::causal::prune::prune_adjacency;
use crate::causal::refine::refine;
use crate::dag::{Adjacency, CausalDag};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Adam, AdamConfig, Tape};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CausalSearchConfig {
    pub n_episodes: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub baseline_decay: f64,
    /// Weight on the acyclicity penalty inside the reward.
    pub penalty_weight: f64,
    pub seed: u64,
    /// Move cap for each greedy BIC climb during refinement of the best
    /// sampled graph; 0 disables refinement.
    pub refine_moves: usize,
    pub policy: PolicyConfig,
}

impl Default for CausalSearchConfig {
    fn default() -> Self {
        Self {
            n_episodes: 2000,
            batch_size: 32,
            learning_rate: 5e-3,
            baseline_decay: 0.99,
            penalty_weight: 10.0,
            seed: 0,
            refine_moves: 500,
            policy: PolicyConfig::default(),
        }
    }
}

impl CausalSearchConfig {
    pub fn check(&self) -> Result<()> {
        if self.n_episodes == 0 || self.batch_size == 0 {
            return Err(Error::invalid("episode and batch counts must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.penalty_weight >= 0.0) {
            return Err(Error::invalid("learning rate must be positive and penalty weight nonnegative"));
        }
        if !(self.baseline_decay > 0.0 && self.baseline_decay < 1.0) {
            return Err(Error::invalid("baseline decay must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One sampled action and its score. `penalty` is already weighted, so
/// `reward == -bic - penalty`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub adjacency: Adjacency,
    pub reward: f64,
    pub bic: f64,
    pub penalty: f64,
    pub logprob: f64,
}

#[derive(Debug, Clone)]
pub struct DiscoveryOutput {
    pub dag: CausalDag,
    /// Mean batch reward per episode.
    pub reward_curve: Vec<f64>,
    /// Best sampled graph (pruned) before refinement.
    pub best: Option<EpisodeResult>,
}

/// Reward of a raw action: the BIC of its pruned DAG plus the weighted
/// acyclicity penalty of the action itself.
pub fn penalized_reward(adj: &Adjacency, scorer: &BicScorer, penalty_weight: f64) -> (f64, f64, Adjacency) {
    let pruned = prune_adjacency(adj, scorer);
    let bic = scorer.score_unchecked(&pruned).value;
    let penalty = penalty_weight * acyclicity_penalty(adj);
    (bic, penalty, pruned)
}

/// Higher reward wins; rewards within 1e-9 (relative) tie and fall back
/// to the exhaustive search's order: fewer edges, then smaller adjacency.
fn preferred(a: &(f64, Adjacency), b: &(f64, Adjacency)) -> bool {
    let tol = 1e-9 * b.0.abs().max(1.0);
    if a.0 > b.0 + tol {
        true
    } else if a.0 >= b.0 - tol {
        (a.1.edge_count(), a.1.bytes()) < (b.1.edge_count(), b.1.bytes())
    } else {
        false
    }
}

pub fn train_causal_discovery(data: &FeatureMatrix, config: &CausalSearchConfig) -> Result<DiscoveryOutput> {
    config.check()?;
    let p = data.n_features();
    let scorer = BicScorer::new(data)?;
    if p < 2 {
        return Ok(DiscoveryOutput {
            dag: CausalDag::empty(data.names.clone()),
            reward_curve: Vec::new(),
            best: None,
        });
    }
    let mut policy = PolicyParams::new(p, config.policy, seed::derive(config.seed, "policy-init"));
    let tokens = standardized_tokens(data, config.policy.n_anchors);
    let mut adam = Adam::new(&policy.params, AdamConfig::with_lr(config.learning_rate));
    let mut rng = seed::rng(seed::derive(config.seed, "policy-sample"));

    let mut cache: HashMap<Vec<u8>, (f64, f64, Adjacency)> = HashMap::new();
    let mut baseline: Option<f64> = None;
    let mut best: Option<EpisodeResult> = None;
    let mut curve = Vec::with_capacity(config.n_episodes);

    for episode in 0..config.n_episodes {
        let tape = Tape::new();
        let bound = policy.params.bind(&tape);
        let logits = policy.logits(&tape, &bound, &tokens);
        let logit_matrix = Matrix::from_vec(p, p, logits.value().as_slice().to_vec());

        let mut results = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let (adj, logprob) = sample_from_logits(&logit_matrix, &mut rng);
            let (bic, penalty, pruned) = cache
                .entry(adj.bytes().to_vec())
                .or_insert_with(|| penalized_reward(&adj, &scorer, config.penalty_weight))
                .clone();
            let reward = -bic - penalty;
            if !reward.is_finite() {
                return Err(Error::Diverged {
                    stage: "discover",
                    detail: format!("non-finite reward at episode {episode}"),
                });
            }
            // the pruned graph is what would be returned; it carries no penalty
            let candidate = (-bic, pruned);
            let replace = match &best {
                None => true,
                Some(b) => preferred(&candidate, &(-b.bic, b.adjacency.clone())),
            };
            if replace {
                best = Some(EpisodeResult {
                    adjacency: candidate.1,
                    reward: -bic,
                    bic,
                    penalty: 0.0,
                    logprob,
                });
            }
            results.push(EpisodeResult {
                adjacency: adj,
                reward,
                bic,
                penalty,
                logprob,
            });
        }

        let mean = results.iter().map(|r| r.reward).sum::<f64>() / results.len() as f64;
        curve.push(mean);
        let b = *baseline.get_or_insert(mean);
        let samples: Vec<Adjacency> = results.iter().map(|r| r.adjacency.clone()).collect();
        let advantages: Vec<f64> = results.iter().map(|r| r.reward - b).collect();
        let objective = surrogate(&tape, logits, &samples, &advantages);
        let loss = objective.neg();
        if !loss.scalar_value().is_finite() {
            return Err(Error::Diverged {
                stage: "discover",
                detail: format!("non-finite policy loss at episode {episode}"),
            });
        }
        let grads = bound.grads(&tape.backward(loss));
        adam.step(&mut policy.params, &grads);
        if !policy.params.is_finite() {
            return Err(Error::Diverged {
                stage: "discover",
                detail: format!("non-finite policy parameters after episode {episode}"),
            });
        }
        baseline = Some(config.baseline_decay * b + (1.0 - config.baseline_decay) * mean);
    }

    let best = best.expect("at least one episode ran");
    let refined = if config.refine_moves > 0 {
        refine(&best.adjacency, &scorer, config.refine_moves)
    } else {
        best.adjacency.clone()
    };
    let dag = CausalDag::new(data.names.clone(), refined)?;
    Ok(DiscoveryOutput {
        dag,
        reward_curve: curve,
        best: Some(best),
    })
}

/// Tokens computed on z-scored columns so that scale differences between
/// features do not dominate the embedding.
fn standardized_tokens(data: &FeatureMatrix, n_anchors: usize) -> Matrix {
    let mut tokens = feature_tokens(data, n_anchors);
    let (n, p) = (data.n_regions() as f64, data.n_features());
    for j in 0..p {
        let col = data.values.column(j);
        let m = col.iter().sum::<f64>() / n;
        tokens.set(j, 0, m.signum() * (1.0 + m.abs()).ln());
        tokens.set(j, 1, (1.0 + tokens.get(j, 1)).ln());
    }
    tokens
}
