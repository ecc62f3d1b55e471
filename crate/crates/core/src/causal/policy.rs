//! Edge policy: a self-attention encoder over per-feature summary tokens and
//! a recurrent decoder that scores every ordered pair (i, j).

use std::rc::Rc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dag::Adjacency;
use crate::data::FeatureMatrix;
use crate::matrix::Matrix;
use crate::nn::{softplus, sigmoid, Bound, Linear, ParamId, Params, Tape, Var};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Features whose correlations go into each token.
    pub n_anchors: usize,
    /// Initial bias of every edge logit.
    pub init_edge_logit: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            n_heads: 2,
            n_layers: 1,
            n_anchors: 16,
            init_edge_logit: -2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Head {
    query: Linear,
    key: Linear,
    value: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Block {
    heads: Vec<Head>,
    mix: Linear,
    ff_in: Linear,
    ff_out: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub params: Params,
    pub config: PolicyConfig,
    pub n_features: usize,
    embed: Linear,
    position: ParamId,
    blocks: Vec<Block>,
    rnn_input: Linear,
    rnn_hidden: ParamId,
    dec_row: Linear,
    dec_col: Linear,
    dec_out: Linear,
}

/// Token per feature: mean, standard deviation, then correlations with
/// evenly spaced anchor features (zero-padded to `n_anchors`).
pub fn feature_tokens(data: &FeatureMatrix, n_anchors: usize) -> Matrix {
    let (n, p) = (data.n_regions(), data.n_features());
    let cols: Vec<Vec<f64>> = (0..p).map(|j| data.values.column(j)).collect();
    let stats: Vec<(f64, f64)> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n as f64;
            let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            (m, v.sqrt())
        })
        .collect();
    let k = n_anchors.min(p);
    let anchors: Vec<usize> = (0..k).map(|a| a * p / k.max(1)).collect();
    Matrix::from_fn(p, 2 + n_anchors, |j, c| match c {
        0 => stats[j].0,
        1 => stats[j].1,
        _ if c - 2 < k => {
            let a = anchors[c - 2];
            let (ma, sa) = stats[a];
            let (mj, sj) = stats[j];
            if sa == 0.0 || sj == 0.0 {
                return 0.0;
            }
            cols[j]
                .iter()
                .zip(&cols[a])
                .map(|(x, y)| (x - mj) * (y - ma))
                .sum::<f64>()
                / (n as f64 * sa * sj)
        }
        _ => 0.0,
    })
}

impl PolicyParams {
    pub fn new(n_features: usize, config: PolicyConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut params = Params::new();
        let e = config.embed_dim;
        let heads = config.n_heads.max(1);
        let dh = (e / heads).max(1);
        let embed = Linear::new(&mut params, "policy.embed", 2 + config.n_anchors, e, &mut rng);
        let position = params.add(
            "policy.position",
            Matrix::from_fn(n_features, e, |_, _| rng.random_range(-0.1..0.1)),
        );
        let blocks = (0..config.n_layers)
            .map(|l| Block {
                heads: (0..heads)
                    .map(|h| Head {
                        query: Linear::new(&mut params, &format!("policy.b{l}.h{h}.q"), e, dh, &mut rng),
                        key: Linear::new(&mut params, &format!("policy.b{l}.h{h}.k"), e, dh, &mut rng),
                        value: Linear::new(&mut params, &format!("policy.b{l}.h{h}.v"), e, dh, &mut rng),
                    })
                    .collect(),
                mix: Linear::new(&mut params, &format!("policy.b{l}.mix"), dh * heads, e, &mut rng),
                ff_in: Linear::new(&mut params, &format!("policy.b{l}.ff0"), e, 2 * e, &mut rng),
                ff_out: Linear::new(&mut params, &format!("policy.b{l}.ff1"), 2 * e, e, &mut rng),
            })
            .collect();
        let rnn_input = Linear::new(&mut params, "policy.rnn.in", e, e, &mut rng);
        let limit = (3.0 / e as f64).sqrt();
        let rnn_hidden = params.add(
            "policy.rnn.h",
            Matrix::from_fn(e, e, |_, _| rng.random_range(-limit..limit)),
        );
        let dec_row = Linear::new(&mut params, "policy.dec.row", e, e, &mut rng);
        let dec_col = Linear::new(&mut params, "policy.dec.col", e, e, &mut rng);
        let dec_out = Linear::new(&mut params, "policy.dec.out", e, 1, &mut rng);
        params.get_mut(dec_out.bias).set(0, 0, config.init_edge_logit);
        Self {
            params,
            config,
            n_features,
            embed,
            position,
            blocks,
            rnn_input,
            rnn_hidden,
            dec_row,
            dec_col,
            dec_out,
        }
    }

    /// Edge logits as an `n² × 1` column, row-major over (i, j).
    pub fn logits<'t>(&self, tape: &'t Tape, p: &Bound<'t>, tokens: &Matrix) -> Var<'t> {
        let n = self.n_features;
        let x = tape.constant(tokens.clone());
        let mut s = self.embed.forward(p, x).add(p.get(self.position));
        for block in &self.blocks {
            let dh = block.heads[0].query.fan_out as f64;
            let heads: Vec<Var> = block
                .heads
                .iter()
                .map(|h| {
                    let q = h.query.forward(p, s);
                    let k = h.key.forward(p, s);
                    let v = h.value.forward(p, s);
                    q.matmul(k.transpose()).scale(1.0 / dh.sqrt()).row_softmax().matmul(v)
                })
                .collect();
            s = s.add(block.mix.forward(p, tape.concat(&heads)));
            s = s.add(block.ff_out.forward(p, block.ff_in.forward(p, s).elu()));
        }
        // recurrent pass over the encoded sequence
        let e = self.config.embed_dim;
        let projected = self.rnn_input.forward(p, s);
        let w_h = p.get(self.rnn_hidden);
        let mut h = tape.constant(Matrix::zeros(1, e));
        let mut states = Vec::with_capacity(n);
        for i in 0..n {
            let xi = projected.gather_rows(Rc::new(vec![i]));
            h = xi.add(h.matmul(w_h)).tanh();
            states.push(h);
        }
        let hs = tape.vstack(&states);
        let rows = self.dec_row.forward(p, hs);
        let cols = self.dec_col.forward(p, s);
        let row_idx: Vec<usize> = (0..n * n).map(|k| k / n).collect();
        let col_idx: Vec<usize> = (0..n * n).map(|k| k % n).collect();
        let pair = rows
            .gather_rows(Rc::new(row_idx))
            .add(cols.gather_rows(Rc::new(col_idx)))
            .tanh();
        self.dec_out.forward(p, pair)
    }

    /// Logit values as an `n × n` matrix (diagonal unused).
    pub fn logit_matrix(&self, tokens: &Matrix) -> Matrix {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let col = self.logits(&tape, &p, tokens).value().clone();
        Matrix::from_vec(self.n_features, self.n_features, col.into_vec())
    }
}

/// Draw an adjacency from independent Bernoulli(sigmoid(logit)) entries,
/// off-diagonal only, and return it with its log-probability.
pub fn sample_from_logits(logits: &Matrix, rng: &mut Rng) -> (Adjacency, f64) {
    let n = logits.rows();
    let mut adj = Adjacency::empty(n);
    let mut logprob = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let l = logits.get(i, j);
            let on = rng.random::<f64>() < sigmoid(l);
            adj.set(i, j, on);
            logprob += bernoulli_log_mass(l, on);
        }
    }
    (adj, logprob)
}

/// `log σ(l)` if `on`, else `log(1 − σ(l))`; finite at infinite logits.
pub fn bernoulli_log_mass(logit: f64, on: bool) -> f64 {
    if on {
        -softplus(-logit)
    } else {
        -softplus(logit)
    }
}

pub fn log_prob(logits: &Matrix, adj: &Adjacency) -> f64 {
    let n = logits.rows();
    let mut lp = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                lp += bernoulli_log_mass(logits.get(i, j), adj.has(i, j));
            }
        }
    }
    lp
}

pub fn sample_action(params: &PolicyParams, data: &FeatureMatrix, seed: u64) -> (Adjacency, f64) {
    let tokens = feature_tokens(data, params.config.n_anchors);
    let logits = params.logit_matrix(&tokens);
    sample_from_logits(&logits, &mut seed::rng(seed))
}

/// Policy-gradient surrogate `mean_k advantage_k · log π(U_k)`, written
/// as one pass over the shared logits.
pub fn surrogate<'t>(tape: &'t Tape, logits: Var<'t>, samples: &[Adjacency], advantages: &[f64]) -> Var<'t> {
    assert_eq!(samples.len(), advantages.len());
    let n = samples.first().map_or(0, Adjacency::n);
    let batch = samples.len().max(1) as f64;
    let mut on = Matrix::zeros(n * n, 1);
    let mut mask = Matrix::zeros(n * n, 1);
    let weight_sum: f64 = advantages.iter().sum::<f64>() / batch;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = i * n + j;
            mask.set(k, 0, weight_sum);
            let w: f64 = samples
                .iter()
                .zip(advantages)
                .filter(|(a, _)| a.has(i, j))
                .map(|(_, adv)| adv)
                .sum::<f64>()
                / batch;
            on.set(k, 0, w);
        }
    }
    // Σ_k w_k Σ_ij [b_ij l_ij − softplus(l_ij)]
    let linear = logits.mul(tape.constant(on)).sum();
    let partition = logits.softplus().mul(tape.constant(mask)).sum();
    linear.sub(partition)
}
