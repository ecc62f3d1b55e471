use std::rc::Rc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dag::hex;
use crate::data::Topology;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{AttentionGraph, Bound, Linear, ParamId, Params, Tape, Var};
use crate::odpred::graph::RegionGraph;
use crate::seed;

/// Optimiser settings for one training stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 512,
            max_epochs: 100,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdConfig {
    /// Neighbours per region in the k-NN graph.
    pub k: usize,
    pub n_layers: usize,
    /// GAT filters per layer.
    pub hidden: usize,
    pub head_hidden: usize,
    pub leaky_slope: f64,
    /// Weight of the distillation term in the student loss.
    pub transfer_weight: f64,
    pub validation_fraction: f64,
    pub teacher: TrainSchedule,
    pub student: TrainSchedule,
    pub seed: u64,
}

impl Default for OdConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n_layers: 3,
            hidden: 64,
            head_hidden: 64,
            leaky_slope: 0.2,
            transfer_weight: 1.0,
            validation_fraction: 0.1,
            teacher: TrainSchedule {
                batch_size: 1024,
                max_epochs: 60,
                patience: 8,
                ..TrainSchedule::default()
            },
            student: TrainSchedule {
                batch_size: 256,
                max_epochs: 400,
                patience: 40,
                ..TrainSchedule::default()
            },
            seed: 0,
        }
    }
}

impl OdConfig {
    pub fn check(&self) -> Result<()> {
        if self.k == 0 || self.n_layers == 0 || self.hidden == 0 || self.head_hidden == 0 {
            return Err(Error::invalid("odpred sizes must be positive"));
        }
        if !(self.transfer_weight >= 0.0 && self.transfer_weight.is_finite()) {
            return Err(Error::invalid("transfer_weight must be finite and nonnegative"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation_fraction must lie in (0, 1)"));
        }
        for s in [self.teacher, self.student] {
            if s.batch_size == 0 || s.max_epochs == 0 || !(s.learning_rate > 0.0) {
                return Err(Error::invalid("training schedule needs positive batch, epochs and rate"));
            }
        }
        Ok(())
    }
}

/// One single-head attention layer with a skip map:
/// `elu(Σ_j α_ij · h_j W + h_i S + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatLayer {
    pub weight: ParamId,
    pub skip: ParamId,
    pub bias: ParamId,
    pub att_src: ParamId,
    pub att_dst: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Maps a student layer output to the mean of the matching teacher layer;
/// `σ = exp(log_sigma)` per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillHead {
    pub map: Linear,
    pub log_sigma: ParamId,
}

/// Pair regressor on `emb_o ‖ emb_d ‖ log1p(distance)`. The first layer is
/// stored split by input block so it can be applied per node before
/// gathering pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowHead {
    pub origin: Linear,
    pub dest: ParamId,
    pub distance: ParamId,
    pub out: Linear,
}

/// Losses of one student evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredLoss {
    pub total: f64,
    pub mse: f64,
    pub transfer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdModelParams {
    pub params: Params,
    pub input_names: Vec<String>,
    /// Hash of `input_names`; checked when a checkpoint is applied.
    pub schema_hash: String,
    pub k: usize,
    pub hidden: usize,
    pub leaky_slope: f64,
    pub layers: Vec<GatLayer>,
    pub head: FlowHead,
    pub distill: Vec<DistillHead>,
}

pub fn schema_hash(names: &[String]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update([0u8]);
    }
    hex(&h.finalize())
}

fn glorot(rows: usize, cols: usize, rng: &mut seed::Rng) -> Matrix {
    use rand::Rng as _;
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

/// `log1p(distance)` for each pair, as a column.
pub fn pair_log_distance(topology: &Topology, pairs: &[(usize, usize)]) -> Matrix {
    Matrix::from_fn(pairs.len(), 1, |r, _| {
        let (o, d) = pairs[r];
        topology.distance(o, d).ln_1p()
    })
}

impl OdModelParams {
    pub fn new(input_names: Vec<String>, config: &OdConfig, seed: u64) -> Result<Self> {
        config.check()?;
        if input_names.is_empty() {
            return Err(Error::invalid("flow model needs at least one input column"));
        }
        let mut rng = seed::rng(seed::derive(seed, "odpred.init"));
        let mut params = Params::new();
        let h = config.hidden;
        let mut layers = Vec::with_capacity(config.n_layers);
        let mut fan_in = input_names.len();
        for l in 0..config.n_layers {
            layers.push(GatLayer {
                weight: params.add(format!("gat{l}.w"), glorot(fan_in, h, &mut rng)),
                skip: params.add(format!("gat{l}.skip"), glorot(fan_in, h, &mut rng)),
                bias: params.add(format!("gat{l}.b"), Matrix::zeros(1, h)),
                att_src: params.add(format!("gat{l}.a_src"), glorot(h, 1, &mut rng)),
                att_dst: params.add(format!("gat{l}.a_dst"), glorot(h, 1, &mut rng)),
                fan_in,
                fan_out: h,
            });
            fan_in = h;
        }
        let hh = config.head_hidden;
        let origin = Linear::new(&mut params, "head.origin", h, hh, &mut rng);
        let head = FlowHead {
            origin,
            dest: params.add("head.dest", glorot(h, hh, &mut rng)),
            distance: params.add("head.distance", glorot(1, hh, &mut rng)),
            out: Linear::new(&mut params, "head.out", hh, 1, &mut rng),
        };
        let distill = (0..config.n_layers)
            .map(|l| DistillHead {
                map: Linear::new(&mut params, &format!("distill{l}"), h, h, &mut rng),
                log_sigma: params.add(format!("distill{l}.log_sigma"), Matrix::zeros(1, h)),
            })
            .collect();
        Ok(Self {
            params,
            schema_hash: schema_hash(&input_names),
            input_names,
            k: config.k,
            hidden: h,
            leaky_slope: config.leaky_slope,
            layers,
            head,
            distill,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_names.len()
    }

    pub fn check_input(&self, x: &Matrix, graph: &RegionGraph) -> Result<()> {
        if x.cols() != self.input_width() {
            return Err(Error::DimensionMismatch {
                what: "flow model input width",
                expected: self.input_width(),
                found: x.cols(),
            });
        }
        if x.rows() != graph.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "flow model input rows",
                expected: graph.n_nodes(),
                found: x.rows(),
            });
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("flow model input".into()));
        }
        Ok(())
    }

    /// Output of every GAT layer, in order.
    pub fn layer_outputs<'t>(&self, p: &Bound<'t>, x: Var<'t>, graph: &Rc<AttentionGraph>) -> Vec<Var<'t>> {
        let tape = x.tape();
        let mut h = x;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let wh = h.matmul(p.get(layer.weight));
            let s = wh.matmul(p.get(layer.att_src));
            let t = wh.matmul(p.get(layer.att_dst));
            h = tape
                .graph_attention(wh, s, t, Rc::clone(graph), self.leaky_slope)
                .add(h.matmul(p.get(layer.skip)))
                .add_row(p.get(layer.bias))
                .elu();
            out.push(h);
        }
        out
    }

    /// Raw head output before softplus, one row per pair.
    fn head_raw<'t>(&self, p: &Bound<'t>, emb: Var<'t>, pairs: &[(usize, usize)], log_dist: &Matrix) -> Var<'t> {
        let tape = emb.tape();
        let origins = Rc::new(pairs.iter().map(|&(o, _)| o).collect::<Vec<_>>());
        let dests = Rc::new(pairs.iter().map(|&(_, d)| d).collect::<Vec<_>>());
        let from_o = self.head.origin.forward(p, emb).gather_rows(origins);
        let from_d = emb.matmul(p.get(self.head.dest)).gather_rows(dests);
        let from_dist = tape.constant(log_dist.clone()).matmul(p.get(self.head.distance));
        let hidden = from_o.add(from_d).add(from_dist).elu();
        self.head.out.forward(p, hidden)
    }

    /// Predicted `log1p(flow)` per pair (nonnegative).
    pub fn head_forward<'t>(&self, p: &Bound<'t>, emb: Var<'t>, pairs: &[(usize, usize)], log_dist: &Matrix) -> Var<'t> {
        self.head_raw(p, emb, pairs, log_dist).softplus()
    }

    /// Final-layer embeddings `[n × hidden]`.
    pub fn embeddings(&self, x: &Matrix, graph: &RegionGraph) -> Result<Matrix> {
        Ok(self.layer_values(x, graph)?.pop().expect("at least one layer"))
    }

    pub fn layer_values(&self, x: &Matrix, graph: &RegionGraph) -> Result<Vec<Matrix>> {
        self.check_input(x, graph)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let g = Rc::new(graph.attention_graph());
        let outs = self.layer_outputs(&p, tape.constant(x.clone()), &g);
        let values = outs.iter().map(|v| v.value().clone()).collect();
        Ok(values)
    }

    /// Per layer, per node: attention coefficients aligned with
    /// `graph.attention_graph().neighbors[i]` (self first).
    pub fn attention_coefficients(&self, x: &Matrix, graph: &RegionGraph) -> Result<Vec<Vec<Vec<f64>>>> {
        self.check_input(x, graph)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let g = Rc::new(graph.attention_graph());
        let mut h = tape.constant(x.clone());
        let mut out = Vec::new();
        for layer in &self.layers {
            let wh = h.matmul(p.get(layer.weight));
            let s = wh.matmul(p.get(layer.att_src));
            let t = wh.matmul(p.get(layer.att_dst));
            let a = tape.graph_attention(wh, s, t, Rc::clone(&g), self.leaky_slope);
            out.push(tape.attention_coefficients(a).expect("attention node"));
            h = a.add(h.matmul(p.get(layer.skip))).add_row(p.get(layer.bias)).elu();
        }
        Ok(out)
    }

    /// `log1p(flow)` prediction for one pair from precomputed embeddings.
    pub fn predict_flow(&self, origin: usize, dest: usize, embeddings: &Matrix, log_distance: f64) -> f64 {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let emb = tape.constant(embeddings.clone());
        let out = self.head_forward(&p, emb, &[(origin, dest)], &Matrix::scalar(log_distance));
        out.scalar_value()
    }

    /// `log1p(flow)` predictions for many pairs.
    pub fn predict_log(&self, x: &Matrix, graph: &RegionGraph, topology: &Topology, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        self.check_input(x, graph)?;
        let n = graph.n_nodes();
        if topology.n_regions() != n {
            return Err(Error::DimensionMismatch {
                what: "topology size",
                expected: n,
                found: topology.n_regions(),
            });
        }
        if let Some(&(o, d)) = pairs.iter().find(|&&(o, d)| o >= n || d >= n) {
            return Err(Error::PairOutOfRange { origin: o, dest: d, n });
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let g = Rc::new(graph.attention_graph());
        let emb = *self.layer_outputs(&p, tape.constant(x.clone()), &g).last().expect("layer");
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(8192) {
            let pred = self.head_forward(&p, emb, chunk, &pair_log_distance(topology, chunk));
            out.extend_from_slice(pred.value().as_slice());
        }
        Ok(out)
    }

    /// Flow predictions in raw units.
    pub fn predict(&self, x: &Matrix, graph: &RegionGraph, topology: &Topology, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        Ok(self.predict_log(x, graph, topology, pairs)?.into_iter().map(|v| v.exp_m1().max(0.0)).collect())
    }
}

/// Mean squared error, in whatever space the inputs are given.
pub fn mse_loss(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::invalid("mse over an empty pair set"));
    }
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "mse inputs",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// `Σ_d Σ_dims [log σ_d + (t_d − μ_d(s))² / (2σ_d²)]`, averaged over rows.
pub fn transfer_term<'t>(p: &Bound<'t>, heads: &[DistillHead], teacher: &[Matrix], student: &[Var<'t>]) -> Result<Var<'t>> {
    if teacher.len() != student.len() || heads.len() != student.len() {
        return Err(Error::DimensionMismatch {
            what: "distillation depth",
            expected: student.len(),
            found: teacher.len().min(heads.len()),
        });
    }
    let tape = match student.first() {
        Some(s) => s.tape(),
        None => return Err(Error::invalid("distillation needs at least one layer")),
    };
    let mut terms = Vec::with_capacity(student.len());
    for ((head, t), &s) in heads.iter().zip(teacher).zip(student) {
        if t.shape() != s.shape() {
            return Err(Error::invalid(format!(
                "teacher layer is {:?}, student layer is {:?}",
                t.shape(),
                s.shape()
            )));
        }
        let rows = t.rows() as f64;
        let log_sigma = p.get(head.log_sigma);
        let mu = head.map.forward(p, s);
        let inv_two_var = log_sigma.scale(-2.0).exp().scale(0.5);
        let quad = tape.constant(t.clone()).sub(mu).square().mul_row(inv_two_var).sum().scale(1.0 / rows);
        terms.push(quad.add(log_sigma.sum()));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = total.add(t);
    }
    Ok(total)
}

/// Value of the transfer loss for given layer outputs.
pub fn transfer_loss(params: &Params, heads: &[DistillHead], teacher: &[Matrix], student: &[Matrix]) -> Result<f64> {
    let tape = Tape::new();
    let p = params.bind(&tape);
    let s: Vec<Var> = student.iter().map(|m| tape.constant(m.clone())).collect();
    let out = transfer_term(&p, heads, teacher, &s)?.scalar_value();
    Ok(out)
}
