use std::rc::Rc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cevae::{split_regions, TrainHistory};
use crate::cevae::train::early_stopping_loop;
use crate::data::{off_diagonal_pairs, CityDataset, Topology};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Adam, AdamConfig, AttentionGraph, Tape};
use crate::odpred::graph::RegionGraph;
use crate::odpred::model::{pair_log_distance, transfer_term, OdConfig, OdModelParams, PredLoss, TrainSchedule};
use crate::seed;

/// Frozen affine map `[x, 1] · W` from one input space to another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputAdapter {
    /// `(in + 1) × out`; the last row is the intercept.
    pub weight: Matrix,
}

impl InputAdapter {
    /// Ridge-stabilised least squares of `to` on `from`.
    pub fn fit(from: &Matrix, to: &Matrix) -> Result<Self> {
        if from.rows() != to.rows() || from.rows() == 0 {
            return Err(Error::DimensionMismatch {
                what: "adapter rows",
                expected: to.rows(),
                found: from.rows(),
            });
        }
        let (n, p) = from.shape();
        let x = DMatrix::from_fn(n, p + 1, |i, j| if j < p { from.get(i, j) } else { 1.0 });
        let y = DMatrix::from_fn(n, to.cols(), |i, j| to.get(i, j));
        let mut xtx = x.transpose() * &x;
        let ridge = 1e-6 * n as f64;
        for j in 0..p {
            xtx[(j, j)] += ridge;
        }
        let chol = xtx
            .cholesky()
            .ok_or_else(|| Error::NonFinite("adapter normal equations".into()))?;
        let w = chol.solve(&(x.transpose() * y));
        let weight = Matrix::from_fn(p + 1, to.cols(), |i, j| w[(i, j)]);
        if !weight.is_finite() {
            return Err(Error::NonFinite("adapter weights".into()));
        }
        Ok(Self { weight })
    }

    pub fn input_width(&self) -> usize {
        self.weight.rows() - 1
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let p = self.input_width();
        if x.cols() != p {
            return Err(Error::DimensionMismatch {
                what: "adapter input width",
                expected: p,
                found: x.cols(),
            });
        }
        let mut out = x.matmul(&Matrix::from_fn(p, self.weight.cols(), |i, j| self.weight.get(i, j)));
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(self.weight.row(p)) {
                *o += b;
            }
        }
        Ok(out)
    }
}

/// Region-wise split of all off-diagonal pairs: validation pairs touch a
/// held-out region, training pairs touch none.
pub fn region_pair_split(n: usize, fraction: f64, seed: u64) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let (_, val_regions) = split_regions(n, fraction, seed);
    let mut held = vec![false; n];
    for r in val_regions {
        held[r] = true;
    }
    off_diagonal_pairs(n).into_iter().partition(|&(o, d)| !held[o] && !held[d])
}

/// Shuffle and hold out `round(fraction · len)` pairs (at least one).
pub fn pair_split(pairs: &[(usize, usize)], fraction: f64, seed: u64) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut p = pairs.to_vec();
    p.shuffle(&mut seed::rng(seed::derive(seed, "pair-split")));
    let n_val = ((fraction * p.len() as f64).round() as usize).clamp(1, p.len().saturating_sub(1).max(1));
    let val = p.split_off(p.len() - n_val);
    (p, val)
}

struct FlowData<'a> {
    inputs: &'a Matrix,
    graph: Rc<AttentionGraph>,
    topology: &'a Topology,
    log_flows: Matrix,
}

impl FlowData<'_> {
    fn targets(&self, pairs: &[(usize, usize)]) -> Matrix {
        Matrix::from_fn(pairs.len(), 1, |r, _| {
            let (o, d) = pairs[r];
            self.log_flows.get(o, d)
        })
    }

    /// Loss on `pairs` plus the weighted transfer term over all nodes.
    fn loss(
        &self,
        model: &OdModelParams,
        pairs: &[(usize, usize)],
        distill: Option<(&[Matrix], f64)>,
        want_grads: bool,
    ) -> Result<(PredLoss, Option<Vec<Matrix>>)> {
        let tape = Tape::new();
        let p = model.params.bind(&tape);
        let layers = model.layer_outputs(&p, tape.constant(self.inputs.clone()), &self.graph);
        let emb = *layers.last().expect("layer");
        let pred = model.head_forward(&p, emb, pairs, &pair_log_distance(self.topology, pairs));
        let mse = pred.sub(tape.constant(self.targets(pairs))).square().mean();
        let (total, transfer) = match distill {
            Some((teacher, weight)) if weight > 0.0 => {
                let t = transfer_term(&p, &model.distill, teacher, &layers)?;
                (mse.add(t.scale(weight)), t.scalar_value())
            }
            Some((teacher, _)) => {
                let t = transfer_term(&p, &model.distill, teacher, &layers)?;
                (mse, t.scalar_value())
            }
            None => (mse, 0.0),
        };
        let losses = PredLoss {
            total: total.scalar_value(),
            mse: mse.scalar_value(),
            transfer,
        };
        let grads = if want_grads && losses.total.is_finite() {
            Some(p.grads(&tape.backward(total)))
        } else {
            None
        };
        Ok((losses, grads))
    }
}

fn fit(
    model: &mut OdModelParams,
    data: &FlowData,
    train_pairs: &[(usize, usize)],
    val_pairs: &[(usize, usize)],
    schedule: &TrainSchedule,
    distill: Option<(&[Matrix], f64)>,
    seed: u64,
    stage: &'static str,
) -> Result<TrainHistory> {
    let mut adam = Adam::new(&model.params, AdamConfig::with_lr(schedule.learning_rate));
    // indices into train_pairs so the shared loop can shuffle them
    let idx: Vec<usize> = (0..train_pairs.len()).collect();
    let mut failure = None;
    let history = early_stopping_loop(
        model,
        &idx,
        schedule.batch_size,
        schedule.max_epochs,
        schedule.patience,
        seed,
        stage,
        |m, batch, _| {
            let pairs: Vec<_> = batch.iter().map(|&i| train_pairs[i]).collect();
            match data.loss(m, &pairs, distill, true) {
                Ok((l, Some(g))) => {
                    adam.step(&mut m.params, &g);
                    l.total
                }
                Ok((l, None)) => l.total,
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        |m| match data.loss(m, val_pairs, None, false) {
            Ok((l, _)) => l.mse,
            Err(_) => f64::NAN,
        },
    );
    if let Some(e) = failure {
        return Err(e);
    }
    history
}

fn log_flows(city: &CityDataset) -> Matrix {
    city.od.flows.map(f64::ln_1p)
}

/// Fit the flow model on a fully observed source city.
pub fn train_teacher(source: &CityDataset, graph: &RegionGraph, config: &OdConfig) -> Result<(OdModelParams, TrainHistory)> {
    config.check()?;
    if !source.features.is_complete() {
        return Err(Error::invalid("teacher needs a fully observed source city"));
    }
    let x = &source.features.values;
    let mut model = OdModelParams::new(source.features.names.clone(), config, seed::derive(config.seed, "teacher"))?;
    model.k = graph.k;
    model.check_input(x, graph)?;
    let (train, val) = region_pair_split(source.n_regions(), config.validation_fraction, seed::derive(config.seed, "teacher-split"));
    let observed: std::collections::BTreeSet<_> = source.od.observed_pairs.iter().copied().collect();
    let train: Vec<_> = train.into_iter().filter(|p| observed.contains(p)).collect();
    let val: Vec<_> = val.into_iter().filter(|p| observed.contains(p)).collect();
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("teacher split left no training or validation pairs"));
    }
    let data = FlowData {
        inputs: x,
        graph: Rc::new(graph.attention_graph()),
        topology: &source.topology,
        log_flows: log_flows(source),
    };
    let history = fit(&mut model, &data, &train, &val, &config.teacher, None, seed::derive(config.seed, "teacher-train"), "train-teacher")?;
    Ok((model, history))
}

/// Teacher layer outputs on target nodes, with target inputs mapped into the
/// teacher's input space.
pub fn teacher_targets(teacher: &OdModelParams, adapter: &InputAdapter, student_input: &Matrix, graph: &RegionGraph) -> Result<Vec<Matrix>> {
    let mapped = adapter.apply(student_input)?;
    teacher.layer_values(&mapped, graph)
}

/// Fit a model on the target's observed pairs. With `teacher` the loss adds
/// the weighted transfer term; without it this is the from-scratch model.
pub fn train_student(
    target: &CityDataset,
    input: &Matrix,
    input_names: Vec<String>,
    graph: &RegionGraph,
    teacher: Option<&[Matrix]>,
    config: &OdConfig,
) -> Result<(OdModelParams, TrainHistory)> {
    config.check()?;
    if input.rows() != target.n_regions() || input_names.len() != input.cols() {
        return Err(Error::DimensionMismatch {
            what: "student input",
            expected: input_names.len(),
            found: input.cols(),
        });
    }
    let mut model = OdModelParams::new(input_names, config, seed::derive(config.seed, "student"))?;
    model.k = graph.k;
    model.check_input(input, graph)?;
    if let Some(t) = teacher {
        if t.len() != model.layers.len() {
            return Err(Error::DimensionMismatch {
                what: "teacher depth",
                expected: model.layers.len(),
                found: t.len(),
            });
        }
    }
    if target.od.observed_pairs.len() < 2 {
        return Err(Error::invalid("student needs at least two observed pairs"));
    }
    let (train, val) = pair_split(&target.od.observed_pairs, config.validation_fraction, seed::derive(config.seed, "student-split"));
    let data = FlowData {
        inputs: input,
        graph: Rc::new(graph.attention_graph()),
        topology: &target.topology,
        log_flows: log_flows(target),
    };
    let distill = teacher.map(|t| (t, config.transfer_weight));
    let history = fit(&mut model, &data, &train, &val, &config.student, distill, seed::derive(config.seed, "student-train"), "train-student")?;
    Ok((model, history))
}

/// Loss components of a model on given pairs (no update).
pub fn prediction_loss(
    model: &OdModelParams,
    city: &CityDataset,
    input: &Matrix,
    graph: &RegionGraph,
    pairs: &[(usize, usize)],
    teacher: Option<(&[Matrix], f64)>,
) -> Result<PredLoss> {
    model.check_input(input, graph)?;
    let data = FlowData {
        inputs: input,
        graph: Rc::new(graph.attention_graph()),
        topology: &city.topology,
        log_flows: log_flows(city),
    };
    Ok(data.loss(model, pairs, teacher, false)?.0)
}

/// As [`prediction_loss`], with the gradient of the total for every
/// parameter tensor.
pub fn prediction_gradients(
    model: &OdModelParams,
    city: &CityDataset,
    input: &Matrix,
    graph: &RegionGraph,
    pairs: &[(usize, usize)],
    teacher: Option<(&[Matrix], f64)>,
) -> Result<(PredLoss, Vec<Matrix>)> {
    model.check_input(input, graph)?;
    let data = FlowData {
        inputs: input,
        graph: Rc::new(graph.attention_graph()),
        topology: &city.topology,
        log_flows: log_flows(city),
    };
    let (loss, grads) = data.loss(model, pairs, teacher, true)?;
    let grads = grads.ok_or_else(|| Error::NonFinite("prediction loss".into()))?;
    Ok((loss, grads))
}
