use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dag::CausalDag;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{gaussian_log_density, standard_normal, Activation, Bound, Mlp, Params, Tape, Var};
use crate::seed;

/// Lower bound added to every softplus standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Independent Gaussians, one per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianBelief {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    fn from_vars(mean: Var<'_>, std: Var<'_>) -> Self {
        Self {
            mean: mean.value().as_slice().to_vec(),
            std: std.value().as_slice().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Full objective on the validation rows.
    Objective,
    /// Only the negated auxiliary term.
    Auxiliary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CevaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Weight of the auxiliary supervised term.
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    /// Feed true parent values to the decoder in the auxiliary term.
    pub teacher_forcing: bool,
    pub monitor: Monitor,
    pub seed: u64,
}

impl Default for CevaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden: 64,
            beta: 1.0,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
            validation_fraction: 0.1,
            teacher_forcing: true,
            monitor: Monitor::Objective,
            seed: 0,
        }
    }
}

impl CevaeConfig {
    pub fn check(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("latent_dim, hidden, batch_size and max_epochs must be positive"));
        }
        if !(self.beta >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::invalid("beta must be nonnegative and learning_rate positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Weights of the causally conditioned encoder/decoder plus the schema they
/// were built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CevaeParams {
    pub params: Params,
    pub dag: CausalDag,
    pub dag_hash: String,
    pub observed: Vec<usize>,
    pub missing: Vec<usize>,
    pub latent_dim: usize,
    pub beta: f64,
    pub teacher_forcing: bool,
    /// Encoder network per feature (present for missing features only).
    pub(crate) encoders: Vec<Option<Mlp>>,
    pub(crate) latent: Mlp,
    pub(crate) decoders: Vec<Mlp>,
    /// Features in name order; fixes the latent encoder's input layout.
    name_order: Vec<usize>,
}

/// Reparameterisation noise for one batch of rows.
#[derive(Debug, Clone)]
pub struct Noise {
    /// Per feature `rows × 1`; only missing features are drawn.
    pub y: BTreeMap<usize, Matrix>,
    pub z: Matrix,
}

/// The four single-sample ELBO terms, each averaged over rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboComponents {
    pub log_pz: f64,
    pub log_pxy: f64,
    pub log_qy: f64,
    pub log_qz: f64,
}

impl ElboComponents {
    pub fn elbo(&self) -> f64 {
        self.log_pz + self.log_pxy - self.log_qy - self.log_qz
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("log p(z)", self.log_pz),
            ("log p(x, y | z)", self.log_pxy),
            ("log q(y | x)", self.log_qy),
            ("log q(z | x, y)", self.log_qz),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("ELBO term {name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Tape values of one forward pass.
pub struct Pass<'t> {
    /// Encoder beliefs for missing features, by feature index.
    pub y_beliefs: BTreeMap<usize, (Var<'t>, Var<'t>)>,
    /// Column value used for each feature: observed data or encoder sample.
    pub columns: Vec<Var<'t>>,
    pub z_mean: Var<'t>,
    pub z_std: Var<'t>,
    pub z: Var<'t>,
}

pub(crate) fn sorted_parents(dag: &CausalDag, j: usize) -> Vec<usize> {
    let names = dag.features();
    let mut ps = dag.parents(j);
    ps.sort_by(|a, b| names[*a].cmp(&names[*b]));
    ps
}

pub(crate) fn gaussian_head<'t>(out: Var<'t>, width: usize) -> (Var<'t>, Var<'t>) {
    let mean = out.slice_cols(0, width);
    let std = out.slice_cols(width, width).softplus().offset(SIGMA_FLOOR);
    (mean, std)
}

impl CevaeParams {
    /// Networks are seeded per feature name, so the initial weights do not
    /// depend on column storage order.
    pub fn new(dag: &CausalDag, missing: &[usize], config: &CevaeConfig) -> Result<Self> {
        config.check()?;
        let p = dag.n();
        let mut missing = missing.to_vec();
        missing.sort_unstable();
        missing.dedup();
        if missing.iter().any(|&m| m >= p) {
            return Err(Error::invalid("missing feature index out of range"));
        }
        if missing.len() == p {
            return Err(Error::NoObservedFeatures);
        }
        let observed: Vec<usize> = (0..p).filter(|j| missing.binary_search(j).is_err()).collect();
        let names = dag.features();
        let (h, l) = (config.hidden, config.latent_dim);
        let mut params = Params::new();
        let net_rng = |kind: &str, name: &str| seed::rng(seed::derive(config.seed, &format!("cevae.{kind}.{name}")));

        let mut encoders = vec![None; p];
        for &m in &missing {
            let width = dag.parents(m).len().max(1);
            let mut rng = net_rng("enc", &names[m]);
            encoders[m] = Some(Mlp::new(&mut params, &format!("enc.{}", names[m]), &[width, h, 2], Activation::Elu, &mut rng));
        }
        let latent = Mlp::new(&mut params, "latent", &[p, h, 2 * l], Activation::Elu, &mut net_rng("latent", ""));
        let decoders = (0..p)
            .map(|j| {
                let width = l + dag.parents(j).len();
                let mut rng = net_rng("dec", &names[j]);
                Mlp::new(&mut params, &format!("dec.{}", names[j]), &[width, h, 2], Activation::Elu, &mut rng)
            })
            .collect();
        let mut name_order: Vec<usize> = (0..p).collect();
        name_order.sort_by(|a, b| names[*a].cmp(&names[*b]));
        Ok(Self {
            params,
            dag: dag.clone(),
            dag_hash: dag.hash(),
            observed,
            missing,
            latent_dim: l,
            beta: config.beta,
            teacher_forcing: config.teacher_forcing,
            encoders,
            latent,
            decoders,
            name_order,
        })
    }

    pub fn n_features(&self) -> usize {
        self.dag.n()
    }

    pub fn features(&self) -> &[String] {
        self.dag.features()
    }

    /// Missing features in the order the encoder visits them.
    pub fn missing_order(&self) -> Vec<usize> {
        self.dag.topological_order(&self.missing)
    }

    /// Input widths implied by the graph: (encoder per missing feature,
    /// decoder per feature).
    pub fn network_widths(&self) -> (Vec<(usize, usize)>, Vec<usize>) {
        let enc = self
            .missing
            .iter()
            .map(|&m| (m, self.encoders[m].as_ref().expect("encoder for missing feature").input_width()))
            .collect();
        (enc, self.decoders.iter().map(Mlp::input_width).collect())
    }

    /// Reparameterisation noise for `rows` rows, streams keyed by feature
    /// name.
    pub fn draw_noise(&self, rows: usize, seed: u64) -> Noise {
        let names = self.features();
        let y = self
            .missing
            .iter()
            .map(|&m| {
                let mut rng = seed::rng(seed::derive(seed, &format!("eps.{}", names[m])));
                (m, standard_normal(rows, 1, &mut rng))
            })
            .collect();
        let z = standard_normal(rows, self.latent_dim, &mut seed::rng(seed::derive(seed, "eps.latent")));
        Noise { y, z }
    }

    fn conditional<'t>(&self, tape: &'t Tape, p: &Bound<'t>, net: &Mlp, z: Option<Var<'t>>, columns: &[Var<'t>], parents: &[usize], rows: usize) -> (Var<'t>, Var<'t>) {
        let mut inputs: Vec<Var<'t>> = z.into_iter().collect();
        inputs.extend(parents.iter().map(|&q| columns[q]));
        let input = match inputs.len() {
            0 => tape.constant(Matrix::filled(rows, 1, 1.0)),
            1 => inputs[0],
            _ => tape.concat(&inputs),
        };
        gaussian_head(net.forward(p, input), 1)
    }

    /// Encoder belief for missing feature `m` from the given column values.
    pub fn encoder_belief<'t>(&self, tape: &'t Tape, p: &Bound<'t>, m: usize, columns: &[Var<'t>], rows: usize) -> (Var<'t>, Var<'t>) {
        let net = self.encoders[m].as_ref().expect("encoder for missing feature");
        self.conditional(tape, p, net, None, columns, &sorted_parents(&self.dag, m), rows)
    }

    /// Column variables for `x`; missing columns hold placeholders until
    /// the encoder fills them.
    pub(crate) fn data_columns<'t>(&self, tape: &'t Tape, x: &Matrix) -> Vec<Var<'t>> {
        (0..self.n_features())
            .map(|j| {
                if self.missing.binary_search(&j).is_ok() {
                    tape.constant(Matrix::zeros(x.rows(), 1))
                } else {
                    tape.constant(Matrix::from_vec(x.rows(), 1, x.column(j)))
                }
            })
            .collect()
    }

    /// Visit missing features in topological order; each conditions on its
    /// parents' current column values and writes its own sample (or mean
    /// when `noise` is `None`) back.
    pub fn encode_missing<'t>(&self, tape: &'t Tape, p: &Bound<'t>, columns: &mut [Var<'t>], noise: Option<&Noise>) -> BTreeMap<usize, (Var<'t>, Var<'t>)> {
        let rows = columns.first().map_or(0, |c| c.shape().0);
        let mut beliefs = BTreeMap::new();
        for m in self.missing_order() {
            let (mean, std) = self.encoder_belief(tape, p, m, columns, rows);
            columns[m] = match noise {
                Some(n) => mean.add(std.mul(tape.constant(n.y[&m].clone()))),
                None => mean,
            };
            beliefs.insert(m, (mean, std));
        }
        beliefs
    }

    /// `q(Z | X, Ŷ)` on every column, in name order.
    pub fn encode_latent<'t>(&self, tape: &'t Tape, p: &Bound<'t>, columns: &[Var<'t>], noise: Option<&Noise>) -> (Var<'t>, Var<'t>, Var<'t>) {
        let ordered: Vec<Var<'t>> = self.name_order.iter().map(|&j| columns[j]).collect();
        let (mean, std) = gaussian_head(self.latent.forward(p, tape.concat(&ordered)), self.latent_dim);
        let z = match noise {
            Some(n) => mean.add(std.mul(tape.constant(n.z.clone()))),
            None => mean,
        };
        (mean, std, z)
    }

    /// Decoder belief for feature `j` given `z` and parent column values.
    pub fn decoder_belief<'t>(&self, tape: &'t Tape, p: &Bound<'t>, j: usize, z: Var<'t>, columns: &[Var<'t>]) -> (Var<'t>, Var<'t>) {
        let rows = z.shape().0;
        self.conditional(tape, p, &self.decoders[j], Some(z), columns, &sorted_parents(&self.dag, j), rows)
    }

    /// Decode every feature in topological order. Observed parents take
    /// their values from `x_columns`; missing parents take the decoded
    /// sample (mean when `noise` is `None`).
    pub fn decode<'t>(&self, tape: &'t Tape, p: &Bound<'t>, z: Var<'t>, x_columns: &[Var<'t>], noise: Option<&BTreeMap<usize, Matrix>>) -> BTreeMap<usize, (Var<'t>, Var<'t>)> {
        let mut columns = x_columns.to_vec();
        let all: Vec<usize> = (0..self.n_features()).collect();
        let mut out = BTreeMap::new();
        for j in self.dag.topological_order(&all) {
            let (mean, std) = self.decoder_belief(tape, p, j, z, &columns);
            if self.missing.binary_search(&j).is_ok() {
                columns[j] = match noise.and_then(|n| n.get(&j)) {
                    Some(eps) => mean.add(std.mul(tape.constant(eps.clone()))),
                    None => mean,
                };
            }
            out.insert(j, (mean, std));
        }
        out
    }

    /// Full single-sample pass: encode missing, then latent.
    pub fn forward<'t>(&self, tape: &'t Tape, p: &Bound<'t>, x: &Matrix, noise: Option<&Noise>) -> Pass<'t> {
        let mut columns = self.data_columns(tape, x);
        let y_beliefs = self.encode_missing(tape, p, &mut columns, noise);
        let (z_mean, z_std, z) = self.encode_latent(tape, p, &columns, noise);
        Pass {
            y_beliefs,
            columns,
            z_mean,
            z_std,
            z,
        }
    }

    /// ELBO terms (row means) on the tape for a pass.
    pub fn elbo_terms<'t>(&self, tape: &'t Tape, p: &Bound<'t>, pass: &Pass<'t>) -> [Var<'t>; 4] {
        let rows = pass.z.shape().0 as f64;
        let zeros = tape.constant(Matrix::zeros(pass.z.shape().0, self.latent_dim));
        let ones = tape.constant(Matrix::filled(pass.z.shape().0, self.latent_dim, 1.0));
        let log_pz = gaussian_log_density(pass.z, zeros, ones).sum().scale(1.0 / rows);
        let log_qz = gaussian_log_density(pass.z, pass.z_mean, pass.z_std).sum().scale(1.0 / rows);
        let mut pxy = Vec::new();
        for j in 0..self.n_features() {
            let (mean, std) = self.decoder_belief(tape, p, j, pass.z, &pass.columns);
            pxy.push(gaussian_log_density(pass.columns[j], mean, std).sum());
        }
        let log_pxy = sum_scalars(tape, &pxy).scale(1.0 / rows);
        let qy: Vec<Var<'t>> = pass
            .y_beliefs
            .iter()
            .map(|(&m, &(mean, std))| gaussian_log_density(pass.columns[m], mean, std).sum())
            .collect();
        let log_qy = sum_scalars(tape, &qy).scale(1.0 / rows);
        [log_pz, log_pxy, log_qy, log_qz]
    }

    /// `log q(Y* | X) + log p(Y* | X, Z)` (row mean) with parents fed their
    /// true values; `z` comes from the ELBO pass.
    pub fn auxiliary_term<'t>(&self, tape: &'t Tape, p: &Bound<'t>, x_full: &Matrix, pass: &Pass<'t>) -> Var<'t> {
        if self.missing.is_empty() {
            return tape.scalar(0.0);
        }
        let rows = x_full.rows();
        let truth: Vec<Var<'t>> = (0..self.n_features())
            .map(|j| tape.constant(Matrix::from_vec(rows, 1, x_full.column(j))))
            .collect();
        let dec_cols = if self.teacher_forcing { &truth } else { &pass.columns };
        let mut terms = Vec::new();
        for &m in &self.missing {
            let (mean, std) = self.encoder_belief(tape, p, m, &truth, rows);
            terms.push(gaussian_log_density(truth[m], mean, std).sum());
            let (mean, std) = self.decoder_belief(tape, p, m, pass.z, dec_cols);
            terms.push(gaussian_log_density(truth[m], mean, std).sum());
        }
        sum_scalars(tape, &terms).scale(1.0 / rows as f64)
    }

    /// `𝒪 = −(ELBO + β·aux)` on a batch of fully known rows; returns the
    /// tape scalar, ELBO terms and the auxiliary value.
    pub fn objective<'t>(&self, tape: &'t Tape, p: &Bound<'t>, x_full: &Matrix, noise: &Noise) -> (Var<'t>, ElboComponents, f64) {
        let pass = self.forward(tape, p, x_full, Some(noise));
        let [pz, pxy, qy, qz] = self.elbo_terms(tape, p, &pass);
        let elbo = pz.add(pxy).sub(qy).sub(qz);
        let aux = self.auxiliary_term(tape, p, x_full, &pass);
        let total = elbo.add(aux.scale(self.beta)).neg();
        let comps = ElboComponents {
            log_pz: pz.scalar_value(),
            log_pxy: pxy.scalar_value(),
            log_qy: qy.scalar_value(),
            log_qz: qz.scalar_value(),
        };
        (total, comps, aux.scalar_value())
    }

    /// Single-sample ELBO estimate and its components (no parameter
    /// gradients needed).
    pub fn elbo(&self, x: &Matrix, seed: u64) -> Result<(f64, ElboComponents)> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let noise = self.draw_noise(x.rows(), seed);
        let pass = self.forward(&tape, &p, x, Some(&noise));
        let [pz, pxy, qy, qz] = self.elbo_terms(&tape, &p, &pass);
        let comps = ElboComponents {
            log_pz: pz.scalar_value(),
            log_pxy: pxy.scalar_value(),
            log_qy: qy.scalar_value(),
            log_qz: qz.scalar_value(),
        };
        comps.check()?;
        Ok((comps.elbo(), comps))
    }

    pub fn auxiliary_loss(&self, x_full: &Matrix, seed: u64) -> f64 {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let noise = self.draw_noise(x_full.rows(), seed);
        let pass = self.forward(&tape, &p, x_full, Some(&noise));
        self.auxiliary_term(&tape, &p, x_full, &pass).scalar_value()
    }

    /// Encoder beliefs for the missing features (means propagated, or one
    /// sample path when `seed` is given).
    pub fn missing_beliefs(&self, x: &Matrix, seed: Option<u64>) -> BTreeMap<usize, GaussianBelief> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let noise = seed.map(|s| self.draw_noise(x.rows(), s));
        let mut columns = self.data_columns(&tape, x);
        self.encode_missing(&tape, &p, &mut columns, noise.as_ref())
            .into_iter()
            .map(|(m, (mean, std))| (m, GaussianBelief::from_vars(mean, std)))
            .collect()
    }
}

/// Evaluation-mode outputs on a batch of rows, as plain matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutputs {
    pub y_beliefs: BTreeMap<usize, GaussianBelief>,
    pub z_mean: Matrix,
    pub z_std: Matrix,
    pub decoded: BTreeMap<usize, GaussianBelief>,
}

impl CevaeParams {
    pub fn evaluate(&self, x: &Matrix) -> EvalOutputs {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let pass = self.forward(&tape, &p, x, None);
        let decoded = self
            .decode(&tape, &p, pass.z, &self.data_columns(&tape, x), None)
            .into_iter()
            .map(|(j, (m, s))| (j, GaussianBelief::from_vars(m, s)))
            .collect();
        let out = EvalOutputs {
            y_beliefs: pass
                .y_beliefs
                .iter()
                .map(|(&m, &(mean, std))| (m, GaussianBelief::from_vars(mean, std)))
                .collect(),
            z_mean: pass.z_mean.value().clone(),
            z_std: pass.z_std.value().clone(),
            decoded,
        };
        out
    }
}

pub(crate) fn sum_scalars<'t>(tape: &'t Tape, terms: &[Var<'t>]) -> Var<'t> {
    match terms.split_first() {
        None => tape.scalar(0.0),
        Some((first, rest)) => rest.iter().fold(*first, |acc, t| acc.add(*t)),
    }
}
