//! Reference flow predictors: a fitted gravity law, a GAT on observed
//! features only, and GATs fed by AE / VAE reconstructions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cevae::{reconstruct_baseline, train_baseline, BaselineKind, CevaeConfig};
use crate::data::{CityDataset, OdMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{flow_metrics, FlowMetricReport};
use crate::odpred::{build_region_graph, train_student, OdConfig, OdModelParams, RegionGraph};

/// `flow = scale · exp(α x_o + β x_d) / (1 + dist)^γ`, where `x` are the
/// mass columns (masses are `exp(feature)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityFit {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub scale: f64,
    pub mass_columns: (usize, usize),
    /// Residual sum of squares in log space.
    pub rss: f64,
}

impl GravityFit {
    pub fn predict(&self, city: &CityDataset, origin: usize, dest: usize) -> f64 {
        let (co, cd) = self.mass_columns;
        let log_flow = self.scale.ln() + self.alpha * city.features.values.get(origin, co) + self.beta * city.features.values.get(dest, cd)
            - self.gamma * city.topology.distance(origin, dest).ln_1p();
        log_flow.exp()
    }
}

/// Least squares on `log flow = log scale + α x_o + β x_d − γ log(1 + d)`
/// over observed pairs with positive flow.
pub fn fit_gravity(city: &CityDataset, mass_columns: (usize, usize)) -> Result<GravityFit> {
    let (co, cd) = mass_columns;
    for c in [co, cd] {
        if c >= city.features.n_features() || !city.features.observed[c] {
            return Err(Error::invalid(format!("gravity mass column {c} is not observed")));
        }
    }
    let pairs: Vec<(usize, usize)> = city
        .od
        .observed_pairs
        .iter()
        .copied()
        .filter(|&(o, d)| o != d && city.od.flow(o, d) > 0.0)
        .collect();
    if pairs.len() < 4 {
        return Err(Error::invalid(format!("gravity fit needs 4 positive pairs, found {}", pairs.len())));
    }
    let x = &city.features.values;
    let design = DMatrix::from_fn(pairs.len(), 4, |r, c| {
        let (o, d) = pairs[r];
        match c {
            0 => 1.0,
            1 => x.get(o, co),
            2 => x.get(d, cd),
            _ => -city.topology.distance(o, d).ln_1p(),
        }
    });
    let y = DVector::from_iterator(pairs.len(), pairs.iter().map(|&(o, d)| city.od.flow(o, d).ln()));
    let svd = design.clone().svd(true, true);
    let coef = svd
        .solve(&y, 1e-12)
        .map_err(|e| Error::NonFinite(format!("gravity least squares: {e}")))?;
    let rss = (&design * &coef - &y).norm_squared();
    let fit = GravityFit {
        scale: coef[0].exp(),
        alpha: coef[1],
        beta: coef[2],
        gamma: coef[3],
        mass_columns,
        rss,
    };
    if ![fit.scale, fit.alpha, fit.beta, fit.gamma].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("gravity coefficients".into()));
    }
    Ok(fit)
}

/// Best-fitting gravity law over all ordered pairs of observed columns.
/// Ties keep the lexicographically first pair.
pub fn fit_gravity_observed(city: &CityDataset) -> Result<GravityFit> {
    let obs = city.features.observed_indices();
    let mut best: Option<GravityFit> = None;
    for &a in &obs {
        for &b in &obs {
            let fit = fit_gravity(city, (a, b))?;
            if best.is_none_or(|bf| fit.rss < bf.rss) {
                best = Some(fit);
            }
        }
    }
    best.ok_or(Error::NoObservedFeatures)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineArm {
    Gravity,
    GatOnly,
    AeGat,
    VaeGat,
}

impl BaselineArm {
    pub const ALL: [BaselineArm; 4] = [BaselineArm::Gravity, BaselineArm::GatOnly, BaselineArm::AeGat, BaselineArm::VaeGat];

    pub fn name(self) -> &'static str {
        match self {
            BaselineArm::Gravity => "gravity",
            BaselineArm::GatOnly => "gat_only",
            BaselineArm::AeGat => "ae_gat",
            BaselineArm::VaeGat => "vae_gat",
        }
    }
}

/// Metrics on the target's held-out pairs against the true flows.
pub fn held_out_metrics(target: &CityDataset, truth: &OdMatrix, pairs: &[(usize, usize)], pred: &[f64]) -> Result<FlowMetricReport> {
    let t: Vec<f64> = pairs.iter().map(|&(o, d)| truth.flow(o, d)).collect();
    if truth.n_regions() != target.n_regions() {
        return Err(Error::DimensionMismatch {
            what: "truth flow matrix",
            expected: target.n_regions(),
            found: truth.n_regions(),
        });
    }
    flow_metrics(&t, pred)
}

pub fn evaluate_flow_model(model: &OdModelParams, input: &Matrix, graph: &RegionGraph, target: &CityDataset, truth: &OdMatrix) -> Result<FlowMetricReport> {
    let pairs = target.od.held_out_pairs();
    let pred = model.predict(input, graph, &target.topology, &pairs)?;
    held_out_metrics(target, truth, &pairs, &pred)
}

/// Column names of `observed ‖ μ_Z ‖ σ_Z` inputs.
pub fn latent_input_names(target: &CityDataset, latent_dim: usize, with_sigma: bool) -> Vec<String> {
    let mut names: Vec<String> = target.features.observed_indices().iter().map(|&j| target.features.names[j].clone()).collect();
    names.extend((0..latent_dim).map(|k| format!("z_mean_{k}")));
    if with_sigma {
        names.extend((0..latent_dim).map(|k| format!("z_std_{k}")));
    }
    names
}

/// Train and score one baseline on the target city. Neural arms use the
/// same observed pairs, masks and seeds as the full model.
pub fn run_baseline(
    arm: BaselineArm,
    source: &CityDataset,
    target: &CityDataset,
    truth: &OdMatrix,
    cevae: &CevaeConfig,
    odpred: &OdConfig,
) -> Result<FlowMetricReport> {
    let pairs = target.od.held_out_pairs();
    if arm == BaselineArm::Gravity {
        let fit = fit_gravity_observed(target)?;
        let pred: Vec<f64> = pairs.iter().map(|&(o, d)| fit.predict(target, o, d)).collect();
        return held_out_metrics(target, truth, &pairs, &pred);
    }
    let graph = build_region_graph(&target.topology, odpred.k)?;
    let observed = target.features.observed_indices();
    let (input, names) = match arm {
        BaselineArm::GatOnly => {
            let names = observed.iter().map(|&j| target.features.names[j].clone()).collect();
            (target.features.values.select_columns(&observed), names)
        }
        BaselineArm::AeGat | BaselineArm::VaeGat => {
            let kind = if arm == BaselineArm::AeGat { BaselineKind::Ae } else { BaselineKind::Vae };
            let missing = target.features.missing_indices();
            let (model, _) = train_baseline(kind, source, &missing, cevae)?;
            let rec = reconstruct_baseline(&target.features, &model)?;
            // the autoencoder has no latent spread
            let with_sigma = kind == BaselineKind::Vae;
            (rec.student_input(&observed, with_sigma), latent_input_names(target, model.latent_dim, with_sigma))
        }
        BaselineArm::Gravity => unreachable!(),
    };
    let (model, _) = train_student(target, &input, names, &graph, None, odpred)?;
    evaluate_flow_model(&model, &input, &graph, target, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{off_diagonal_pairs, CityRole, FeatureMatrix, RegionSet};
    use crate::synthcity::{generate_layout, generate_od, GravitySpec};

    fn city(n: usize, spec: &GravitySpec, seed: u64) -> CityDataset {
        let mut rng = crate::seed::rng(seed);
        let values = crate::nn::standard_normal(n, 3, &mut rng);
        let features = FeatureMatrix::complete(values, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let (_, topology) = generate_layout(n, seed).unwrap();
        let od = generate_od(&features, &topology, spec, seed).unwrap();
        CityDataset { regions: RegionSet::numbered(n).unwrap(), features, topology, od, role: CityRole::Target }.validate().unwrap()
    }

    fn spec(noise: f64) -> GravitySpec {
        GravitySpec { mass_features: (0, 2), alpha: 0.8, beta: 1.3, gamma: 1.7, scale: 150.0, noise }
    }

    #[test]
    fn noiseless_gravity_is_recovered() {
        let c = city(30, &spec(0.0), 4);
        let fit = fit_gravity(&c, (0, 2)).unwrap();
        assert!((fit.alpha - 0.8).abs() < 1e-6);
        assert!((fit.beta - 1.3).abs() < 1e-6);
        assert!((fit.gamma - 1.7).abs() < 1e-6);
        assert!((fit.scale - 150.0).abs() < 1e-6 * 150.0);
        let pairs = off_diagonal_pairs(30);
        let t: Vec<f64> = pairs.iter().map(|&(o, d)| c.od.flow(o, d)).collect();
        let p: Vec<f64> = pairs.iter().map(|&(o, d)| fit.predict(&c, o, d)).collect();
        assert!((crate::metrics::cpc(&t, &p).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_flows_give_zero_decay() {
        let mut c = city(20, &spec(0.0), 1);
        c.od.flows = Matrix::from_fn(20, 20, |i, j| if i == j { 0.0 } else { 7.0 });
        let fit = fit_gravity(&c, (0, 1)).unwrap();
        assert!(fit.gamma.abs() < 1e-9);
        assert!(fit.alpha.abs() < 1e-9 && fit.beta.abs() < 1e-9);
        assert!((fit.scale - 7.0).abs() < 1e-9);
    }

    #[test]
    fn observed_search_finds_the_true_mass_columns() {
        let c = city(40, &spec(0.05), 2);
        let fit = fit_gravity_observed(&c).unwrap();
        assert_eq!(fit.mass_columns, (0, 2));
    }

    #[test]
    fn too_few_pairs_or_masked_mass_is_an_error() {
        let mut c = city(10, &spec(0.0), 3);
        c.od.observed_pairs.truncate(3);
        assert!(fit_gravity(&c, (0, 1)).is_err());
        let mut c = city(10, &spec(0.0), 3);
        c.features.observed[1] = false;
        assert!(fit_gravity(&c, (0, 1)).is_err());
    }
}
