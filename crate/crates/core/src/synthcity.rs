//! Synthetic source/target city pairs with a known causal graph, a
//! linear-Gaussian structural model over the features, and gravity-law OD
//! flows. Every generator is a pure function of its inputs and seed.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dag::{Adjacency, CausalDag};
use crate::data::{off_diagonal_pairs, CityDataset, CityRole, FeatureMatrix, OdMatrix, RegionSet, Standardizer, Topology};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

/// Side length of the square regions are scattered in, km.
pub const CITY_EXTENT_KM: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScmSpec {
    pub dag: CausalDag,
    /// `weights[(i, j)]` is the effect of feature i on feature j.
    pub weights: Matrix,
    pub noise_std: f64,
}

impl ScmSpec {
    /// Edge weights with magnitude uniform in [0.5, 2.0] and random sign.
    pub fn random(dag: CausalDag, noise_std: f64, seed: u64) -> Result<Self> {
        if !(noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be nonnegative"));
        }
        let mut rng = seed::rng(seed);
        let n = dag.n();
        let mut weights = Matrix::zeros(n, n);
        for (i, j) in dag.adjacency().edges() {
            let mag = rng.random_range(0.5..=2.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            weights.set(i, j, sign * mag);
        }
        Ok(Self {
            dag,
            weights,
            noise_std,
        })
    }

    /// Population covariance Σ = (I − W)^{-T} · σ² · (I − W)^{-1}.
    pub fn covariance(&self) -> Matrix {
        let n = self.dag.n();
        // propagate unit noise through the graph in topological order:
        // column j of `b` holds the loadings of feature j on each noise term.
        let mut b = Matrix::zeros(n, n);
        for j in self.dag.order() {
            let mut col = vec![0.0; n];
            col[j] = 1.0;
            for p in self.dag.parents(j) {
                let w = self.weights.get(p, j);
                for (k, c) in col.iter_mut().enumerate() {
                    *c += w * b.get(k, p);
                }
            }
            b.set_column(j, &col);
        }
        let var = self.noise_std * self.noise_std;
        Matrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| b.get(k, i) * b.get(k, j)).sum::<f64>() * var
        })
    }

    /// Share of each feature's variance explained by its parents.
    pub fn explained_variance(&self) -> Vec<f64> {
        let cov = self.covariance();
        let var = self.noise_std * self.noise_std;
        (0..self.dag.n())
            .map(|j| {
                let total = cov.get(j, j);
                if total > 0.0 {
                    1.0 - var / total
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravitySpec {
    /// (origin-mass column, destination-mass column)
    pub mass_features: (usize, usize),
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub scale: f64,
    /// Standard deviation of the multiplicative log-normal noise.
    pub noise: f64,
}

impl GravitySpec {
    fn check(&self, n_features: usize) -> Result<()> {
        let (o, d) = self.mass_features;
        if o >= n_features || d >= n_features {
            return Err(Error::invalid("gravity mass feature out of range"));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.gamma >= 0.0 && self.scale > 0.0 && self.noise >= 0.0) {
            return Err(Error::invalid("gravity exponents, scale and noise must be positive"));
        }
        Ok(())
    }
}

pub fn feature_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i:02}")).collect()
}

/// Random order, then each forward edge independently with `edge_prob`.
pub fn sample_random_dag(n_features: usize, edge_prob: f64, seed: u64) -> Result<CausalDag> {
    if n_features < 1 {
        return Err(Error::invalid("need at least one feature"));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::invalid("edge_prob must lie in (0, 1]"));
    }
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..n_features).collect();
    order.shuffle(&mut rng);
    let mut adj = Adjacency::empty(n_features);
    for a in 0..n_features {
        for b in a + 1..n_features {
            if rng.random_bool(edge_prob) {
                adj.set(order[a], order[b], true);
            }
        }
    }
    CausalDag::new(feature_names(n_features), adj)
}

/// Sample `n_regions` rows from the linear-Gaussian model.
pub fn generate_features(spec: &ScmSpec, n_regions: usize, seed: u64) -> Result<FeatureMatrix> {
    if n_regions < 2 {
        return Err(Error::TooFewRegions(n_regions));
    }
    let n = spec.dag.n();
    let mut rng = seed::rng(seed);
    // draw all noise up front in a fixed layout so the sample does not
    // depend on traversal order
    let noise = Matrix::from_fn(n_regions, n, |_, _| {
        if spec.noise_std > 0.0 {
            Normal::new(0.0, spec.noise_std).expect("valid std").sample(&mut rng)
        } else {
            0.0
        }
    });
    let mut values = Matrix::zeros(n_regions, n);
    for j in spec.dag.order() {
        let parents = spec.dag.parents(j);
        for r in 0..n_regions {
            let v = parents
                .iter()
                .map(|&p| spec.weights.get(p, j) * values.get(r, p))
                .sum::<f64>()
                + noise.get(r, j);
            values.set(r, j, v);
        }
    }
    FeatureMatrix::complete(values, spec.dag.features().to_vec())
}

/// Regions scattered uniformly over a 50 km square; Euclidean distances.
pub fn generate_topology(n_regions: usize, seed: u64) -> Result<Topology> {
    Ok(generate_layout(n_regions, seed)?.1)
}

pub fn generate_layout(n_regions: usize, seed: u64) -> Result<(Vec<(f64, f64)>, Topology)> {
    if n_regions < 2 {
        return Err(Error::TooFewRegions(n_regions));
    }
    let mut rng = seed::rng(seed);
    let coords: Vec<(f64, f64)> = (0..n_regions)
        .map(|_| {
            (
                rng.random_range(0.0..CITY_EXTENT_KM),
                rng.random_range(0.0..CITY_EXTENT_KM),
            )
        })
        .collect();
    let d = Matrix::from_fn(n_regions, n_regions, |i, j| {
        if i == j {
            0.0
        } else {
            let (a, b) = (coords[i], coords[j]);
            ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
        }
    });
    // enforce exact symmetry regardless of rounding order
    let d = Matrix::from_fn(n_regions, n_regions, |i, j| d.get(i.min(j), i.max(j)));
    Ok((coords, Topology::new(d)?))
}

/// Gravity-law flows: `scale · m_o^α · m_d^β / (1 + dist)^γ · exp(η)` with
/// masses `exp(feature)`; every off-diagonal pair observed.
pub fn generate_od(features: &FeatureMatrix, topology: &Topology, spec: &GravitySpec, seed: u64) -> Result<OdMatrix> {
    spec.check(features.n_features())?;
    let n = features.n_regions();
    if topology.n_regions() != n {
        return Err(Error::DimensionMismatch {
            what: "topology size",
            expected: n,
            found: topology.n_regions(),
        });
    }
    let (fo, fd) = spec.mass_features;
    let mut rng = seed::rng(seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("valid std");
    let mut flows = Matrix::zeros(n, n);
    for o in 0..n {
        for d in 0..n {
            if o == d {
                continue;
            }
            let eta = if spec.noise > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            let log_flow = spec.scale.ln()
                + spec.alpha * features.values.get(o, fo)
                + spec.beta * features.values.get(d, fd)
                - spec.gamma * (1.0 + topology.distance(o, d)).ln()
                + eta;
            flows.set(o, d, log_flow.exp());
        }
    }
    OdMatrix::fully_observed(flows)
}

/// Mask `n_missing` uniformly chosen columns and keep a uniform
/// `flow_keep_fraction` of the off-diagonal pairs. Returns the masked city
/// and the unmasked features.
pub fn mask_city(city: &CityDataset, n_missing: usize, flow_keep_fraction: f64, seed: u64) -> Result<(CityDataset, FeatureMatrix)> {
    let nf = city.features.n_features();
    if n_missing >= nf {
        return Err(Error::invalid(format!(
            "cannot mask {n_missing} of {nf} features; at least one must stay observed"
        )));
    }
    let mut rng = seed::rng(seed::derive(seed, "columns"));
    let mut cols: Vec<usize> = (0..nf).collect();
    cols.shuffle(&mut rng);
    cols.truncate(n_missing);
    mask_columns(city, &cols, flow_keep_fraction, seed)
}

/// Mask exactly `columns`; the retained flow pairs depend only on `seed`.
pub fn mask_columns(city: &CityDataset, columns: &[usize], flow_keep_fraction: f64, seed: u64) -> Result<(CityDataset, FeatureMatrix)> {
    if !(flow_keep_fraction > 0.0 && flow_keep_fraction <= 1.0) {
        return Err(Error::invalid("flow_keep_fraction must lie in (0, 1]"));
    }
    let nf = city.features.n_features();
    let mut features = city.features.clone();
    for &c in columns {
        if c >= nf {
            return Err(Error::invalid(format!("column {c} out of range")));
        }
        if !features.observed[c] {
            return Err(Error::invalid(format!("column {c} masked twice")));
        }
        features.observed[c] = false;
        for r in 0..features.n_regions() {
            features.values.set(r, c, f64::NAN);
        }
    }
    features.check()?;
    let mut pairs = off_diagonal_pairs(city.n_regions());
    let keep = (flow_keep_fraction * pairs.len() as f64 + 1e-9).floor() as usize;
    if keep < pairs.len() {
        let mut rng = seed::rng(seed::derive(seed, "pairs"));
        pairs.shuffle(&mut rng);
        pairs.truncate(keep);
    }
    let od = OdMatrix::new(city.od.flows.clone(), pairs)?;
    let masked = CityDataset {
        regions: city.regions.clone(),
        features,
        topology: city.topology.clone(),
        od,
        role: city.role,
    };
    Ok((masked, city.features.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CityPairConfig {
    pub source_regions: usize,
    pub target_regions: usize,
    pub n_features: usize,
    pub edge_prob: f64,
    pub noise_std: f64,
    pub n_missing: usize,
    pub flow_keep_fraction: f64,
    /// Gravity masses; `None` picks the two features best explained by their
    /// causal parents.
    pub mass_features: Option<(usize, usize)>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub flow_scale: f64,
    pub flow_noise: f64,
    pub seed: u64,
}

impl Default for CityPairConfig {
    fn default() -> Self {
        Self {
            source_regions: 300,
            target_regions: 200,
            n_features: 30,
            edge_prob: 0.2,
            noise_std: 1.0,
            n_missing: 10,
            flow_keep_fraction: 0.05,
            mass_features: None,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.5,
            flow_scale: 200.0,
            flow_noise: 0.3,
            seed: 0,
        }
    }
}

/// Ground truth kept aside for evaluation.
#[derive(Debug, Clone)]
pub struct PairTruth {
    pub dag: CausalDag,
    pub scm: ScmSpec,
    pub gravity: GravitySpec,
    /// Target features before masking (standardized).
    pub target_features: FeatureMatrix,
    pub target_od: OdMatrix,
    /// Order in which target columns are masked; a scenario with k missing
    /// features masks the first k.
    pub mask_order: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CityPair {
    pub source: CityDataset,
    pub target: CityDataset,
    pub truth: PairTruth,
}

/// Source and target cities sharing one structural model but with their own
/// regions, layouts and seeds. Features are z-scored with source statistics
/// before flows are generated. The target masks the gravity mass columns
/// first, then uniformly chosen others, so the scarce city lacks exactly the
/// information the flows depend on.
pub fn generate_city_pair(config: &CityPairConfig) -> Result<CityPair> {
    if config.n_missing >= config.n_features {
        return Err(Error::invalid("n_missing must be below n_features"));
    }
    let s = config.seed;
    let dag = sample_random_dag(config.n_features, config.edge_prob, seed::derive(s, "dag"))?;
    let scm = ScmSpec::random(dag.clone(), config.noise_std, seed::derive(s, "weights"))?;

    let mass_features = match config.mass_features {
        Some(m) => m,
        None => {
            let r2 = scm.explained_variance();
            let mut idx: Vec<usize> = (0..config.n_features).collect();
            idx.sort_by(|&a, &b| r2[b].total_cmp(&r2[a]).then(a.cmp(&b)));
            (idx[0], idx.get(1).copied().unwrap_or(idx[0]))
        }
    };
    let gravity = GravitySpec {
        mass_features,
        alpha: config.alpha,
        beta: config.beta,
        gamma: config.gamma,
        scale: config.flow_scale,
        noise: config.flow_noise,
    };

    let raw_src = generate_features(&scm, config.source_regions, seed::derive(s, "src.features"))?;
    let raw_tar = generate_features(&scm, config.target_regions, seed::derive(s, "tar.features"))?;
    let standardizer = Standardizer::fit(&raw_src)?;
    let src_features = standardizer.apply(&raw_src)?;
    let tar_features = standardizer.apply(&raw_tar)?;

    let build = |features: FeatureMatrix, n: usize, label: &str, role: CityRole| -> Result<CityDataset> {
        let topology = generate_topology(n, seed::derive(s, &format!("{label}.topology")))?;
        let od = generate_od(&features, &topology, &gravity, seed::derive(s, &format!("{label}.od")))?;
        CityDataset {
            regions: RegionSet::numbered(n)?,
            features,
            topology,
            od,
            role,
        }
        .validate()
    };
    let source = build(src_features, config.source_regions, "src", CityRole::Source)?;
    let full_target = build(tar_features, config.target_regions, "tar", CityRole::Target)?;

    let mask_order = masking_order(config.n_features, mass_features, seed::derive(s, "mask.order"));
    let (target, target_features) = mask_columns(
        &full_target,
        &mask_order[..config.n_missing],
        config.flow_keep_fraction,
        seed::derive(s, "mask"),
    )?;
    Ok(CityPair {
        source,
        target,
        truth: PairTruth {
            dag,
            scm,
            gravity,
            target_features,
            target_od: full_target.od,
            mask_order,
        },
    })
}

/// The same pair with the first `n_missing` columns of the masking order
/// hidden. Observed flow pairs are identical for every count.
pub fn remask_target(pair: &CityPair, config: &CityPairConfig, n_missing: usize) -> Result<CityDataset> {
    if n_missing >= pair.truth.mask_order.len() {
        return Err(Error::invalid(format!(
            "cannot mask {n_missing} of {} features",
            pair.truth.mask_order.len()
        )));
    }
    let full = CityDataset {
        regions: pair.target.regions.clone(),
        features: pair.truth.target_features.clone(),
        topology: pair.target.topology.clone(),
        od: pair.truth.target_od.clone(),
        role: CityRole::Target,
    };
    let (target, _) = mask_columns(
        &full,
        &pair.truth.mask_order[..n_missing],
        config.flow_keep_fraction,
        seed::derive(config.seed, "mask"),
    )?;
    Ok(target)
}

fn masking_order(n_features: usize, mass: (usize, usize), seed: u64) -> Vec<usize> {
    let mut order = vec![mass.0];
    if mass.1 != mass.0 {
        order.push(mass.1);
    }
    let mut rest: Vec<usize> = (0..n_features).filter(|c| !order.contains(c)).collect();
    rest.shuffle(&mut seed::rng(seed));
    order.extend(rest);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn lstsq(x: &Matrix, y: &[f64]) -> Vec<f64> {
        let xm = DMatrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j));
        let yv = DVector::from_column_slice(y);
        let xtx = xm.transpose() * &xm;
        let xty = xm.transpose() * yv;
        xtx.cholesky().unwrap().solve(&xty).iter().copied().collect()
    }

    #[test]
    fn remasking_at_the_default_count_reproduces_the_pair() {
        let config = CityPairConfig { source_regions: 40, target_regions: 30, n_features: 8, n_missing: 3, seed: 5, ..Default::default() };
        let pair = generate_city_pair(&config).unwrap();
        let again = remask_target(&pair, &config, 3).unwrap();
        assert_eq!(again, pair.target);
        let fewer = remask_target(&pair, &config, 1).unwrap();
        assert_eq!(fewer.features.missing_indices(), vec![pair.truth.mask_order[0]]);
        assert_eq!(fewer.od.observed_pairs, pair.target.od.observed_pairs);
        assert!(remask_target(&pair, &config, 8).is_err());
    }

    #[test]
    fn single_node_dag_is_edgeless() {
        let d = sample_random_dag(1, 0.7, 3).unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.edge_count(), 0);
    }

    #[test]
    fn full_probability_gives_complete_dag() {
        let d = sample_random_dag(5, 1.0, 11).unwrap();
        assert_eq!(d.edge_count(), 10);
    }

    #[test]
    fn dag_sampling_is_deterministic() {
        assert_eq!(sample_random_dag(10, 0.3, 42).unwrap(), sample_random_dag(10, 0.3, 42).unwrap());
        assert!(sample_random_dag(0, 0.3, 1).is_err());
        assert!(sample_random_dag(3, 0.0, 1).is_err());
    }

    #[test]
    fn noiseless_chain_is_exact() {
        let dag = CausalDag::new(feature_names(2), Adjacency::from_edges(2, &[(0, 1)]).unwrap()).unwrap();
        let mut w = Matrix::zeros(2, 2);
        w.set(0, 1, 2.0);
        // root still needs variation, so use a tiny noise and compare ratios
        let spec = ScmSpec { dag, weights: w, noise_std: 0.0 };
        let f = generate_features(&spec, 10, 1).unwrap();
        for r in 0..10 {
            assert_eq!(f.values.get(r, 1), 2.0 * f.values.get(r, 0));
        }
    }

    #[test]
    fn collider_coefficients_are_recovered_by_least_squares() {
        let dag = CausalDag::new(feature_names(3), Adjacency::from_edges(3, &[(0, 2), (1, 2)]).unwrap()).unwrap();
        let mut w = Matrix::zeros(3, 3);
        w.set(0, 2, 1.0);
        w.set(1, 2, 1.0);
        let spec = ScmSpec { dag, weights: w, noise_std: 0.1 };
        let f = generate_features(&spec, 5000, 9).unwrap();
        let x = f.values.select_columns(&[0, 1]);
        let beta = lstsq(&x, &f.values.column(2));
        assert!((beta[0] - 1.0).abs() < 0.05, "{beta:?}");
        assert!((beta[1] - 1.0).abs() < 0.05, "{beta:?}");
    }

    #[test]
    fn edgeless_columns_are_uncorrelated() {
        let spec = ScmSpec::random(sample_random_dag(3, 1e-9, 5).unwrap(), 1.0, 5).unwrap();
        assert_eq!(spec.dag.edge_count(), 0);
        let f = generate_features(&spec, 20_000, 2).unwrap();
        let (a, b) = (f.values.column(0), f.values.column(1));
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / 20_000.0;
        assert!(corr.abs() < 0.03);
    }

    #[test]
    fn topology_is_a_metric() {
        let t = generate_topology(25, 3).unwrap();
        assert_eq!(t, generate_topology(25, 3).unwrap());
        for i in 0..25 {
            assert_eq!(t.distance(i, i), 0.0);
            for j in 0..25 {
                assert_eq!(t.distance(i, j), t.distance(j, i));
                for k in 0..25 {
                    assert!(t.distance(i, k) <= t.distance(i, j) + t.distance(j, k) + 1e-9);
                }
            }
        }
    }

    fn two_region_features(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::complete(Matrix::from_rows(rows), feature_names(rows[0].len())).unwrap()
    }

    fn gravity(gamma: f64, scale: f64) -> GravitySpec {
        GravitySpec {
            mass_features: (0, 0),
            alpha: 1.0,
            beta: 1.0,
            gamma,
            scale,
            noise: 0.0,
        }
    }

    #[test]
    fn distance_decay_ratio_is_closed_form() {
        let f = two_region_features(&[vec![0.3], vec![0.7], vec![0.7]]);
        let t = Topology::new(Matrix::from_rows(&[vec![0.0, 2.0, 9.0], vec![2.0, 0.0, 7.0], vec![9.0, 7.0, 0.0]])).unwrap();
        let od = generate_od(&f, &t, &gravity(1.7, 5.0), 1).unwrap();
        let ratio = od.flow(0, 1) / od.flow(0, 2);
        let expected = ((1.0_f64 + 9.0) / (1.0 + 2.0)).powf(1.7);
        assert!((ratio - expected).abs() < 1e-9 * expected);
        assert_eq!(od.flow(1, 1), 0.0);
    }

    #[test]
    fn gravity_degenerate_settings() {
        let f = two_region_features(&[vec![0.3], vec![0.7], vec![0.7]]);
        let t = generate_topology(3, 4).unwrap();
        let flat = generate_od(&f, &t, &gravity(0.0, 5.0), 1).unwrap();
        assert!((flat.flow(0, 1) - flat.flow(0, 2)).abs() < 1e-12);
        let a = generate_od(&f, &t, &gravity(1.0, 5.0), 1).unwrap();
        let b = generate_od(&f, &t, &gravity(1.0, 10.0), 1).unwrap();
        for o in 0..3 {
            for d in 0..3 {
                assert!((b.flow(o, d) - 2.0 * a.flow(o, d)).abs() < 1e-9);
            }
        }
        assert_eq!(a.observed_pairs.len(), 6);
    }

    fn small_city(n: usize, nf: usize) -> CityDataset {
        let spec = ScmSpec::random(sample_random_dag(nf, 0.3, 1).unwrap(), 1.0, 2).unwrap();
        let features = generate_features(&spec, n, 3).unwrap();
        let topology = generate_topology(n, 4).unwrap();
        let g = GravitySpec { mass_features: (0, 1), ..gravity(1.0, 10.0) };
        let od = generate_od(&features, &topology, &g, 5).unwrap();
        CityDataset {
            regions: RegionSet::numbered(n).unwrap(),
            features,
            topology,
            od,
            role: CityRole::Target,
        }
    }

    #[test]
    fn identity_masking() {
        let city = small_city(6, 4);
        let (masked, truth) = mask_city(&city, 0, 1.0, 3).unwrap();
        assert_eq!(masked, city);
        assert_eq!(truth, city.features);
    }

    #[test]
    fn masking_counts() {
        let city = small_city(5, 30);
        let (masked, truth) = mask_city(&city, 10, 1.0, 8).unwrap();
        assert_eq!(masked.features.observed_indices().len(), 20);
        for j in masked.features.observed_indices() {
            assert_eq!(masked.features.values.column(j), truth.values.column(j));
        }
        assert!(mask_city(&city, 30, 1.0, 8).is_err());
    }

    #[test]
    fn flow_keep_fraction_floors() {
        let city = small_city(200, 2);
        let (masked, _) = mask_city(&city, 0, 0.01, 8).unwrap();
        assert_eq!(masked.od.observed_pairs.len(), 398);
    }

    #[test]
    fn city_pair_is_reproducible_and_consistent() {
        let config = CityPairConfig {
            source_regions: 40,
            target_regions: 30,
            n_features: 8,
            n_missing: 3,
            ..CityPairConfig::default()
        };
        let a = generate_city_pair(&config).unwrap();
        let b = generate_city_pair(&config).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
        assert!(a.source.features.is_complete());
        assert_eq!(a.target.features.missing_indices().len(), 3);
        let (mo, md) = a.truth.gravity.mass_features;
        assert!(!a.target.features.observed[mo] && !a.target.features.observed[md]);
        assert_eq!(a.source.role, CityRole::Source);
        assert_eq!(a.target.role, CityRole::Target);
    }
}
