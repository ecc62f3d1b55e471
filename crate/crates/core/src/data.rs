//! City data model: regions, feature columns with a city-wide observation
//! mask, the distance topology and the OD flow matrix.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    ids: Vec<String>,
}

impl RegionSet {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        if ids.len() < 2 {
            return Err(Error::TooFewRegions(ids.len()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateRegion(id.clone()));
            }
        }
        Ok(Self { ids })
    }

    /// `r0000`, `r0001`, ...
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| format!("r{i:04}")).collect())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

/// Region × feature values. Missing columns (mask `false`) hold NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub names: Vec<String>,
    pub observed: Vec<bool>,
}

impl FeatureMatrix {
    pub fn new(values: Matrix, names: Vec<String>, observed: Vec<bool>) -> Result<Self> {
        let fm = Self {
            values,
            names,
            observed,
        };
        fm.check()?;
        Ok(fm)
    }

    /// All columns observed.
    pub fn complete(values: Matrix, names: Vec<String>) -> Result<Self> {
        let n = values.cols();
        Self::new(values, names, vec![true; n])
    }

    pub fn check(&self) -> Result<()> {
        let nf = self.values.cols();
        if self.names.len() != nf {
            return Err(Error::DimensionMismatch {
                what: "feature names",
                expected: nf,
                found: self.names.len(),
            });
        }
        if self.observed.len() != nf {
            return Err(Error::DimensionMismatch {
                what: "observation mask",
                expected: nf,
                found: self.observed.len(),
            });
        }
        if !self.observed.iter().any(|&o| o) {
            return Err(Error::NoObservedFeatures);
        }
        for (j, &obs) in self.observed.iter().enumerate() {
            if !obs {
                continue;
            }
            for i in 0..self.values.rows() {
                if self.values.get(i, j).is_nan() {
                    return Err(Error::NanInObserved {
                        region: i,
                        feature: j,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n_regions(&self) -> usize {
        self.values.rows()
    }

    pub fn n_features(&self) -> usize {
        self.values.cols()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.n_features()).filter(|&j| self.observed[j]).collect()
    }

    pub fn missing_indices(&self) -> Vec<usize> {
        (0..self.n_features()).filter(|&j| !self.observed[j]).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Values of the observed columns only, in column order.
    pub fn observed_values(&self) -> Matrix {
        self.values.select_columns(&self.observed_indices())
    }
}

/// Pairwise region distances in kilometres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub distances: Matrix,
}

impl Topology {
    pub fn new(distances: Matrix) -> Result<Self> {
        let t = Self { distances };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<()> {
        let (r, c) = self.distances.shape();
        if r != c {
            return Err(Error::NotSquare { rows: r, cols: c });
        }
        for i in 0..r {
            let d = self.distances.get(i, i);
            if d != 0.0 {
                return Err(Error::InvalidDistance { i, j: i, value: d });
            }
            for j in 0..r {
                let a = self.distances.get(i, j);
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(Error::InvalidDistance { i, j, value: a });
                }
                let b = self.distances.get(j, i);
                if a != b {
                    return Err(Error::AsymmetricTopology { i, j, a, b });
                }
            }
        }
        Ok(())
    }

    pub fn n_regions(&self) -> usize {
        self.distances.rows()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances.get(i, j)
    }
}

/// Commuting flows. Only `observed_pairs` may be used for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdMatrix {
    pub flows: Matrix,
    pub observed_pairs: Vec<(usize, usize)>,
}

impl OdMatrix {
    pub fn new(flows: Matrix, observed_pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut od = Self {
            flows,
            observed_pairs,
        };
        od.observed_pairs.sort_unstable();
        od.observed_pairs.dedup();
        od.check()?;
        Ok(od)
    }

    /// Every off-diagonal pair observed.
    pub fn fully_observed(flows: Matrix) -> Result<Self> {
        let n = flows.rows();
        Self::new(flows, off_diagonal_pairs(n))
    }

    pub fn check(&self) -> Result<()> {
        let (r, c) = self.flows.shape();
        if r != c {
            return Err(Error::NotSquare { rows: r, cols: c });
        }
        for o in 0..r {
            for d in 0..r {
                let v = self.flows.get(o, d);
                if v < 0.0 || v.is_nan() {
                    return Err(Error::NegativeFlow {
                        origin: o,
                        dest: d,
                        value: v,
                    });
                }
            }
        }
        for &(o, d) in &self.observed_pairs {
            if o >= r || d >= r {
                return Err(Error::PairOutOfRange {
                    origin: o,
                    dest: d,
                    n: r,
                });
            }
        }
        Ok(())
    }

    pub fn n_regions(&self) -> usize {
        self.flows.rows()
    }

    pub fn flow(&self, o: usize, d: usize) -> f64 {
        self.flows.get(o, d)
    }

    /// Off-diagonal pairs not in `observed_pairs`; the evaluation set.
    pub fn held_out_pairs(&self) -> Vec<(usize, usize)> {
        let observed: BTreeSet<_> = self.observed_pairs.iter().copied().collect();
        off_diagonal_pairs(self.n_regions())
            .into_iter()
            .filter(|p| !observed.contains(p))
            .collect()
    }
}

pub fn off_diagonal_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1));
    for o in 0..n {
        for d in 0..n {
            if o != d {
                out.push((o, d));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CityRole {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityDataset {
    pub regions: RegionSet,
    pub features: FeatureMatrix,
    pub topology: Topology,
    pub od: OdMatrix,
    pub role: CityRole,
}

impl CityDataset {
    pub fn n_regions(&self) -> usize {
        self.regions.count()
    }

    /// Returns the dataset unchanged when every invariant holds.
    pub fn validate(self) -> Result<Self> {
        let n = self.regions.count();
        let checks = [
            ("feature rows", self.features.n_regions()),
            ("topology size", self.topology.n_regions()),
            ("flow matrix size", self.od.n_regions()),
        ];
        for (what, found) in checks {
            if found != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found,
                });
            }
        }
        self.features.check()?;
        self.topology.check()?;
        self.od.check()?;
        Ok(self)
    }
}

/// Column-wise z-score transform. Fitted on the source city and applied
/// unchanged to the target so both share one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &FeatureMatrix) -> Result<Self> {
        if !features.is_complete() {
            return Err(Error::invalid(
                "standardizer must be fitted on a fully observed city",
            ));
        }
        let n = features.n_regions() as f64;
        let mut means = Vec::with_capacity(features.n_features());
        let mut stds = Vec::with_capacity(features.n_features());
        for j in 0..features.n_features() {
            let col = features.values.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            means.push(mean);
            stds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Ok(Self { means, stds })
    }

    pub fn apply(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if features.n_features() != self.means.len() {
            return Err(Error::DimensionMismatch {
                what: "standardizer width",
                expected: self.means.len(),
                found: features.n_features(),
            });
        }
        let values = Matrix::from_fn(features.n_regions(), features.n_features(), |i, j| {
            (features.values.get(i, j) - self.means[j]) / self.stds[j]
        });
        FeatureMatrix::new(values, features.names.clone(), features.observed.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_city() -> CityDataset {
        let regions = RegionSet::numbered(3).unwrap();
        let features = FeatureMatrix::complete(
            Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![0.0, 0.3]]),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let topology = Topology::new(Matrix::from_rows(&[
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 1.5],
            vec![2.0, 1.5, 0.0],
        ]))
        .unwrap();
        let od = OdMatrix::fully_observed(Matrix::from_fn(3, 3, |o, d| {
            if o == d {
                0.0
            } else {
                (o + d) as f64
            }
        }))
        .unwrap();
        CityDataset {
            regions,
            features,
            topology,
            od,
            role: CityRole::Source,
        }
    }

    #[test]
    fn valid_dataset_is_returned_unchanged() {
        let city = tiny_city();
        let validated = city.clone().validate().unwrap();
        assert_eq!(validated, city);
        // idempotent
        assert_eq!(validated.clone().validate().unwrap(), validated);
    }

    #[test]
    fn asymmetric_topology_is_rejected() {
        let mut city = tiny_city();
        city.topology.distances.set(0, 1, 1.25);
        match city.validate() {
            Err(Error::AsymmetricTopology { i: 0, j: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_flow_is_rejected() {
        let mut city = tiny_city();
        city.od.flows.set(2, 1, -1.0);
        match city.validate() {
            Err(Error::NegativeFlow {
                origin: 2, dest: 1, ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_in_observed_column_is_rejected() {
        let mut city = tiny_city();
        city.features.values.set(1, 0, f64::NAN);
        match city.validate() {
            Err(Error::NanInObserved {
                region: 1,
                feature: 0,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        // NaN is fine once the column is masked.
        let mut city = tiny_city();
        city.features.values.set(1, 0, f64::NAN);
        city.features.observed[0] = false;
        assert!(city.validate().is_ok());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut city = tiny_city();
        city.topology = Topology::new(Matrix::zeros(2, 2)).unwrap();
        assert!(matches!(
            city.validate(),
            Err(Error::DimensionMismatch {
                what: "topology size",
                ..
            })
        ));
    }

    #[test]
    fn region_ids_must_be_unique_and_plural() {
        assert!(matches!(
            RegionSet::new(vec!["a".into()]),
            Err(Error::TooFewRegions(1))
        ));
        assert!(matches!(
            RegionSet::new(vec!["a".into(), "a".into()]),
            Err(Error::DuplicateRegion(_))
        ));
    }

    #[test]
    fn standardizer_produces_unit_scale() {
        let city = tiny_city();
        let s = Standardizer::fit(&city.features).unwrap();
        let z = s.apply(&city.features).unwrap();
        for j in 0..2 {
            let col = z.values.column(j);
            let mean: f64 = col.iter().sum::<f64>() / 3.0;
            let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn held_out_pairs_complement_observed() {
        let od = OdMatrix::new(Matrix::zeros(3, 3), vec![(0, 1), (2, 0)]).unwrap();
        let held = od.held_out_pairs();
        assert_eq!(held, vec![(0, 2), (1, 0), (1, 2), (2, 1)]);
    }
}
