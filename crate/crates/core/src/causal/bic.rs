//! Free-variance linear-Gaussian BIC, decomposed into per-node local scores
//! computed from the centred Gram matrix.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::dag::{is_acyclic, Adjacency};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicScore {
    pub value: f64,
    /// Some parent design matrix needed the ridge fallback.
    pub rank_deficient: bool,
}

/// Scores graphs over one fully observed data matrix. Local scores are
/// cached by (node, parent set).
pub struct BicScorer {
    n: usize,
    gram: DMatrix<f64>,
    cache: RefCell<HashMap<(usize, Vec<u8>), (f64, bool)>>,
}

impl BicScorer {
    pub fn new(data: &FeatureMatrix) -> Result<Self> {
        if !data.is_complete() {
            return Err(Error::invalid("BIC scoring needs fully observed data"));
        }
        let (n, p) = (data.n_regions(), data.n_features());
        let means: Vec<f64> = (0..p)
            .map(|j| data.values.column(j).iter().sum::<f64>() / n as f64)
            .collect();
        let centred = DMatrix::from_fn(n, p, |i, j| data.values.get(i, j) - means[j]);
        Ok(Self {
            n,
            gram: centred.transpose() * &centred,
            cache: RefCell::new(HashMap::new()),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.gram.nrows()
    }

    /// Residual sum of squares of column `j` regressed (with intercept) on
    /// `parents`.
    pub fn rss(&self, j: usize, parents: &[usize]) -> (f64, bool) {
        let sjj = self.gram[(j, j)];
        if parents.is_empty() {
            return (sjj, false);
        }
        let k = parents.len();
        let spp = DMatrix::from_fn(k, k, |a, b| self.gram[(parents[a], parents[b])]);
        let spj = DVector::from_fn(k, |a, _| self.gram[(parents[a], j)]);
        let scale = spp.diagonal().max().max(f64::MIN_POSITIVE).sqrt();
        let (beta, deficient) = match spp.clone().cholesky() {
            Some(ch) if ch.l().diagonal().iter().all(|d| *d > 1e-7 * scale) => (ch.solve(&spj), false),
            _ => {
                let ridge = spp + DMatrix::identity(k, k) * (RIDGE * self.n as f64);
                let ch = ridge.cholesky().expect("ridge-regularised Gram matrix is positive definite");
                (ch.solve(&spj), true)
            }
        };
        let rss = sjj - spj.dot(&beta);
        (rss, deficient)
    }

    /// `n · ln(RSS_j / n) + |parents| · ln(n)`.
    pub fn local(&self, j: usize, parents: &[usize]) -> (f64, bool) {
        let mut key = vec![0u8; self.n_features()];
        for &p in parents {
            key[p] = 1;
        }
        if let Some(&hit) = self.cache.borrow().get(&(j, key.clone())) {
            return hit;
        }
        let n = self.n as f64;
        let (rss, deficient) = self.rss(j, parents);
        let floor = 1e-12 * self.gram[(j, j)].max(f64::MIN_POSITIVE);
        let score = n * (rss.max(floor) / n).ln() + parents.len() as f64 * n.ln();
        self.cache.borrow_mut().insert((j, key), (score, deficient));
        (score, deficient)
    }

    /// Sum of local scores. Defined for any adjacency; callers wanting the
    /// graph score proper must pass a DAG.
    pub fn score_unchecked(&self, adj: &Adjacency) -> BicScore {
        let mut value = 0.0;
        let mut rank_deficient = false;
        for j in 0..adj.n() {
            let (s, d) = self.local(j, &adj.parents(j));
            value += s;
            rank_deficient |= d;
        }
        BicScore {
            value,
            rank_deficient,
        }
    }

    pub fn score(&self, adj: &Adjacency) -> Result<BicScore> {
        if adj.n() != self.n_features() {
            return Err(Error::DimensionMismatch {
                what: "adjacency size",
                expected: self.n_features(),
                found: adj.n(),
            });
        }
        if !is_acyclic(adj)? {
            return Err(Error::Cyclic);
        }
        Ok(self.score_unchecked(adj))
    }

    pub fn cache_len(&self) -> usize {
        self.cache.borrow().len()
    }
}

/// BIC of a DAG on fully observed data (lower is better).
pub fn bic_score(data: &FeatureMatrix, adj: &Adjacency) -> Result<BicScore> {
    BicScorer::new(data)?.score(adj)
}
