use crate::causal::bic::BicScorer;
use crate::dag::{is_acyclic, Adjacency, CausalDag};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

pub const MAX_EXACT_FEATURES: usize = 4;

/// Every labelled DAG on `n ≤ 4` nodes (1, 3, 25, 543).
pub fn enumerate_dags(n: usize) -> Result<Vec<Adjacency>> {
    if n > MAX_EXACT_FEATURES {
        return Err(Error::invalid(format!(
            "exhaustive search supports at most {MAX_EXACT_FEATURES} features, got {n}"
        )));
    }
    let slots: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << slots.len()) {
        let mut adj = Adjacency::empty(n);
        for (b, &(i, j)) in slots.iter().enumerate() {
            if mask >> b & 1 == 1 {
                adj.set(i, j, true);
            }
        }
        if is_acyclic(&adj)? {
            out.push(adj);
        }
    }
    Ok(out)
}

/// BIC-minimal DAG by enumeration. Scores within 1e-9 (relative) tie; ties
/// go to fewer edges, then the lexicographically smallest adjacency.
pub fn exact_dag_search(data: &FeatureMatrix) -> Result<CausalDag> {
    let candidates = enumerate_dags(data.n_features())?;
    let scorer = BicScorer::new(data)?;
    let mut best: Option<(f64, Adjacency)> = None;
    for adj in candidates {
        let s = scorer.score_unchecked(&adj).value;
        let better = match &best {
            None => true,
            Some((bs, badj)) => {
                let tol = 1e-9 * bs.abs().max(1.0);
                if s < bs - tol {
                    true
                } else if s <= bs + tol {
                    (adj.edge_count(), adj.bytes()) < (badj.edge_count(), badj.bytes())
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((s, adj));
        }
    }
    let (_, adj) = best.expect("at least the empty graph exists");
    CausalDag::new(data.names.clone(), adj)
}
