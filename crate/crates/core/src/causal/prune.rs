use crate::causal::bic::BicScorer;
use crate::dag::{Adjacency, CausalDag};
use crate::data::FeatureMatrix;
use crate::error::Result;

/// Break cycles greedily: while a cycle exists, drop the edge on it whose
/// removal raises the BIC least.
pub fn prune_to_dag(adj: &Adjacency, data: &FeatureMatrix) -> Result<CausalDag> {
    let scorer = BicScorer::new(data)?;
    Ok(prune_with(adj, &scorer, &data.names))
}

pub(crate) fn prune_adjacency(adj: &Adjacency, scorer: &BicScorer) -> Adjacency {
    let mut g = adj.clone();
    for i in 0..g.n() {
        g.set(i, i, false);
    }
    while let Some(cycle) = g.find_cycle() {
        let mut best: Option<(f64, usize, usize)> = None;
        for k in 0..cycle.len() {
            let (u, v) = (cycle[k], cycle[(k + 1) % cycle.len()]);
            let parents = g.parents(v);
            let reduced: Vec<usize> = parents.iter().copied().filter(|&p| p != u).collect();
            let delta = scorer.local(v, &reduced).0 - scorer.local(v, &parents).0;
            if best.is_none_or(|(d, _, _)| delta < d) {
                best = Some((delta, u, v));
            }
        }
        let (_, u, v) = best.expect("cycles have at least one edge");
        g.set(u, v, false);
    }
    g
}

pub(crate) fn prune_with(adj: &Adjacency, scorer: &BicScorer, names: &[String]) -> CausalDag {
    CausalDag::new(names.to_vec(), prune_adjacency(adj, scorer)).expect("pruned graph is acyclic")
}
