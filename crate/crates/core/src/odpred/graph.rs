use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::data::Topology;
use crate::error::{Error, Result};
use crate::nn::AttentionGraph;

/// Undirected region graph; neighbour lists exclude the node itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGraph {
    pub k: usize,
    /// `(neighbour, weight)` sorted by neighbour index.
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

/// k-nearest-neighbour graph, symmetrised by union. Edge weight
/// `1 / (1 + distance)`. Distance ties go to the lower index.
pub fn build_region_graph(topology: &Topology, k: usize) -> Result<RegionGraph> {
    let n = topology.n_regions();
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k >= n {
        return Err(Error::invalid(format!("k = {k} needs more than {n} regions")));
    }
    let mut edges = vec![BTreeSet::new(); n];
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| topology.distance(i, a).total_cmp(&topology.distance(i, b)).then(a.cmp(&b)));
        for &j in &others[..k] {
            edges[i].insert(j);
            edges[j].insert(i);
        }
    }
    let neighbors = edges
        .into_iter()
        .enumerate()
        .map(|(i, set)| set.into_iter().map(|j| (j, 1.0 / (1.0 + topology.distance(i, j)))).collect())
        .collect();
    Ok(RegionGraph { k, neighbors })
}

impl RegionGraph {
    /// Graph from explicit undirected weighted edges (both directions are
    /// inserted).
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::invalid(format!("bad edge ({i}, {j})")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("edge ({i}, {j}) has weight {w}")));
            }
            lists[i].push((j, w));
            lists[j].push((i, w));
        }
        for (i, l) in lists.iter_mut().enumerate() {
            l.sort_by_key(|&(j, _)| j);
            l.dedup_by_key(|&mut (j, _)| j);
            if l.is_empty() {
                return Err(Error::invalid(format!("node {i} has no neighbour")));
            }
        }
        Ok(Self { k: 0, neighbors: lists })
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].iter().any(|&(x, _)| x == j)
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Attention neighbourhoods with the node itself first. Attention is
    /// masked only: edge weights do not enter the logits, so a model trained
    /// on one city's density transfers to another's.
    pub fn attention_graph(&self) -> AttentionGraph {
        let neighbors = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                let mut v = Vec::with_capacity(nb.len() + 1);
                v.push((i, 0.0));
                v.extend(nb.iter().map(|&(j, _)| (j, 0.0)));
                v
            })
            .collect();
        AttentionGraph { neighbors }
    }

    /// Hop counts from `start` (`usize::MAX` when unreachable).
    pub fn hops_from(&self, start: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_nodes()];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.neighbors[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}
