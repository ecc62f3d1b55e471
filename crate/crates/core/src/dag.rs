//! Binary adjacency matrices and the acyclic `CausalDag` built on them.

use std::collections::BinaryHeap;
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Square 0/1 matrix; entry (i, j) set means an edge i → j.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Adjacency {
    n: usize,
    bits: Vec<u8>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let mut adj = Self::empty(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::NotSquare {
                    rows: n,
                    cols: row.len(),
                });
            }
            for (j, &b) in row.iter().enumerate() {
                if b > 1 {
                    return Err(Error::invalid(format!("non-binary entry {b} at ({i}, {j})")));
                }
                adj.bits[i * n + j] = b;
            }
        }
        Ok(adj)
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            adj.set(i, j, true);
        }
        Ok(adj)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn has(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j] != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.bits[i * self.n + j] = on as u8;
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.has(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.has(i, j)).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.has(i, j)).collect()
    }

    pub fn check_diagonal(&self) -> Result<()> {
        match (0..self.n).find(|&i| self.has(i, i)) {
            Some(i) => Err(Error::NonzeroDiagonal(i)),
            None => Ok(()),
        }
    }

    /// Some directed cycle as a node list, if one exists.
    pub fn find_cycle(&self) -> Option<Vec<usize>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Color {
            White,
            Gray,
            Black,
        }
        let n = self.n;
        let mut color = vec![Color::White; n];
        let mut parent = vec![usize::MAX; n];
        for start in 0..n {
            if color[start] != Color::White {
                continue;
            }
            // iterative DFS: (node, next child to try)
            let mut stack = vec![(start, 0usize)];
            color[start] = Color::Gray;
            while let Some(&mut (u, ref mut next)) = stack.last_mut() {
                if *next < n {
                    let v = *next;
                    *next += 1;
                    if !self.has(u, v) {
                        continue;
                    }
                    match color[v] {
                        Color::White => {
                            color[v] = Color::Gray;
                            parent[v] = u;
                            stack.push((v, 0));
                        }
                        Color::Gray => {
                            let mut cycle = vec![v];
                            let mut w = u;
                            while w != v {
                                cycle.push(w);
                                w = parent[w];
                            }
                            cycle.reverse();
                            // cycle is v, ..., u in edge order after rotation
                            cycle.rotate_right(1);
                            return Some(cycle);
                        }
                        Color::Black => {}
                    }
                } else {
                    color[u] = Color::Black;
                    stack.pop();
                }
            }
        }
        None
    }

    /// Reachability closure: `out[i][j]` is true when a directed path i ⇝ j
    /// of length ≥ 1 exists.
    pub fn reachability(&self) -> Vec<Vec<bool>> {
        let n = self.n;
        let mut reach = vec![vec![false; n]; n];
        for (s, row) in reach.iter_mut().enumerate() {
            let mut stack: Vec<usize> = self.children(s);
            while let Some(u) = stack.pop() {
                if row[u] {
                    continue;
                }
                row[u] = true;
                stack.extend(self.children(u).into_iter().filter(|&v| !row[v]));
            }
        }
        reach
    }
}

/// True iff the matrix has no directed cycle (three-colour depth-first
/// search).
pub fn is_acyclic(adj: &Adjacency) -> Result<bool> {
    adj.check_diagonal()?;
    Ok(adj.find_cycle().is_none())
}

/// Acyclic graph over named feature columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DagJson", into = "DagJson")]
pub struct CausalDag {
    features: Vec<String>,
    adjacency: Adjacency,
}

impl CausalDag {
    pub fn new(features: Vec<String>, adjacency: Adjacency) -> Result<Self> {
        if features.len() != adjacency.n() {
            return Err(Error::DimensionMismatch {
                what: "dag feature names",
                expected: adjacency.n(),
                found: features.len(),
            });
        }
        if !is_acyclic(&adjacency)? {
            return Err(Error::Cyclic);
        }
        Ok(Self {
            features,
            adjacency,
        })
    }

    pub fn empty(features: Vec<String>) -> Self {
        let n = features.len();
        Self {
            features,
            adjacency: Adjacency::empty(n),
        }
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        self.adjacency.parents(j)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.edge_count()
    }

    /// Indices in `subset` ordered so each comes after its in-subset
    /// ancestors; ties go to the smaller index.
    pub fn topological_order(&self, subset: &[usize]) -> Vec<usize> {
        let reach = self.adjacency.reachability();
        let mut members: Vec<usize> = subset.to_vec();
        members.sort_unstable();
        members.dedup();
        let mut indegree: Vec<usize> = members
            .iter()
            .map(|&j| members.iter().filter(|&&i| reach[i][j]).count())
            .collect();
        let mut heap: BinaryHeap<Reverse<(usize, usize)>> = members
            .iter()
            .enumerate()
            .filter(|(k, _)| indegree[*k] == 0)
            .map(|(k, &j)| Reverse((j, k)))
            .collect();
        let mut order = Vec::with_capacity(members.len());
        while let Some(Reverse((i, ki))) = heap.pop() {
            order.push(i);
            for (k, &j) in members.iter().enumerate() {
                if k != ki && reach[i][j] {
                    indegree[k] -= 1;
                    if indegree[k] == 0 {
                        heap.push(Reverse((j, k)));
                    }
                }
            }
        }
        debug_assert_eq!(order.len(), members.len());
        order
    }

    /// Full topological order of all nodes.
    pub fn order(&self) -> Vec<usize> {
        self.topological_order(&(0..self.n()).collect::<Vec<_>>())
    }

    /// Hex SHA-256 over the feature names and adjacency bytes.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.features {
            h.update(f.as_bytes());
            h.update([0u8]);
        }
        h.update(self.adjacency.bytes());
        hex(&h.finalize())
    }

    pub fn to_json(&self) -> DagJson {
        DagJson {
            features: self.features.clone(),
            edges: self.adjacency.edges().into_iter().map(|(i, j)| [i, j]).collect(),
        }
    }

    pub fn from_json(json: &DagJson) -> Result<Self> {
        let edges: Vec<(usize, usize)> = json.edges.iter().map(|e| (e[0], e[1])).collect();
        let adj = Adjacency::from_edges(json.features.len(), &edges)?;
        Self::new(json.features.clone(), adj)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// On-disk form: `{"features": [...], "edges": [[i, j], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagJson {
    pub features: Vec<String>,
    pub edges: Vec<[usize; 2]>,
}

impl TryFrom<DagJson> for CausalDag {
    type Error = Error;

    fn try_from(json: DagJson) -> Result<Self> {
        CausalDag::from_json(&json)
    }
}

impl From<CausalDag> for DagJson {
    fn from(dag: CausalDag) -> Self {
        dag.to_json()
    }
}

/// Structural Hamming distance: one unit per node pair whose edge state
/// (absent, i→j, j→i) differs.
pub fn shd(a: &Adjacency, b: &Adjacency) -> usize {
    assert_eq!(a.n(), b.n());
    let n = a.n();
    let mut d = 0;
    for i in 0..n {
        for j in i + 1..n {
            if (a.has(i, j), a.has(j, i)) != (b.has(i, j), b.has(j, i)) {
                d += 1;
            }
        }
    }
    d
}

/// Edge mark in a partially directed graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    None,
    Forward,
    Backward,
    Undirected,
}

/// Completed partially directed graph of a DAG's Markov equivalence class:
/// skeleton, v-structures, then Meek rules 1–3 to closure.
/// `marks[i][j]` describes the pair from i's point of view.
pub fn cpdag(adj: &Adjacency) -> Vec<Vec<Mark>> {
    let n = adj.n();
    let adjacent = |i: usize, j: usize| adj.has(i, j) || adj.has(j, i);
    // directed[i][j]: i → j compelled so far; undirected otherwise when adjacent
    let mut directed = vec![vec![false; n]; n];
    for k in 0..n {
        let pa = adj.parents(k);
        for (x, &i) in pa.iter().enumerate() {
            for &j in &pa[x + 1..] {
                if !adjacent(i, j) {
                    directed[i][k] = true;
                    directed[j][k] = true;
                }
            }
        }
    }
    let undirected = |d: &Vec<Vec<bool>>, i: usize, j: usize| adjacent(i, j) && !d[i][j] && !d[j][i];
    loop {
        let mut changed = false;
        for a in 0..n {
            for b in 0..n {
                if a == b || !undirected(&directed, a, b) {
                    continue;
                }
                // R1: c → a, a — b, c not adjacent to b  ⇒  a → b
                let r1 = (0..n).any(|c| directed[c][a] && c != b && !adjacent(c, b));
                // R2: a → c → b, a — b  ⇒  a → b
                let r2 = (0..n).any(|c| directed[a][c] && directed[c][b]);
                // R3: a — c → b, a — d → b, c, d non-adjacent  ⇒  a → b
                let r3 = (0..n).any(|c| {
                    undirected(&directed, a, c)
                        && directed[c][b]
                        && (c + 1..n).any(|d| {
                            undirected(&directed, a, d) && directed[d][b] && !adjacent(c, d)
                        })
                });
                if r1 || r2 || r3 {
                    directed[a][b] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if !adjacent(i, j) {
                        Mark::None
                    } else if directed[i][j] {
                        Mark::Forward
                    } else if directed[j][i] {
                        Mark::Backward
                    } else {
                        Mark::Undirected
                    }
                })
                .collect()
        })
        .collect()
}

/// Structural Hamming distance between the equivalence classes (CPDAGs) of
/// two DAGs. Zero iff the DAGs are Markov equivalent.
pub fn cpdag_shd(a: &Adjacency, b: &Adjacency) -> usize {
    let (ca, cb) = (cpdag(a), cpdag(b));
    let n = a.n();
    let mut d = 0;
    for i in 0..n {
        for j in i + 1..n {
            if ca[i][j] != cb[i][j] {
                d += 1;
            }
        }
    }
    d
}

/// Jaccard similarity of the directed edge sets (1.0 for two empty graphs).
pub fn edge_jaccard(a: &Adjacency, b: &Adjacency) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.bytes().iter().zip(b.bytes()) {
        if *x != 0 && *y != 0 {
            inter += 1;
        }
        if *x != 0 || *y != 0 {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
