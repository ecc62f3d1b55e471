use std::collections::HashMap;

use crate::causal::bic::BicScorer;
use crate::dag::Adjacency;

/// Refine `start` by order-based search from several initial orders (the
/// start's own topological order, regression-R² ascending, and the order of
/// a greedy climb from the empty graph), then polish each result with
/// [`hill_climb`]. Returns the lowest-BIC candidate; the plain climb from
/// `start` is always among them, so the result never scores worse.
pub(crate) fn refine(start: &Adjacency, scorer: &BicScorer, max_moves: usize) -> Adjacency {
    let n = start.n();
    let mut candidates = vec![hill_climb(start, scorer, max_moves)];
    let mut search = OrderSearch::new(scorer);
    let greedy = hill_climb(&Adjacency::empty(n), scorer, max_moves);
    for order in [topological_order(start), r2_order(scorer), topological_order(&greedy)] {
        let found = search.insertion_search(order);
        candidates.push(hill_climb(&search.dag(&found), scorer, max_moves));
    }
    let score = |a: &Adjacency| scorer.score_unchecked(a).value;
    let mut best = candidates.swap_remove(0);
    let mut best_score = score(&best);
    for c in candidates {
        let s = score(&c);
        if s < best_score - 1e-9 * best_score.abs().max(1.0) {
            best = c;
            best_score = s;
        }
    }
    best
}

/// Kahn's algorithm, smallest index first among ready nodes.
pub(crate) fn topological_order(adj: &Adjacency) -> Vec<usize> {
    let n = adj.n();
    let mut indegree: Vec<usize> = (0..n).map(|j| adj.parents(j).len()).collect();
    let mut order = Vec::with_capacity(n);
    let mut done = vec![false; n];
    while order.len() < n {
        let Some(next) = (0..n).find(|&j| !done[j] && indegree[j] == 0) else {
            // cyclic input: append the rest by index
            order.extend((0..n).filter(|&j| !done[j]));
            break;
        };
        done[next] = true;
        order.push(next);
        for c in adj.children(next) {
            indegree[c] -= 1;
        }
    }
    order
}

/// Nodes by ascending R² of the regression on all other nodes. In linear
/// models this tends to follow the causal order even after standardisation.
pub(crate) fn r2_order(scorer: &BicScorer) -> Vec<usize> {
    let n = scorer.n_features();
    let mut r2: Vec<(f64, usize)> = (0..n)
        .map(|j| {
            let others: Vec<usize> = (0..n).filter(|&k| k != j).collect();
            let total = scorer.rss(j, &[]).0;
            let r = if total > 0.0 { 1.0 - scorer.rss(j, &others).0 / total } else { 0.0 };
            (r, j)
        })
        .collect();
    r2.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    r2.into_iter().map(|(_, j)| j).collect()
}

/// Search over topological orders. For a fixed order each node takes the
/// parent set found by greedy forward/backward BIC selection among its
/// predecessors; orders move by relocating one node at a time.
pub(crate) struct OrderSearch<'a> {
    scorer: &'a BicScorer,
    cache: HashMap<(usize, Vec<u8>), (f64, Vec<usize>)>,
}

impl<'a> OrderSearch<'a> {
    pub(crate) fn new(scorer: &'a BicScorer) -> Self {
        Self { scorer, cache: HashMap::new() }
    }

    fn parents(&mut self, j: usize, preds: &[usize]) -> (f64, Vec<usize>) {
        let mut key = vec![0u8; self.scorer.n_features()];
        for &p in preds {
            key[p] = 1;
        }
        if let Some(hit) = self.cache.get(&(j, key.clone())) {
            return hit.clone();
        }
        let local = |ps: &[usize]| self.scorer.local(j, ps).0;
        let mut cur: Vec<usize> = Vec::new();
        let mut score = local(&cur);
        loop {
            let tol = 1e-9 * score.abs().max(1.0);
            let mut best: Option<(f64, Vec<usize>)> = None;
            let mut consider = |v: f64, w: Vec<usize>| {
                if v < score - tol && best.as_ref().is_none_or(|b| v < b.0) {
                    best = Some((v, w));
                }
            };
            for &c in preds {
                if !cur.contains(&c) {
                    let mut w = cur.clone();
                    w.push(c);
                    w.sort_unstable();
                    consider(local(&w), w);
                }
            }
            for &c in &cur {
                let w: Vec<usize> = cur.iter().copied().filter(|&x| x != c).collect();
                consider(local(&w), w);
            }
            match best {
                Some((v, w)) => {
                    score = v;
                    cur = w;
                }
                None => break,
            }
        }
        self.cache.insert((j, key), (score, cur.clone()));
        (score, cur)
    }

    fn node_score(&mut self, order: &[usize], k: usize) -> f64 {
        self.parents(order[k], &order[..k]).0
    }

    /// Relocate single nodes while any relocation lowers the total score.
    pub(crate) fn insertion_search(&mut self, mut order: Vec<usize>) -> Vec<usize> {
        let n = order.len();
        const MAX_PASSES: usize = 200;
        for _ in 0..MAX_PASSES {
            let mut improved = false;
            for from in 0..n {
                let mut best: Option<(f64, Vec<usize>)> = None;
                for to in 0..n {
                    if to == from {
                        continue;
                    }
                    let mut moved = order.clone();
                    let v = moved.remove(from);
                    moved.insert(to, v);
                    let (lo, hi) = (from.min(to), from.max(to));
                    let mut delta = 0.0;
                    let mut scale = 0.0f64;
                    for k in lo..=hi {
                        let old = self.node_score(&order, k);
                        delta += self.node_score(&moved, k) - old;
                        scale += old.abs();
                    }
                    if delta < -1e-9 * scale.max(1.0) && best.as_ref().is_none_or(|b| delta < b.0) {
                        best = Some((delta, moved));
                    }
                }
                if let Some((_, moved)) = best {
                    order = moved;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        order
    }

    pub(crate) fn dag(&mut self, order: &[usize]) -> Adjacency {
        let mut adj = Adjacency::empty(order.len());
        for k in 0..order.len() {
            for p in self.parents(order[k], &order[..k]).1 {
                adj.set(p, order[k], true);
            }
        }
        adj
    }
}

/// Greedy BIC descent over single-edge additions, deletions and reversals
/// that keep the graph acyclic. Takes the best strictly improving move
/// until none is left or `max_moves` is reached.
pub(crate) fn hill_climb(start: &Adjacency, scorer: &BicScorer, max_moves: usize) -> Adjacency {
    let n = start.n();
    let mut g = start.clone();
    let mut local: Vec<f64> = (0..n).map(|j| scorer.local(j, &g.parents(j)).0).collect();
    for _ in 0..max_moves {
        let reach = g.reachability();
        let total: f64 = local.iter().sum();
        let tol = 1e-9 * total.abs().max(1.0);
        let mut best: Option<(f64, usize, usize, Move)> = None;
        let mut consider = |delta: f64, i: usize, j: usize, m: Move| {
            if delta < -tol && best.as_ref().is_none_or(|b| delta < b.0) {
                best = Some((delta, i, j, m));
            }
        };
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pj = g.parents(j);
                if g.has(i, j) {
                    let without: Vec<usize> = pj.iter().copied().filter(|&p| p != i).collect();
                    let d_del = scorer.local(j, &without).0 - local[j];
                    consider(d_del, i, j, Move::Delete);
                    if reverses_safely(&g, i, j) {
                        let mut pi = g.parents(i);
                        pi.push(j);
                        pi.sort_unstable();
                        let d_rev = d_del + scorer.local(i, &pi).0 - local[i];
                        consider(d_rev, i, j, Move::Reverse);
                    }
                } else if !reach[j][i] {
                    let mut with = pj.clone();
                    with.push(i);
                    with.sort_unstable();
                    consider(scorer.local(j, &with).0 - local[j], i, j, Move::Add);
                }
            }
        }
        let Some((_, i, j, m)) = best else { break };
        match m {
            Move::Add => g.set(i, j, true),
            Move::Delete => g.set(i, j, false),
            Move::Reverse => {
                g.set(i, j, false);
                g.set(j, i, true);
            }
        }
        local[i] = scorer.local(i, &g.parents(i)).0;
        local[j] = scorer.local(j, &g.parents(j)).0;
    }
    g
}

#[derive(Clone, Copy)]
enum Move {
    Add,
    Delete,
    Reverse,
}

/// Reversing i→j is safe unless another directed path i ⇝ j exists.
fn reverses_safely(g: &Adjacency, i: usize, j: usize) -> bool {
    let mut seen = vec![false; g.n()];
    let mut stack: Vec<usize> = g.children(i).into_iter().filter(|&c| c != j).collect();
    while let Some(u) = stack.pop() {
        if u == j {
            return false;
        }
        if std::mem::replace(&mut seen[u], true) {
            continue;
        }
        stack.extend(g.children(u).into_iter().filter(|&v| !seen[v]));
    }
    true
}
