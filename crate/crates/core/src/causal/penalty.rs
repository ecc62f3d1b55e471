use nalgebra::DMatrix;

use crate::dag::Adjacency;

/// `trace(exp(U ∘ U)) − n`: zero exactly on acyclic graphs, positive
/// otherwise (each closed walk of length k contributes 1/k!).
pub fn acyclicity_penalty(adj: &Adjacency) -> f64 {
    let n = adj.n();
    if n == 0 {
        return 0.0;
    }
    let m = DMatrix::from_fn(n, n, |i, j| if adj.has(i, j) { 1.0 } else { 0.0 });
    let e = m.exp();
    (e.trace() - n as f64).max(0.0)
}
