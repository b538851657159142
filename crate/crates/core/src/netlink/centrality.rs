#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::Matrix;

/// Stopping threshold on the max-normalized iterate; tighter than needed for
/// plotting so the result also agrees with a dense eigensolver.
pub const CENTRALITY_TOL: f64 = 1e-13;
const MAX_ITERS: usize = 10_000;

/// Components of the graph with an edge wherever the weight is positive,
/// largest first (ties by smallest member).
pub fn connected_components(adj: &Matrix<f64>) -> Vec<Vec<usize>> {
    let n = adj.rows();
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut k = 0;
        while k < comp.len() {
            let u = comp[k];
            for v in 0..n {
                if !seen[v] && adj[(u, v)] > 0.0 {
                    seen[v] = true;
                    comp.push(v);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    comps
}

/// Max-normalized Perron vector of a connected non-negative symmetric matrix.
/// Iterates `A + I`, which has the same eigenvectors but no `−λ` rival on
/// bipartite graphs.
pub fn principal_eigenvector(adj: &Matrix<f64>) -> Result<Vec<f64>> {
    let n = adj.rows();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let mut v = vec![1.0; n];
    for _ in 0..MAX_ITERS {
        let mut next: Vec<f64> = (0..n).map(|i| v[i] + (0..n).map(|j| adj[(i, j)] * v[j]).sum::<f64>()).collect();
        let top = next.iter().copied().fold(0.0, f64::max);
        if !(top > 0.0) || !top.is_finite() {
            bail!(Convergence, "power iteration collapsed");
        }
        for x in next.iter_mut() {
            *x /= top;
        }
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < CENTRALITY_TOL {
            return Ok(v);
        }
    }
    bail!(Convergence, "power iteration did not converge in {MAX_ITERS} iterations")
}

/// Eigenvector centrality scaled so the top node of the largest component
/// scores 1. Every other component gets its own max-normalized vector times
/// `|component| / |largest|`; isolated nodes score 0.
pub fn eigenvector_centrality(adj: &Matrix<f64>) -> Result<Vec<f64>> {
    let n = adj.rows();
    if adj.cols() != n {
        bail!(Shape, "adjacency must be square, got {}x{}", n, adj.cols());
    }
    for i in 0..n {
        for j in 0..n {
            let w = adj[(i, j)];
            if !(w >= 0.0) || !w.is_finite() || w != adj[(j, i)] {
                bail!(Data, "adjacency must be symmetric, finite and non-negative (entry {i},{j})");
            }
        }
    }
    let mut scores = vec![0.0; n];
    let comps = connected_components(adj);
    let Some(largest) = comps.first().map(|c| c.len()) else { return Ok(scores) };
    for comp in comps.iter().filter(|c| c.len() > 1) {
        let sub = Matrix::from_fn(comp.len(), comp.len(), |a, b| if a == b { 0.0 } else { adj[(comp[a], comp[b])] });
        let ratio = comp.len() as f64 / largest as f64;
        for (k, v) in principal_eigenvector(&sub)?.into_iter().enumerate() {
            scores[comp[k]] = v * ratio;
        }
    }
    Ok(scores)
}
