#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::special::student_t_two_sided_p;

const MIN_SAMPLES: usize = 5;

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn t_pvalue(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    student_t_two_sided_p(rho * (df / (1.0 - rho * rho)).sqrt(), df)
}

/// Spearman's rho and its t-approximation p-value; `None` for a constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<(f64, f64)>> {
    if a.len() != b.len() {
        bail!(Shape, "spearman of lengths {} and {}", a.len(), b.len());
    }
    if a.len() < MIN_SAMPLES {
        bail!(Data, "spearman needs at least {MIN_SAMPLES} samples, got {}", a.len());
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)).map(|r| (r, t_pvalue(r, a.len()))))
}

/// Column-by-column correlations; undefined entries are NaN and their
/// zero-variance columns are listed.
#[derive(Clone, Debug, PartialEq)]
pub struct SpearmanMatrix {
    pub rho: Matrix<f64>,
    pub p: Matrix<f64>,
    pub constant_x: Vec<usize>,
    pub constant_y: Vec<usize>,
}

pub fn spearman_matrix(x: &Matrix<f64>, y: &Matrix<f64>) -> Result<SpearmanMatrix> {
    let n = x.rows();
    if y.rows() != n {
        bail!(Shape, "{n} samples in X but {} in Y", y.rows());
    }
    if n < MIN_SAMPLES {
        bail!(Data, "spearman needs at least {MIN_SAMPLES} samples, got {n}");
    }
    if !x.is_finite() || !y.is_finite() {
        bail!(Data, "non-finite value in correlation input");
    }
    let rank_cols = |m: &Matrix<f64>| -> Vec<Vec<f64>> { (0..m.cols()).map(|c| average_ranks(&m.column(c))).collect() };
    let rx = rank_cols(x);
    let ry = rank_cols(y);
    let is_const = |r: &Vec<f64>| r.iter().all(|&v| v == r[0]);
    let mut out = SpearmanMatrix {
        rho: Matrix::filled(x.cols(), y.cols(), f64::NAN),
        p: Matrix::filled(x.cols(), y.cols(), f64::NAN),
        constant_x: (0..rx.len()).filter(|&c| is_const(&rx[c])).collect(),
        constant_y: (0..ry.len()).filter(|&c| is_const(&ry[c])).collect(),
    };
    for (i, a) in rx.iter().enumerate() {
        for (j, b) in ry.iter().enumerate() {
            if let Some(r) = pearson(a, b) {
                out.rho[(i, j)] = r;
                out.p[(i, j)] = t_pvalue(r, n);
            }
        }
    }
    Ok(out)
}

/// Benjamini–Hochberg adjusted p-values, in input order.
pub fn bh_fdr(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        bail!(Range, "p-value {v} outside [0, 1]");
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for k in (0..m).rev() {
        let i = order[k];
        running = running.min(p[i] * (m as f64 / (k + 1) as f64));
        q[i] = running;
    }
    Ok(q)
}

/// Centres each column and scales it to unit population standard deviation.
/// Constant columns are rejected.
pub fn standardize_columns(x: &Matrix<f64>) -> Result<Matrix<f64>> {
    let n = x.rows() as f64;
    let mut out = x.clone();
    for c in 0..x.cols() {
        let col = x.column(c);
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        if !(sd > 0.0) {
            bail!(Degenerate, "column {c} is constant");
        }
        for r in 0..x.rows() {
            out[(r, c)] = (x[(r, c)] - mean) / sd;
        }
    }
    Ok(out)
}
