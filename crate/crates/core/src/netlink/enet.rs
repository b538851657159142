#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;

use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::rng::substream;

const STANDARDIZE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ElasticNetConfig {
    pub alpha: f64,
    pub n_lambda: usize,
    /// Smallest path value as a fraction of `λ_max`.
    pub lambda_min_ratio: f64,
    pub folds: usize,
    /// Stop when no coordinate moves by more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for ElasticNetConfig {
    fn default() -> Self {
        Self { alpha: 0.5, n_lambda: 100, lambda_min_ratio: 1e-3, folds: 10, tol: 1e-12, max_sweeps: 100_000, seed: 0 }
    }
}

pub fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Smallest `λ` at which every coefficient is zero.
pub fn lambda_max(x: &Matrix<f64>, y: &[f64], alpha: f64) -> f64 {
    let n = x.rows() as f64;
    (0..x.cols())
        .map(|j| (0..x.rows()).map(|r| x[(r, j)] * y[r]).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
        / alpha.max(1e-3)
}

/// Cyclic coordinate descent on `(1/2n)‖y − Xβ‖² + λ(α‖β‖₁ + (1−α)/2 ‖β‖²)`,
/// warm-started from `beta`.
fn coordinate_descent(x: &Matrix<f64>, y: &[f64], alpha: f64, lambda: f64, beta: &mut [f64], tol: f64, max_sweeps: usize) -> Result<()> {
    let (n, p) = x.shape();
    let nf = n as f64;
    let norms: Vec<f64> = (0..p).map(|j| (0..n).map(|r| x[(r, j)] * x[(r, j)]).sum::<f64>() / nf).collect();
    let mut resid: Vec<f64> = (0..n).map(|r| y[r] - (0..p).map(|j| x[(r, j)] * beta[j]).sum::<f64>()).collect();
    for _ in 0..max_sweeps {
        let mut moved = 0.0f64;
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let old = beta[j];
            let z = (0..n).map(|r| x[(r, j)] * resid[r]).sum::<f64>() / nf + norms[j] * old;
            let new = soft_threshold(z, lambda * alpha) / (norms[j] + lambda * (1.0 - alpha));
            if new != old {
                let d = new - old;
                for r in 0..n {
                    resid[r] -= x[(r, j)] * d;
                }
                beta[j] = new;
                moved = moved.max(d.abs());
            }
        }
        if moved < tol {
            return Ok(());
        }
    }
    bail!(Convergence, "coordinate descent did not converge in {max_sweeps} sweeps at lambda {lambda:e}")
}

fn check_standardized(x: &Matrix<f64>, y: &[f64]) -> Result<()> {
    let n = x.rows();
    if y.len() != n {
        bail!(Shape, "{n} rows but {} responses", y.len());
    }
    if n < 2 || x.cols() == 0 {
        bail!(Data, "elastic net needs at least two samples and one feature");
    }
    let nf = n as f64;
    for c in 0..x.cols() {
        let col = x.column(c);
        let mean = col.iter().sum::<f64>() / nf;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        if mean.abs() > STANDARDIZE_TOL || (var - 1.0).abs() > 1e-6 {
            bail!(Data, "column {c} is not standardized (mean {mean:e}, variance {var})");
        }
    }
    let ym = y.iter().sum::<f64>() / nf;
    if ym.abs() > STANDARDIZE_TOL * y.iter().map(|v| v.abs()).fold(1.0, f64::max) {
        bail!(Data, "response is not centred (mean {ym:e})");
    }
    Ok(())
}

/// Fit at a single `λ` on standardized `X` and centred `y`.
pub fn elastic_net_fit(x: &Matrix<f64>, y: &[f64], alpha: f64, lambda: f64) -> Result<Vec<f64>> {
    check_standardized(x, y)?;
    if !(0.0..=1.0).contains(&alpha) || !(lambda >= 0.0) {
        bail!(Range, "need alpha in [0, 1] and lambda >= 0 (alpha {alpha}, lambda {lambda})");
    }
    let cfg = ElasticNetConfig::default();
    let mut beta = vec![0.0; x.cols()];
    coordinate_descent(x, y, alpha, lambda, &mut beta, cfg.tol, cfg.max_sweeps)?;
    Ok(beta)
}

/// Largest violation of the coordinate-wise optimality conditions.
pub fn kkt_residual(x: &Matrix<f64>, y: &[f64], beta: &[f64], alpha: f64, lambda: f64) -> f64 {
    let (n, p) = x.shape();
    let nf = n as f64;
    let resid: Vec<f64> = (0..n).map(|r| y[r] - (0..p).map(|j| x[(r, j)] * beta[j]).sum::<f64>()).collect();
    (0..p)
        .map(|j| {
            let g = (0..n).map(|r| x[(r, j)] * resid[r]).sum::<f64>() / nf - lambda * (1.0 - alpha) * beta[j];
            if beta[j] != 0.0 {
                (g - lambda * alpha * beta[j].signum()).abs()
            } else {
                (g.abs() - lambda * alpha).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElasticNetCv {
    /// Decreasing log-spaced path.
    pub lambdas: Vec<f64>,
    pub cv_mse: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub best: usize,
    pub lambda: f64,
    /// Full-data coefficients at the chosen `λ`.
    pub beta: Vec<f64>,
}

/// `λ` chosen at the minimum K-fold CV mean squared error.
pub fn elastic_net_cv(x: &Matrix<f64>, y: &[f64], cfg: &ElasticNetConfig) -> Result<ElasticNetCv> {
    check_standardized(x, y)?;
    let n = x.rows();
    if cfg.folds < 2 || cfg.folds > n {
        bail!(Data, "cannot run {}-fold CV on {n} samples", cfg.folds);
    }
    if cfg.n_lambda == 0 || !(cfg.lambda_min_ratio > 0.0 && cfg.lambda_min_ratio < 1.0) {
        bail!(Data, "invalid lambda path settings");
    }
    let lmax = lambda_max(x, y, cfg.alpha);
    let steps = cfg.n_lambda.max(2) - 1;
    let lambdas: Vec<f64> = if lmax > 0.0 {
        (0..cfg.n_lambda).map(|k| lmax * cfg.lambda_min_ratio.powf(k as f64 / steps as f64)).collect()
    } else {
        vec![0.0]
    };

    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(cfg.seed, "enet-folds", 0));
    let mut fold_of = vec![0usize; n];
    for (k, &i) in idx.iter().enumerate() {
        fold_of[i] = k % cfg.folds;
    }
    let mut errs = vec![vec![0.0; cfg.folds]; lambdas.len()];
    for f in 0..cfg.folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let mut beta = vec![0.0; x.cols()];
        for (l, &lam) in lambdas.iter().enumerate() {
            coordinate_descent(&xt, &yt, cfg.alpha, lam, &mut beta, cfg.tol, cfg.max_sweeps)?;
            errs[l][f] = test
                .iter()
                .map(|&i| {
                    let e = y[i] - x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
                    e * e
                })
                .sum::<f64>()
                / test.len() as f64;
        }
    }
    let k = cfg.folds as f64;
    let cv_mse: Vec<f64> = errs.iter().map(|e| e.iter().sum::<f64>() / k).collect();
    let cv_se: Vec<f64> = errs
        .iter()
        .zip(&cv_mse)
        .map(|(e, m)| (e.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (k - 1.0)).sqrt() / k.sqrt())
        .collect();
    let best = (0..lambdas.len()).fold(0, |b, l| if cv_mse[l] < cv_mse[b] { l } else { b });
    let mut beta = vec![0.0; x.cols()];
    for &lam in &lambdas[..=best] {
        coordinate_descent(x, y, cfg.alpha, lam, &mut beta, cfg.tol, cfg.max_sweeps)?;
    }
    Ok(ElasticNetCv { lambda: lambdas[best], lambdas, cv_mse, cv_se, best, beta })
}
