#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::check_survival;
use crate::error::{bail, Error, Result};
use crate::linalg::{cholesky, inverse_spd, solve_spd, Matrix};
use crate::special::{normal_two_sided_p, Z_975};

pub const MAX_NEWTON_ITERS: usize = 50;
const TOL: f64 = 1e-8;
const PROMOTE_P: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub wald_p: Vec<f64>,
    /// Partial log-likelihood at `beta` and at zero.
    pub loglik: f64,
    pub loglik_null: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Covariate means; the linear predictor and baseline are centred here.
    pub means: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    /// Breslow cumulative baseline hazard `(t, H₀(t))` at each event time.
    pub baseline: Vec<(f64, f64)>,
    pub n: usize,
    pub n_events: usize,
}

impl CoxFit {
    pub fn hr(&self) -> Vec<f64> {
        self.beta.iter().map(|b| b.exp()).collect()
    }

    /// 95% Wald interval for each hazard ratio.
    pub fn hr_ci(&self) -> Vec<(f64, f64)> {
        self.beta
            .iter()
            .zip(&self.se)
            .map(|(b, s)| ((b - Z_975 * s).exp(), (b + Z_975 * s).exp()))
            .collect()
    }

    /// `(x − means)·β`.
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.means).zip(&self.beta).map(|((x, m), b)| (x - m) * b).sum()
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        let k = self.baseline.partition_point(|&(s, _)| s <= t);
        if k == 0 { 0.0 } else { self.baseline[k - 1].1 }
    }

    /// `S₀(t)^{exp(lp)}` with `lp` centred at the covariate means.
    pub fn survival(&self, x: &[f64], t: f64) -> f64 {
        (-self.cumulative_hazard(t) * self.linear_predictor(x).exp()).exp()
    }
}

/// Risk-set sums over a design sorted by time, evaluated at `beta`.
struct Partial {
    loglik: f64,
    score: Vec<f64>,
    info: Matrix<f64>,
}

fn partial(order: &[usize], times: &[f64], events: &[bool], x: &Matrix<f64>, beta: &[f64]) -> Partial {
    let p = beta.len();
    let eta: Vec<f64> = (0..x.rows()).map(|i| x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = Matrix::<f64>::zeros(p, p);
    let mut out = Partial { loglik: 0.0, score: vec![0.0; p], info: Matrix::zeros(p, p) };
    // walk from the latest time so each risk set is a running sum
    let mut j = order.len();
    while j > 0 {
        let t = times[order[j - 1]];
        let mut i = j;
        while i > 0 && times[order[i - 1]] == t {
            i -= 1;
        }
        for &r in &order[i..j] {
            let w = (eta[r] - shift).exp();
            s0 += w;
            let xr = x.row(r);
            for a in 0..p {
                s1[a] += w * xr[a];
                for b in 0..p {
                    s2[(a, b)] += w * xr[a] * xr[b];
                }
            }
        }
        let d = order[i..j].iter().filter(|&&r| events[r]).count();
        if d > 0 {
            let df = d as f64;
            for &r in order[i..j].iter().filter(|&&r| events[r]) {
                out.loglik += eta[r];
                for a in 0..p {
                    out.score[a] += x[(r, a)];
                }
            }
            out.loglik -= df * (s0.ln() + shift);
            for a in 0..p {
                let ma = s1[a] / s0;
                out.score[a] -= df * ma;
                for b in 0..p {
                    out.info[(a, b)] += df * (s2[(a, b)] / s0 - ma * s1[b] / s0);
                }
            }
        }
        j = i;
    }
    out
}

/// Breslow partial log-likelihood, score and observed information at `beta`.
pub fn partial_likelihood(times: &[f64], events: &[bool], x: &Matrix<f64>, beta: &[f64]) -> (f64, Vec<f64>, Matrix<f64>) {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let p = partial(&order, times, events, x, beta);
    (p.loglik, p.score, p.info)
}

pub fn coxph_fit(times: &[f64], events: &[bool], x: &Matrix<f64>) -> Result<CoxFit> {
    check_survival(times, events)?;
    let (n, p) = x.shape();
    if n != times.len() {
        bail!(Shape, "{n} covariate rows for {} patients", times.len());
    }
    if p == 0 {
        bail!(Shape, "Cox model needs at least one covariate");
    }
    if !x.is_finite() {
        bail!(Data, "non-finite covariate value");
    }
    let n_events = events.iter().filter(|&&e| e).count();
    if n_events < p.max(1) {
        return Err(Error::InsufficientEvents { needed: p.max(1), found: n_events });
    }
    let means: Vec<f64> = (0..p).map(|c| x.column(c).iter().sum::<f64>() / n as f64).collect();
    let x_min: Vec<f64> = (0..p).map(|c| x.column(c).into_iter().fold(f64::INFINITY, f64::min)).collect();
    let x_max: Vec<f64> = (0..p).map(|c| x.column(c).into_iter().fold(f64::NEG_INFINITY, f64::max)).collect();
    if let Some(c) = (0..p).find(|&c| x_min[c] == x_max[c]) {
        bail!(Degenerate, "covariate {c} is constant");
    }
    let xc = Matrix::from_fn(n, p, |r, c| x[(r, c)] - means[c]);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut beta = vec![0.0; p];
    let mut cur = partial(&order, times, events, &xc, &beta);
    let loglik_null = cur.loglik;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_NEWTON_ITERS {
        iterations += 1;
        let step = solve_spd(&cur.info, &cur.score).map_err(|_| {
            Error::Convergence(alloc::format!(
                "information matrix singular at iteration {iterations} (beta = {beta:?}); likelihood may be monotone"
            ))
        })?;
        let mut scale = 1.0;
        let next = loop {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let fit = partial(&order, times, events, &xc, &cand);
            if fit.loglik.is_finite() && fit.loglik >= cur.loglik - 1e-12 * cur.loglik.abs().max(1.0) {
                break Some((cand, fit));
            }
            scale *= 0.5;
            if scale < 1e-10 {
                break None;
            }
        };
        let Some((cand, fit)) = next else {
            bail!(Convergence, "step halving failed at iteration {iterations} (beta = {beta:?})");
        };
        let delta = cand.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = cand;
        cur = fit;
        if delta < TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        bail!(
            Convergence,
            "Newton-Raphson did not converge in {MAX_NEWTON_ITERS} iterations (beta = {beta:?}, loglik = {}); likelihood may be monotone",
            cur.loglik
        );
    }
    if cholesky(&cur.info).is_err() {
        bail!(Convergence, "information matrix not positive definite at the solution");
    }
    let cov = inverse_spd(&cur.info)?;
    let se: Vec<f64> = (0..p).map(|a| cov[(a, a)].sqrt()).collect();
    let wald_p = beta.iter().zip(&se).map(|(b, s)| normal_two_sided_p(b / s)).collect();

    let lp: Vec<f64> = (0..n).map(|r| xc.row(r).iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
    let mut baseline = Vec::new();
    let mut risk_sum: f64 = lp.iter().map(|v| v.exp()).sum();
    let mut h = 0.0;
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let mut j = i;
        let mut d = 0usize;
        let mut leaving = 0.0;
        while j < n && times[order[j]] == t {
            d += events[order[j]] as usize;
            leaving += lp[order[j]].exp();
            j += 1;
        }
        if d > 0 {
            h += d as f64 / risk_sum;
            baseline.push((t, h));
        }
        risk_sum -= leaving;
        i = j;
    }

    Ok(CoxFit {
        beta,
        se,
        wald_p,
        loglik: cur.loglik,
        loglik_null,
        converged,
        iterations,
        means,
        x_min,
        x_max,
        baseline,
        n,
        n_events,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnivariableRow {
    pub name: String,
    pub beta: f64,
    pub hr: f64,
    pub hr_lo: f64,
    pub hr_hi: f64,
    pub p: f64,
    pub promoted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    pub univariable: Vec<UnivariableRow>,
    /// Names in the joint model, in input order.
    pub promoted: Vec<String>,
    /// `None` when no variable reached `p < 0.05` alone.
    pub joint: Option<CoxFit>,
}

/// The promotion rule: strictly below 0.05.
pub fn promotes(p: f64) -> bool {
    p < PROMOTE_P
}

/// Univariable screen, then one joint fit of every variable with Wald `p < 0.05`.
pub fn multivariable_pipeline(times: &[f64], events: &[bool], variables: &[(String, Vec<f64>)]) -> Result<PipelineResult> {
    if variables.is_empty() {
        bail!(Data, "pipeline needs at least one variable");
    }
    let mut univariable = Vec::with_capacity(variables.len());
    for (name, values) in variables {
        let fit = coxph_fit(times, events, &Matrix::from_vec(values.len(), 1, values.clone()))?;
        let (lo, hi) = fit.hr_ci()[0];
        univariable.push(UnivariableRow {
            name: name.clone(),
            beta: fit.beta[0],
            hr: fit.beta[0].exp(),
            hr_lo: lo,
            hr_hi: hi,
            p: fit.wald_p[0],
            promoted: promotes(fit.wald_p[0]),
        });
    }
    let keep: Vec<usize> = (0..variables.len()).filter(|&i| univariable[i].promoted).collect();
    let promoted: Vec<String> = keep.iter().map(|&i| variables[i].0.clone()).collect();
    let joint = if keep.is_empty() {
        None
    } else {
        let x = Matrix::from_fn(times.len(), keep.len(), |r, c| variables[keep[c]].1[r]);
        Some(coxph_fit(times, events, &x)?)
    };
    Ok(PipelineResult { univariable, promoted, joint })
}
