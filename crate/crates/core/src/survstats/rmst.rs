#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec::Vec;

use super::km::{km_fit, KmCurve};
use crate::error::{bail, Result};
use crate::special::{normal_two_sided_p, Z_975};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rmst {
    pub tau: f64,
    pub value: f64,
    /// Greenwood-type variance of the area.
    pub variance: f64,
    /// `τ` lies past the last observation; `S` was held at its final value.
    pub extrapolated: bool,
}

/// Area under the step function on `[0, τ]` and its variance
/// `Σ_{t_j ≤ τ} A_j² d_j / (n_j (n_j − d_j))` with `A_j = ∫_{t_j}^{τ} S`.
fn area(curve: &KmCurve, tau: f64) -> (f64, f64) {
    let steps = curve.times.partition_point(|&t| t <= tau);
    let mut prev_t = 0.0;
    let mut prev_s = 1.0;
    let mut total = 0.0;
    // tail[j] = area from times[j] to tau
    let mut pieces = Vec::with_capacity(steps + 1);
    for j in 0..steps {
        pieces.push(prev_s * (curve.times[j] - prev_t));
        prev_t = curve.times[j];
        prev_s = curve.survival[j];
    }
    pieces.push(prev_s * (tau - prev_t));
    for p in &pieces {
        total += p;
    }
    let mut var = 0.0;
    let mut tail = 0.0;
    for j in (0..steps).rev() {
        tail += pieces[j + 1];
        let (n, d) = (curve.at_risk[j], curve.events[j]);
        if n > d {
            var += tail * tail * d as f64 / (n as f64 * (n - d) as f64);
        }
    }
    (total, var)
}

pub fn rmst(times: &[f64], events: &[bool], tau: f64) -> Result<Rmst> {
    if !(tau > 0.0) || !tau.is_finite() {
        bail!(Range, "tau must be positive, got {tau}");
    }
    let curve = km_fit(times, events)?;
    let (value, variance) = area(&curve, tau);
    Ok(Rmst { tau, value, variance, extrapolated: tau > curve.last_time })
}

/// Difference `group 1 − group 0` with a normal-approximation interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmstComparison {
    pub tau: f64,
    pub group0: Rmst,
    pub group1: Rmst,
    pub estimate: f64,
    pub lci: f64,
    pub uci: f64,
    pub p: f64,
}

pub fn rmst_compare(times: &[f64], events: &[bool], in_group1: &[bool], tau: f64) -> Result<RmstComparison> {
    if in_group1.len() != times.len() {
        bail!(Shape, "{} group flags for {} patients", in_group1.len(), times.len());
    }
    let split = |want: bool| {
        let idx: Vec<usize> = (0..times.len()).filter(|&i| in_group1[i] == want).collect();
        let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
        let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
        rmst(&t, &e, tau)
    };
    let group0 = split(false)?;
    let group1 = split(true)?;
    let estimate = group1.value - group0.value;
    let se = (group0.variance + group1.variance).sqrt();
    let p = if se > 0.0 { normal_two_sided_p(estimate / se) } else if estimate == 0.0 { 1.0 } else { 0.0 };
    Ok(RmstComparison { tau, group0, group1, estimate, lci: estimate - Z_975 * se, uci: estimate + Z_975 * se, p })
}
