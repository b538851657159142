use alloc::vec;
use alloc::vec::Vec;

use super::check_survival;
use crate::error::{bail, Error, Result};
use crate::linalg::{solve_spd, Matrix};
use crate::special::chi2_sf;

#[derive(Clone, Debug, PartialEq)]
pub struct LogRank {
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    /// Hypergeometric covariance of `O − E` over all groups.
    pub variance: Matrix<f64>,
}

/// k-sample log-rank test; `groups[i]` is the 0-based group of patient `i`.
pub fn logrank_test(times: &[f64], events: &[bool], groups: &[usize]) -> Result<LogRank> {
    check_survival(times, events)?;
    if groups.len() != times.len() {
        bail!(Shape, "{} group labels for {} patients", groups.len(), times.len());
    }
    let k = groups.iter().max().map_or(0, |&g| g + 1);
    let mut sizes = vec![0usize; k];
    for &g in groups {
        sizes[g] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        bail!(Data, "log-rank needs at least two non-empty groups");
    }
    if !events.iter().any(|&e| e) {
        bail!(Undefined, "log-rank needs at least one event");
    }

    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk = sizes.clone();
    let mut observed = vec![0.0; k];
    let mut expected = vec![0.0; k];
    let mut var = Matrix::zeros(k, k);
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut j = i;
        let mut d_g = vec![0usize; k];
        let mut leaving = vec![0usize; k];
        while j < order.len() && times[order[j]] == t {
            let p = order[j];
            leaving[groups[p]] += 1;
            d_g[groups[p]] += events[p] as usize;
            j += 1;
        }
        let d: usize = d_g.iter().sum();
        let n: usize = at_risk.iter().sum();
        if d > 0 {
            let (df, nf) = (d as f64, n as f64);
            let spread = if n > 1 { (nf - df) / (nf - 1.0) } else { 0.0 };
            for a in 0..k {
                let pa = at_risk[a] as f64 / nf;
                observed[a] += d_g[a] as f64;
                expected[a] += df * pa;
                for b in 0..k {
                    let pb = at_risk[b] as f64 / nf;
                    let cov = if a == b { pa * (1.0 - pa) } else { -pa * pb };
                    var[(a, b)] += df * cov * spread;
                }
            }
        }
        for g in 0..k {
            at_risk[g] -= leaving[g];
        }
        i = j;
    }

    // drop empty groups, then the last remaining one, to get a full-rank system
    let kept: Vec<usize> = (0..k).filter(|&g| sizes[g] > 0).collect();
    let free = &kept[..kept.len() - 1];
    let m = free.len();
    let v = Matrix::from_fn(m, m, |a, b| var[(free[a], free[b])]);
    let diff: Vec<f64> = free.iter().map(|&g| observed[g] - expected[g]).collect();
    let undefined = || Error::Undefined("log-rank variance is zero".into());
    if (0..m).any(|a| !(v[(a, a)] > 1e-300)) {
        return Err(undefined());
    }
    let sol = solve_spd(&v, &diff).map_err(|_| undefined())?;
    let chi2 = diff.iter().zip(&sol).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    Ok(LogRank { chi2, df: m, p: chi2_sf(chi2, m as f64), observed, expected, variance: var })
}
