#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::string::String;
use alloc::vec::Vec;

use super::cox::CoxFit;
use crate::error::{bail, Result};

const MAX_POINTS: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct NomogramVariable {
    pub name: String,
    pub beta: f64,
    pub lo: f64,
    pub hi: f64,
    /// End of the range with the lowest hazard; it scores 0 points.
    pub reference: f64,
}

impl NomogramVariable {
    pub fn points(&self, x: f64, scale: f64) -> f64 {
        MAX_POINTS * self.beta * (x - self.reference) / scale
    }
}

/// Points scale, per-variable mappings and the baseline at the reference
/// covariate vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NomogramModel {
    pub variables: Vec<NomogramVariable>,
    /// `max_j |β_j|·range_j`; 100 points correspond to this much linear predictor.
    pub scale: f64,
    pub fit: CoxFit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NomogramScore {
    pub points: Vec<f64>,
    pub total: f64,
    /// Linear predictor relative to the reference covariates.
    pub lp: f64,
    pub survival: Vec<f64>,
}

impl NomogramModel {
    /// Baseline cumulative hazard at the reference covariates.
    pub fn baseline_hazard(&self, t: f64) -> f64 {
        let shift: f64 = self.variables.iter().zip(&self.fit.means).map(|(v, m)| v.beta * (v.reference - m)).sum();
        self.fit.cumulative_hazard(t) * shift.exp()
    }

    pub fn lp_from_points(&self, total: f64) -> f64 {
        total * self.scale / MAX_POINTS
    }

    /// Survival probability at each horizon for a grid of total points.
    pub fn survival_table(&self, totals: &[f64], horizons: &[f64]) -> Vec<Vec<f64>> {
        totals
            .iter()
            .map(|&p| {
                let r = self.lp_from_points(p).exp();
                horizons.iter().map(|&t| (-self.baseline_hazard(t) * r).exp()).collect()
            })
            .collect()
    }
}

/// `ranges[i]` must bracket every value of covariate `i` seen in the fit.
pub fn nomogram_build(fit: &CoxFit, names: &[String], ranges: &[(f64, f64)]) -> Result<NomogramModel> {
    let p = fit.beta.len();
    if !fit.converged {
        bail!(Convergence, "nomogram needs a converged Cox fit");
    }
    if names.len() != p || ranges.len() != p {
        bail!(Shape, "{p} coefficients but {} names and {} ranges", names.len(), ranges.len());
    }
    let mut variables = Vec::with_capacity(p);
    for i in 0..p {
        let (lo, hi) = ranges[i];
        if !(lo < hi) || lo > fit.x_min[i] || hi < fit.x_max[i] {
            bail!(
                Range,
                "range [{lo}, {hi}] for {} does not bracket the observed [{}, {}]",
                names[i],
                fit.x_min[i],
                fit.x_max[i]
            );
        }
        let beta = fit.beta[i];
        variables.push(NomogramVariable { name: names[i].clone(), beta, lo, hi, reference: if beta >= 0.0 { lo } else { hi } });
    }
    let scale = variables.iter().map(|v| v.beta.abs() * (v.hi - v.lo)).fold(0.0, f64::max);
    if !(scale > 0.0) {
        bail!(Degenerate, "all coefficients are zero");
    }
    Ok(NomogramModel { variables, scale, fit: fit.clone() })
}

pub fn nomogram_score(model: &NomogramModel, x: &[f64], horizons: &[f64]) -> Result<NomogramScore> {
    if x.len() != model.variables.len() {
        bail!(Shape, "{} covariates for a {}-variable nomogram", x.len(), model.variables.len());
    }
    for (v, &xi) in model.variables.iter().zip(x) {
        if !(xi >= v.lo && xi <= v.hi) {
            bail!(Range, "{} = {xi} outside [{}, {}]", v.name, v.lo, v.hi);
        }
    }
    let points: Vec<f64> = model.variables.iter().zip(x).map(|(v, &xi)| v.points(xi, model.scale)).collect();
    let lp: f64 = model.variables.iter().zip(x).map(|(v, &xi)| v.beta * (xi - v.reference)).sum();
    let r = lp.exp();
    let survival = horizons.iter().map(|&t| (-model.baseline_hazard(t) * r).exp()).collect();
    Ok(NomogramScore { total: points.iter().sum(), points, lp, survival })
}
