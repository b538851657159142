#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;

use super::check_survival;
use super::km::km_fit;
use crate::error::{bail, Result};
use crate::special::Z_975;
use crate::survival::quantile_sorted;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RiskGroup {
    Low,
    High,
}

impl RiskGroup {
    pub fn name(self) -> &'static str {
        match self {
            RiskGroup::Low => "low",
            RiskGroup::High => "high",
        }
    }
}

/// `risk > median` is high, everything else low.
pub fn median_stratify(risks: &[f64]) -> Result<(f64, Vec<RiskGroup>)> {
    if risks.len() < 2 {
        bail!(Data, "stratification needs at least two patients");
    }
    if risks.iter().any(|r| !r.is_finite()) {
        bail!(Data, "non-finite risk score");
    }
    if risks.iter().all(|&r| r == risks[0]) {
        bail!(Degenerate, "all risk scores are equal");
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = quantile_sorted(&sorted, 0.5);
    Ok((median, risks.iter().map(|&r| if r > median { RiskGroup::High } else { RiskGroup::Low }).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationPoint {
    pub group: usize,
    pub n: usize,
    pub mean_predicted: f64,
    /// Kaplan–Meier survival at the horizon within the group.
    pub observed: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationCurve {
    pub points: Vec<CalibrationPoint>,
    /// Quantile groups that held no patient.
    pub skipped: Vec<usize>,
}

/// Groups patients by type-7 quantiles of their predicted survival at the
/// horizon; group `g` holds predictions in `(q_g, q_{g+1}]`, the first also
/// holding the minimum.
pub fn calibration_curve(
    predicted: &[f64],
    times: &[f64],
    events: &[bool],
    horizon: f64,
    n_groups: usize,
) -> Result<CalibrationCurve> {
    check_survival(times, events)?;
    if predicted.len() != times.len() {
        bail!(Shape, "{} predictions for {} patients", predicted.len(), times.len());
    }
    if predicted.iter().any(|p| !(0.0..=1.0).contains(p)) {
        bail!(Range, "predicted probabilities must lie in [0, 1]");
    }
    if n_groups == 0 || predicted.is_empty() {
        bail!(Data, "calibration needs patients and at least one group");
    }
    let mut sorted = predicted.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let cuts: Vec<f64> = (1..n_groups).map(|g| quantile_sorted(&sorted, g as f64 / n_groups as f64)).collect();
    let mut members = vec![Vec::new(); n_groups];
    for (i, &p) in predicted.iter().enumerate() {
        members[cuts.iter().filter(|&&c| p > c).count()].push(i);
    }
    let mut curve = CalibrationCurve { points: Vec::new(), skipped: Vec::new() };
    for (g, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            curve.skipped.push(g);
            continue;
        }
        let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
        let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
        let km = km_fit(&t, &e)?;
        let observed = km.survival_at(horizon);
        let half = Z_975 * km.variance_at(horizon).sqrt();
        curve.points.push(CalibrationPoint {
            group: g,
            n: idx.len(),
            mean_predicted: idx.iter().map(|&i| predicted[i]).sum::<f64>() / idx.len() as f64,
            observed,
            lo: (observed - half).max(0.0),
            hi: (observed + half).min(1.0),
        });
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcaRow {
    pub threshold: f64,
    pub model: f64,
    pub treat_all: f64,
    pub treat_none: f64,
}

/// Net benefit `TP/n − FP/n · p/(1−p)` where patients with predicted event
/// probability `≥ p` are treated and their true/false positives come from
/// the Kaplan–Meier event probability at the horizon among them.
/// Thresholds outside `(0, 1)` are skipped.
pub fn dca_curve(predicted: &[f64], times: &[f64], events: &[bool], horizon: f64, thresholds: &[f64]) -> Result<Vec<DcaRow>> {
    check_survival(times, events)?;
    if predicted.len() != times.len() {
        bail!(Shape, "{} predictions for {} patients", predicted.len(), times.len());
    }
    if predicted.iter().any(|p| !(0.0..=1.0).contains(p)) {
        bail!(Range, "predicted probabilities must lie in [0, 1]");
    }
    let n = times.len() as f64;
    let prevalence = 1.0 - km_fit(times, events)?.survival_at(horizon);
    let mut rows = Vec::new();
    for &p in thresholds.iter().filter(|&&p| p > 0.0 && p < 1.0) {
        let odds = p / (1.0 - p);
        let idx: Vec<usize> = (0..predicted.len()).filter(|&i| predicted[i] >= p).collect();
        let model = if idx.is_empty() {
            0.0
        } else {
            let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
            let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
            let s = km_fit(&t, &e)?.survival_at(horizon);
            let k = idx.len() as f64;
            (1.0 - s) * k / n - s * k / n * odds
        };
        rows.push(DcaRow { threshold: p, model, treat_all: prevalence - (1.0 - prevalence) * odds, treat_none: 0.0 });
    }
    Ok(rows)
}
