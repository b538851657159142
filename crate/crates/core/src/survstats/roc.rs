use alloc::vec::Vec;

use super::check_survival;
use super::km::km_fit;
use crate::error::{bail, Result};

/// Cumulative/dynamic AUC at `horizon` with inverse-probability-of-censoring
/// weights. Cases have an event at or before the horizon and are weighted by
/// `1/Ĝ(T⁻)`; controls are still at risk after it and share the weight
/// `1/Ĝ(horizon)`, which cancels. Higher marker means higher risk.
pub fn timeroc_auc(marker: &[f64], times: &[f64], events: &[bool], horizon: f64) -> Result<f64> {
    check_survival(times, events)?;
    if marker.len() != times.len() {
        bail!(Shape, "{} marker values for {} patients", marker.len(), times.len());
    }
    if marker.iter().any(|m| !m.is_finite()) {
        bail!(Data, "non-finite marker value");
    }
    let censored: Vec<bool> = events.iter().map(|e| !e).collect();
    let mut controls: Vec<f64> = Vec::new();
    let mut cases: Vec<(f64, f64)> = Vec::new();
    for i in 0..times.len() {
        if times[i] > horizon {
            controls.push(marker[i]);
        } else if events[i] {
            cases.push((marker[i], 0.0));
        }
    }
    if cases.is_empty() || controls.is_empty() {
        bail!(Undefined, "time-ROC at {horizon} needs cases and controls ({} cases, {} controls)", cases.len(), controls.len());
    }
    let g = km_fit(times, &censored)?;
    let mut k = 0;
    for i in 0..times.len() {
        if times[i] <= horizon && events[i] {
            let gi = g.survival_before(times[i]);
            if !(gi > 0.0) {
                bail!(Undefined, "censoring survival is zero before {}", times[i]);
            }
            cases[k].1 = 1.0 / gi;
            k += 1;
        }
    }
    controls.sort_by(|a, b| a.total_cmp(b));
    let nc = controls.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(m, w) in &cases {
        let below = controls.partition_point(|&c| c < m);
        let at_or_below = controls.partition_point(|&c| c <= m);
        num += w * (below as f64 + 0.5 * (at_or_below - below) as f64);
        den += w * nc;
    }
    Ok(num / den)
}
