use alloc::vec::Vec;
use rand::Rng as _;

use super::roc::timeroc_auc;
use crate::error::{bail, Error, Result};
use crate::rng::substream;
use crate::survival::quantile_sorted;

pub const DEFAULT_RESAMPLES: usize = 500;
const MAX_REDRAWS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapCompare {
    /// `AUC_A − AUC_B` on the full sample.
    pub delta: f64,
    /// Percentile 95% interval (type-7 quantiles).
    pub lo: f64,
    pub hi: f64,
    pub deltas: Vec<f64>,
    /// Resamples discarded for lacking cases or controls.
    pub redrawn: usize,
}

/// Paired patient bootstrap of the time-ROC AUC difference. Resample `b`
/// draws from substream `("bootstrap", b)`, so every resample is a pure
/// function of the seed and its index.
pub fn bootstrap_auc_compare(
    marker_a: &[f64],
    marker_b: &[f64],
    times: &[f64],
    events: &[bool],
    horizon: f64,
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapCompare> {
    let n = times.len();
    if marker_a.len() != n || marker_b.len() != n {
        bail!(Shape, "markers must be defined on the same {n} patients");
    }
    if n_boot == 0 {
        bail!(Data, "need at least one resample");
    }
    let delta = timeroc_auc(marker_a, times, events, horizon)? - timeroc_auc(marker_b, times, events, horizon)?;
    let mut deltas = Vec::with_capacity(n_boot);
    let mut redrawn = 0;
    let (mut a, mut b, mut t, mut e) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for r in 0..n_boot {
        let mut rng = substream(seed, "bootstrap", r as u64);
        let mut tries = 0;
        let d = loop {
            a.clear();
            b.clear();
            t.clear();
            e.clear();
            for _ in 0..n {
                let i = rng.random_range(0..n);
                a.push(marker_a[i]);
                b.push(marker_b[i]);
                t.push(times[i]);
                e.push(events[i]);
            }
            match (timeroc_auc(&a, &t, &e, horizon), timeroc_auc(&b, &t, &e, horizon)) {
                (Ok(x), Ok(y)) => break x - y,
                (Err(Error::Undefined(_)), _) | (_, Err(Error::Undefined(_))) => {
                    redrawn += 1;
                    tries += 1;
                    if tries >= MAX_REDRAWS {
                        bail!(Undefined, "resample {r}: {MAX_REDRAWS} draws without cases and controls");
                    }
                }
                (Err(err), _) | (_, Err(err)) => return Err(err),
            }
        };
        deltas.push(d);
    }
    let mut sorted = deltas.clone();
    sorted.sort_by(|x, y| x.total_cmp(y));
    Ok(BootstrapCompare {
        delta,
        lo: quantile_sorted(&sorted, 0.025),
        hi: quantile_sorted(&sorted, 0.975),
        deltas,
        redrawn,
    })
}
