#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec::Vec;

use super::check_survival;
use crate::error::{bail, Result};

/// Product-limit estimate evaluated at the distinct event times.
#[derive(Clone, Debug, PartialEq)]
pub struct KmCurve {
    pub times: Vec<f64>,
    /// `S(t)` just after each event time.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    /// Greenwood variance of `S(t)`.
    pub variance: Vec<f64>,
    /// Largest observed time, event or censored.
    pub last_time: f64,
}

impl KmCurve {
    /// Index of the last event time `≤ t`.
    fn step(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&x| x <= t);
        k.checked_sub(1)
    }

    pub fn survival_at(&self, t: f64) -> f64 {
        self.step(t).map_or(1.0, |k| self.survival[k])
    }

    /// Left limit `S(t⁻)`.
    pub fn survival_before(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x < t);
        if k == 0 { 1.0 } else { self.survival[k - 1] }
    }

    pub fn variance_at(&self, t: f64) -> f64 {
        self.step(t).map_or(0.0, |k| self.variance[k])
    }
}

/// Event counts and risk-set sizes at each distinct event time, ascending.
pub(crate) fn event_table(times: &[f64], events: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut out = Vec::new();
    let mut at_risk = times.len();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut j = i;
        let mut d = 0;
        while j < order.len() && times[order[j]] == t {
            d += events[order[j]] as usize;
            j += 1;
        }
        if d > 0 {
            out.push((t, d, at_risk));
        }
        at_risk -= j - i;
        i = j;
    }
    out
}

pub fn km_fit(times: &[f64], events: &[bool]) -> Result<KmCurve> {
    check_survival(times, events)?;
    if times.is_empty() {
        bail!(Data, "Kaplan-Meier needs at least one observation");
    }
    let table = event_table(times, events);
    let mut curve = KmCurve {
        times: Vec::with_capacity(table.len()),
        survival: Vec::with_capacity(table.len()),
        at_risk: Vec::with_capacity(table.len()),
        events: Vec::with_capacity(table.len()),
        variance: Vec::with_capacity(table.len()),
        last_time: times.iter().copied().fold(0.0, f64::max),
    };
    let mut s = 1.0;
    let mut greenwood = 0.0;
    for (t, d, n) in table {
        s *= 1.0 - d as f64 / n as f64;
        if d < n {
            greenwood += d as f64 / (n as f64 * (n - d) as f64);
        }
        curve.times.push(t);
        curve.survival.push(s);
        curve.at_risk.push(n);
        curve.events.push(d);
        curve.variance.push(s * s * greenwood);
    }
    Ok(curve)
}
