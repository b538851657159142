//! Discrete-time survival head: bin construction, censored negative
//! log-likelihood, the risk score and concordance.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{bail, Error, Result};

pub const N_BINS: usize = 4;
const LOG_CLAMP: f64 = 1e-12;

/// Three cut points splitting follow-up time into four bins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinEdges(pub [f64; 3]);

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quartile cut points of the uncensored event times.
pub fn compute_bin_edges(times: &[f64], events: &[bool]) -> Result<BinEdges> {
    let mut ev: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    if ev.len() < N_BINS {
        return Err(Error::InsufficientEvents { needed: N_BINS, found: ev.len() });
    }
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(BinEdges([quantile_sorted(&ev, 0.25), quantile_sorted(&ev, 0.5), quantile_sorted(&ev, 0.75)]))
}

/// Number of edges strictly below `time`; censored times use the same rule.
pub fn assign_bin(time: f64, edges: &BinEdges) -> usize {
    edges.0.iter().filter(|&&e| time > e).count()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskOutput {
    pub logits: [f64; N_BINS],
    pub hazards: [f64; N_BINS],
    pub survival: [f64; N_BINS],
    pub risk: f64,
}

impl RiskOutput {
    pub fn from_logits(logits: &[f64]) -> Self {
        assert_eq!(logits.len(), N_BINS, "risk head expects {N_BINS} logits");
        let mut out = Self { logits: [0.0; N_BINS], hazards: [0.0; N_BINS], survival: [0.0; N_BINS], risk: 0.0 };
        let mut s = 1.0;
        for k in 0..N_BINS {
            out.logits[k] = logits[k];
            out.hazards[k] = sigmoid(logits[k]);
            s *= 1.0 - out.hazards[k];
            out.survival[k] = s;
        }
        out.risk = -out.survival.iter().sum::<f64>();
        out
    }
}

/// `−Σ_k S_k` with `S_k = Π_{j≤k} (1 − σ(logit_j))`.
pub fn risk_score(logits: &[f64]) -> f64 {
    RiskOutput::from_logits(logits).risk
}

/// Censored discrete-time NLL and its gradient with respect to the logits.
///
/// With `S₋₁ ≡ 1`: `L = −c·log S_Y − (1−c)·(log S_{Y−1} + log h_Y)`, logs
/// clamped at `1e-12` (a clamped term contributes no gradient).
pub fn survival_nll_grad(logits: &[f64], bin: usize, censored: bool) -> (f64, [f64; N_BINS]) {
    assert!(bin < N_BINS, "bin {bin} out of range");
    let r = RiskOutput::from_logits(logits);
    let mut grad = [0.0; N_BINS];
    let mut loss = 0.0;
    // −log S_k: d/dlogit_j = h_j for j ≤ k.
    let neg_log_surv = |k: Option<usize>, grad: &mut [f64; N_BINS]| -> f64 {
        let Some(k) = k else { return 0.0 };
        let s = r.survival[k];
        if s <= LOG_CLAMP {
            return -LOG_CLAMP.ln();
        }
        for j in 0..=k {
            grad[j] += r.hazards[j];
        }
        -s.ln()
    };
    if censored {
        loss += neg_log_surv(Some(bin), &mut grad);
    } else {
        loss += neg_log_surv(bin.checked_sub(1), &mut grad);
        let h = r.hazards[bin];
        if h <= LOG_CLAMP {
            loss -= LOG_CLAMP.ln();
        } else {
            loss -= h.ln();
            grad[bin] -= 1.0 - h;
        }
    }
    (loss, grad)
}

pub fn survival_nll(logits: &[f64], bin: usize, censored: bool) -> f64 {
    survival_nll_grad(logits, bin, censored).0
}

/// Concordance counts: (concordant + ½·tied, comparable).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PairCounts {
    pub concordant: u64,
    pub tied: u64,
    pub comparable: u64,
}

impl PairCounts {
    pub fn value(&self) -> Option<f64> {
        (self.comparable > 0).then(|| (self.concordant as f64 + 0.5 * self.tied as f64) / self.comparable as f64)
    }
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }
    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }
    /// Count of inserted positions `< i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut s = 0;
        let mut i = i;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell pair counts in `O(n log n)`. A pair `(i, j)` is comparable when
/// `t_i < t_j`, `i` had the event and `t_i < horizon`.
pub fn harrell_counts(risks: &[f64], times: &[f64], events: &[bool], horizon: f64) -> PairCounts {
    let n = risks.len();
    assert!(times.len() == n && events.len() == n, "length mismatch");
    // Dense ranks of risk values.
    let mut by_risk: Vec<usize> = (0..n).collect();
    by_risk.sort_by(|&a, &b| risks[a].total_cmp(&risks[b]));
    let mut rank = vec![0usize; n];
    let mut next = 0;
    for w in 0..n {
        if w > 0 && risks[by_risk[w]] != risks[by_risk[w - 1]] {
            next += 1;
        }
        rank[by_risk[w]] = next;
    }
    let mut by_time: Vec<usize> = (0..n).collect();
    by_time.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut fw = Fenwick::new(next + 1);
    let mut inserted = 0u64;
    let mut counts = PairCounts::default();
    let mut end = n;
    while end > 0 {
        let t = times[by_time[end - 1]];
        let mut start = end - 1;
        while start > 0 && times[by_time[start - 1]] == t {
            start -= 1;
        }
        for &i in &by_time[start..end] {
            if events[i] && times[i] < horizon {
                let below = fw.prefix(rank[i]);
                let at = fw.prefix(rank[i] + 1) - below;
                counts.concordant += below;
                counts.tied += at;
                counts.comparable += inserted;
            }
        }
        for &i in &by_time[start..end] {
            fw.add(rank[i]);
            inserted += 1;
        }
        end = start;
    }
    counts
}

/// Harrell's C: higher risk should mean shorter survival.
pub fn concordance_index(risks: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    harrell_counts(risks, times, events, f64::INFINITY)
        .value()
        .ok_or_else(|| Error::Undefined("no comparable pairs".into()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CindexPoint {
    pub horizon: f64,
    /// `None` when no pair is comparable before the horizon.
    pub cindex: Option<f64>,
}

/// C-index restricted to pairs whose earlier time falls before each horizon.
pub fn time_dependent_cindex(risks: &[f64], times: &[f64], events: &[bool], horizons: &[f64]) -> Result<Vec<CindexPoint>> {
    if horizons.windows(2).any(|w| w[1] < w[0]) {
        bail!(Data, "horizons must be ascending");
    }
    Ok(horizons
        .iter()
        .map(|&h| CindexPoint { horizon: h, cindex: harrell_counts(risks, times, events, h).value() })
        .collect())
}
