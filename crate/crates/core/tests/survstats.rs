use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tdam_core::rng::{substream, Rng};
use tdam_core::survival::concordance_index;
use tdam_core::survstats::*;
use tdam_core::{Error, Matrix};

/// Exponential event times with hazard `base·exp(lp)` and uniform censoring on `[0, cmax]`.
fn simulate(rng: &mut Rng, lp: &[f64], base: f64, cmax: f64) -> (Vec<f64>, Vec<bool>) {
    let mut times = Vec::new();
    let mut events = Vec::new();
    for &l in lp {
        let t: f64 = Exp::new(base * l.exp()).unwrap().sample(rng);
        let c = if cmax.is_finite() { rng.random_range(0.0..cmax) } else { f64::INFINITY };
        times.push(t.min(c));
        events.push(t <= c);
    }
    (times, events)
}

fn random_instance(rng: &mut Rng, n: usize, censor_p: f64, tie_grid: bool) -> (Vec<f64>, Vec<bool>) {
    (0..n)
        .map(|_| {
            let t = if tie_grid { rng.random_range(1..8) as f64 } else { rng.random_range(0.1..10.0) };
            (t, !rng.random_bool(censor_p))
        })
        .unzip()
}

/// Product-limit value at `t` from first principles.
fn km_oracle(times: &[f64], events: &[bool], t: f64) -> f64 {
    let mut ev: Vec<f64> = times.iter().zip(events).filter(|(s, &e)| e && **s <= t).map(|(s, _)| *s).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev.dedup();
    ev.iter()
        .map(|&u| {
            let n = times.iter().filter(|&&s| s >= u).count() as f64;
            let d = times.iter().zip(events).filter(|(s, &e)| e && **s == u).count() as f64;
            1.0 - d / n
        })
        .product()
}

fn rmst_oracle(times: &[f64], events: &[bool], tau: f64) -> f64 {
    let mut cuts: Vec<f64> = times.iter().copied().filter(|&t| t < tau).collect();
    cuts.push(0.0);
    cuts.push(tau);
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    cuts.windows(2).map(|w| km_oracle(times, events, w[0]) * (w[1] - w[0])).sum()
}

#[test]
fn km_examples() {
    let none = km_fit(&[1.0, 2.0, 3.0], &[false; 3]).unwrap();
    assert!(none.times.is_empty());
    assert_eq!(none.survival_at(10.0), 1.0);

    let all = km_fit(&[1.0, 2.0, 3.0], &[true; 3]).unwrap();
    for (s, want) in all.survival.iter().zip([2.0 / 3.0, 1.0 / 3.0, 0.0]) {
        assert!((s - want).abs() < 1e-15);
    }
    assert_eq!(all.survival_at(0.5), 1.0);

    let cens = km_fit(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
    assert!((cens.survival_at(1.0) - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(cens.survival_at(2.5), cens.survival_at(1.0));
    assert_eq!(cens.survival_at(3.0), 0.0);

    assert!(matches!(km_fit(&[], &[]), Err(Error::Data(_))));
}

#[test]
fn km_greenwood_by_hand() {
    // n = 4, events at 1 and 3, censored at 2 and 4
    let km = km_fit(&[1.0, 2.0, 3.0, 4.0], &[true, false, true, false]).unwrap();
    let s1 = 0.75;
    let s3 = 0.75 * 0.5;
    assert_eq!(km.survival, vec![s1, s3]);
    let v1 = s1 * s1 * (1.0 / (4.0 * 3.0));
    let v3 = s3 * s3 * (1.0 / (4.0 * 3.0) + 1.0 / (2.0 * 1.0));
    assert!((km.variance[0] - v1).abs() < 1e-15 && (km.variance[1] - v3).abs() < 1e-15);
}

#[test]
fn km_and_rmst_match_step_oracles() {
    let mut rng = substream(11, "km", 0);
    for inst in 0..100 {
        let (t, e) = random_instance(&mut rng, 1 + inst % 40, 0.3, inst % 2 == 0);
        let km = km_fit(&t, &e).unwrap();
        for probe in [0.0, 0.5, 1.0, 2.0, 3.3, 5.0, 7.0, 9.9, 12.0] {
            assert!((km.survival_at(probe) - km_oracle(&t, &e, probe)).abs() < 1e-12);
        }
        for w in km.survival.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for tau in [0.7, 3.0, 6.5, 15.0] {
            let r = rmst(&t, &e, tau).unwrap();
            assert!((r.value - rmst_oracle(&t, &e, tau)).abs() < 1e-12, "inst {inst} tau {tau}");
            assert!(r.value <= tau + 1e-12);
            let early_event = t.iter().zip(&e).any(|(s, &ev)| ev && *s < tau);
            assert_eq!(r.value == tau, !early_event);
        }
    }
}

#[test]
fn km_without_censoring_is_empirical() {
    let mut rng = substream(12, "km", 0);
    let (t, _) = random_instance(&mut rng, 50, 0.0, true);
    let km = km_fit(&t, &vec![true; 50]).unwrap();
    for probe in 0..9 {
        let frac = t.iter().filter(|&&s| s > probe as f64).count() as f64 / 50.0;
        assert!((km.survival_at(probe as f64) - frac).abs() < 1e-12);
    }
}

#[test]
fn rmst_examples() {
    let r = rmst(&[20.0, 30.0], &[false, false], 12.0).unwrap();
    assert_eq!(r.value, 12.0);
    assert!(!r.extrapolated);
    // S drops to 0.5 at t = 5
    let r = rmst(&[5.0, 20.0], &[true, false], 10.0).unwrap();
    assert!((r.value - 7.5).abs() < 1e-12);
    let r = rmst(&[5.0, 8.0], &[true, false], 10.0).unwrap();
    assert!(r.extrapolated);
    assert!((r.value - 7.5).abs() < 1e-12);
    assert!(matches!(rmst(&[1.0], &[true], 0.0), Err(Error::Range(_))));
}

#[test]
fn rmst_difference_interval() {
    let mut rng = substream(3, "rmst", 0);
    let lp: Vec<f64> = (0..400).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
    let (t, e) = simulate(&mut rng, &lp, 0.02, 120.0);
    let high: Vec<bool> = (0..400).map(|i| i % 2 == 1).collect();
    let c = rmst_compare(&t, &e, &high, 60.0).unwrap();
    assert!(c.estimate < 0.0 && c.uci < 0.0 && c.p < 0.05);
    assert!((c.estimate - (c.group1.value - c.group0.value)).abs() < 1e-12);
    assert!(((c.uci - c.lci) / 2.0 - 1.959963984540054 * (c.group0.variance + c.group1.variance).sqrt()).abs() < 1e-9);
}

#[test]
fn logrank_hand_table() {
    // A: 2, 4, 6+   B: 1, 3+, 5
    let t = [2.0, 4.0, 6.0, 1.0, 3.0, 5.0];
    let e = [true, true, false, true, false, true];
    let g = [0, 0, 0, 1, 1, 1];
    let lr = logrank_test(&t, &e, &g).unwrap();
    let e_a = 1.0 / 2.0 + 3.0 / 5.0 + 2.0 / 3.0 + 1.0 / 2.0;
    let v = 1.0 / 4.0 + 6.0 / 25.0 + 2.0 / 9.0 + 1.0 / 4.0;
    let chi2 = (2.0 - e_a) * (2.0 - e_a) / v;
    assert!((lr.expected[0] - e_a).abs() < 1e-10);
    assert!((lr.variance[(0, 0)] - v).abs() < 1e-10);
    assert!((lr.chi2 - chi2).abs() < 1e-10);
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(chi2);
    assert!((lr.p - p).abs() < 1e-10);
}

/// Two-group O − E and hypergeometric variance by scanning every distinct time.
fn logrank_oracle(t: &[f64], e: &[bool], g: &[usize]) -> f64 {
    let mut ts: Vec<f64> = t.iter().zip(e).filter(|(_, &ev)| ev).map(|(s, _)| *s).collect();
    ts.sort_by(|a, b| a.total_cmp(b));
    ts.dedup();
    let (mut oe, mut v) = (0.0, 0.0);
    for u in ts {
        let n = t.iter().filter(|&&s| s >= u).count() as f64;
        let n1 = (0..t.len()).filter(|&i| t[i] >= u && g[i] == 0).count() as f64;
        let d = (0..t.len()).filter(|&i| t[i] == u && e[i]).count() as f64;
        let d1 = (0..t.len()).filter(|&i| t[i] == u && e[i] && g[i] == 0).count() as f64;
        oe += d1 - d * n1 / n;
        if n > 1.0 {
            v += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
        }
    }
    oe * oe / v
}

#[test]
fn logrank_two_groups_is_squared_z() {
    let mut rng = substream(5, "logrank", 0);
    for inst in 0..100 {
        let (t, e) = random_instance(&mut rng, 10 + inst % 30, 0.3, inst % 3 == 0);
        let g: Vec<usize> = (0..t.len()).map(|i| i % 2).collect();
        let Ok(lr) = logrank_test(&t, &e, &g) else { continue };
        let want = logrank_oracle(&t, &e, &g);
        assert!((lr.chi2 - want).abs() < 1e-10 * want.max(1.0), "{} vs {want}", lr.chi2);
        assert_eq!(lr.df, 1);
    }
}

#[test]
fn logrank_edge_cases() {
    let t = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
    let e = [true, false, true, true, false, true];
    let lr = logrank_test(&t, &e, &[0, 0, 0, 1, 1, 1]).unwrap();
    assert!(lr.chi2 < 1e-20 && (lr.p - 1.0).abs() < 1e-9);

    let t: Vec<f64> = (1..=20).map(|i| i as f64).collect();
    let g: Vec<usize> = (0..20).map(|i| (i >= 10) as usize).collect();
    assert!(logrank_test(&t, &[true; 20], &g).unwrap().p < 0.05);

    let three = logrank_test(&t, &[true; 20], &(0..20).map(|i| i % 3).collect::<Vec<_>>()).unwrap();
    assert_eq!(three.df, 2);

    let err = logrank_test(&[1.0, 2.0], &[false, true], &[0, 1]).unwrap_err();
    assert!(matches!(err, Error::Undefined(_)), "{err:?}");
    assert!(logrank_test(&[1.0, 2.0], &[true, true], &[0, 0]).is_err());
    assert!(logrank_test(&[1.0, 2.0], &[false, false], &[0, 1]).is_err());
}

/// Breslow log partial likelihood and score for one covariate, O(n²).
fn cox_oracle(t: &[f64], e: &[bool], x: &[f64], beta: f64) -> (f64, f64) {
    let (mut ll, mut score) = (0.0, 0.0);
    for i in (0..t.len()).filter(|&i| e[i]) {
        let (mut s0, mut s1) = (0.0, 0.0);
        for j in (0..t.len()).filter(|&j| t[j] >= t[i]) {
            let w = (beta * x[j]).exp();
            s0 += w;
            s1 += w * x[j];
        }
        ll += beta * x[i] - s0.ln();
        score += x[i] - s1 / s0;
    }
    (ll, score)
}

fn grid_argmax(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut best = lo;
    for _ in 0..4 {
        let step = (hi - lo) / 200.0;
        let mut best_v = f64::NEG_INFINITY;
        for k in 0..=200 {
            let b = lo + k as f64 * step;
            let v = f(b);
            if v > best_v {
                best_v = v;
                best = b;
            }
        }
        lo = best - step;
        hi = best + step;
    }
    best
}

#[test]
fn cox_matches_grid_search() {
    let mut rng = substream(21, "cox", 0);
    let x: Vec<f64> = (0..500).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
    let lp: Vec<f64> = x.iter().map(|v| v * 2f64.ln()).collect();
    let (t, e) = simulate(&mut rng, &lp, 0.1, 30.0);
    let fit = coxph_fit(&t, &e, &Matrix::from_vec(500, 1, x.clone())).unwrap();
    let grid = grid_argmax(|b| cox_oracle(&t, &e, &x, b).0, -3.0, 3.0);
    assert!((fit.beta[0] - grid).abs() < 1e-3, "{} vs {grid}", fit.beta[0]);
    assert!((fit.beta[0] - 2f64.ln()).abs() < 3.0 * fit.se[0]);
    let (ll, score) = cox_oracle(&t, &e, &x, fit.beta[0]);
    assert!(score.abs() < 1e-6, "score {score}");
    assert!((ll - fit.loglik).abs() < 1e-8 * ll.abs());
    assert!(fit.loglik >= fit.loglik_null);
    assert!((fit.loglik_null - cox_oracle(&t, &e, &x, 0.0).0).abs() < 1e-8 * ll.abs());
    assert!(fit.converged && fit.se[0] > 0.0);
    assert!((fit.hr()[0] - fit.beta[0].exp()).abs() < 1e-15);
}

#[test]
fn cox_null_and_errors() {
    let t = [1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0];
    let e = [true, false, true, true, true, false, true, true];
    let x = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
    let fit = coxph_fit(&t, &e, &Matrix::from_vec(8, 1, x.to_vec())).unwrap();
    assert!(fit.beta[0].abs() < 3.0 * fit.se[0] && fit.beta[0].abs() < 1e-10);

    let constant = coxph_fit(&t, &e, &Matrix::filled(8, 1, 2.0)).unwrap_err();
    assert!(matches!(constant, Error::Degenerate(_)));

    // every event in the x = 1 group precedes every x = 0 time
    let t: Vec<f64> = (1..=10).map(|i| i as f64).collect();
    let x: Vec<f64> = (0..10).map(|i| (i < 5) as u8 as f64).collect();
    let sep = coxph_fit(&t, &[true; 10], &Matrix::from_vec(10, 1, x)).unwrap_err();
    assert!(matches!(sep, Error::Convergence(_)), "{sep:?}");

    let few = coxph_fit(&[1.0, 2.0, 3.0], &[true, false, false], &Matrix::from_fn(3, 2, |r, c| (r * c + r) as f64));
    assert!(matches!(few, Err(Error::InsufficientEvents { needed: 2, found: 1 })));
}

#[test]
fn cox_multivariate_score_and_scale_invariance() {
    let mut rng = substream(22, "cox", 0);
    let n = 300;
    let x = Matrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let lp: Vec<f64> = (0..n).map(|r| 0.8 * x[(r, 0)] - 0.5 * x[(r, 1)]).collect();
    let (t, e) = simulate(&mut rng, &lp, 0.1, 20.0);
    let fit = coxph_fit(&t, &e, &x).unwrap();
    let (_, score, _) = partial_likelihood(&t, &e, &x, &fit.beta);
    assert!(score.iter().all(|s| s.abs() < 1e-6), "{score:?}");

    let scaled = Matrix::from_fn(n, 3, |r, c| x[(r, c)] * [10.0, 0.1, 3.0][c]);
    let fit2 = coxph_fit(&t, &e, &scaled).unwrap();
    for c in 0..3 {
        let want = fit.beta[c] / [10.0, 0.1, 3.0][c];
        assert!((fit2.beta[c] - want).abs() < 1e-6 * want.abs().max(1.0));
    }
    let lp1: Vec<f64> = (0..n).map(|r| fit.linear_predictor(x.row(r))).collect();
    let lp2: Vec<f64> = (0..n).map(|r| fit2.linear_predictor(scaled.row(r))).collect();
    assert_eq!(concordance_index(&lp1, &t, &e).unwrap(), concordance_index(&lp2, &t, &e).unwrap());
}

#[test]
fn pipeline_promotes_only_signal() {
    let mut rng = substream(31, "pipeline", 0);
    let n = 300;
    let strong: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let (t, e) = simulate(&mut rng, &strong.iter().map(|v| 0.7 * v).collect::<Vec<_>>(), 0.1, 20.0);
    let vars = vec![("strong".to_string(), strong), ("noise".to_string(), noise)];
    let res = multivariable_pipeline(&t, &e, &vars).unwrap();
    assert_eq!(res.promoted, vec!["strong".to_string()]);
    assert_eq!(res.joint.as_ref().unwrap().beta.len(), 1);
    assert!(res.univariable[0].promoted && !res.univariable[1].promoted);
    assert!(!promotes(0.05) && promotes(0.049_999));
}

#[test]
fn pipeline_noise_is_calibrated() {
    let mut below = 0;
    let mut empty = 0;
    let trials = 200;
    for seed in 0..trials {
        let mut rng = substream(seed, "pipeline-noise", 0);
        let n = 150;
        let vars: Vec<(String, Vec<f64>)> =
            (0..2).map(|k| (format!("n{k}"), (0..n).map(|_| rng.sample(StandardNormal)).collect())).collect();
        let (t, e) = simulate(&mut rng, &vec![0.0; n], 0.1, 20.0);
        let res = multivariable_pipeline(&t, &e, &vars).unwrap();
        below += res.univariable.iter().filter(|r| r.p < 0.05).count();
        empty += res.joint.is_none() as usize;
    }
    // 400 null p-values: about 5% under 0.05, so about 90% of trials promote nothing
    let rate = below as f64 / (2 * trials) as f64;
    assert!((0.015..=0.09).contains(&rate), "false-positive rate {rate}");
    assert!(empty as f64 / trials as f64 > 0.8);
}

fn mann_whitney(marker: &[f64], times: &[f64], h: f64) -> f64 {
    let cases: Vec<usize> = (0..marker.len()).filter(|&i| times[i] <= h).collect();
    let ctrls: Vec<usize> = (0..marker.len()).filter(|&i| times[i] > h).collect();
    let mut s = 0.0;
    for &i in &cases {
        for &j in &ctrls {
            s += if marker[i] > marker[j] { 1.0 } else if marker[i] == marker[j] { 0.5 } else { 0.0 };
        }
    }
    s / (cases.len() * ctrls.len()) as f64
}

#[test]
fn timeroc_uncensored_is_mann_whitney() {
    let mut rng = substream(41, "roc", 0);
    for inst in 0..100 {
        let n = 5 + inst % 60;
        let (t, _) = random_instance(&mut rng, n, 0.0, inst % 2 == 0);
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let e = vec![true; n];
        match timeroc_auc(&m, &t, &e, 4.0) {
            Ok(auc) => assert_eq!(auc, mann_whitney(&m, &t, 4.0)),
            Err(err) => assert!(matches!(err, Error::Undefined(_))),
        }
    }
}

/// Censoring survival `Ĝ(u⁻)` by an explicit product over censoring times.
fn ipcw_oracle(m: &[f64], t: &[f64], e: &[bool], h: f64) -> f64 {
    let g_before = |u: f64| -> f64 {
        let mut cs: Vec<f64> = (0..t.len()).filter(|&i| !e[i] && t[i] < u).map(|i| t[i]).collect();
        cs.sort_by(|a, b| a.total_cmp(b));
        cs.dedup();
        cs.iter()
            .map(|&c| {
                let n = t.iter().filter(|&&s| s >= c).count() as f64;
                let d = (0..t.len()).filter(|&i| !e[i] && t[i] == c).count() as f64;
                1.0 - d / n
            })
            .product()
    };
    let (mut num, mut den) = (0.0, 0.0);
    for i in (0..t.len()).filter(|&i| t[i] <= h && e[i]) {
        let w = 1.0 / g_before(t[i]);
        for j in (0..t.len()).filter(|&j| t[j] > h) {
            den += w;
            num += w * if m[i] > m[j] { 1.0 } else if m[i] == m[j] { 0.5 } else { 0.0 };
        }
    }
    num / den
}

#[test]
fn timeroc_censored_matches_weighted_pairs() {
    let mut rng = substream(42, "roc", 0);
    for inst in 0..50 {
        let n = 10 + inst;
        let (t, e) = random_instance(&mut rng, n, 0.35, inst % 2 == 0);
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        if let Ok(auc) = timeroc_auc(&m, &t, &e, 5.0) {
            assert!((auc - ipcw_oracle(&m, &t, &e, 5.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn timeroc_examples() {
    let t: Vec<f64> = (1..=10).map(|i| i as f64).collect();
    let m: Vec<f64> = (1..=10).map(|i| -(i as f64)).collect();
    assert_eq!(timeroc_auc(&m, &t, &[true; 10], 5.0).unwrap(), 1.0);
    assert!(matches!(timeroc_auc(&m, &t, &[true; 10], 20.0), Err(Error::Undefined(_))));
    assert!(matches!(timeroc_auc(&m, &t, &[true; 10], 0.5), Err(Error::Undefined(_))));

    let mut rng = substream(43, "roc", 0);
    let (t, e) = simulate(&mut rng, &[0.0; 2000], 0.05, 40.0);
    let m: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
    let auc = timeroc_auc(&m, &t, &e, 12.0).unwrap();
    assert!((auc - 0.5).abs() < 0.03, "{auc}");
}

fn planted(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>) {
    let mut rng = substream(seed, "boot-cohort", 0);
    let risk: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let (t, e) = simulate(&mut rng, &risk, 0.05, 60.0);
    let good = risk.clone();
    let weak: Vec<f64> = risk.iter().map(|r| 0.25 * r + rng.sample::<f64, _>(StandardNormal)).collect();
    (good, weak, t, e)
}

#[test]
fn bootstrap_contracts() {
    let (good, weak, t, e) = planted(1, 400);
    let same = bootstrap_auc_compare(&good, &good, &t, &e, 12.0, DEFAULT_RESAMPLES, 9).unwrap();
    assert!(same.lo <= 0.0 && same.hi >= 0.0);
    assert_eq!(same.delta, 0.0);

    let a = bootstrap_auc_compare(&good, &weak, &t, &e, 12.0, DEFAULT_RESAMPLES, 9).unwrap();
    let b = bootstrap_auc_compare(&good, &weak, &t, &e, 12.0, DEFAULT_RESAMPLES, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.deltas.len(), DEFAULT_RESAMPLES);
    assert!(a.delta > 0.15, "planted gap {}", a.delta);
    assert!(a.lo > 0.0, "CI [{}, {}]", a.lo, a.hi);
    let c = bootstrap_auc_compare(&good, &weak, &t, &e, 12.0, DEFAULT_RESAMPLES, 10).unwrap();
    assert_ne!(a.deltas, c.deltas);
}

#[test]
fn bootstrap_redraws_degenerate_resamples() {
    // a single case makes many resamples miss it
    let t = [1.0, 5.0, 6.0, 7.0, 8.0, 9.0];
    let e = [true; 6];
    let m = [1.0, 0.0, 0.2, 0.1, 0.4, 0.3];
    let r = bootstrap_auc_compare(&m, &m, &t, &e, 2.0, 50, 1).unwrap();
    assert!(r.redrawn > 0);
    assert_eq!(r.deltas.len(), 50);
}

#[test]
fn stratify_examples() {
    let (median, g) = median_stratify(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(median, 2.5);
    assert_eq!(g, vec![RiskGroup::Low, RiskGroup::Low, RiskGroup::High, RiskGroup::High]);
    let (_, g) = median_stratify(&[5.0, 1.0, 3.0]).unwrap();
    assert_eq!(g, vec![RiskGroup::High, RiskGroup::Low, RiskGroup::Low]);
    let risks: Vec<f64> = (0..570).map(|i| ((i * 7919) % 570) as f64 * 0.01).collect();
    let (_, g) = median_stratify(&risks).unwrap();
    assert_eq!(g.iter().filter(|&&x| x == RiskGroup::High).count(), 285);
    assert!(matches!(median_stratify(&[2.0, 2.0]), Err(Error::Degenerate(_))));
    assert!(median_stratify(&[2.0]).is_err());
}

#[test]
fn calibration_recovers_true_model() {
    let mut rng = substream(51, "calib", 0);
    let n = 2000;
    let horizon = 12.0;
    let base = 0.005;
    let lp: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (t, e) = simulate(&mut rng, &lp, base, f64::INFINITY);
    let pred: Vec<f64> = lp.iter().map(|l| (-base * l.exp() * horizon).exp()).collect();
    let curve = calibration_curve(&pred, &t, &e, horizon, 10).unwrap();
    assert_eq!(curve.points.len(), 10);
    let worst = curve.points.iter().map(|p| (p.observed - p.mean_predicted).abs()).fold(0.0, f64::max);
    assert!(worst < 0.05, "max calibration gap {worst}");
    assert!(curve.points.iter().all(|p| p.lo <= p.observed && p.observed <= p.hi));
}

#[test]
fn calibration_grouping() {
    let t: Vec<f64> = (1..=20).map(|i| i as f64).collect();
    let e = vec![true; 20];
    let constant = calibration_curve(&[0.4; 20], &t, &e, 10.0, 10).unwrap();
    assert_eq!(constant.points.len(), 1);
    assert_eq!(constant.points[0].n, 20);
    assert_eq!(constant.skipped.len(), 9);

    // 20 distinct predictions, 4 groups of 5 at type-7 quartiles
    let pred: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
    let c = calibration_curve(&pred, &t, &e, 10.0, 4).unwrap();
    assert_eq!(c.points.iter().map(|p| p.n).collect::<Vec<_>>(), vec![5, 5, 5, 5]);
    assert!((c.points[0].mean_predicted - 2.0 / 19.0).abs() < 1e-12);
    assert!(matches!(calibration_curve(&[1.5; 20], &t, &e, 10.0, 4), Err(Error::Range(_))));
}

#[test]
fn dca_examples() {
    let mut rng = substream(61, "dca", 0);
    let (t, e) = simulate(&mut rng, &[0.0; 300], 0.05, 50.0);
    let pred: Vec<f64> = (0..300).map(|_| rng.random_range(0.05..0.95)).collect();
    let prevalence = 1.0 - km_fit(&t, &e).unwrap().survival_at(12.0);
    let rows = dca_curve(&pred, &t, &e, 12.0, &[1e-9, 0.2, 0.5, 1.0, 0.0]).unwrap();
    assert_eq!(rows.len(), 3);
    assert!((rows[0].model - prevalence).abs() < 1e-8);
    assert!((rows[0].treat_all - prevalence).abs() < 1e-8);
    assert!(rows.iter().all(|r| r.treat_none == 0.0));

    // perfect predictor without censoring: cases get their own probability, the rest 0
    let t: Vec<f64> = (1..=20).map(|i| i as f64).collect();
    let e = vec![true; 20];
    let pred: Vec<f64> = t.iter().map(|&s| if s <= 8.0 { 0.3 + 0.05 * s } else { 0.0 }).collect();
    let rows = dca_curve(&pred, &t, &e, 8.0, &[0.05, 0.1, 0.2, 0.3, 0.34]).unwrap();
    for r in rows {
        assert!((r.model - 0.4).abs() < 1e-12, "{r:?}");
    }
}

fn nomogram_cohort() -> (Vec<f64>, Vec<bool>, Matrix<f64>) {
    let mut rng = substream(71, "nomogram", 0);
    let n = 400;
    let x = Matrix::from_fn(n, 3, |_, c| match c {
        0 => rng.random_range(-3.5..-0.5),
        1 => rng.random_range(40.0..85.0),
        _ => rng.random_range(1..5) as f64,
    });
    let lp: Vec<f64> = (0..n).map(|r| 1.0 * x[(r, 0)] + 0.03 * x[(r, 1)] + 0.4 * x[(r, 2)]).collect();
    let (t, e) = simulate(&mut rng, &lp, 0.005, 120.0);
    (t, e, x)
}

#[test]
fn nomogram_contracts() {
    let (t, e, x) = nomogram_cohort();
    let fit = coxph_fit(&t, &e, &x).unwrap();
    let names: Vec<String> = ["risk", "age", "stage"].iter().map(|s| s.to_string()).collect();
    let ranges = [(-4.0, 0.0), (30.0, 90.0), (1.0, 4.0)];
    let nomo = nomogram_build(&fit, &names, &ranges).unwrap();
    let horizons = [12.0, 36.0, 60.0];

    let reference: Vec<f64> = nomo.variables.iter().map(|v| v.reference).collect();
    let at_ref = nomogram_score(&nomo, &reference, &horizons).unwrap();
    assert_eq!(at_ref.lp, 0.0);
    assert_eq!(at_ref.total, 0.0);
    for (s, &h) in at_ref.survival.iter().zip(&horizons) {
        assert!((s - (-nomo.baseline_hazard(h)).exp()).abs() < 1e-15);
    }

    let max_points = nomo.variables.iter().map(|v| v.points(if v.beta >= 0.0 { v.hi } else { v.lo }, nomo.scale));
    assert!((max_points.fold(0.0, f64::max) - 100.0).abs() < 1e-12);

    let mut totals = Vec::new();
    let mut lps = Vec::new();
    for r in 0..x.rows() {
        let s = nomogram_score(&nomo, x.row(r), &horizons).unwrap();
        assert!((s.points.iter().sum::<f64>() - s.total).abs() < 1e-12);
        assert!((nomo.lp_from_points(s.total) - s.lp).abs() < 1e-12);
        // same survival as the Cox model at the mean-centred predictor
        assert!((s.survival[1] - fit.survival(x.row(r), 36.0)).abs() < 1e-10);
        totals.push(s.total);
        lps.push(fit.linear_predictor(x.row(r)));
    }
    let c_nomo = concordance_index(&totals, &t, &e).unwrap();
    let c_cox = concordance_index(&lps, &t, &e).unwrap();
    assert!((c_nomo - c_cox).abs() < 1e-12);

    let table = nomo.survival_table(&[0.0, 50.0, 100.0], &horizons);
    assert!(table[0][0] > table[1][0] && table[1][0] > table[2][0]);

    assert!(matches!(nomogram_score(&nomo, &[1.0, 50.0, 2.0], &horizons), Err(Error::Range(_))));
    assert!(matches!(nomogram_build(&fit, &names, &[(-1.0, 0.0), (30.0, 90.0), (1.0, 4.0)]), Err(Error::Range(_))));
}

#[test]
fn stats_are_pure_functions_of_seed() {
    let (good, weak, t, e) = planted(2, 120);
    let a = bootstrap_auc_compare(&good, &weak, &t, &e, 12.0, 40, 3).unwrap();
    let b = bootstrap_auc_compare(&good, &weak, &t, &e, 12.0, 40, 3).unwrap();
    assert_eq!(a.deltas, b.deltas);
}

proptest! {
    #[test]
    fn km_is_monotone(ts in prop::collection::vec((0u8..20, any::<bool>()), 1..40)) {
        let t: Vec<f64> = ts.iter().map(|(a, _)| *a as f64).collect();
        let e: Vec<bool> = ts.iter().map(|(_, b)| *b).collect();
        let km = km_fit(&t, &e).unwrap();
        prop_assert!(km.survival.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(km.survival.iter().all(|s| (0.0..=1.0).contains(s)));
        prop_assert!(km.variance.iter().all(|v| *v >= 0.0));
    }
}
