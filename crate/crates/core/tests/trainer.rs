use std::collections::BTreeMap;

use proptest::prelude::*;
use tdam_core::bag::{synth_cohort, SynthConfig};
use tdam_core::model::{ModelConfig, ModelParams, Mode};
use tdam_core::trainer::{
    adam_step, batch_loss_and_grads, early_stop_update, fold_plan, init_params, kfold_split, mean_loss, mean_sd, AdamState, CvReport,
    EarlyStopState, FoldResult, TrainConfig, TrainSet,
};
use tdam_core::survival::{compute_bin_edges, BinEdges};
use tdam_core::{Error, Matrix};

#[test]
fn folds_for_the_discovery_cohort_size() {
    let events: Vec<bool> = (0..581).map(|i| i % 3 == 0).collect();
    let folds = kfold_split(&events, 5, 1).unwrap();
    let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(sizes, vec![117, 116, 116, 116, 116]);
    let mut all: Vec<usize> = folds.concat();
    all.sort_unstable();
    assert_eq!(all, (0..581).collect::<Vec<_>>());
    assert_eq!(kfold_split(&events, 5, 1).unwrap(), folds);
    assert_ne!(kfold_split(&events, 5, 2).unwrap(), folds);
    assert!(matches!(kfold_split(&events[..3], 5, 0), Err(Error::Data(_))));
}

proptest! {
    #[test]
    fn folds_are_stratified_partitions(events in prop::collection::vec(any::<bool>(), 5..300), k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(events.len() >= k);
        let folds = kfold_split(&events, k, seed).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let ev: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| events[i]).count()).collect();
        prop_assert!(ev.iter().max().unwrap() - ev.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..events.len()).collect::<Vec<_>>());
    }
}

#[test]
fn fold_plan_holds_out_each_fold_once() {
    let events: Vec<bool> = (0..23).map(|i| i % 2 == 0).collect();
    let plan = fold_plan(&events, &TrainConfig::default()).unwrap();
    assert_eq!(plan.len(), 5);
    let mut seen = vec![0; 23];
    for (train, val) in &plan {
        assert_eq!(train.len() + val.len(), 23);
        assert!(val.iter().all(|v| !train.contains(v)));
        for &v in val {
            seen[v] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
}

fn scalar_params(v: f64) -> ModelParams<f64> {
    let mut tensors = BTreeMap::new();
    tensors.insert("w".to_string(), Matrix::from_vec(1, 1, vec![v]));
    ModelParams { tensors }
}

fn scalar_grads(g: f64) -> BTreeMap<String, Matrix<f64>> {
    let mut m = BTreeMap::new();
    m.insert("w".to_string(), Matrix::from_vec(1, 1, vec![g]));
    m
}

#[test]
fn adam_first_step() {
    let cfg = TrainConfig::default();
    let mut p = scalar_params(0.5);
    let mut st = AdamState::default();
    adam_step(&mut p, &scalar_grads(1.0), &mut st, &cfg).unwrap();
    let want = 0.5 - cfg.lr * 1.0 / (1.0 + cfg.eps);
    assert!((p.get("w")[(0, 0)] - want).abs() < 1e-15);
    assert!((p.get("w")[(0, 0)] - (0.5 - 2e-4)).abs() < 1e-11);

    let mut p0 = scalar_params(0.5);
    let mut st0 = AdamState::default();
    for _ in 0..3 {
        adam_step(&mut p0, &scalar_grads(0.0), &mut st0, &cfg).unwrap();
    }
    assert_eq!(p0.get("w")[(0, 0)], 0.5);

    let (mut a, mut b) = (scalar_params(0.1), scalar_params(0.1));
    let (mut sa, mut sb) = (AdamState::default(), AdamState::default());
    for g in [0.3, -1.2, 4.0] {
        adam_step(&mut a, &scalar_grads(g), &mut sa, &cfg).unwrap();
        adam_step(&mut b, &scalar_grads(g), &mut sb, &cfg).unwrap();
    }
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let cfg = TrainConfig::default();
    let mut p = scalar_params(0.5);
    let mut st = AdamState::default();
    let err = adam_step(&mut p, &scalar_grads(f64::NAN), &mut st, &cfg).unwrap_err();
    assert!(matches!(err, Error::Grad(_)));
    assert_eq!(p.get("w")[(0, 0)], 0.5);
    assert_eq!(st.t, 0);
}

/// Stop epoch of a run whose validation score improves exactly at the
/// ascending epochs `ups` and is flat otherwise.
fn stop_epoch_oracle(ups: &[usize]) -> usize {
    let mut last = 1;
    for e in 1..=100 {
        if ups.contains(&e) || e == 1 {
            last = e;
        }
        let stale = e - last.max(5).min(e);
        if (stale >= 30 && e > 50) || e == 100 {
            return e;
        }
    }
    unreachable!()
}

fn closed_form(ups: &[usize]) -> usize {
    let mut last = 1;
    let mut next = ups.iter().copied().filter(|&u| u > 1);
    loop {
        let stop = 100.min(51.max(last.max(5) + 30));
        match next.next() {
            Some(u) if u <= stop => last = u,
            _ => return stop,
        }
    }
}

fn run_trace(ups: &[usize]) -> (usize, EarlyStopState) {
    let cfg = TrainConfig::default();
    let mut st = EarlyStopState::default();
    let mut score = 0.5;
    for e in 1..=100 {
        if ups.contains(&e) {
            score += 0.01;
        }
        st = early_stop_update(st, e, score, &cfg);
        if st.stopped {
            return (e, st);
        }
    }
    unreachable!("epoch 100 is terminal")
}

#[test]
fn early_stop_matches_rule_on_all_one_and_two_improvement_traces() {
    let mut traces: Vec<Vec<usize>> = vec![vec![]];
    for a in 2..=100 {
        traces.push(vec![a]);
        for b in a + 1..=100 {
            traces.push(vec![a, b]);
        }
    }
    for ups in &traces {
        let (stop, st) = run_trace(ups);
        assert_eq!(stop, stop_epoch_oracle(ups), "{ups:?}");
        assert_eq!(stop, closed_form(ups), "{ups:?}");
        let last_up = ups.iter().copied().filter(|&u| u <= stop).max().unwrap_or(1);
        assert_eq!(st.best_epoch, last_up, "{ups:?}");
    }
}

#[test]
fn early_stop_examples() {
    let cfg = TrainConfig::default();
    let s = EarlyStopState { best_cindex: 0.6, best_epoch: 3, epochs_since_improve: 4, stopped: false };
    let s = early_stop_update(s, 10, 0.7, &cfg);
    assert_eq!((s.epochs_since_improve, s.best_epoch, s.stopped), (0, 10, false));

    let s = EarlyStopState { best_cindex: 0.7, best_epoch: 15, epochs_since_improve: 29, stopped: false };
    let s = early_stop_update(s, 45, 0.6, &cfg);
    assert_eq!(s.epochs_since_improve, 30);
    assert!(!s.stopped);

    let s = EarlyStopState { best_cindex: 0.7, best_epoch: 30, epochs_since_improve: 29, stopped: false };
    let s = early_stop_update(s, 60, 0.6, &cfg);
    assert!(s.stopped);
    assert_eq!((s.best_epoch, s.best_cindex), (30, 0.7));

    // float-noise gains do not count
    let s = EarlyStopState { best_cindex: 0.7, best_epoch: 30, epochs_since_improve: 2, stopped: false };
    let s = early_stop_update(s, 33, 0.7 + 5e-7, &cfg);
    assert_eq!((s.best_epoch, s.epochs_since_improve), (30, 3));

    // warm-up improvements register, stale warm-up epochs do not
    let mut s = EarlyStopState::default();
    for (e, v) in [(1, 0.5), (2, 0.4), (3, 0.6), (4, 0.6), (5, 0.6)] {
        s = early_stop_update(s, e, v, &cfg);
    }
    assert_eq!((s.best_epoch, s.epochs_since_improve), (3, 0));
    s = early_stop_update(s, 6, 0.6, &cfg);
    assert_eq!(s.epochs_since_improve, 1);

    let s = early_stop_update(EarlyStopState::default(), 100, 0.5, &cfg);
    assert!(s.stopped);
}

#[test]
fn report_uses_sample_deviation() {
    let (m, s) = mean_sd(&[0.7, 0.8, 0.9]);
    assert!((m - 0.8).abs() < 1e-15);
    assert!((s - 0.1).abs() < 1e-12);
    let fold = |f: usize, c: f64| FoldResult {
        fold: f,
        best_epoch: 7,
        best_cindex: c,
        epochs_run: 51,
        bin_edges: BinEdges([1.0, 2.0, 3.0]),
        best_params: ModelParams::default(),
        history: vec![],
    };
    let r = CvReport::from_results(&[fold(0, 0.70), fold(1, 0.75), fold(2, 0.79)]);
    assert_eq!(r.summary(), "mean C-index of 0.747 ± 0.045");
}

fn tiny_set() -> (TrainSet, ModelConfig) {
    let synth = synth_cohort(&SynthConfig { n_patients: 12, n_patches: (4, 9), dim: 8, censor_rate: 0.2, seed: 3, ..SynthConfig::default() })
        .unwrap();
    let data = TrainSet {
        features: synth.bags.iter().map(|b| b.features.clone()).collect(),
        times: synth.cohort.times(),
        events: synth.cohort.events(),
    };
    let cfg = ModelConfig {
        d_in: 8,
        d_model: 16,
        n_heads: 2,
        n_agents: 4,
        n_landmarks: 4,
        ssm_state_dim: 4,
        agent_bias_side: 4,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    (data, cfg)
}

#[test]
fn loss_on_a_fixed_batch_decreases_for_ten_epochs() {
    let (data, mcfg) = tiny_set();
    let cfg = TrainConfig::default();
    let idx: Vec<usize> = (0..4).collect();
    let edges = compute_bin_edges(&data.times, &data.events).unwrap();
    let mut params = init_params(&mcfg, 11, 0);
    let mut adam = AdamState::default();
    let mut last = mean_loss(&data, &idx, &params, &mcfg, &edges).unwrap();
    for epoch in 0..10 {
        let (_, g) = batch_loss_and_grads(&data, &idx, &params, &mcfg, &edges, Mode::Eval).unwrap();
        adam_step(&mut params, &g, &mut adam, &cfg).unwrap();
        let now = mean_loss(&data, &idx, &params, &mcfg, &edges).unwrap();
        assert!(now < last, "epoch {epoch}: {now} !< {last}");
        last = now;
    }
}

#[test]
fn fold_training_is_deterministic_and_keeps_best_epoch() {
    let (data, mcfg) = tiny_set();
    let mcfg = ModelConfig { dropout: 0.25, ..mcfg };
    let cfg = TrainConfig { max_epochs: 8, warmup_epochs: 2, patience: 3, min_epochs_for_stop: 4, seed: 5, ..TrainConfig::default() };
    let plan = fold_plan(&data.events, &TrainConfig { folds: 3, ..cfg.clone() }).unwrap();
    let (tr, va) = &plan[0];
    let a = tdam_core::trainer::train_fold(&data, tr, va, &mcfg, &cfg, 0).unwrap();
    let b = tdam_core::trainer::train_fold(&data, tr, va, &mcfg, &cfg, 0).unwrap();
    assert_eq!(a.best_params, b.best_params);
    assert_eq!(a.history, b.history);
    let best = a.history.iter().map(|h| h.val_cindex).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.best_cindex, best);
    assert!(a.epochs_run <= 8);
    assert_eq!(a.history.len(), a.epochs_run);
}
