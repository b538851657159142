//! Cross-validated training: stratified folds, Adam, early stopping on the
//! validation C-index.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::model::{forward, loss_and_grads, ForwardOptions, ModelConfig, ModelParams, Mode};
use crate::rng::substream;
use crate::survival::{assign_bin, compute_bin_edges, concordance_index, risk_score, survival_nll, BinEdges};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub warmup_epochs: usize,
    pub patience: usize,
    pub min_epochs_for_stop: usize,
    pub folds: usize,
    /// Minimum gain in validation C-index that counts as an improvement.
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 100,
            warmup_epochs: 5,
            patience: 30,
            min_epochs_for_stop: 50,
            folds: 5,
            min_improvement: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            bail!(Data, "patience must be at least 1");
        }
        if self.warmup_epochs >= self.max_epochs {
            bail!(Data, "warm-up ({}) must be shorter than max_epochs ({})", self.warmup_epochs, self.max_epochs);
        }
        if self.folds < 2 {
            bail!(Data, "need at least 2 folds, got {}", self.folds);
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bail!(Data, "invalid optimizer settings");
        }
        Ok(())
    }
}

/// Stratified assignment of `events.len()` subjects to `k` folds: events and
/// censored subjects are shuffled separately, concatenated, and dealt out
/// round-robin, so fold sizes and per-fold event counts each differ by at
/// most one.
pub fn kfold_split(events: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = events.len();
    if k == 0 || n < k {
        bail!(Data, "cannot split {n} subjects into {k} folds");
    }
    let mut rng = substream(seed, "folds", 0);
    let mut ev: Vec<usize> = (0..n).filter(|&i| events[i]).collect();
    let mut ce: Vec<usize> = (0..n).filter(|&i| !events[i]).collect();
    ev.shuffle(&mut rng);
    ce.shuffle(&mut rng);
    let mut folds = alloc::vec![Vec::new(); k];
    for (pos, i) in ev.into_iter().chain(ce).enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// First and second moment estimates per tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub m: BTreeMap<String, Matrix<T>>,
    pub v: BTreeMap<String, Matrix<T>>,
    pub t: u64,
}

/// One bias-corrected Adam update. Leaves everything untouched and errors if
/// any gradient is non-finite.
pub fn adam_step<T: crate::Real>(
    params: &mut ModelParams<T>,
    grads: &BTreeMap<String, Matrix<T>>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.tensors.get(name).ok_or_else(|| crate::Error::Shape(format!("unknown tensor {name}")))?;
        if p.shape() != g.shape() {
            bail!(Shape, "gradient of {name} has shape {:?}, parameter {:?}", g.shape(), p.shape());
        }
        if !g.is_finite() {
            bail!(Grad, "gradient of {name} is not finite");
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads {
        let p = params.tensors.get_mut(name).expect("checked above");
        let (r, c) = g.shape();
        let m = state.m.entry(name.clone()).or_insert_with(|| Matrix::zeros(r, c));
        let v = state.v.entry(name.clone()).or_insert_with(|| Matrix::zeros(r, c));
        for (((pi, &gi), mi), vi) in
            p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m.as_mut_slice()).zip(v.as_mut_slice())
        {
            let gf = gi.as_f64();
            let mf = b1 * mi.as_f64() + (1.0 - b1) * gf;
            let vf = b2 * vi.as_f64() + (1.0 - b2) * gf * gf;
            *mi = T::of(mf);
            *vi = T::of(vf);
            let step = cfg.lr * (mf / c1) / ((vf / c2).sqrt() + cfg.eps);
            *pi = T::of(pi.as_f64() - step);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStopState {
    pub best_cindex: f64,
    pub best_epoch: usize,
    pub epochs_since_improve: usize,
    pub stopped: bool,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self { best_cindex: f64::NEG_INFINITY, best_epoch: 0, epochs_since_improve: 0, stopped: false }
    }
}

impl EarlyStopState {
    /// Records the validation C-index of `epoch` (1-based). Returns whether it
    /// is a new best. During warm-up a new best is still recorded but epochs
    /// without improvement are not counted; stopping requires `patience`
    /// stale epochs after `min_epochs_for_stop`, and `max_epochs` always ends
    /// the run.
    pub fn update(&mut self, epoch: usize, val_cindex: f64, cfg: &TrainConfig) -> bool {
        let improved = val_cindex > self.best_cindex + cfg.min_improvement;
        if improved {
            self.best_cindex = val_cindex;
            self.best_epoch = epoch;
            self.epochs_since_improve = 0;
        } else if epoch > cfg.warmup_epochs {
            self.epochs_since_improve += 1;
        }
        self.stopped = (self.epochs_since_improve >= cfg.patience && epoch > cfg.min_epochs_for_stop)
            || epoch >= cfg.max_epochs;
        improved
    }
}

pub fn early_stop_update(state: EarlyStopState, epoch: usize, val_cindex: f64, cfg: &TrainConfig) -> EarlyStopState {
    let mut s = state;
    s.update(epoch, val_cindex, cfg);
    s
}

/// Bags with follow-up, indexed consistently.
#[derive(Clone, Debug, Default)]
pub struct TrainSet {
    pub features: Vec<Matrix<f32>>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.times.len() || self.events.len() != self.times.len() {
            bail!(Data, "features, times and events differ in length");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_cindex: f64,
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub best_epoch: usize,
    pub best_cindex: f64,
    pub epochs_run: usize,
    pub bin_edges: BinEdges,
    pub best_params: ModelParams<f32>,
    pub history: Vec<EpochLog>,
}

/// Eval-mode risk scores.
pub fn predict_risks(
    data: &TrainSet,
    idx: &[usize],
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    idx.iter()
        .map(|&i| {
            let out = forward(&data.features[i], params, cfg, ForwardOptions::EVAL)?;
            Ok(risk_score(&out.logits().map(|v| v as f64)))
        })
        .collect()
}

fn cindex_on(data: &TrainSet, idx: &[usize], params: &ModelParams<f32>, cfg: &ModelConfig) -> Result<f64> {
    let risks = predict_risks(data, idx, params, cfg)?;
    let times: Vec<f64> = idx.iter().map(|&i| data.times[i]).collect();
    let events: Vec<bool> = idx.iter().map(|&i| data.events[i]).collect();
    concordance_index(&risks, &times, &events)
}

/// Mean eval-mode survival loss over `idx`.
pub fn mean_loss(
    data: &TrainSet,
    idx: &[usize],
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    edges: &BinEdges,
) -> Result<f64> {
    let mut total = 0.0;
    for &i in idx {
        let out = forward(&data.features[i], params, cfg, ForwardOptions::EVAL)?;
        total += survival_nll(&out.logits().map(|v| v as f64), assign_bin(data.times[i], edges), !data.events[i]);
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Initial parameters for a fold.
pub fn init_params(cfg: &ModelConfig, seed: u64, fold: usize) -> ModelParams<f32> {
    ModelParams::init(cfg, &mut substream(seed, "init", fold as u64))
}

/// Fits one fold, keeping the parameters of the best validation epoch.
pub fn train_fold(
    data: &TrainSet,
    train_idx: &[usize],
    val_idx: &[usize],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    fold: usize,
) -> Result<FoldResult> {
    data.validate()?;
    model_cfg.validate()?;
    cfg.validate()?;
    let times: Vec<f64> = train_idx.iter().map(|&i| data.times[i]).collect();
    let events: Vec<bool> = train_idx.iter().map(|&i| data.events[i]).collect();
    let edges = compute_bin_edges(&times, &events)?;
    let bins: Vec<usize> = train_idx.iter().map(|&i| assign_bin(data.times[i], &edges)).collect();

    let mut params = init_params(model_cfg, cfg.seed, fold);
    let mut best_params = params.clone();
    let mut adam = AdamState::default();
    let mut stop = EarlyStopState::default();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut epoch = 0;
    while !stop.stopped {
        epoch += 1;
        let stream = (fold as u64) << 32 | epoch as u64;
        order.shuffle(&mut substream(cfg.seed, "epoch-order", stream));
        let mut loss_sum = 0.0;
        for (step, &j) in order.iter().enumerate() {
            let i = train_idx[j];
            let drop_seed = cfg.seed ^ (stream << 20 | step as u64);
            let (loss, grads) =
                loss_and_grads(&data.features[i], &params, model_cfg, bins[j], !data.events[i], Mode::Train(drop_seed))?;
            adam_step(&mut params, &grads, &mut adam, cfg)?;
            loss_sum += loss;
        }
        let val = cindex_on(data, val_idx, &params, model_cfg)?;
        if stop.update(epoch, val, cfg) {
            best_params = params.clone();
        }
        history.push(EpochLog { epoch, train_loss: loss_sum / order.len().max(1) as f64, val_cindex: val });
    }
    Ok(FoldResult {
        fold,
        best_epoch: stop.best_epoch,
        best_cindex: stop.best_cindex,
        epochs_run: epoch,
        bin_edges: edges,
        best_params,
        history,
    })
}

/// Per-fold summary and mean ± sample standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub folds: Vec<(usize, usize, f64)>,
    pub mean: f64,
    pub std: f64,
}

impl CvReport {
    pub fn from_results(results: &[FoldResult]) -> Self {
        let folds: Vec<_> = results.iter().map(|r| (r.fold, r.best_epoch, r.best_cindex)).collect();
        let vals: Vec<f64> = results.iter().map(|r| r.best_cindex).collect();
        let (mean, std) = mean_sd(&vals);
        Self { folds, mean, std }
    }

    /// `mean C-index of 0.747 ± 0.044`
    pub fn summary(&self) -> String {
        format!("mean C-index of {:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Mean and sample (n − 1) standard deviation; the deviation is 0 for one value.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Train/validation index lists for every fold.
pub fn fold_plan(events: &[bool], cfg: &TrainConfig) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let folds = kfold_split(events, cfg.folds, cfg.seed)?;
    Ok((0..folds.len())
        .map(|f| {
            let mut train: Vec<usize> =
                folds.iter().enumerate().filter(|&(g, _)| g != f).flat_map(|(_, v)| v.iter().copied()).collect();
            train.sort_unstable();
            (train, folds[f].clone())
        })
        .collect())
}

/// Sequential k-fold cross-validation.
pub fn cross_validate(data: &TrainSet, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(Vec<FoldResult>, CvReport)> {
    let plan = fold_plan(&data.events, cfg)?;
    let mut results = Vec::with_capacity(plan.len());
    for (f, (train, val)) in plan.iter().enumerate() {
        results.push(train_fold(data, train, val, model_cfg, cfg, f)?);
    }
    let report = CvReport::from_results(&results);
    Ok((results, report))
}

/// Mean loss and mean gradient over a batch of bags.
pub fn batch_loss_and_grads(
    data: &TrainSet,
    idx: &[usize],
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    edges: &BinEdges,
    mode: Mode,
) -> Result<(f64, BTreeMap<String, Matrix<f32>>)> {
    let mut total = 0.0;
    let mut acc: BTreeMap<String, Matrix<f32>> = BTreeMap::new();
    for &i in idx {
        let bin = assign_bin(data.times[i], edges);
        let (loss, grads) = loss_and_grads(&data.features[i], params, cfg, bin, !data.events[i], mode)?;
        total += loss;
        for (k, g) in grads {
            match acc.get_mut(&k) {
                Some(a) => a.add_assign(&g),
                None => {
                    acc.insert(k, g);
                }
            }
        }
    }
    let scale = 1.0 / idx.len().max(1) as f32;
    for g in acc.values_mut() {
        *g = g.scale(scale);
    }
    Ok((total / idx.len().max(1) as f64, acc))
}
