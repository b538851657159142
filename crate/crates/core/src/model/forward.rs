use alloc::collections::BTreeMap;
use alloc::string::String;

use super::config::{Ablation, ModelConfig};
use super::layers::{self, Graph};
use super::params::ModelParams;
use crate::autodiff::{Tape, Var};
use crate::bag::FeatureBag;
use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::real::Real;
use crate::rng::substream;
use crate::survival::survival_nll_grad;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from the given seed.
    Train(u64),
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Register parameters as gradient leaves.
    pub track_params: bool,
    /// Register the input features as a gradient leaf.
    pub probe_input: bool,
}

impl ForwardOptions {
    pub const EVAL: Self = Self { mode: Mode::Eval, track_params: false, probe_input: false };

    pub fn train(seed: u64) -> Self {
        Self { mode: Mode::Train(seed), track_params: true, probe_input: false }
    }
}

/// Activations kept for explanation and inspection.
#[derive(Clone, Copy, Debug)]
pub struct ForwardTrace {
    /// Original patch count `N`.
    pub n_tokens: usize,
    /// Square token count `N′`.
    pub n_padded: usize,
    /// Final token sequence before pooling (`(N′+1) × d`).
    pub sequence: Var,
    /// Final-stage class-token row (`1 × d`).
    pub class_output: Var,
    /// Pooling weights (`1 × n_pool`).
    pub pool_weights: Var,
    pub z_norm: Var,
    pub z_global: Var,
    /// Sequence row of pooled token 0 (1 when the class token is excluded).
    pub pool_offset: usize,
}

pub struct Forward<T> {
    pub tape: Tape<T>,
    pub vars: BTreeMap<String, Var>,
    pub input: Var,
    pub logits: Var,
    pub trace: ForwardTrace,
}

impl<T: Real> Forward<T> {
    pub fn logits(&self) -> [T; 4] {
        let l = self.tape.value(self.logits).as_slice();
        [l[0], l[1], l[2], l[3]]
    }

    pub fn pool_weights(&self) -> &Matrix<T> {
        self.tape.value(self.trace.pool_weights)
    }
}

/// Full network on an `N × d_in` feature matrix.
pub fn forward<T: Real>(
    features: &Matrix<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    opts: ForwardOptions,
) -> Result<Forward<T>> {
    let (n, d) = features.shape();
    if n == 0 {
        bail!(Shape, "bag has no patches");
    }
    if d != cfg.d_in {
        bail!(Shape, "feature dimension {d} does not match d_in {}", cfg.d_in);
    }
    if !features.is_finite() {
        bail!(Data, "features contain non-finite values");
    }
    let mut drop_rng = match opts.mode {
        Mode::Train(seed) if cfg.dropout > 0.0 => Some(substream(seed, "dropout", 0)),
        _ => None,
    };

    let mut g = Graph::new(params, opts.track_params);
    let input = if opts.probe_input {
        g.tape.param(features.clone())
    } else {
        g.tape.constant(features.clone())
    };

    let mut x = layers::project_input(&mut g, input);
    if let Some(rng) = drop_rng.as_mut() {
        let m = g.tape.constant(layers::dropout_mask(n, cfg.d_model, cfg.dropout, rng));
        x = g.tape.mul(x, m);
    }
    let (mut x, n_padded) = layers::pad_square_with_class(&mut g, x);
    if cfg.ablation != Ablation::NoTransformer {
        x = layers::nystrom_attention(&mut g, cfg, x, "attn1");
        x = layers::ppeg_encode(&mut g, x);
        x = layers::nystrom_attention(&mut g, cfg, x, "attn2");
    }
    if cfg.ablation != Ablation::NoAgent {
        x = layers::agent_attention(&mut g, cfg, x);
    }
    if cfg.ablation != Ablation::NoSrmamba {
        for l in 0..cfg.srmamba_layers {
            x = layers::srmamba_layer(&mut g, cfg, x, l);
        }
    }
    let class_output = g.tape.slice_rows(x, 0, 1);
    let pool_offset = usize::from(!cfg.pool_includes_class);
    let z = if pool_offset == 0 { x } else { g.tape.slice_rows(x, 1, n_padded) };
    let n_pool = g.value(z).rows();
    let mask = drop_rng.as_mut().map(|rng| layers::dropout_mask(n_pool, 1, cfg.dropout, rng));
    let pooled = layers::attention_pool(&mut g, z, mask);
    let logits = layers::classifier(&mut g, pooled.z_global);
    if !g.value(logits).is_finite() {
        bail!(Data, "non-finite logits");
    }
    let trace = ForwardTrace {
        n_tokens: n,
        n_padded,
        sequence: x,
        class_output,
        pool_weights: pooled.weights,
        z_norm: pooled.z_norm,
        z_global: pooled.z_global,
        pool_offset,
    };
    Ok(Forward { tape: g.tape, vars: g.vars, input, logits, trace })
}

/// Eval-mode logits for a bag.
pub fn predict_bag(bag: &FeatureBag, params: &ModelParams<f32>, cfg: &ModelConfig) -> Result<[f32; 4]> {
    Ok(forward(&bag.features, params, cfg, ForwardOptions::EVAL)?.logits())
}

/// Survival loss and its gradient with respect to every parameter tensor.
pub fn loss_and_grads<T: Real>(
    features: &Matrix<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    bin: usize,
    censored: bool,
    mode: Mode,
) -> Result<(f64, BTreeMap<String, Matrix<T>>)> {
    let fwd = forward(features, params, cfg, ForwardOptions { mode, track_params: true, probe_input: false })?;
    let logits = fwd.logits().map(|v| v.as_f64());
    let (loss, dl) = survival_nll_grad(&logits, bin, censored);
    let seed = Matrix::from_vec(1, 4, dl.iter().map(|&v| T::of(v)).collect());
    let mut grads = fwd.tape.backward(fwd.logits, seed);
    let mut out = BTreeMap::new();
    for (name, &var) in &fwd.vars {
        let grad = grads.take(var).unwrap_or_else(|| {
            let (r, c) = params.get(name).shape();
            Matrix::zeros(r, c)
        });
        if !grad.is_finite() {
            bail!(Grad, "gradient of {name} is not finite");
        }
        out.insert(name.clone(), grad);
    }
    Ok((loss, out))
}
