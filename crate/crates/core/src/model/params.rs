#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::real::Real;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
    Normal002,
    /// `ln(1..=state)` along each row.
    LogArange,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

fn spec(out: &mut Vec<TensorSpec>, name: impl Into<String>, rows: usize, cols: usize, init: Init) {
    out.push(TensorSpec { name: name.into(), rows, cols, init });
}

fn weight(out: &mut Vec<TensorSpec>, name: impl Into<String>, rows: usize, cols: usize) {
    spec(out, name, rows, cols, Init::Xavier { fan_in: rows, fan_out: cols });
}

fn layer_norm(out: &mut Vec<TensorSpec>, prefix: &str, d: usize) {
    spec(out, format!("{prefix}.ln.g"), 1, d, Init::Ones);
    spec(out, format!("{prefix}.ln.b"), 1, d, Init::Zeros);
}

/// Every trainable tensor, in a fixed order.
pub fn tensor_specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let d = cfg.d_model;
    let mut s = Vec::new();
    weight(&mut s, "proj.w", cfg.d_in, d);
    spec(&mut s, "proj.b", 1, d, Init::Zeros);
    spec(&mut s, "cls_token", 1, d, Init::Normal002);
    for attn in ["attn1", "attn2"] {
        layer_norm(&mut s, attn, d);
        for w in ["wq", "wk", "wv", "wo"] {
            weight(&mut s, format!("{attn}.{w}"), d, d);
        }
    }
    for k in [7usize, 5, 3] {
        spec(&mut s, format!("ppeg.k{k}"), k * k, d, Init::Xavier { fan_in: k * k, fan_out: k * k });
        spec(&mut s, format!("ppeg.b{k}"), 1, d, Init::Zeros);
    }
    let r2 = cfg.agent_bias_side * cfg.agent_bias_side;
    spec(&mut s, "agent.tokens", cfg.n_agents, d, Init::Normal002);
    weight(&mut s, "agent.wq", d, d);
    weight(&mut s, "agent.wkv", d, 2 * d);
    spec(&mut s, "agent.wdw", 9, d, Init::Xavier { fan_in: 9, fan_out: 9 });
    spec(&mut s, "agent.bdw", 1, d, Init::Zeros);
    weight(&mut s, "agent.wout", d, d);
    spec(&mut s, "agent.bout", 1, d, Init::Zeros);
    spec(&mut s, "agent.bias_a2p", cfg.n_heads * cfg.n_agents, r2, Init::Zeros);
    spec(&mut s, "agent.bias_p2a", cfg.n_heads * cfg.n_agents, r2, Init::Zeros);
    for l in 0..cfg.srmamba_layers {
        let p = format!("srmamba.{l}");
        layer_norm(&mut s, &p, d);
        weight(&mut s, format!("{p}.w_delta"), d, d);
        spec(&mut s, format!("{p}.b_delta"), 1, d, Init::Zeros);
        weight(&mut s, format!("{p}.w_b"), d, cfg.ssm_state_dim);
        weight(&mut s, format!("{p}.w_c"), d, cfg.ssm_state_dim);
        spec(&mut s, format!("{p}.a_log"), d, cfg.ssm_state_dim, Init::LogArange);
        spec(&mut s, format!("{p}.d_skip"), 1, d, Init::Ones);
    }
    let h = cfg.pool_hidden();
    layer_norm(&mut s, "pool", d);
    weight(&mut s, "pool.w1", d, h);
    spec(&mut s, "pool.b1", 1, h, Init::Zeros);
    weight(&mut s, "pool.w2", h, 1);
    spec(&mut s, "pool.b2", 1, 1, Init::Zeros);
    weight(&mut s, "clf.w", d, cfg.n_bins);
    spec(&mut s, "clf.b", 1, cfg.n_bins, Init::Zeros);
    s
}

/// Named trainable tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams<T> {
    pub tensors: BTreeMap<String, Matrix<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let mut tensors = BTreeMap::new();
        for sp in tensor_specs(cfg) {
            let m = match sp.init {
                Init::Xavier { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Matrix::from_fn(sp.rows, sp.cols, |_, _| T::of(rng.random_range(-bound..bound)))
                }
                Init::Zeros => Matrix::zeros(sp.rows, sp.cols),
                Init::Ones => Matrix::filled(sp.rows, sp.cols, T::one()),
                Init::Normal002 => Matrix::from_fn(sp.rows, sp.cols, |_, _| T::of(normal.sample(rng))),
                Init::LogArange => Matrix::from_fn(sp.rows, sp.cols, |_, c| T::of(((c + 1) as f64).ln())),
            };
            tensors.insert(sp.name, m);
        }
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> &Matrix<T> {
        self.tensors.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Matrix<T> {
        self.tensors.get_mut(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Errors unless the tensor set matches `cfg` exactly and is finite.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = tensor_specs(cfg);
        if specs.len() != self.tensors.len() {
            bail!(Shape, "expected {} tensors, found {}", specs.len(), self.tensors.len());
        }
        for sp in specs {
            let Some(m) = self.tensors.get(&sp.name) else {
                bail!(Shape, "missing tensor {}", sp.name);
            };
            if m.shape() != (sp.rows, sp.cols) {
                bail!(Shape, "tensor {} has shape {:?}, expected {:?}", sp.name, m.shape(), (sp.rows, sp.cols));
            }
            if !m.is_finite() {
                bail!(Data, "tensor {} has non-finite entries", sp.name);
            }
        }
        Ok(())
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}
