//! Finite-difference verification of the analytic gradients.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::forward::{forward, loss_and_grads, ForwardOptions, Mode};
use super::params::ModelParams;
use crate::autodiff::Tape;
use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::rng::substream;
use crate::survival::{survival_nll, survival_nll_grad};

const FD_STEP: f64 = 1e-5;
/// Norms below this are treated as zero when forming relative errors.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradTarget {
    /// Classifier head alone on a fixed pooled vector.
    Classifier,
    /// Whole network from input features to the survival loss.
    Full,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub target: GradTarget,
    pub n_patches: usize,
    pub bin: usize,
    pub censored: bool,
    pub seed: u64,
    /// Negates the analytic gradient of this tensor before comparing.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { target: GradTarget::Full, n_patches: 5, bin: 1, censored: false, seed: 0, corrupt: None }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error per tensor.
    pub per_tensor: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub worst_tensor: String,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Small configuration suitable for exhaustive finite differences.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_in: 6,
        d_model: 8,
        n_heads: 2,
        n_agents: 3,
        n_landmarks: 4,
        pinv_iters: 6,
        srmamba_layers: 2,
        srmamba_rate: 2,
        ssm_state_dim: 3,
        agent_bias_side: 3,
        ..ModelConfig::default()
    }
}

fn rel_error(a: &Matrix<f64>, n: &Matrix<f64>) -> f64 {
    let diff: f64 = a.as_slice().iter().zip(n.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / a.frobenius().max(n.frobenius()).max(REL_FLOOR)
}

/// Initializes parameters and perturbs every entry so no path sits at a
/// symmetric point (zero biases, unit gains).
fn perturbed_params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut rng = substream(seed, "gradcheck-init", 0);
    let mut params = ModelParams::<f64>::init(cfg, &mut rng);
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    for m in params.tensors.values_mut() {
        for v in m.as_mut_slice() {
            *v += noise.sample(&mut rng);
        }
    }
    params
}

fn random_matrix(rows: usize, cols: usize, seed: u64, name: &str) -> Matrix<f64> {
    let mut rng = substream(seed, name, 0);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
}

fn compare(
    params: &ModelParams<f64>,
    analytic: BTreeMap<String, Matrix<f64>>,
    corrupt: Option<&str>,
    mut loss: impl FnMut(&ModelParams<f64>) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut per_tensor = BTreeMap::new();
    let mut work = params.clone();
    for (name, mut grad) in analytic {
        if corrupt == Some(name.as_str()) {
            grad = grad.scale(-1.0);
        }
        let (r, c) = grad.shape();
        let mut numeric = Matrix::zeros(r, c);
        for i in 0..r * c {
            let orig = work.get(&name).as_slice()[i];
            work.get_mut(&name).as_mut_slice()[i] = orig + FD_STEP;
            let up = loss(&work)?;
            work.get_mut(&name).as_mut_slice()[i] = orig - FD_STEP;
            let down = loss(&work)?;
            work.get_mut(&name).as_mut_slice()[i] = orig;
            numeric.as_mut_slice()[i] = (up - down) / (2.0 * FD_STEP);
        }
        if !numeric.is_finite() {
            bail!(Grad, "finite difference of {name} is not finite");
        }
        per_tensor.insert(name, rel_error(&grad, &numeric));
    }
    let (worst_tensor, max_rel_error) = per_tensor
        .iter()
        .fold((String::new(), 0.0f64), |acc, (k, &v)| if v > acc.1 { (k.clone(), v) } else { acc });
    Ok(GradCheckReport { per_tensor, max_rel_error, worst_tensor })
}

pub fn grad_check(cfg: &ModelConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    cfg.validate()?;
    let params = perturbed_params(cfg, opts.seed);
    let corrupt = opts.corrupt.as_deref();
    match opts.target {
        GradTarget::Full => {
            let x = random_matrix(opts.n_patches, cfg.d_in, opts.seed, "gradcheck-input");
            let (_, analytic) = loss_and_grads(&x, &params, cfg, opts.bin, opts.censored, Mode::Eval)?;
            compare(&params, analytic, corrupt, |p| {
                let f = forward(&x, p, cfg, ForwardOptions::EVAL)?;
                Ok(survival_nll(&f.logits(), opts.bin, opts.censored))
            })
        }
        GradTarget::Classifier => {
            let z = random_matrix(1, cfg.d_model, opts.seed, "gradcheck-pooled");
            let head = |p: &ModelParams<f64>| -> [f64; 4] {
                let mut l = z.matmul(p.get("clf.w"));
                l.add_assign(p.get("clf.b"));
                [l[(0, 0)], l[(0, 1)], l[(0, 2)], l[(0, 3)]]
            };
            let (_, dl) = survival_nll_grad(&head(&params), opts.bin, opts.censored);
            let mut tape = Tape::new();
            let zv = tape.constant(z.clone());
            let w = tape.param(params.get("clf.w").clone());
            let b = tape.param(params.get("clf.b").clone());
            let l = tape.matmul(zv, w);
            let l = tape.add_row(l, b);
            let mut grads = tape.backward(l, Matrix::from_vec(1, 4, dl.to_vec()));
            let mut analytic = BTreeMap::new();
            analytic.insert(String::from("clf.w"), grads.take(w).expect("weight gradient"));
            analytic.insert(String::from("clf.b"), grads.take(b).expect("bias gradient"));
            let subset = ModelParams {
                tensors: ["clf.w", "clf.b"].iter().map(|&k| (String::from(k), params.get(k).clone())).collect::<BTreeMap<_, _>>(),
            };
            compare(&subset, analytic, corrupt, |p| Ok(survival_nll(&head(p), opts.bin, opts.censored)))
        }
    }
}

/// Names of the tensors a gradient check covers for `cfg`.
pub fn checked_tensors(cfg: &ModelConfig) -> Vec<String> {
    super::params::tensor_specs(cfg).into_iter().map(|s| s.name).collect()
}
