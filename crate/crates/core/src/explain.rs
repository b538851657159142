//! Per-bin attention heatmaps and effective-receptive-field maps.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::autodiff::{Tape, Var};
use crate::bag::FeatureBag;
use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::model::layers::ceil_sqrt;
use crate::model::{forward, ForwardOptions, ModelConfig, ModelParams};
use crate::survival::N_BINS;

/// How a single pooling distribution becomes four bin-specific maps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Relevance {
    /// `A_k · |⟨∂logit_b/∂Z_global, z_norm_k⟩|`
    #[default]
    GradientWeighted,
    /// The pooling weight `A_k`, identical for every bin.
    SharedAttention,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapRow {
    pub x: i32,
    pub y: i32,
    pub weights: [f64; N_BINS],
}

/// One row per original patch, in bag order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct HeatmapTable {
    pub rows: Vec<HeatmapRow>,
}

impl HeatmapTable {
    pub const HEADER: [&'static str; 6] = ["x", "y", "bin0", "bin1", "bin2", "bin3"];
}

/// Rescales each column to `[0, 1]`; a constant column becomes all zeros.
pub fn min_max_columns(raw: &mut [[f64; N_BINS]]) {
    for b in 0..N_BINS {
        let lo = raw.iter().map(|r| r[b]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|r| r[b]).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for r in raw.iter_mut() {
            r[b] = if span > 0.0 { (r[b] - lo) / span } else { 0.0 };
        }
    }
}

fn check_params(params: &ModelParams<f32>, cfg: &ModelConfig) -> Result<()> {
    params.validate(cfg).map_err(|e| match e {
        crate::Error::Data(m) => crate::Error::Data(format!("checkpoint unusable: {m}")),
        other => other,
    })
}

/// Raw (unnormalized) per-patch, per-bin relevance.
pub fn raw_relevance(
    bag: &FeatureBag,
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    mode: Relevance,
) -> Result<Vec<[f64; N_BINS]>> {
    bag.validate()?;
    check_params(params, cfg)?;
    let fwd = forward(&bag.features.cast::<f64>(), &params.cast::<f64>(), cfg, ForwardOptions::EVAL)?;
    let weights = fwd.tape.value(fwd.trace.pool_weights);
    let z_norm = fwd.tape.value(fwd.trace.z_norm);
    // logits are affine in the pooled vector, so ∂logit_b/∂Z_global is column b of the classifier
    let w = params.get("clf.w").cast::<f64>();
    let offset = 1 - fwd.trace.pool_offset;
    let mut out = Vec::with_capacity(bag.n_patches());
    for i in 0..bag.n_patches() {
        let k = i + offset;
        let a = weights[(0, k)];
        let mut r = [0.0; N_BINS];
        for (b, rb) in r.iter_mut().enumerate() {
            *rb = match mode {
                Relevance::SharedAttention => a,
                Relevance::GradientWeighted => {
                    let dot: f64 = (0..z_norm.cols()).map(|c| w[(c, b)] * z_norm[(k, c)]).sum();
                    a * dot.abs()
                }
            };
        }
        out.push(r);
    }
    if out.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        bail!(Data, "non-finite relevance");
    }
    Ok(out)
}

pub fn attention_heatmap(
    bag: &FeatureBag,
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    mode: Relevance,
) -> Result<HeatmapTable> {
    let mut raw = raw_relevance(bag, params, cfg, mode)?;
    min_max_columns(&mut raw);
    let rows = raw
        .into_iter()
        .zip(&bag.coords)
        .map(|(weights, c)| HeatmapRow { x: c[0], y: c[1], weights })
        .collect();
    Ok(HeatmapTable { rows })
}

/// `Σ_d |∂ Σ output / ∂ input_{n,d}|` for every input row `n`.
pub fn input_gradient_intensity(tape: &mut Tape<f64>, input: Var, output: Var) -> Vec<f64> {
    let total = tape.sum_all(output);
    let grads = tape.backward(total, Matrix::from_vec(1, 1, vec![1.0]));
    let n = tape.value(input).rows();
    match grads.get(input) {
        Some(g) => (0..n).map(|r| g.row(r).iter().map(|v| v.abs()).sum()).collect(),
        None => vec![0.0; n],
    }
}

/// Intensities on the `side × side` token grid, row-major; padding cells are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ErfMap {
    pub side: usize,
    pub values: Vec<f64>,
}

impl ErfMap {
    pub fn log_scaled(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.ln_1p()).collect()
    }

    /// Whitespace-separated matrix of log-scaled intensities.
    pub fn to_text(&self) -> String {
        let scaled = self.log_scaled();
        let mut s = String::new();
        for r in 0..self.side {
            let row: Vec<String> = (0..self.side).map(|c| format!("{:.6e}", scaled[r * self.side + c])).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Plain PGM (P2) with log-scaled intensities mapped to 0..=255.
    pub fn to_pgm(&self) -> String {
        let scaled = self.log_scaled();
        let hi = scaled.iter().copied().fold(0.0, f64::max);
        let mut s = format!("P2\n{} {}\n255\n", self.side, self.side);
        for r in 0..self.side {
            let row: Vec<String> = (0..self.side)
                .map(|c| {
                    let v = scaled[r * self.side + c];
                    let g = if hi > 0.0 { (v / hi * 255.0).round() as u32 } else { 0 };
                    format!("{g}")
                })
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }
}

/// Which final-stage token the receptive field is measured for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ErfTarget {
    #[default]
    ClassToken,
    /// The token at the centre cell of the padded grid.
    CenterToken,
}

/// Gradient of the summed target row of the final token sequence with respect
/// to the input features, one intensity per patch placed on the padded grid.
pub fn erf_map(
    features: &Matrix<f64>,
    params: &ModelParams<f64>,
    cfg: &ModelConfig,
    target: ErfTarget,
) -> Result<ErfMap> {
    let opts = ForwardOptions { probe_input: true, ..ForwardOptions::EVAL };
    let mut fwd = forward(features, params, cfg, opts)?;
    let side = ceil_sqrt(fwd.trace.n_padded);
    let out = match target {
        ErfTarget::ClassToken => fwd.trace.class_output,
        ErfTarget::CenterToken => {
            let centre = (side / 2) * side + side / 2;
            fwd.tape.slice_rows(fwd.trace.sequence, 1 + centre, 1)
        }
    };
    let intensity = input_gradient_intensity(&mut fwd.tape, fwd.input, out);
    let mut values = vec![0.0; side * side];
    values[..intensity.len()].copy_from_slice(&intensity);
    if values.iter().any(|v| !v.is_finite()) {
        bail!(Data, "non-finite receptive-field intensity");
    }
    Ok(ErfMap { side, values })
}

/// [`erf_map`] on a bag with patches put in coordinate order first, so the
/// map does not depend on how the patches were listed.
pub fn erf_map_bag(
    bag: &FeatureBag,
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    target: ErfTarget,
) -> Result<ErfMap> {
    bag.validate()?;
    check_params(params, cfg)?;
    let sorted = bag.sorted_by_coords();
    erf_map(&sorted.features.cast::<f64>(), &params.cast::<f64>(), cfg, target)
}
