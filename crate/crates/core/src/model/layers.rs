//! Network stages as compositions of tape operations.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::autodiff::{Tape, Var};
use crate::linalg::Matrix;
use crate::real::Real;

/// A tape with every model parameter registered as a leaf.
pub struct Graph<T> {
    pub tape: Tape<T>,
    pub vars: BTreeMap<String, Var>,
}

impl<T: Real> Graph<T> {
    /// Parameters become gradient leaves when `track` is set, constants otherwise.
    pub fn new(params: &ModelParams<T>, track: bool) -> Self {
        let mut tape = Tape::new();
        let vars = params
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if track { tape.param(v.clone()) } else { tape.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Self { tape, vars }
    }

    pub fn p(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        self.tape.value(v)
    }
}

/// `ceil(√n)²`
pub fn square_size(n: usize) -> usize {
    let s = ceil_sqrt(n);
    s * s
}

pub fn ceil_sqrt(n: usize) -> usize {
    let mut s = (n as f64).sqrt() as usize;
    while s * s < n {
        s += 1;
    }
    while s > 0 && (s - 1) * (s - 1) >= n {
        s -= 1;
    }
    s
}

/// Row indices that extend `n` tokens to `ceil(√n)²` by cycling from the start.
pub fn cycle_pad_indices(n: usize) -> Vec<usize> {
    (0..square_size(n)).map(|i| i % n).collect()
}

/// Strided reordering: `[0, r, 2r, …], [1, 1+r, …], …, [r−1, …]`.
pub fn srmamba_reorder(n: usize, rate: usize) -> Vec<usize> {
    let rate = rate.max(1);
    let mut out = Vec::with_capacity(n);
    for start in 0..rate.min(n.max(1)) {
        out.extend((start..n).step_by(rate));
    }
    out
}

pub fn inverse_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = alloc::vec![0; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

/// Segment-mean landmark matrix (`m × n`): landmark `i` averages a contiguous
/// block of `n / m` rows, the last block also taking the remainder.
pub fn landmark_matrix<T: Real>(n: usize, m: usize) -> Matrix<T> {
    let m = m.clamp(1, n);
    let seg = n / m;
    let mut l = Matrix::zeros(m, n);
    for i in 0..m {
        let start = i * seg;
        let end = if i + 1 == m { n } else { start + seg };
        let w = T::one() / T::of((end - start) as f64);
        for j in start..end {
            l[(i, j)] = w;
        }
    }
    l
}

/// Bilinear resampling matrix from an `r × r` grid to an `s × s` grid
/// (corner-aligned), shaped `r² × s²` so that `bias · M` resamples the columns.
pub fn bilinear_matrix<T: Real>(r: usize, s: usize) -> Matrix<T> {
    let axis = |i: usize| -> (usize, usize, f64) {
        let u = if s == 1 { (r - 1) as f64 / 2.0 } else { i as f64 * (r - 1) as f64 / (s - 1) as f64 };
        let lo = (u.floor() as usize).min(r - 1);
        let hi = (lo + 1).min(r - 1);
        (lo, hi, u - lo as f64)
    };
    let mut m = Matrix::zeros(r * r, s * s);
    for i in 0..s {
        let (y0, y1, fy) = axis(i);
        for j in 0..s {
            let (x0, x1, fx) = axis(j);
            let t = i * s + j;
            for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                for (xx, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    m[(yy * r + xx, t)] += T::of(wy * wx);
                }
            }
        }
    }
    m
}

/// Inverted-dropout mask: zeros with probability `p`, `1/(1−p)` otherwise.
pub fn dropout_mask<T: Real>(rows: usize, cols: usize, p: f64, rng: &mut crate::rng::Rng) -> Matrix<T> {
    use rand::Rng as _;
    let keep = T::of(1.0 / (1.0 - p));
    Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { T::zero() } else { keep })
}

pub fn project_input<T: Real>(g: &mut Graph<T>, x: Var) -> Var {
    let (w, b) = (g.p("proj.w"), g.p("proj.b"));
    let h = g.tape.matmul(x, w);
    let h = g.tape.add_row(h, b);
    g.tape.gelu(h)
}

/// Cycles the sequence to a square length and prepends the class token.
/// Returns the `(N′+1) × d` sequence and `N′`.
pub fn pad_square_with_class<T: Real>(g: &mut Graph<T>, xp: Var) -> (Var, usize) {
    let n = g.value(xp).rows();
    let idx = cycle_pad_indices(n);
    let np = idx.len();
    let padded = if np == n { xp } else { g.tape.gather_rows(xp, idx) };
    let cls = g.p("cls_token");
    (g.tape.concat_rows(&[cls, padded]), np)
}

fn scaled_scores<T: Real>(g: &mut Graph<T>, q: Var, k: Var, scale: T) -> Var {
    let s = g.tape.matmul_t(q, k);
    g.tape.scale(s, scale)
}

/// Iterative Moore–Penrose pseudo-inverse.
pub fn pinv<T: Real>(g: &mut Graph<T>, a: Var, iters: usize) -> Var {
    let mut z = g.tape.pinv_init(a);
    for _ in 0..iters {
        let az = g.tape.matmul(a, z);
        let t = g.tape.scale(az, -T::one());
        let t = g.tape.add_identity(t, T::of(7.0));
        let t = g.tape.matmul(az, t);
        let t = g.tape.scale(t, -T::one());
        let t = g.tape.add_identity(t, T::of(15.0));
        let t = g.tape.matmul(az, t);
        let t = g.tape.scale(t, -T::one());
        let t = g.tape.add_identity(t, T::of(13.0));
        let zt = g.tape.matmul(z, t);
        z = g.tape.scale(zt, T::of(0.25));
    }
    z
}

/// Pre-norm multi-head Nyström attention with residual.
pub fn nystrom_attention<T: Real>(g: &mut Graph<T>, cfg: &ModelConfig, x: Var, prefix: &str) -> Var {
    let n = g.value(x).rows();
    let (heads, dh) = (cfg.n_heads, cfg.head_dim());
    let scale = T::one() / T::of((dh as f64).sqrt());
    let xn = g.tape.layer_norm(x, g.p(&format!("{prefix}.ln.g")), g.p(&format!("{prefix}.ln.b")));
    let q = g.tape.matmul(xn, g.p(&format!("{prefix}.wq")));
    let k = g.tape.matmul(xn, g.p(&format!("{prefix}.wk")));
    let v = g.tape.matmul(xn, g.p(&format!("{prefix}.wv")));
    let land = g.tape.constant(landmark_matrix(n, cfg.n_landmarks));
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.tape.slice_cols(q, h * dh, dh);
        let kh = g.tape.slice_cols(k, h * dh, dh);
        let vh = g.tape.slice_cols(v, h * dh, dh);
        let ql = g.tape.matmul(land, qh);
        let kl = g.tape.matmul(land, kh);
        let f = scaled_scores(g, qh, kl, scale);
        let f = g.tape.softmax_rows(f);
        let a = scaled_scores(g, ql, kl, scale);
        let a = g.tape.softmax_rows(a);
        let b = scaled_scores(g, ql, kh, scale);
        let b = g.tape.softmax_rows(b);
        let z = pinv(g, a, cfg.pinv_iters);
        let bv = g.tape.matmul(b, vh);
        let zbv = g.tape.matmul(z, bv);
        outs.push(g.tape.matmul(f, zbv));
    }
    let cat = if heads == 1 { outs[0] } else { g.tape.concat_cols(&outs) };
    let o = g.tape.matmul(cat, g.p(&format!("{prefix}.wo")));
    g.tape.add(o, x)
}

/// Multi-scale depthwise positional encoding on the token grid; the class
/// token (row 0) bypasses.
pub fn ppeg_encode<T: Real>(g: &mut Graph<T>, x: Var) -> Var {
    let rows = g.value(x).rows();
    let np = rows - 1;
    let side = ceil_sqrt(np);
    assert_eq!(side * side, np, "token grid must be square");
    let cls = g.tape.slice_rows(x, 0, 1);
    let grid = g.tape.slice_rows(x, 1, np);
    let mut acc = grid;
    for k in [7usize, 5, 3] {
        let conv = g.tape.dwconv(grid, g.p(&format!("ppeg.k{k}")), side, k);
        let conv = g.tape.add_row(conv, g.p(&format!("ppeg.b{k}")));
        acc = g.tape.add(acc, conv);
    }
    g.tape.concat_rows(&[cls, acc])
}

/// Agent attention over the grid tokens (rows 1..); the class token is
/// carried through unchanged.
pub fn agent_attention<T: Real>(g: &mut Graph<T>, cfg: &ModelConfig, x: Var) -> Var {
    let rows = g.value(x).rows();
    let cls = g.tape.slice_rows(x, 0, 1);
    let grid = g.tape.slice_rows(x, 1, rows - 1);
    let out = agent_attention_tokens(g, cfg, grid);
    g.tape.concat_rows(&[cls, out])
}

/// Agent attention on an arbitrary token set, cycled to a square grid
/// internally and cropped back to the input length.
pub fn agent_attention_tokens<T: Real>(g: &mut Graph<T>, cfg: &ModelConfig, x: Var) -> Var {
    let n0 = g.value(x).rows();
    let idx = cycle_pad_indices(n0);
    let n = idx.len();
    let x = if n == n0 { x } else { g.tape.gather_rows(x, idx) };
    let side = ceil_sqrt(n);
    let d = cfg.d_model;
    let (heads, dh, np) = (cfg.n_heads, cfg.head_dim(), cfg.n_agents);
    let scale = T::one() / T::of((dh as f64).sqrt());

    let q = g.tape.matmul(x, g.p("agent.wq"));
    let kv = g.tape.matmul(x, g.p("agent.wkv"));
    let k = g.tape.slice_cols(kv, 0, d);
    let v = g.tape.slice_cols(kv, d, d);
    let agents = g.p("agent.tokens");
    let resample = g.tape.constant(bilinear_matrix(cfg.agent_bias_side, side));
    let (ba2p, bp2a) = (g.p("agent.bias_a2p"), g.p("agent.bias_p2a"));

    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let ph = g.tape.slice_cols(agents, h * dh, dh);
        let qh = g.tape.slice_cols(q, h * dh, dh);
        let kh = g.tape.slice_cols(k, h * dh, dh);
        let vh = g.tape.slice_cols(v, h * dh, dh);

        let bias = g.tape.slice_rows(ba2p, h * np, np);
        let bias = g.tape.matmul(bias, resample);
        let s = scaled_scores(g, ph, kh, scale);
        let s = g.tape.add(s, bias);
        let s = g.tape.softmax_rows(s);
        let agent_v = g.tape.matmul(s, vh);

        let bias = g.tape.slice_rows(bp2a, h * np, np);
        let bias = g.tape.matmul(bias, resample);
        let bias = g.tape.transpose(bias);
        let s = scaled_scores(g, qh, agent_v, scale);
        let s = g.tape.add(s, bias);
        let s = g.tape.softmax_rows(s);
        outs.push(g.tape.matmul(s, agent_v));
    }
    let attn = if heads == 1 { outs[0] } else { g.tape.concat_cols(&outs) };
    let local = g.tape.dwconv(v, g.p("agent.wdw"), side, 3);
    let local = g.tape.add_row(local, g.p("agent.bdw"));
    let mixed = g.tape.add(local, attn);
    let out = g.tape.matmul(mixed, g.p("agent.wout"));
    let out = g.tape.add_row(out, g.p("agent.bout"));
    if n == n0 {
        out
    } else {
        g.tape.slice_rows(out, 0, n0)
    }
}

/// Selective scan applied to already-normalized tokens in reordered sequence
/// order, with the inverse reordering applied to the output.
pub fn selective_scan<T: Real>(g: &mut Graph<T>, cfg: &ModelConfig, xn: Var, layer: usize) -> Var {
    let n = g.value(xn).rows();
    let p = format!("srmamba.{layer}");
    let order = srmamba_reorder(n, cfg.srmamba_rate);
    let inv = inverse_permutation(&order);
    let xs = g.tape.gather_rows(xn, order);
    let delta = g.tape.matmul(xs, g.p(&format!("{p}.w_delta")));
    let delta = g.tape.add_row(delta, g.p(&format!("{p}.b_delta")));
    let delta = g.tape.softplus(delta);
    let bm = g.tape.matmul(xs, g.p(&format!("{p}.w_b")));
    let cm = g.tape.matmul(xs, g.p(&format!("{p}.w_c")));
    let a = g.tape.exp(g.p(&format!("{p}.a_log")));
    let a = g.tape.scale(a, -T::one());
    let y = g.tape.selective_scan(xs, delta, a, bm, cm, g.p(&format!("{p}.d_skip")));
    g.tape.gather_rows(y, inv)
}

/// `X + SSM(LayerNorm(X))`
pub fn srmamba_layer<T: Real>(g: &mut Graph<T>, cfg: &ModelConfig, x: Var, layer: usize) -> Var {
    let p = format!("srmamba.{layer}");
    let xn = g.tape.layer_norm(x, g.p(&format!("{p}.ln.g")), g.p(&format!("{p}.ln.b")));
    let dx = selective_scan(g, cfg, xn, layer);
    g.tape.add(x, dx)
}

/// Output of [`attention_pool`].
#[derive(Clone, Copy, Debug)]
pub struct Pooled {
    /// `n × d` normalized tokens.
    pub z_norm: Var,
    /// `1 × n` softmax weights.
    pub weights: Var,
    /// `1 × d`
    pub z_global: Var,
}

pub fn attention_pool<T: Real>(g: &mut Graph<T>, z: Var, score_mask: Option<Matrix<T>>) -> Pooled {
    let z_norm = g.tape.layer_norm(z, g.p("pool.ln.g"), g.p("pool.ln.b"));
    let h = g.tape.matmul(z_norm, g.p("pool.w1"));
    let h = g.tape.add_row(h, g.p("pool.b1"));
    let h = g.tape.tanh(h);
    let s = g.tape.matmul(h, g.p("pool.w2"));
    let mut s = g.tape.add_row(s, g.p("pool.b2"));
    if let Some(mask) = score_mask {
        let m = g.tape.constant(mask);
        s = g.tape.mul(s, m);
    }
    let st = g.tape.transpose(s);
    let weights = g.tape.softmax_rows(st);
    let z_global = g.tape.matmul(weights, z_norm);
    Pooled { z_norm, weights, z_global }
}

pub fn classifier<T: Real>(g: &mut Graph<T>, z_global: Var) -> Var {
    let l = g.tape.matmul(z_global, g.p("clf.w"));
    g.tape.add_row(l, g.p("clf.b"))
}
