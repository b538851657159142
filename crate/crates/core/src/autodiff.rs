//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every intermediate matrix together with the operation
//! that produced it. [`Tape::backward`] walks the record in reverse and
//! accumulates vector–Jacobian products into the leaves that asked for a
//! gradient. Operations are coarse (matmul, row softmax, layer norm, depthwise
//! 2-D convolution, selective scan) so the backward rules are few and each
//! one is checked against finite differences.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;


use crate::linalg::Matrix;
use crate::real::Real;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddIdentity(Var, T),
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: T },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather { x: Var, idx: Vec<usize> },
    PinvInit(Var),
    DwConv { x: Var, kernel: Var, side: usize, ksize: usize },
    Scan(ScanInputs),
    SumAll(Var),
}

#[derive(Clone, Copy, Debug)]
struct ScanInputs {
    x: Var,
    delta: Var,
    a: Var,
    b: Var,
    c: Var,
    d: Var,
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
    /// Hidden states of a selective scan, `n × (channels·state)`.
    saved: Option<Matrix<T>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Grads<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads[v.0].take()
    }
}

#[inline]
fn c<T: Real>(x: f64) -> T {
    T::of(x)
}

fn gelu<T: Real>(x: T) -> T {
    let xf = x.as_f64();
    T::of(0.5 * xf * libm::erfc(-xf / core::f64::consts::SQRT_2))
}

fn gelu_grad<T: Real>(x: T) -> T {
    let xf = x.as_f64();
    let cdf = 0.5 * libm::erfc(-xf / core::f64::consts::SQRT_2);
    let pdf = (-0.5 * xf * xf).exp() / (2.0 * core::f64::consts::PI).sqrt();
    T::of(cdf + xf * pdf)
}

fn softplus<T: Real>(x: T) -> T {
    if x > c(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn softmax_rows<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// Row-wise layer-norm statistics: (normalized rows, 1/σ per row).
fn layer_norm_parts<T: Real>(x: &Matrix<T>, eps: T) -> (Matrix<T>, Vec<T>) {
    let (n, d) = x.shape();
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(n);
    let inv_d = T::one() / T::of(d as f64);
    for r in 0..n {
        let row = xhat.row_mut(r);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * rs;
        }
        rstd.push(rs);
    }
    (xhat, rstd)
}

fn dwconv_forward<T: Real>(x: &Matrix<T>, k: &Matrix<T>, side: usize, ksize: usize) -> Matrix<T> {
    let ch = x.cols();
    let r = (ksize / 2) as isize;
    let mut out = Matrix::zeros(x.rows(), ch);
    for i in 0..side as isize {
        for j in 0..side as isize {
            let orow = (i as usize) * side + j as usize;
            for di in 0..ksize as isize {
                let si = i + di - r;
                if si < 0 || si >= side as isize {
                    continue;
                }
                for dj in 0..ksize as isize {
                    let sj = j + dj - r;
                    if sj < 0 || sj >= side as isize {
                        continue;
                    }
                    let srow = (si as usize) * side + sj as usize;
                    let krow = (di as usize) * ksize + dj as usize;
                    for cc in 0..ch {
                        out[(orow, cc)] += k[(krow, cc)] * x[(srow, cc)];
                    }
                }
            }
        }
    }
    out
}

/// Zero-order-hold coefficients `(Ā, B̄) = (e^{ΔA}, (e^{ΔA} − 1)/A)`.
#[inline]
fn zoh<T: Real>(delta: T, a: T) -> (T, T) {
    let da = (delta * a).exp();
    let bbar = if a.abs() > c(1e-12) { (da - T::one()) / a } else { delta };
    (da, bbar)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad, saved: None });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Leaf that receives a gradient (a trainable tensor or a probed input).
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let ng = self.ng(&[a]);
        self.push(v, Op::Transpose(a), ng)
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Matrix<T> {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.as_slice().iter().zip(y.as_slice()).map(|(&p, &q)| f(p, q)).collect();
        Matrix::from_vec(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p + q);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p - q);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p * q);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Mul(a, b), ng)
    }

    fn row_broadcast(&self, a: Var, row: Var, f: impl Fn(T, T) -> T) -> Matrix<T> {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols()), r.shape(), "row broadcast shape mismatch");
        Matrix::from_fn(x.rows(), x.cols(), |i, j| f(x[(i, j)], r[(0, j)]))
    }

    /// `a + 1·row` for a `1 × cols` row vector.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.row_broadcast(a, row, |p, q| p + q);
        let ng = self.ng(&[a, row]);
        self.push(v, Op::AddRow(a, row), ng)
    }

    /// Scales every column `j` of `a` by `row[j]`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.row_broadcast(a, row, |p, q| p * q);
        let ng = self.ng(&[a, row]);
        self.push(v, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).scale(s);
        let ng = self.ng(&[a]);
        self.push(v, Op::Scale(a, s), ng)
    }

    /// `a + s·I` for square `a`.
    pub fn add_identity(&mut self, a: Var, s: T) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.rows(), v.cols(), "add_identity on non-square matrix");
        for i in 0..v.rows() {
            v[(i, i)] += s;
        }
        let ng = self.ng(&[a]);
        self.push(v, Op::AddIdentity(a, s), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        let ng = self.ng(&[a]);
        self.push(v, Op::Gelu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        let ng = self.ng(&[a]);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        let ng = self.ng(&[a]);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        let ng = self.ng(&[a]);
        self.push(v, Op::Softplus(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        let ng = self.ng(&[a]);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    /// Row-wise layer normalization with `1 × d` affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let eps = c(1e-5);
        let (xhat, _) = layer_norm_parts(self.value(x), eps);
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.shape(), (1, xhat.cols()), "layer norm gamma shape");
        assert_eq!(b.shape(), (1, xhat.cols()), "layer norm beta shape");
        let v = Matrix::from_fn(xhat.rows(), xhat.cols(), |i, j| xhat[(i, j)] * g[(0, j)] + b[(0, j)]);
        let ng = self.ng(&[x, gamma, beta]);
        self.push(v, Op::LayerNorm { x, gamma, beta, eps }, ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let src = self.value(x);
        assert!(start + len <= src.cols(), "column slice out of range");
        let v = Matrix::from_fn(src.rows(), len, |i, j| src[(i, start + j)]);
        let ng = self.ng(&[x]);
        self.push(v, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                v.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
            }
            off += m.cols();
        }
        let ng = self.ng(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(m.as_slice());
            rows += m.rows();
        }
        let ng = self.ng(parts);
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Output row `i` is input row `idx[i]`; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let v = self.value(x).select_rows(&idx);
        let ng = self.ng(&[x]);
        self.push(v, Op::Gather { x, idx }, ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        self.gather_rows(x, (start..start + len).collect())
    }

    /// Initial iterate of the iterative pseudo-inverse, `aᵀ / (‖a‖_∞ ‖a‖_1)`
    /// (largest absolute row sum times largest absolute column sum).
    pub fn pinv_init(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let (_, rsum, _, csum) = pinv_norms(m);
        let v = m.transpose().scale(T::one() / (rsum * csum));
        let ng = self.ng(&[a]);
        self.push(v, Op::PinvInit(a), ng)
    }

    /// Depthwise "same" 2-D convolution, stride 1, zero padding. `x` holds a
    /// `side × side` grid in row-major order (`side² × channels`); `kernel` is
    /// `ksize² × channels`.
    pub fn dwconv(&mut self, x: Var, kernel: Var, side: usize, ksize: usize) -> Var {
        assert_eq!(self.value(x).rows(), side * side, "dwconv grid size");
        assert_eq!(self.value(kernel).shape(), (ksize * ksize, self.value(x).cols()), "dwconv kernel shape");
        let v = dwconv_forward(self.value(x), self.value(kernel), side, ksize);
        let ng = self.ng(&[x, kernel]);
        self.push(v, Op::DwConv { x, kernel, side, ksize }, ng)
    }

    /// Selective scan over rows `t` of `x` (`n × ch`):
    ///
    /// `h_t = e^{Δ_t A} ⊙ h_{t−1} + ((e^{Δ_t A} − 1)/A) · B_t · x_t`,
    /// `y_t = C_t · h_t + D ⊙ x_t`,
    ///
    /// with per-step `delta` (`n × ch`), diagonal state matrix `a`
    /// (`ch × state`), input/output projections `b`, `cm` (`n × state`) and
    /// skip `d` (`1 × ch`).
    pub fn selective_scan(&mut self, x: Var, delta: Var, a: Var, b: Var, cm: Var, d: Var) -> Var {
        let (xv, dv, av, bv, cv, skip) =
            (self.value(x), self.value(delta), self.value(a), self.value(b), self.value(cm), self.value(d));
        let (n, ch) = xv.shape();
        let s = av.cols();
        assert_eq!(dv.shape(), (n, ch), "scan delta shape");
        assert_eq!(av.rows(), ch, "scan A shape");
        assert_eq!(bv.shape(), (n, s), "scan B shape");
        assert_eq!(cv.shape(), (n, s), "scan C shape");
        assert_eq!(skip.shape(), (1, ch), "scan D shape");
        let mut h = vec![T::zero(); ch * s];
        let mut hs = Matrix::zeros(n, ch * s);
        let mut y = Matrix::zeros(n, ch);
        for t in 0..n {
            for k in 0..ch {
                let xt = xv[(t, k)];
                let dt = dv[(t, k)];
                let mut acc = skip[(0, k)] * xt;
                for j in 0..s {
                    let (da, bbar) = zoh(dt, av[(k, j)]);
                    let hv = da * h[k * s + j] + bbar * bv[(t, j)] * xt;
                    h[k * s + j] = hv;
                    acc += cv[(t, j)] * hv;
                }
                y[(t, k)] = acc;
            }
            hs.row_mut(t).copy_from_slice(&h);
        }
        let ng = self.ng(&[x, delta, a, b, cm, d]);
        let var = self.push(y, Op::Scan(ScanInputs { x, delta, a, b, c: cm, d }), ng);
        self.nodes[var.0].saved = Some(hs);
        var
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).as_slice().iter().copied().sum::<T>();
        let ng = self.ng(&[a]);
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumAll(a), ng)
    }

    /// Back-propagates `seed` (the gradient of some scalar objective with
    /// respect to `output`) to every node that needs a gradient.
    pub fn backward(&self, output: Var, seed: Matrix<T>) -> Grads<T> {
        assert_eq!(self.value(output).shape(), seed.shape(), "seed shape mismatch");
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.matmul_t(self.value(*b)));
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.matmul(self.value(*b)));
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, g.t_matmul(self.value(*a)));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, zip_map(g, y, |p, q| p * q));
                self.accumulate(grads, *b, zip_map(g, x, |p, q| p * q));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *row, col_sums(g));
            }
            Op::MulRow(a, row) => {
                let (x, r) = (self.value(*a), self.value(*row));
                self.accumulate(grads, *a, Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * r[(0, j)]));
                let gx = zip_map(g, x, |p, q| p * q);
                self.accumulate(grads, *row, col_sums(&gx));
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::AddIdentity(a, _) => self.accumulate(grads, *a, g.clone()),
            Op::Gelu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip_map(g, x, |p, q| p * gelu_grad(q)));
            }
            Op::Tanh(a) => self.accumulate(grads, *a, zip_map(g, out, |p, y| p * (T::one() - y * y))),
            Op::Exp(a) => self.accumulate(grads, *a, zip_map(g, out, |p, y| p * y)),
            Op::Softplus(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip_map(g, x, |p, q| p * sigmoid(q)));
            }
            Op::SoftmaxRows(a) => {
                let mut gx = g.clone();
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let dotp = crate::linalg::dot(g.row(r), y);
                    for (j, v) in gx.row_mut(r).iter_mut().enumerate() {
                        *v = y[j] * (*v - dotp);
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (xhat, rstd) = layer_norm_parts(self.value(*x), *eps);
                let gm = self.value(*gamma);
                let (n, d) = xhat.shape();
                if self.nodes[x.0].needs_grad {
                    let inv_d = T::one() / T::of(d as f64);
                    let mut gx = Matrix::zeros(n, d);
                    for r in 0..n {
                        let gh: Vec<T> = (0..d).map(|j| g[(r, j)] * gm[(0, j)]).collect();
                        let mean_gh = gh.iter().copied().sum::<T>() * inv_d;
                        let mean_ghx = (0..d).map(|j| gh[j] * xhat[(r, j)]).sum::<T>() * inv_d;
                        for j in 0..d {
                            gx[(r, j)] = rstd[r] * (gh[j] - mean_gh - xhat[(r, j)] * mean_ghx);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *gamma, col_sums(&zip_map(g, &xhat, |p, q| p * q)));
                self.accumulate(grads, *beta, col_sums(g));
            }
            Op::SliceCols { x, start } => {
                let src = self.value(*x);
                let mut gx = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let gp = Matrix::from_fn(g.rows(), w, |r, j| g[(r, off + j)]);
                    self.accumulate(grads, p, gp);
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    let gp = Matrix::from_fn(h, g.cols(), |r, j| g[(off + r, j)]);
                    self.accumulate(grads, p, gp);
                    off += h;
                }
            }
            Op::Gather { x, idx } => {
                let src = self.value(*x);
                let mut gx = Matrix::zeros(src.rows(), src.cols());
                for (r, &s) in idx.iter().enumerate() {
                    for (a, &b) in gx.row_mut(s).iter_mut().zip(g.row(r)) {
                        *a += b;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::PinvInit(a) => {
                let m = self.value(*a);
                let (r_idx, rsum, c_idx, csum) = pinv_norms(m);
                // out = mᵀ / (R·C); R and C depend on |m| along the arg-max row and column.
                let mut gm = g.transpose().scale(T::one() / (rsum * csum));
                let ginner = crate::linalg::dot(g.as_slice(), out.as_slice());
                for j in 0..m.cols() {
                    let v = m[(r_idx, j)];
                    gm[(r_idx, j)] -= ginner / rsum * sign(v);
                }
                for r in 0..m.rows() {
                    let v = m[(r, c_idx)];
                    gm[(r, c_idx)] -= ginner / csum * sign(v);
                }
                self.accumulate(grads, *a, gm);
            }
            Op::DwConv { x, kernel, side, ksize } => {
                let (xv, kv) = (self.value(*x), self.value(*kernel));
                let ch = xv.cols();
                let r = (*ksize / 2) as isize;
                let mut gx = Matrix::zeros(xv.rows(), ch);
                let mut gk = Matrix::zeros(kv.rows(), ch);
                let side_i = *side as isize;
                for i in 0..side_i {
                    for j in 0..side_i {
                        let orow = (i * side_i + j) as usize;
                        for di in 0..*ksize as isize {
                            let si = i + di - r;
                            if si < 0 || si >= side_i {
                                continue;
                            }
                            for dj in 0..*ksize as isize {
                                let sj = j + dj - r;
                                if sj < 0 || sj >= side_i {
                                    continue;
                                }
                                let srow = (si * side_i + sj) as usize;
                                let krow = (di as usize) * *ksize + dj as usize;
                                for cc in 0..ch {
                                    let go = g[(orow, cc)];
                                    gx[(srow, cc)] += kv[(krow, cc)] * go;
                                    gk[(krow, cc)] += xv[(srow, cc)] * go;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *kernel, gk);
            }
            Op::Scan(inp) => self.scan_backward(inp, node.saved.as_ref().expect("scan states"), g, grads),
            Op::SumAll(a) => {
                let src = self.value(*a);
                self.accumulate(grads, *a, Matrix::filled(src.rows(), src.cols(), g[(0, 0)]));
            }
        }
    }

    fn scan_backward(&self, inp: &ScanInputs, hs: &Matrix<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let (xv, dv, av, bv, cv, skip) = (
            self.value(inp.x),
            self.value(inp.delta),
            self.value(inp.a),
            self.value(inp.b),
            self.value(inp.c),
            self.value(inp.d),
        );
        let (n, ch) = xv.shape();
        let s = av.cols();
        let mut gx = Matrix::zeros(n, ch);
        let mut gdelta = Matrix::zeros(n, ch);
        let mut ga = Matrix::zeros(ch, s);
        let mut gb = Matrix::zeros(n, s);
        let mut gc = Matrix::zeros(n, s);
        let mut gd = Matrix::zeros(1, ch);
        let mut gh = vec![T::zero(); ch * s];
        for t in (0..n).rev() {
            let h_t = hs.row(t);
            for k in 0..ch {
                let xt = xv[(t, k)];
                let dt = dv[(t, k)];
                let gy = g[(t, k)];
                gd[(0, k)] += gy * xt;
                gx[(t, k)] += gy * skip[(0, k)];
                for j in 0..s {
                    let idx = k * s + j;
                    gc[(t, j)] += gy * h_t[idx];
                    let ghv = gh[idx] + gy * cv[(t, j)];
                    let a = av[(k, j)];
                    let (da, bbar) = zoh(dt, a);
                    let h_prev = if t > 0 { hs[(t - 1, idx)] } else { T::zero() };
                    let bt = bv[(t, j)];
                    let g_da = ghv * h_prev;
                    let g_bbar = ghv * bt * xt;
                    gb[(t, j)] += ghv * bbar * xt;
                    gx[(t, k)] += ghv * bbar * bt;
                    let dbbar_da = if a.abs() > c(1e-12) { (dt * da * a - (da - T::one())) / (a * a) } else { T::zero() };
                    gdelta[(t, k)] += g_da * a * da + g_bbar * da;
                    ga[(k, j)] += g_da * dt * da + g_bbar * dbbar_da;
                    gh[idx] = ghv * da;
                }
            }
        }
        self.accumulate(grads, inp.x, gx);
        self.accumulate(grads, inp.delta, gdelta);
        self.accumulate(grads, inp.a, ga);
        self.accumulate(grads, inp.b, gb);
        self.accumulate(grads, inp.c, gc);
        self.accumulate(grads, inp.d, gd);
    }
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// (arg-max row, max absolute row sum, arg-max column, max absolute column sum).
fn pinv_norms<T: Real>(m: &Matrix<T>) -> (usize, T, usize, T) {
    let mut best_r = (0, T::neg_infinity());
    for r in 0..m.rows() {
        let s = m.row(r).iter().map(|v| v.abs()).sum::<T>();
        if s > best_r.1 {
            best_r = (r, s);
        }
    }
    let mut best_c = (0, T::neg_infinity());
    for cc in 0..m.cols() {
        let s = (0..m.rows()).map(|r| m[(r, cc)].abs()).sum::<T>();
        if s > best_c.1 {
            best_c = (cc, s);
        }
    }
    (best_r.0, best_r.1, best_c.0, best_c.1)
}

fn zip_map<T: Real>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&p, &q)| f(p, q)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn col_sums<T: Real>(g: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn rand_matrix(rng: &mut crate::rng::Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// Checks d(Σ w ⊙ f(inputs))/d(inputs) against central differences.
    fn check(inputs: Vec<Matrix<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut rng = crate::rng::substream(1, "autodiff-test", 0);
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
        let out = f(&mut tape, &vars);
        let (r, cc) = tape.value(out).shape();
        let w = rand_matrix(&mut rng, r, cc);
        let eval = |ins: &[Matrix<f64>]| -> f64 {
            let mut t = Tape::new();
            let vs: Vec<Var> = ins.iter().map(|m| t.param(m.clone())).collect();
            let o = f(&mut t, &vs);
            crate::linalg::dot(t.value(o).as_slice(), w.as_slice())
        };
        let grads = tape.backward(out, w.clone());
        let h = 1e-6;
        for (k, m) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()));
            for idx in 0..m.len() {
                let mut plus = inputs.clone();
                plus[k].as_mut_slice()[idx] += h;
                let mut minus = inputs.clone();
                minus[k].as_mut_slice()[idx] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = analytic.as_slice()[idx];
                assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "input {k} elem {idx}: fd {fd} vs analytic {an}");
            }
        }
    }

    #[test]
    fn elementwise_and_products() {
        let mut rng = crate::rng::substream(2, "t", 0);
        let a = rand_matrix(&mut rng, 3, 4);
        let b = rand_matrix(&mut rng, 4, 2);
        let c = rand_matrix(&mut rng, 3, 4);
        check(vec![a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]));
        check(vec![a.clone(), c.clone()], |t, v| t.matmul_t(v[0], v[1]));
        check(vec![a.clone(), c.clone()], |t, v| {
            let m = t.mul(v[0], v[1]);
            let s = t.sub(m, v[1]);
            let g = t.gelu(s);
            let h = t.tanh(g);
            let e = t.exp(h);
            let sp = t.softplus(e);
            t.add(sp, v[0])
        });
    }

    #[test]
    fn row_ops_and_norms() {
        let mut rng = crate::rng::substream(3, "t", 0);
        let a = rand_matrix(&mut rng, 4, 5);
        let g = rand_matrix(&mut rng, 1, 5);
        let b = rand_matrix(&mut rng, 1, 5);
        check(vec![a.clone(), g.clone(), b.clone()], |t, v| t.layer_norm(v[0], v[1], v[2]));
        check(vec![a.clone(), g.clone()], |t, v| {
            let m = t.mul_row(v[0], v[1]);
            let r = t.add_row(m, v[1]);
            t.softmax_rows(r)
        });
        check(vec![a.clone()], |t, v| {
            let s = t.slice_cols(v[0], 1, 3);
            let u = t.slice_cols(v[0], 0, 2);
            let cat = t.concat_cols(&[u, s]);
            let g = t.gather_rows(cat, vec![3, 0, 0, 2]);
            let rows = t.concat_rows(&[g, cat]);
            let tr = t.transpose(rows);
            t.scale(tr, 0.7)
        });
        check(vec![a], |t, v| {
            let s = t.sum_all(v[0]);
            t.scale(s, 2.0)
        });
    }

    #[test]
    fn pinv_iteration_gradient() {
        let mut rng = crate::rng::substream(4, "t", 0);
        let a = rand_matrix(&mut rng, 3, 3);
        check(vec![a], |t, v| {
            let sm = t.softmax_rows(v[0]);
            let z = t.pinv_init(sm);
            let az = t.matmul(sm, z);
            let inner = t.add_identity(az, 7.0);
            let zz = t.matmul(z, inner);
            t.add_identity(zz, -0.5)
        });
    }

    #[test]
    fn dwconv_gradient() {
        let mut rng = crate::rng::substream(5, "t", 0);
        let x = rand_matrix(&mut rng, 9, 2);
        let k3 = rand_matrix(&mut rng, 9, 2);
        let k5 = rand_matrix(&mut rng, 25, 2);
        check(vec![x.clone(), k3], |t, v| t.dwconv(v[0], v[1], 3, 3));
        check(vec![x, k5], |t, v| t.dwconv(v[0], v[1], 3, 5));
    }

    #[test]
    fn scan_gradient() {
        let mut rng = crate::rng::substream(6, "t", 0);
        let (n, ch, s) = (5, 3, 2);
        let x = rand_matrix(&mut rng, n, ch);
        let delta = rand_matrix(&mut rng, n, ch).map(|v| 0.3 + v.abs());
        let a = rand_matrix(&mut rng, ch, s).map(|v| -0.5 - v.abs());
        let b = rand_matrix(&mut rng, n, s);
        let cm = rand_matrix(&mut rng, n, s);
        let d = rand_matrix(&mut rng, 1, ch);
        check(vec![x, delta, a, b, cm, d], |t, v| t.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]));
    }

    #[test]
    fn gelu_values() {
        assert!((gelu(1.0f64) - 0.841_344_746).abs() < 1e-8);
        assert_eq!(gelu(0.0f64), 0.0);
        assert!(gelu(-10.0f64).abs() < 1e-6);
    }
}
