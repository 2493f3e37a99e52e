//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only tape. Each operation computes its value
//! eagerly and, when gradients are enabled, records its parents plus a
//! backward closure that maps the output gradient to parent gradients.
//! [`Graph::backward`] walks the tape in reverse creation order, which is
//! always a valid topological order.
//!
//! Graphs built with [`Graph::inference`] skip all bookkeeping and serve as
//! the forward-only evaluation path, so training and inference share one
//! implementation of every operator.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-8;

type BackFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackFn>,
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

/// Gradients of one scalar node with respect to every reachable node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence
    /// the differentiated scalar.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Forward-only graph: values are computed, backward closures are not
    /// recorded and `backward` must not be called.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, backward: Option<BackFn>) -> Var {
        let id = self.nodes.len();
        if self.grad_enabled {
            self.nodes.push(Node {
                value,
                parents,
                backward,
            });
        } else {
            self.nodes.push(Node {
                value,
                parents: Vec::new(),
                backward: None,
            });
        }
        Var(id)
    }

    /// Leaf node. Inputs and parameters are both leaves; gradients are
    /// accumulated for any leaf the loss depends on.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, vec![], None)
    }

    /// Identity with no gradient flow.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, vec![], None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let out = va.zip_map(vb, |x, y| x + y);
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g: &Tensor| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g: &Tensor| vec![g.clone(), g.map(|x| -x)])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        let out = va.zip_map(&vb, |x, y| x * y);
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g: &Tensor| {
                vec![g.zip_map(&vb, |x, y| x * y), g.zip_map(&va, |x, y| x * y)]
            })),
        )
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| s * x);
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| vec![g.map(|x| s * x)])),
        )
    }

    /// Broadcast-add a 1 x C row vector to every row of an R x C matrix.
    pub fn add_rowvec(&mut self, a: Var, v: Var) -> Var {
        let va = self.value(a);
        let vv = self.value(v);
        assert_eq!(vv.rows(), 1, "add_rowvec: v must be 1 x C");
        assert_eq!(va.cols(), vv.cols(), "add_rowvec: width mismatch");
        let (rows, cols) = va.shape();
        let mut data = va.to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += vv.get(0, c);
            }
        }
        self.push(
            Tensor::from_vec(rows, cols, data),
            vec![a, v],
            Some(Box::new(move |g: &Tensor| {
                let mut gv = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        gv[c] += g.get(r, c);
                    }
                }
                vec![g.clone(), Tensor::row_vec(gv)]
            })),
        )
    }

    /// A (R x K) times B (K x C).
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        assert_eq!(va.cols(), vb.rows(), "matmul: inner dims differ");
        let out = matmul_raw(&va, &vb);
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g: &Tensor| {
                // dA = g . B^T ; dB = A^T . g
                vec![matmul_nt(g, &vb), matmul_tn(&va, g)]
            })),
        )
    }

    /// A (R x K) times B^T where B is C x K; result R x C.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        assert_eq!(va.cols(), vb.cols(), "matmul_bt: K dims differ");
        let out = matmul_nt(&va, &vb);
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g: &Tensor| {
                // y = A B^T : dA = g . B ; dB = g^T . A
                vec![matmul_raw(g, &vb), matmul_tn(g, &va)]
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let y = out.clone();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g.zip_map(&y, |gi, yi| gi * yi * (1.0 - yi))]
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let y = out.clone();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g.zip_map(&y, |gi, yi| gi * (1.0 - yi * yi))]
            })),
        )
    }

    /// Sigmoid-weighted linear unit, x * sigmoid(x).
    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a).clone();
        let out = x.map(|v| v * sigmoid(v));
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g.zip_map(&x, |gi, xi| {
                    let s = sigmoid(xi);
                    gi * (s + xi * s * (1.0 - s))
                })]
            })),
        )
    }

    /// Overflow-safe log(1 + exp(x)).
    pub fn softplus(&mut self, a: Var) -> Var {
        let x = self.value(a).clone();
        let out = x.map(softplus);
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g.zip_map(&x, |gi, xi| gi * sigmoid(xi))]
            })),
        )
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        let y = out.clone();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g.zip_map(&y, |gi, yi| gi / (2.0 * yi))]
            })),
        )
    }

    /// Softmax along each column (normalizes over rows).
    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (rows, cols) = va.shape();
        let mut data = vec![0.0; rows * cols];
        for c in 0..cols {
            let mut mx = f64::NEG_INFINITY;
            for r in 0..rows {
                mx = mx.max(va.get(r, c));
            }
            let mut z = 0.0;
            for r in 0..rows {
                let e = (va.get(r, c) - mx).exp();
                data[r * cols + c] = e;
                z += e;
            }
            for r in 0..rows {
                data[r * cols + c] /= z;
            }
        }
        let out = Tensor::from_vec(rows, cols, data);
        let y = out.clone();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let mut gx = vec![0.0; rows * cols];
                for c in 0..cols {
                    let mut dot = 0.0;
                    for r in 0..rows {
                        dot += g.get(r, c) * y.get(r, c);
                    }
                    for r in 0..rows {
                        gx[r * cols + c] = y.get(r, c) * (g.get(r, c) - dot);
                    }
                }
                vec![Tensor::from_vec(rows, cols, gx)]
            })),
        )
    }

    /// Softmax along each row (normalizes over columns).
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (rows, cols) = va.shape();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = va.row(r);
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut z = 0.0;
            for c in 0..cols {
                let e = (row[c] - mx).exp();
                data[r * cols + c] = e;
                z += e;
            }
            for c in 0..cols {
                data[r * cols + c] /= z;
            }
        }
        let out = Tensor::from_vec(rows, cols, data);
        let y = out.clone();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let mut dot = 0.0;
                    for c in 0..cols {
                        dot += g.get(r, c) * y.get(r, c);
                    }
                    for c in 0..cols {
                        gx[r * cols + c] = y.get(r, c) * (g.get(r, c) - dot);
                    }
                }
                vec![Tensor::from_vec(rows, cols, gx)]
            })),
        )
    }

    /// Mean over rows: R x C -> 1 x C.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (rows, cols) = va.shape();
        let mut data = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c] += va.get(r, c);
            }
        }
        for v in &mut data {
            *v /= rows as f64;
        }
        self.push(
            Tensor::row_vec(data),
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        gx[r * cols + c] = g.get(0, c) / rows as f64;
                    }
                }
                vec![Tensor::from_vec(rows, cols, gx)]
            })),
        )
    }

    /// Stream-mean pooling: R x 3m -> R x m with
    /// `out[:, d] = (a[:, d] + a[:, d+m] + a[:, d+2m]) / 3`.
    ///
    /// Groups the d-th feature of each of the three concatenated blocks, so
    /// pooling identical blocks returns the common block unchanged.
    pub fn pool3(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (rows, cols) = va.shape();
        assert_eq!(cols % 3, 0, "pool3: width must be divisible by 3");
        let m = cols / 3;
        let mut data = vec![0.0; rows * m];
        for r in 0..rows {
            for d in 0..m {
                data[r * m + d] =
                    (va.get(r, d) + va.get(r, d + m) + va.get(r, d + 2 * m)) / 3.0;
            }
        }
        self.push(
            Tensor::from_vec(rows, m, data),
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    for d in 0..m {
                        let gv = g.get(r, d) / 3.0;
                        gx[r * cols + d] = gv;
                        gx[r * cols + d + m] = gv;
                        gx[r * cols + d + 2 * m] = gv;
                    }
                }
                vec![Tensor::from_vec(rows, cols, gx)]
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(widths.iter()) {
            let vp = self.value(p);
            assert_eq!(vp.rows(), rows, "concat_cols: row mismatch");
            for r in 0..rows {
                data[r * total + off..r * total + off + w].copy_from_slice(vp.row(r));
            }
            off += w;
        }
        let widths_b = widths.clone();
        self.push(
            Tensor::from_vec(rows, total, data),
            parts.to_vec(),
            Some(Box::new(move |g: &Tensor| {
                let mut out = Vec::with_capacity(widths_b.len());
                let mut off = 0;
                for &w in &widths_b {
                    let mut part = vec![0.0; rows * w];
                    for r in 0..rows {
                        part[r * w..(r + 1) * w]
                            .copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    out.push(Tensor::from_vec(rows, w, part));
                    off += w;
                }
                out
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let heights: Vec<usize> = parts.iter().map(|&p| self.value(p).rows()).collect();
        let total: usize = heights.iter().sum();
        let mut data = Vec::with_capacity(total * cols);
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.cols(), cols, "concat_rows: column mismatch");
            data.extend_from_slice(vp.data());
        }
        let heights_b = heights.clone();
        self.push(
            Tensor::from_vec(total, cols, data),
            parts.to_vec(),
            Some(Box::new(move |g: &Tensor| {
                let mut out = Vec::with_capacity(heights_b.len());
                let mut r0 = 0;
                for &h in &heights_b {
                    let mut part = Vec::with_capacity(h * cols);
                    for r in r0..r0 + h {
                        part.extend_from_slice(g.row(r));
                    }
                    out.push(Tensor::from_vec(h, cols, part));
                    r0 += h;
                }
                out
            })),
        )
    }

    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Var {
        let va = self.value(a);
        let (rows, cols) = va.shape();
        assert!(r0 < r1 && r1 <= rows, "slice_rows out of range");
        let mut data = Vec::with_capacity((r1 - r0) * cols);
        for r in r0..r1 {
            data.extend_from_slice(va.row(r));
        }
        self.push(
            Tensor::from_vec(r1 - r0, cols, data),
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let mut gx = vec![0.0; rows * cols];
                for r in r0..r1 {
                    gx[r * cols..(r + 1) * cols].copy_from_slice(g.row(r - r0));
                }
                vec![Tensor::from_vec(rows, cols, gx)]
            })),
        )
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let va = self.value(a);
        let (rows, cols) = va.shape();
        assert!(c0 < c1 && c1 <= cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(rows * (c1 - c0));
        for r in 0..rows {
            data.extend_from_slice(&va.row(r)[c0..c1]);
        }
        self.push(
            Tensor::from_vec(rows, c1 - c0, data),
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    gx[r * cols + c0..r * cols + c1].copy_from_slice(g.row(r));
                }
                vec![Tensor::from_vec(rows, cols, gx)]
            })),
        )
    }

    /// Per-row layer normalization with learnable gain/bias (both 1 x C).
    /// Rows are normalized to zero mean and unit variance before the affine.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let vx = self.value(x).clone();
        let vg = self.value(gamma).clone();
        let vb = self.value(beta);
        let (rows, cols) = vx.shape();
        assert_eq!(vg.shape(), (1, cols), "layer_norm: gamma shape");
        assert_eq!(vb.shape(), (1, cols), "layer_norm: beta shape");
        let mut normed = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                normed[r * cols + c] = (row[c] - mean) * inv;
            }
        }
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] = normed[r * cols + c] * vg.get(0, c) + vb.get(0, c);
            }
        }
        let normed = Tensor::from_vec(rows, cols, normed);
        let normed_b = normed.clone();
        self.push(
            Tensor::from_vec(rows, cols, out),
            vec![x, gamma, beta],
            Some(Box::new(move |g: &Tensor| {
                let mut ggamma = vec![0.0; cols];
                let mut gbeta = vec![0.0; cols];
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for c in 0..cols {
                        let gh = g.get(r, c) * vg.get(0, c);
                        m1 += gh;
                        m2 += gh * normed_b.get(r, c);
                        ggamma[c] += g.get(r, c) * normed_b.get(r, c);
                        gbeta[c] += g.get(r, c);
                    }
                    m1 /= cols as f64;
                    m2 /= cols as f64;
                    for c in 0..cols {
                        let gh = g.get(r, c) * vg.get(0, c);
                        gx[r * cols + c] =
                            (gh - m1 - normed_b.get(r, c) * m2) * inv_std[r];
                    }
                }
                vec![
                    Tensor::from_vec(rows, cols, gx),
                    Tensor::row_vec(ggamma),
                    Tensor::row_vec(gbeta),
                ]
            })),
        )
    }

    /// Unnormalized discrete Fourier transform along the row (time) axis of
    /// each column, returning real and imaginary parts concatenated along
    /// the feature axis: N x C -> N x 2C with
    /// `out[i, c] = Re(Z[i, c])`, `out[i, C + c] = Im(Z[i, c])` where
    /// `Z[i, c] = sum_n x[n, c] * exp(-2 pi j i n / N)`.
    pub fn dft_concat(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (n, cols) = va.shape();
        let fwd = fft_plan(n, true);
        let mut out = vec![0.0; n * 2 * cols];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for c in 0..cols {
            for t in 0..n {
                buf[t] = Complex::new(va.get(t, c), 0.0);
            }
            fwd.process(&mut buf);
            for i in 0..n {
                out[i * 2 * cols + c] = buf[i].re;
                out[i * 2 * cols + cols + c] = buf[i].im;
            }
        }
        self.push(
            Tensor::from_vec(n, 2 * cols, out),
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                // Adjoint of the unnormalized forward transform is the
                // unnormalized inverse: gx[n] = Re(sum_i G[i] e^{+2 pi j i n / N}).
                let inv = fft_plan(n, false);
                let mut gx = vec![0.0; n * cols];
                let mut buf = vec![Complex::new(0.0, 0.0); n];
                for c in 0..cols {
                    for i in 0..n {
                        buf[i] = Complex::new(g.get(i, c), g.get(i, cols + c));
                    }
                    inv.process(&mut buf);
                    for t in 0..n {
                        gx[t * cols + c] = buf[t].re;
                    }
                }
                vec![Tensor::from_vec(n, cols, gx)]
            })),
        )
    }

    /// 1-D convolution. `x` is Cin x L, `w` is Cout x (Cin*K) with tap
    /// layout `w[co, ci*K + j]`, `b` is 1 x Cout. Zero padding `pad` on both
    /// sides, output length `(L + 2*pad - K)/stride + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, k: usize, stride: usize, pad: usize) -> Var {
        let vx = self.value(x).clone();
        let vw = self.value(w).clone();
        let vb = self.value(b);
        let (cin, len) = vx.shape();
        let cout = vw.rows();
        assert_eq!(vw.cols(), cin * k, "conv1d: weight width");
        assert_eq!(vb.shape(), (1, cout), "conv1d: bias shape");
        assert!(len + 2 * pad >= k, "conv1d: input shorter than kernel");
        let lo = (len + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; cout * lo];
        for co in 0..cout {
            for t in 0..lo {
                let mut acc = vb.get(0, co);
                for ci in 0..cin {
                    for j in 0..k {
                        let u = (t * stride + j) as isize - pad as isize;
                        if u >= 0 && (u as usize) < len {
                            acc += vw.get(co, ci * k + j) * vx.get(ci, u as usize);
                        }
                    }
                }
                out[co * lo + t] = acc;
            }
        }
        self.push(
            Tensor::from_vec(cout, lo, out),
            vec![x, w, b],
            Some(Box::new(move |g: &Tensor| {
                let mut gx = vec![0.0; cin * len];
                let mut gw = vec![0.0; cout * cin * k];
                let mut gb = vec![0.0; cout];
                for co in 0..cout {
                    for t in 0..lo {
                        let gv = g.get(co, t);
                        gb[co] += gv;
                        for ci in 0..cin {
                            for j in 0..k {
                                let u = (t * stride + j) as isize - pad as isize;
                                if u >= 0 && (u as usize) < len {
                                    let u = u as usize;
                                    gw[co * cin * k + ci * k + j] += gv * vx.get(ci, u);
                                    gx[ci * len + u] += gv * vw.get(co, ci * k + j);
                                }
                            }
                        }
                    }
                }
                vec![
                    Tensor::from_vec(cin, len, gx),
                    Tensor::from_vec(cout, cin * k, gw),
                    Tensor::row_vec(gb),
                ]
            })),
        )
    }

    /// Nearest-neighbour 2x upsampling along the length axis, cropped to
    /// `target` (which must be at most 2L): `y[c, t] = x[c, t/2]`.
    pub fn upsample2_to(&mut self, x: Var, target: usize) -> Var {
        let vx = self.value(x);
        let (ch, len) = vx.shape();
        assert!(target >= 1 && target <= 2 * len, "upsample2_to: bad target");
        let mut out = vec![0.0; ch * target];
        for c in 0..ch {
            for t in 0..target {
                out[c * target + t] = vx.get(c, t / 2);
            }
        }
        self.push(
            Tensor::from_vec(ch, target, out),
            vec![x],
            Some(Box::new(move |g: &Tensor| {
                let mut gx = vec![0.0; ch * len];
                for c in 0..ch {
                    for t in 0..target {
                        gx[c * len + t / 2] += g.get(c, t);
                    }
                }
                vec![Tensor::from_vec(ch, len, gx)]
            })),
        )
    }

    /// Per-channel affine modulation: `y[c, l] = x[c, l] * (1 + s[c]) + t[c]`
    /// with `x` C x L and `s`, `t` both 1 x C.
    pub fn film(&mut self, x: Var, s: Var, t: Var) -> Var {
        let vx = self.value(x).clone();
        let vs = self.value(s).clone();
        let vt = self.value(t);
        let (ch, len) = vx.shape();
        assert_eq!(vs.shape(), (1, ch), "film: scale shape");
        assert_eq!(vt.shape(), (1, ch), "film: shift shape");
        let mut out = vec![0.0; ch * len];
        for c in 0..ch {
            let sc = 1.0 + vs.get(0, c);
            let tc = vt.get(0, c);
            for l in 0..len {
                out[c * len + l] = vx.get(c, l) * sc + tc;
            }
        }
        self.push(
            Tensor::from_vec(ch, len, out),
            vec![x, s, t],
            Some(Box::new(move |g: &Tensor| {
                let mut gx = vec![0.0; ch * len];
                let mut gs = vec![0.0; ch];
                let mut gt = vec![0.0; ch];
                for c in 0..ch {
                    let sc = 1.0 + vs.get(0, c);
                    for l in 0..len {
                        let gv = g.get(c, l);
                        gx[c * len + l] = gv * sc;
                        gs[c] += gv * vx.get(c, l);
                        gt[c] += gv;
                    }
                }
                vec![
                    Tensor::from_vec(ch, len, gx),
                    Tensor::row_vec(gs),
                    Tensor::row_vec(gt),
                ]
            })),
        )
    }

    /// Mean squared difference over all elements, returned as a 1 x 1 scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        assert_eq!(va.shape(), vb.shape(), "mse: shape mismatch");
        let n = va.len() as f64;
        let sum: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        self.push(
            Tensor::scalar(sum / n),
            vec![a, b],
            Some(Box::new(move |g: &Tensor| {
                let g0 = g.scalar_value();
                let ga = va.zip_map(&vb, |x, y| g0 * 2.0 * (x - y) / n);
                let gb = ga.map(|v| -v);
                vec![ga, gb]
            })),
        )
    }

    /// Affine map helper: `x . w + b` with `b` broadcast across rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_rowvec(xw, b)
    }

    /// Accumulates gradients of scalar `loss` with respect to every node.
    pub fn backward(&mut self, loss: Var) -> Gradients {
        assert!(self.grad_enabled, "backward on an inference graph");
        assert_eq!(self.value(loss).len(), 1, "backward: loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            let Some(back) = node.backward.as_ref() else {
                continue;
            };
            let parent_grads = back(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.clone().into_iter().zip(parent_grads) {
                match &mut grads[p.0] {
                    Some(acc) => *acc = acc.zip_map(&pg, |a, b| a + b),
                    slot => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe log(1 + exp(x)).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (ra, ka) = a.shape();
    let (kb, cb) = b.shape();
    assert_eq!(ka, kb);
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; ra * cb];
    for i in 0..ra {
        for k in 0..ka {
            let aik = ad[i * ka + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[k * cb..(k + 1) * cb];
            let orow = &mut out[i * cb..(i + 1) * cb];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Tensor::from_vec(ra, cb, out)
}

/// a . b^T
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (ra, ka) = a.shape();
    let (rb, kb) = b.shape();
    assert_eq!(ka, kb);
    let mut out = vec![0.0; ra * rb];
    for i in 0..ra {
        let arow = a.row(i);
        for j in 0..rb {
            let brow = b.row(j);
            let mut acc = 0.0;
            for k in 0..ka {
                acc += arow[k] * brow[k];
            }
            out[i * rb + j] = acc;
        }
    }
    Tensor::from_vec(ra, rb, out)
}

/// a^T . b
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    assert_eq!(ra, rb);
    let mut out = vec![0.0; ca * cb];
    for r in 0..ra {
        let arow = a.row(r);
        let brow = b.row(r);
        for i in 0..ca {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * cb..(i + 1) * cb];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(ca, cb, out)
}

thread_local! {
    static FFT_CACHE: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn fft_plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    FFT_CACHE.with(|cache| {
        cache
            .borrow_mut()
            .entry((n, forward))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if forward {
                    planner.plan_fft_forward(n)
                } else {
                    planner.plan_fft_inverse(n)
                }
            })
            .clone()
    })
}
