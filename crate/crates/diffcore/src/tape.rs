//! Reverse-mode recording of tensor expressions.
//!
//! A [`Tape`] borrows a [`ParamStore`] for reading, records every operation as
//! a node, and [`Tape::backward`] walks the nodes in reverse to produce
//! [`Gradients`]. Operations are coarse (a whole affine map, convolution or
//! attention block per node) so the tape stays short.

use crate::error::{mismatch, DiffError};
use crate::kernels::{col2im3_acc, dot, im2col3, mm_acc, mm_nt_acc, mm_tn_acc};
use crate::{ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const NO_WINNER: usize = usize::MAX;

enum Op {
    Leaf,
    Param(ParamId),
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
    },
    AvgPool(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    EdgeConv {
        x: Var,
        w: Var,
        b: Var,
        wdiff: Vec<f64>,
        winner: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        keys: Vec<usize>,
        probs: Vec<f64>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    MaskRows {
        x: Var,
        keep: Vec<bool>,
    },
    L1 {
        x: Var,
        target: Vec<f64>,
        keep: Vec<bool>,
        scale: f64,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients of a tape's root with respect to every node that required them.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    param_nodes: Vec<Option<usize>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        let node = (*self.param_nodes.get(id.0)?)?;
        self.nodes[node].as_deref()
    }
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is wanted (used by finite-difference checks).
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(Tensor::scalar(0.0), Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].op {
            Op::Param(id) => &self.store.get(*id).value,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// `x[.., k] * w[k, m] + b[m]`, applied over every row of `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, DiffError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 || xv.cols() != wv.shape()[0] {
            return Err(mismatch(
                "affine",
                format!("input {:?} vs weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (n, k, m) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
        let mut out = vec![0.0; n * m];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != m {
                return Err(mismatch("affine", format!("bias {:?} vs width {m}", bv.shape())));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bv.data());
            }
        }
        mm_acc(xv.data(), wv.data(), &mut out, n, k, m);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let value = Tensor::new(&shape, out)?;
        let rg = self.req(x) || self.req(w) || b.is_some_and(|b| self.req(b));
        Ok(self.push(value, Op::Affine { x, w, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape(), data)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * s).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        let rg = self.req(x);
        self.push(value, Op::Scale(x, s), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        let rg = self.req(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| gelu(v).0).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        let rg = self.req(x);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, DiffError> {
        let xv = self.value(x);
        let d = xv.cols();
        if d < 2 || self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(mismatch(
                "layer_norm",
                format!(
                    "input {:?}, gain {:?}, bias {:?}",
                    xv.shape(),
                    self.value(gain).shape(),
                    self.value(bias).shape()
                ),
            ));
        }
        let n = xv.rows();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        let rg = self.req(x) || self.req(gain) || self.req(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// 3x3 convolution, stride 1, zero padding 1, over `x[n, c_in, h, w]` with
    /// weights `[c_out, c_in, 3, 3]` and bias `[c_out]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 4
            || wv.rank() != 4
            || wv.shape()[1] != xv.shape()[1]
            || wv.shape()[2..] != [3, 3]
            || bv.len() != wv.shape()[0]
        {
            return Err(mismatch(
                "conv3x3",
                format!("input {:?}, weight {:?}, bias {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let (n, ci, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let co = wv.shape()[0];
        let hw = h * wd;
        let kk = ci * 9;
        let mut out = vec![0.0; n * co * hw];
        let mut col = vec![0.0; kk * hw];
        for s in 0..n {
            im2col3(&xv.data()[s * ci * hw..(s + 1) * ci * hw], ci, h, wd, &mut col);
            let o = &mut out[s * co * hw..(s + 1) * co * hw];
            for (c, plane) in o.chunks_mut(hw).enumerate() {
                plane.fill(bv.data()[c]);
            }
            mm_acc(wv.data(), &col, o, co, kk, hw);
        }
        let value = Tensor::new(&[n, co, h, wd], out)?;
        let rg = self.req(x) || self.req(w) || self.req(b);
        Ok(self.push(value, Op::Conv3x3 { x, w, b }, rg))
    }

    /// Mean over the two trailing spatial axes: `[n,c,h,w] -> [n,c]`.
    pub fn avg_pool(&mut self, x: Var) -> Result<Var, DiffError> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(mismatch("avg_pool", format!("input {:?}", xv.shape())));
        }
        let (n, c) = (xv.shape()[0], xv.shape()[1]);
        let hw = xv.shape()[2] * xv.shape()[3];
        let data = xv
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(&[n, c], data)?;
        let rg = self.req(x);
        Ok(self.push(value, Op::AvgPool(x), rg))
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let n = self.value(parts[0]).rows();
        if parts
            .iter()
            .any(|&p| self.value(p).rank() != 2 || self.value(p).rows() != n)
        {
            return Err(mismatch("concat", "parts must be 2-D with equal rows"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(&[n, total], data)?;
        let rg = parts.iter().any(|&p| self.req(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.req(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Edge convolution with a precomputed neighbor list.
    ///
    /// For point `i` and neighbor `j` the edge feature is the affine map
    /// `[x_i, x_j - x_i] * w + b` followed by ReLU; the output is the
    /// per-channel maximum over the listed neighbors. `w` is `[2d, d_out]`.
    /// Rows with an empty neighbor list produce zeros.
    pub fn edge_conv(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        neighbors: &[Vec<usize>],
    ) -> Result<Var, DiffError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, d) = (xv.rows(), xv.cols());
        if xv.rank() != 2 || wv.rank() != 2 || wv.shape()[0] != 2 * d || neighbors.len() != n {
            return Err(mismatch(
                "edge_conv",
                format!("input {:?}, weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let m = wv.shape()[1];
        if bv.len() != m {
            return Err(mismatch("edge_conv", format!("bias {:?}", bv.shape())));
        }
        let (wa, wb) = wv.data().split_at(d * m);
        let wdiff: Vec<f64> = wa.iter().zip(wb).map(|(a, b)| a - b).collect();
        // center term P = x (Wa - Wb) + b, neighbor term Q = x Wb
        let mut p = vec![0.0; n * m];
        for row in p.chunks_mut(m) {
            row.copy_from_slice(bv.data());
        }
        mm_acc(xv.data(), &wdiff, &mut p, n, d, m);
        let mut q = vec![0.0; n * m];
        mm_acc(xv.data(), wb, &mut q, n, d, m);

        let mut out = vec![0.0; n * m];
        let mut winner = vec![NO_WINNER; n * m];
        for (i, nbrs) in neighbors.iter().enumerate() {
            for c in 0..m {
                let mut best = f64::NEG_INFINITY;
                let mut arg = NO_WINNER;
                for &j in nbrs {
                    let e = p[i * m + c] + q[j * m + c];
                    if e > best {
                        best = e;
                        arg = j;
                    }
                }
                if arg != NO_WINNER && best > 0.0 {
                    out[i * m + c] = best;
                    winner[i * m + c] = arg;
                }
            }
        }
        let value = Tensor::new(&[n, m], out)?;
        let rg = self.req(x) || self.req(w) || self.req(b);
        Ok(self.push(
            value,
            Op::EdgeConv {
                x,
                w,
                b,
                wdiff,
                winner,
            },
            rg,
        ))
    }

    /// Scaled dot-product attention over `heads` equal slices of the width.
    ///
    /// `keys` lists the token indices every query may attend to, in the order
    /// the softmax normalizer and the weighted sum are accumulated. Passing a
    /// canonical (content-derived) order makes the result exactly
    /// permutation-equivariant.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        keys: Vec<usize>,
    ) -> Result<Var, DiffError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.rank() != 2 || qv.shape() != kv.shape() || qv.shape() != vv.shape() {
            return Err(mismatch(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", qv.shape(), kv.shape(), vv.shape()),
            ));
        }
        let (n, width) = (qv.rows(), qv.cols());
        if heads == 0 || width % heads != 0 {
            return Err(DiffError::HeadDivisibility { width, heads });
        }
        if keys.iter().any(|&j| j >= n) {
            return Err(mismatch("attention", "key index out of range"));
        }
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let nk = keys.len();
        let mut probs = vec![0.0; heads * n * nk];
        let mut out = vec![0.0; n * width];
        if nk > 0 {
            let mut scores = vec![0.0; nk];
            for h in 0..heads {
                let lo = h * dh;
                for i in 0..n {
                    let qi = &qv.row(i)[lo..lo + dh];
                    for (s, &j) in scores.iter_mut().zip(&keys) {
                        *s = scale * dot(qi, &kv.row(j)[lo..lo + dh]);
                    }
                    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let pr = &mut probs[(h * n + i) * nk..(h * n + i + 1) * nk];
                    let mut z = 0.0;
                    for (p, &s) in pr.iter_mut().zip(&scores) {
                        *p = (s - mx).exp();
                        z += *p;
                    }
                    for p in pr.iter_mut() {
                        *p /= z;
                    }
                    let oi = &mut out[i * width + lo..i * width + lo + dh];
                    for (&p, &j) in pr.iter().zip(&keys) {
                        for (o, &vj) in oi.iter_mut().zip(&vv.row(j)[lo..lo + dh]) {
                            *o += p * vj;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[n, width], out)?;
        let rg = self.req(q) || self.req(k) || self.req(v);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                keys,
                probs,
            },
            rg,
        ))
    }

    /// Scales every row to unit Euclidean length; zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let mut norms = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = xv.row(r);
            let nr = dot(row, row).sqrt();
            norms[r] = nr;
            if nr > 0.0 {
                for c in 0..d {
                    out[r * d + c] = row[c] / nr;
                }
            }
        }
        let value = Tensor::new(xv.shape(), out).expect("same shape");
        let rg = self.req(x);
        self.push(value, Op::NormalizeRows { x, norms }, rg)
    }

    /// Zeroes the rows whose `keep` flag is false.
    pub fn mask_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var, DiffError> {
        let xv = self.value(x);
        if keep.len() != xv.rows() {
            return Err(mismatch("mask_rows", format!("{} flags for {} rows", keep.len(), xv.rows())));
        }
        let d = xv.cols();
        let mut data = xv.data().to_vec();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                data[r * d..(r + 1) * d].fill(0.0);
            }
        }
        let value = Tensor::new(xv.shape(), data)?;
        let rg = self.req(x);
        Ok(self.push(
            value,
            Op::MaskRows {
                x,
                keep: keep.to_vec(),
            },
            rg,
        ))
    }

    /// `scale * sum over kept rows of |target - x|_1`, as a scalar.
    pub fn l1_loss(
        &mut self,
        x: Var,
        target: &Tensor,
        keep: &[bool],
        scale: f64,
    ) -> Result<Var, DiffError> {
        let xv = self.value(x);
        if xv.shape() != target.shape() || keep.len() != xv.rows() {
            return Err(mismatch(
                "l1_loss",
                format!("prediction {:?} vs target {:?}", xv.shape(), target.shape()),
            ));
        }
        let mut total = 0.0;
        for (r, &k) in keep.iter().enumerate() {
            if k {
                total += xv.row(r)
                    .iter()
                    .zip(target.row(r))
                    .map(|(p, t)| (t - p).abs())
                    .sum::<f64>();
            }
        }
        let rg = self.req(x);
        Ok(self.push(
            Tensor::scalar(scale * total),
            Op::L1 {
                x,
                target: target.data().to_vec(),
                keep: keep.to_vec(),
                scale,
            },
            rg,
        ))
    }

    /// `sum(weights * x)` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var, DiffError> {
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return Err(mismatch(
                "weighted_sum",
                format!("{:?} vs {:?}", xv.shape(), weights.shape()),
            ));
        }
        let total = dot(xv.data(), weights.data());
        let rg = self.req(x);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                x,
                weights: weights.data().to_vec(),
            },
            rg,
        ))
    }

    /// Backpropagates from `root`, seeding its gradient with ones (so a
    /// non-scalar root is treated as the sum of its entries).
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0; self.value(root).len()]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let param_nodes = self.param_vars.iter().map(|v| v.map(|v| v.0)).collect();
        Gradients {
            nodes: grads,
            param_nodes,
        }
    }

    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<f64>>]) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        macro_rules! with_grad {
            ($v:expr, |$gv:ident| $body:block) => {
                if let Some($gv) = self.slot($v, grads) $body
            };
        }

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, k, m) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
                with_grad!(*x, |gx| {
                    mm_nt_acc(g, wv.data(), gx, n, m, k);
                });
                with_grad!(*w, |gw| {
                    mm_tn_acc(xv.data(), g, gw, n, k, m);
                });
                if let Some(b) = b {
                    with_grad!(*b, |gb| {
                        for row in g.chunks(m) {
                            for (s, v) in gb.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    with_grad!(v, |gv| {
                        for (s, d) in gv.iter_mut().zip(g) {
                            *s += d;
                        }
                    });
                }
            }
            Op::Scale(x, s) => {
                with_grad!(*x, |gx| {
                    for (o, d) in gx.iter_mut().zip(g) {
                        *o += s * d;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                with_grad!(*x, |gx| {
                    for ((o, d), &v) in gx.iter_mut().zip(g).zip(xv.data()) {
                        if v > 0.0 {
                            *o += d;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                with_grad!(*x, |gx| {
                    for ((o, d), &v) in gx.iter_mut().zip(g).zip(xv.data()) {
                        *o += d * gelu(v).1;
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gain_v = self.value(*gain).data();
                let d = gain_v.len();
                let n = rstd.len();
                with_grad!(*x, |gx| {
                    let mut dxhat = vec![0.0; d];
                    for r in 0..n {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        for c in 0..d {
                            dxhat[c] = gr[c] * gain_v[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dh = dot(&dxhat, hr) / d as f64;
                        for c in 0..d {
                            gx[r * d + c] += rstd[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
                        }
                    }
                });
                with_grad!(*gain, |gg| {
                    for r in 0..n {
                        for c in 0..d {
                            gg[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                });
                with_grad!(*bias, |gb| {
                    for r in 0..n {
                        for c in 0..d {
                            gb[c] += g[r * d + c];
                        }
                    }
                });
            }
            Op::Conv3x3 { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, ci, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let co = wv.shape()[0];
                let hw = h * wd;
                let kk = ci * 9;
                let need_x = self.nodes[x.0].requires_grad;
                let need_w = self.nodes[w.0].requires_grad;
                let mut col = vec![0.0; kk * hw];
                let mut dcol = vec![0.0; kk * hw];
                for s in 0..n {
                    let gs = &g[s * co * hw..(s + 1) * co * hw];
                    if need_w {
                        im2col3(&xv.data()[s * ci * hw..(s + 1) * ci * hw], ci, h, wd, &mut col);
                        with_grad!(*w, |gw| {
                            // dW[co, kk] += dy[co, hw] * col[kk, hw]^T
                            mm_nt_acc(gs, &col, gw, co, hw, kk);
                        });
                    }
                    if need_x {
                        dcol.fill(0.0);
                        // dcol[kk, hw] = W^T[kk, co] * dy[co, hw]
                        mm_tn_acc(wv.data(), gs, &mut dcol, co, kk, hw);
                        with_grad!(*x, |gx| {
                            col2im3_acc(&dcol, ci, h, wd, &mut gx[s * ci * hw..(s + 1) * ci * hw]);
                        });
                    }
                }
                with_grad!(*b, |gb| {
                    for (i, plane) in g.chunks(hw).enumerate() {
                        gb[i % co] += plane.iter().sum::<f64>();
                    }
                });
            }
            Op::AvgPool(x) => {
                let xv = self.value(*x);
                let hw = xv.shape()[2] * xv.shape()[3];
                with_grad!(*x, |gx| {
                    for (plane, &d) in gx.chunks_mut(hw).zip(g) {
                        let share = d / hw as f64;
                        for v in plane {
                            *v += share;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let n = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    with_grad!(p, |gp| {
                        for r in 0..n {
                            for k in 0..c {
                                gp[r * c + k] += g[r * total + offset + k];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::Reshape(x) => {
                with_grad!(*x, |gx| {
                    for (o, d) in gx.iter_mut().zip(g) {
                        *o += d;
                    }
                });
            }
            Op::EdgeConv {
                x,
                w,
                b,
                wdiff,
                winner,
            } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, d) = (xv.rows(), xv.cols());
                let m = wv.shape()[1];
                let mut dp = vec![0.0; n * m];
                let mut dq = vec![0.0; n * m];
                for i in 0..n {
                    for c in 0..m {
                        let j = winner[i * m + c];
                        if j != NO_WINNER {
                            dp[i * m + c] += g[i * m + c];
                            dq[j * m + c] += g[i * m + c];
                        }
                    }
                }
                let wb = &wv.data()[d * m..];
                with_grad!(*x, |gx| {
                    mm_nt_acc(&dp, wdiff, gx, n, m, d);
                    mm_nt_acc(&dq, wb, gx, n, m, d);
                });
                with_grad!(*w, |gw| {
                    let (gwa, gwb) = gw.split_at_mut(d * m);
                    mm_tn_acc(xv.data(), &dp, gwa, n, d, m);
                    let diff: Vec<f64> = dq.iter().zip(&dp).map(|(a, b)| a - b).collect();
                    mm_tn_acc(xv.data(), &diff, gwb, n, d, m);
                });
                with_grad!(*b, |gb| {
                    for row in dp.chunks(m) {
                        for (s, v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                keys,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (n, width) = (qv.rows(), qv.cols());
                let dh = width / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let nk = keys.len();
                let mut dq = vec![0.0; n * width];
                let mut dk = vec![0.0; n * width];
                let mut dv = vec![0.0; n * width];
                let mut dp = vec![0.0; nk];
                for h in 0..*heads {
                    let lo = h * dh;
                    for i in 0..n {
                        let gi = &g[i * width + lo..i * width + lo + dh];
                        let pr = &probs[(h * n + i) * nk..(h * n + i + 1) * nk];
                        for (t, &j) in keys.iter().enumerate() {
                            let vj = &vv.row(j)[lo..lo + dh];
                            dp[t] = dot(gi, vj);
                            for (o, &gc) in dv[j * width + lo..j * width + lo + dh].iter_mut().zip(gi) {
                                *o += pr[t] * gc;
                            }
                        }
                        let inner = dot(pr, &dp);
                        let qi = &qv.row(i)[lo..lo + dh];
                        for (t, &j) in keys.iter().enumerate() {
                            let ds = pr[t] * (dp[t] - inner) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let kj = &kv.row(j)[lo..lo + dh];
                            for c in 0..dh {
                                dq[i * width + lo + c] += ds * kj[c];
                                dk[j * width + lo + c] += ds * qi[c];
                            }
                        }
                    }
                }
                for (var, src) in [(*q, &dq), (*k, &dk), (*v, &dv)] {
                    with_grad!(var, |gv| {
                        for (o, s) in gv.iter_mut().zip(src.iter()) {
                            *o += s;
                        }
                    });
                }
            }
            Op::NormalizeRows { x, norms } => {
                let y = &node.value;
                let d = y.cols();
                with_grad!(*x, |gx| {
                    for (r, &nr) in norms.iter().enumerate() {
                        if nr == 0.0 {
                            continue;
                        }
                        let yr = y.row(r);
                        let gr = &g[r * d..(r + 1) * d];
                        let proj = dot(yr, gr);
                        for c in 0..d {
                            gx[r * d + c] += (gr[c] - yr[c] * proj) / nr;
                        }
                    }
                });
            }
            Op::MaskRows { x, keep } => {
                let d = node.value.cols();
                with_grad!(*x, |gx| {
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            for c in 0..d {
                                gx[r * d + c] += g[r * d + c];
                            }
                        }
                    }
                });
            }
            Op::L1 {
                x,
                target,
                keep,
                scale,
            } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let s = g[0] * scale;
                with_grad!(*x, |gx| {
                    for (r, &k) in keep.iter().enumerate() {
                        if !k {
                            continue;
                        }
                        for c in 0..d {
                            let diff = xv.data()[r * d + c] - target[r * d + c];
                            if diff != 0.0 {
                                gx[r * d + c] += s * diff.signum();
                            }
                        }
                    }
                });
            }
            Op::WeightedSum { x, weights } => {
                with_grad!(*x, |gx| {
                    for (o, w) in gx.iter_mut().zip(weights) {
                        *o += g[0] * w;
                    }
                });
            }
        }
    }
}
