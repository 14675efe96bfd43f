//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op is recorded on a [`Graph`] as it executes. Image ops work on
//! `(batch, channels, height, width)` tensors and treat samples independently,
//! so per-sample work can run on the rayon pool; cross-sample reductions
//! (weight gradients) are always summed in batch order, which keeps parallel
//! and sequential execution bit-identical.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::{NnError, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, pad: usize },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2 { x: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { x: Var, gate: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    AvgPool { x: Var, out: usize },
    Linear { x: Var, w: Var, b: Var },
    Affine { x: Var, scale: f64 },
    AddCoords { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    mode: ExecMode,
}

/// Gradients of named parameters after [`Graph::backward`].
pub type Gradients = BTreeMap<String, Tensor>;

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe matrices fully inside `a`, `b` and `c`.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, col: &mut Vec<f64>) {
    col.clear();
    col.reserve(c * k * k * h * w);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let shift = kx as isize - pad as isize;
                // output columns whose source column is inside the image
                let lo = (-shift).max(0) as usize;
                let hi = (w as isize - shift).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        col.extend(std::iter::repeat_n(0.0, w));
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    col.extend(std::iter::repeat_n(0.0, lo));
                    col.extend_from_slice(&src[(lo as isize + shift) as usize..(hi as isize + shift) as usize]);
                    col.extend(std::iter::repeat_n(0.0, w - hi));
                }
            }
        }
    }
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let shift = kx as isize - pad as isize;
                let lo = (-shift).max(0) as usize;
                let hi = (w as isize - shift).min(w as isize).max(0) as usize;
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize || lo >= hi {
                        continue;
                    }
                    let src = &row[y * w + lo..y * w + hi];
                    let d0 = sy as usize * w;
                    let dst = &mut plane[d0 + (lo as isize + shift) as usize..d0 + (hi as isize + shift) as usize];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
        }
    }
}

impl Graph {
    pub fn new(mode: ExecMode) -> Self {
        Self { nodes: Vec::new(), params: BTreeMap::new(), mode }
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Names of the parameters referenced so far.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var, NnError> {
        if !value.all_finite() {
            return Err(NnError::NonFinite(format!("activation of node {}", self.nodes.len())));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Result<Var, NnError> {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable leaf taken from `store`. Repeated lookups return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, NnError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name).ok_or_else(|| NnError::MissingParam(name.to_string()))?.clone();
        let v = self.push(t, Op::Leaf, true)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn par_map<T: Send>(&self, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        match self.mode {
            ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
            ExecMode::Sequential => (0..n).map(f).collect(),
        }
    }

    /// Stride-1 convolution with zero padding `k / 2` (odd square kernels).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (bs, c, h, wd) = self.value(x).dims4()?;
        let (o, ci, k, k2) = self.value(w).dims4()?;
        if ci != c || k != k2 || k % 2 == 0 || self.value(b).shape() != [o] {
            return Err(NnError::ShapeMismatch(format!(
                "conv2d input {:?}, weight {:?}, bias {:?}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let pad = k / 2;
        let hw = h * wd;
        let ck = c * k * k;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bias = self.value(b).data();
        let outs = self.par_map(bs, |i| {
            let xi = &xs[i * c * hw..(i + 1) * c * hw];
            let mut out = vec![0.0; o * hw];
            for (oc, chunk) in out.chunks_mut(hw).enumerate() {
                chunk.fill(bias[oc]);
            }
            if k == 1 {
                gemm(o, ck, hw, ws, (ck as isize, 1), xi, (hw as isize, 1), 1.0, &mut out);
            } else {
                let mut col = Vec::new();
                im2col(xi, c, h, wd, k, pad, &mut col);
                gemm(o, ck, hw, ws, (ck as isize, 1), &col, (hw as isize, 1), 1.0, &mut out);
            }
            out
        });
        let value = Tensor::new(vec![bs, o, h, wd], outs.concat())?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(value, Op::Conv2d { x, w, b, pad }, ng)
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var, NnError> {
        let (bs, c, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NnError::ShapeMismatch(format!("max_pool2 needs even sides, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let mut out = vec![0.0; bs * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        for plane in 0..bs * c {
            let src = &xs[plane * h * w..(plane + 1) * h * w];
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = 2 * y * w + 2 * xo;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = (2 * y + dy) * w + 2 * xo + dx;
                        if src[j] > src[best] {
                            best = j;
                        }
                    }
                    let o = plane * oh * ow + y * ow + xo;
                    out[o] = src[best];
                    argmax[o] = (plane * h * w + best) as u32;
                }
            }
        }
        let value = Tensor::new(vec![bs, c, oh, ow], out)?;
        let ng = self.needs(x);
        self.push(value, Op::MaxPool2 { x, argmax }, ng)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var, NnError> {
        let (bs, c, h, w) = self.value(x).dims4()?;
        let xs = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; bs * c * oh * ow];
        for plane in 0..bs * c {
            for y in 0..oh {
                for xo in 0..ow {
                    out[plane * oh * ow + y * ow + xo] = xs[plane * h * w + (y / 2) * w + xo / 2];
                }
            }
        }
        let value = Tensor::new(vec![bs, c, oh, ow], out)?;
        let ng = self.needs(x);
        self.push(value, Op::Upsample2 { x }, ng)
    }

    /// Channel concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (bs, ca, h, w) = self.value(a).dims4()?;
        let (bs2, cb, h2, w2) = self.value(b).dims4()?;
        if (bs, h, w) != (bs2, h2, w2) {
            return Err(NnError::ShapeMismatch(format!(
                "concat {:?} with {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let hw = h * w;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(bs * (ca + cb) * hw);
        for i in 0..bs {
            out.extend_from_slice(&xa[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&xb[i * cb * hw..(i + 1) * cb * hw]);
        }
        let value = Tensor::new(vec![bs, ca + cb, h, w], out)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Concat { a, b }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::ShapeMismatch(format!(
                "add {:?} with {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add { a, b }, ng)
    }

    /// Elementwise `x * gate`; a single-channel gate broadcasts over channels.
    pub fn mul(&mut self, x: Var, gate: Var) -> Result<Var, NnError> {
        let (bs, c, h, w) = self.value(x).dims4()?;
        let (gb, gc, gh, gw) = self.value(gate).dims4()?;
        if (gb, gh, gw) != (bs, h, w) || (gc != c && gc != 1) {
            return Err(NnError::ShapeMismatch(format!(
                "mul {:?} by gate {:?}",
                self.value(x).shape(),
                self.value(gate).shape()
            )));
        }
        let hw = h * w;
        let (xs, gs) = (self.value(x).data(), self.value(gate).data());
        let mut out = vec![0.0; xs.len()];
        for i in 0..bs {
            for ch in 0..c {
                let gch = if gc == 1 { 0 } else { ch };
                let xo = (i * c + ch) * hw;
                let go = (i * gc + gch) * hw;
                for j in 0..hw {
                    out[xo + j] = xs[xo + j] * gs[go + j];
                }
            }
        }
        let value = Tensor::new(vec![bs, c, h, w], out)?;
        let ng = self.needs(x) || self.needs(gate);
        self.push(value, Op::Mul { x, gate }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.max(0.0)).collect())?;
        let ng = self.needs(x);
        self.push(value, Op::Relu { x }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NnError> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| sigmoid(v)).collect())?;
        let ng = self.needs(x);
        self.push(value, Op::Sigmoid { x }, ng)
    }

    /// Adaptive average pooling to `out`×`out`, flattened to `(batch, c*out*out)`.
    pub fn adaptive_avg_pool(&mut self, x: Var, out: usize) -> Result<Var, NnError> {
        let (bs, c, h, w) = self.value(x).dims4()?;
        if out == 0 || out > h || out > w {
            return Err(NnError::ShapeMismatch(format!("cannot pool {h}x{w} to {out}x{out}")));
        }
        let xs = self.value(x).data();
        let mut res = Vec::with_capacity(bs * c * out * out);
        for plane in 0..bs * c {
            let src = &xs[plane * h * w..(plane + 1) * h * w];
            for oy in 0..out {
                let (y0, y1) = pool_range(oy, out, h);
                for ox in 0..out {
                    let (x0, x1) = pool_range(ox, out, w);
                    let mut s = 0.0;
                    for y in y0..y1 {
                        s += src[y * w + x0..y * w + x1].iter().sum::<f64>();
                    }
                    res.push(s / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        let value = Tensor::new(vec![bs, c * out * out], res)?;
        let ng = self.needs(x);
        self.push(value, Op::AvgPool { x, out }, ng)
    }

    /// `x @ w^T + b` with `x: (batch, in)`, `w: (out, in)`, `b: (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (bs, f) = self.value(x).dims2()?;
        let (o, fi) = self.value(w).dims2()?;
        if fi != f || self.value(b).shape() != [o] {
            return Err(NnError::ShapeMismatch(format!(
                "linear input {:?}, weight {:?}",
                self.value(x).shape(),
                self.value(w).shape()
            )));
        }
        let mut out = Vec::with_capacity(bs * o);
        for _ in 0..bs {
            out.extend_from_slice(self.value(b).data());
        }
        gemm(bs, f, o, self.value(x).data(), (f as isize, 1), self.value(w).data(), (1, f as isize), 1.0, &mut out);
        let value = Tensor::new(vec![bs, o], out)?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(value, Op::Linear { x, w, b }, ng)
    }

    /// `scale * x + shift` with constants.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, NnError> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| scale * v + shift).collect())?;
        let ng = self.needs(x);
        self.push(value, Op::Affine { x, scale }, ng)
    }

    /// Appends normalized x and y coordinate channels.
    pub fn add_coords(&mut self, x: Var) -> Result<Var, NnError> {
        let value = add_coord_channels(self.value(x))?;
        let ng = self.needs(x);
        self.push(value, Op::AddCoords { x }, ng)
    }

    /// Back-propagates `seed` (the gradient of the objective w.r.t. `out`) and
    /// returns the gradient of every parameter referenced by the graph.
    pub fn backward(&self, out: Var, seed: Tensor) -> Result<Gradients, NnError> {
        if seed.shape() != self.value(out).shape() {
            return Err(NnError::ShapeMismatch(format!(
                "seed {:?} for output {:?}",
                seed.shape(),
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            for (v, t) in self.op_backward(&node.op, &node.value, &g)? {
                if !self.needs(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            }
        }
        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let g = grads[v.0].take().unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            if !g.all_finite() {
                return Err(NnError::NonFinite(format!("gradient of {name}")));
            }
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn op_backward(&self, op: &Op, value: &Tensor, g: &Tensor) -> Result<Vec<(Var, Tensor)>, NnError> {
        let mut res = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, pad } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let (bs, c, h, wd) = xt.dims4()?;
                let (o, _, k, _) = wt.dims4()?;
                let (hw, ck) = (h * wd, c * k * k);
                let need_x = self.needs(*x);
                let (xs, ws, gs) = (xt.data(), wt.data(), g.data());
                let parts = self.par_map(bs, |i| {
                    let xi = &xs[i * c * hw..(i + 1) * c * hw];
                    let gi = &gs[i * o * hw..(i + 1) * o * hw];
                    let mut dw = vec![0.0; o * ck];
                    let mut db = vec![0.0; o];
                    for (oc, row) in gi.chunks(hw).enumerate() {
                        db[oc] = row.iter().sum();
                    }
                    let col_owned;
                    let col: &[f64] = if k == 1 {
                        xi
                    } else {
                        let mut cbuf = Vec::new();
                        im2col(xi, c, h, wd, k, *pad, &mut cbuf);
                        col_owned = cbuf;
                        &col_owned
                    };
                    // dW = G (o x hw) * col^T (hw x ck)
                    gemm(o, hw, ck, gi, (hw as isize, 1), col, (1, hw as isize), 0.0, &mut dw);
                    let dx = need_x.then(|| {
                        // dcol = W^T (ck x o) * G (o x hw)
                        let mut dcol = vec![0.0; ck * hw];
                        gemm(ck, o, hw, ws, (1, ck as isize), gi, (hw as isize, 1), 0.0, &mut dcol);
                        if k == 1 {
                            dcol
                        } else {
                            let mut dx = vec![0.0; c * hw];
                            col2im(&dcol, c, h, wd, k, *pad, &mut dx);
                            dx
                        }
                    });
                    (dw, db, dx)
                });
                let mut dw = Tensor::zeros(wt.shape());
                let mut db = Tensor::zeros(&[o]);
                let mut dx = need_x.then(|| Vec::with_capacity(bs * c * hw));
                for (pw, pb, px) in parts {
                    for (a, v) in dw.data_mut().iter_mut().zip(&pw) {
                        *a += v;
                    }
                    for (a, v) in db.data_mut().iter_mut().zip(&pb) {
                        *a += v;
                    }
                    if let (Some(acc), Some(px)) = (dx.as_mut(), px) {
                        acc.extend_from_slice(&px);
                    }
                }
                res.push((*w, dw));
                res.push((*b, db));
                if let Some(dx) = dx {
                    res.push((*x, Tensor::new(xt.shape().to_vec(), dx)?));
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (gv, &j) in g.data().iter().zip(argmax) {
                    dx.data_mut()[j as usize] += gv;
                }
                res.push((*x, dx));
            }
            Op::Upsample2 { x } => {
                let (bs, c, h, w) = self.value(*x).dims4()?;
                let mut dx = Tensor::zeros(&[bs, c, h, w]);
                let (oh, ow) = (2 * h, 2 * w);
                let gs = g.data();
                let d = dx.data_mut();
                for plane in 0..bs * c {
                    for y in 0..oh {
                        for xo in 0..ow {
                            d[plane * h * w + (y / 2) * w + xo / 2] += gs[plane * oh * ow + y * ow + xo];
                        }
                    }
                }
                res.push((*x, dx));
            }
            Op::Concat { a, b } => {
                let (bs, ca, h, w) = self.value(*a).dims4()?;
                let cb = self.value(*b).dims4()?.1;
                let hw = h * w;
                let gs = g.data();
                let (mut da, mut db) = (Vec::with_capacity(bs * ca * hw), Vec::with_capacity(bs * cb * hw));
                for i in 0..bs {
                    let base = i * (ca + cb) * hw;
                    da.extend_from_slice(&gs[base..base + ca * hw]);
                    db.extend_from_slice(&gs[base + ca * hw..base + (ca + cb) * hw]);
                }
                res.push((*a, Tensor::new(vec![bs, ca, h, w], da)?));
                res.push((*b, Tensor::new(vec![bs, cb, h, w], db)?));
            }
            Op::Add { a, b } => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Mul { x, gate } => {
                let xt = self.value(*x);
                let gt = self.value(*gate);
                let (bs, c, h, w) = xt.dims4()?;
                let gc = gt.dims4()?.1;
                let hw = h * w;
                let mut dx = Tensor::zeros(xt.shape());
                let mut dg = Tensor::zeros(gt.shape());
                let (xs, gs, up) = (xt.data(), gt.data(), g.data());
                for i in 0..bs {
                    for ch in 0..c {
                        let gch = if gc == 1 { 0 } else { ch };
                        let xo = (i * c + ch) * hw;
                        let go = (i * gc + gch) * hw;
                        for j in 0..hw {
                            dx.data_mut()[xo + j] = up[xo + j] * gs[go + j];
                            dg.data_mut()[go + j] += up[xo + j] * xs[xo + j];
                        }
                    }
                }
                res.push((*x, dx));
                res.push((*gate, dg));
            }
            Op::Relu { x } => {
                let d = g.data().iter().zip(value.data()).map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 }).collect();
                res.push((*x, Tensor::new(g.shape().to_vec(), d)?));
            }
            Op::Sigmoid { x } => {
                let d = g.data().iter().zip(value.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                res.push((*x, Tensor::new(g.shape().to_vec(), d)?));
            }
            Op::AvgPool { x, out } => {
                let (bs, c, h, w) = self.value(*x).dims4()?;
                let mut dx = Tensor::zeros(&[bs, c, h, w]);
                let gs = g.data();
                let d = dx.data_mut();
                let mut gi = 0;
                for plane in 0..bs * c {
                    for oy in 0..*out {
                        let (y0, y1) = pool_range(oy, *out, h);
                        for ox in 0..*out {
                            let (x0, x1) = pool_range(ox, *out, w);
                            let share = gs[gi] / ((y1 - y0) * (x1 - x0)) as f64;
                            gi += 1;
                            for y in y0..y1 {
                                for v in &mut d[plane * h * w + y * w + x0..plane * h * w + y * w + x1] {
                                    *v += share;
                                }
                            }
                        }
                    }
                }
                res.push((*x, dx));
            }
            Op::Linear { x, w, b } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let (bs, f) = xt.dims2()?;
                let o = wt.dims2()?.0;
                let mut dw = vec![0.0; o * f];
                // dW = G^T (o x bs) * X (bs x f)
                gemm(o, bs, f, g.data(), (1, o as isize), xt.data(), (f as isize, 1), 0.0, &mut dw);
                let mut db = vec![0.0; o];
                for row in g.data().chunks(o) {
                    for (a, v) in db.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                let mut dx = vec![0.0; bs * f];
                gemm(bs, o, f, g.data(), (o as isize, 1), wt.data(), (f as isize, 1), 0.0, &mut dx);
                res.push((*w, Tensor::new(vec![o, f], dw)?));
                res.push((*b, Tensor::new(vec![o], db)?));
                res.push((*x, Tensor::new(vec![bs, f], dx)?));
            }
            Op::Affine { x, scale } => {
                let d = g.data().iter().map(|v| v * scale).collect();
                res.push((*x, Tensor::new(g.shape().to_vec(), d)?));
            }
            Op::AddCoords { x } => {
                let (bs, c, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let mut d = Vec::with_capacity(bs * c * hw);
                for i in 0..bs {
                    let base = i * (c + 2) * hw;
                    d.extend_from_slice(&g.data()[base..base + c * hw]);
                }
                res.push((*x, Tensor::new(vec![bs, c, h, w], d)?));
            }
        }
        Ok(res)
    }
}

fn pool_range(i: usize, out: usize, n: usize) -> (usize, usize) {
    (i * n / out, ((i + 1) * n).div_ceil(out))
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Appends two channels holding `j / (W-1)` and `i / (H-1)` for pixel `(i, j)`.
/// A side of length one gets coordinate 0.
pub fn add_coord_channels(input: &Tensor) -> Result<Tensor, NnError> {
    let (bs, c, h, w) = input.dims4()?;
    let hw = h * w;
    let xs: Vec<f64> = (0..w).map(|j| if w > 1 { j as f64 / (w - 1) as f64 } else { 0.0 }).collect();
    let ys: Vec<f64> = (0..h).map(|i| if h > 1 { i as f64 / (h - 1) as f64 } else { 0.0 }).collect();
    let mut out = Vec::with_capacity(bs * (c + 2) * hw);
    for b in 0..bs {
        out.extend_from_slice(&input.data()[b * c * hw..(b + 1) * c * hw]);
        for _ in 0..h {
            out.extend_from_slice(&xs);
        }
        for &y in &ys {
            out.extend(std::iter::repeat_n(y, w));
        }
    }
    Tensor::new(vec![bs, c + 2, h, w], out)
}
