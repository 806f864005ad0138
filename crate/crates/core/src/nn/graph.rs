//! Single-sample reverse-mode tape.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates parameter
//! gradients into a [`Grads`] buffer. Graphs are cheap to build and are
//! thrown away after each sample.

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::scalar::{gemm, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Option<Vec<T>> },
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Var, Var),
    Slice { x: Var, start: usize },
    Tile(Var),
    Upsample2(Var),
    MaxPool2 { x: Var, idx: Vec<u32> },
    Reshape(Var),
    Dropout { x: Var, mask: Vec<T> },
    EmbedRow { table: Var, row: usize },
    SumSquares { pred: Var, target: Vec<T> },
    SoftmaxXent { logits: Var, label: usize, probs: Vec<T> },
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    hout: usize,
    wout: usize,
}

impl ConvGeom {
    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Self { store, nodes: Vec::with_capacity(256), param_vars: vec![None; store.len()] }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.get(id),
            _ => node.value.as_ref().expect("non-param node holds a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// 2-D convolution of a `[cin, h, w]` input with weights `[cout, cin·k·k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, k: usize, stride: usize, pad: usize) -> Var {
        let (cin, h, wd) = self.value(x).dims3();
        let cout = self.value(w).shape()[0];
        assert_eq!(self.value(w).len(), cout * cin * k * k, "conv weight shape mismatch");
        assert_eq!(self.value(b).len(), cout, "conv bias shape mismatch");
        let hout = (h + 2 * pad - k) / stride + 1;
        let wout = (wd + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { cin, h, w: wd, k, stride, pad, hout, wout };
        let hw = hout * wout;
        let mut out = vec![T::zero(); cout * hw];
        let cols = if geom.pointwise() {
            gemm(cout, cin, hw, self.value(w).data(), false, self.value(x).data(), false, &mut out, false);
            None
        } else {
            let cols = im2col(self.value(x).data(), &geom);
            gemm(cout, cin * k * k, hw, self.value(w).data(), false, &cols, false, &mut out, false);
            Some(cols)
        };
        let bias = self.value(b).data();
        for (o, chunk) in out.chunks_mut(hw).enumerate() {
            let bo = bias[o];
            chunk.iter_mut().for_each(|v| *v += bo);
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(Tensor::from_vec(&[cout, hout, wout], out), Op::Conv2d { x, w, b, geom, cols }, ng)
    }

    /// `w · x + b` with `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let wt = self.value(w);
        let (out_dim, in_dim) = (wt.shape()[0], wt.shape()[1]);
        let xv = self.value(x).data();
        assert_eq!(xv.len(), in_dim, "linear input width mismatch");
        let mut y = self.value(b).data().to_vec();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &wt.data()[o * in_dim..(o + 1) * in_dim];
            *yo += row.iter().zip(xv).map(|(&a, &b)| a * b).sum::<T>();
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(Tensor::from_vec(&[out_dim], y), Op::Linear { x, w, b }, ng)
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_vec(t.shape(), data);
        let ng = self.ng(x);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, |v| v.tanh(), Op::Tanh(x))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "elementwise shape mismatch {:?} vs {:?}", ta.shape(), tb.shape());
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(ta.shape(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Concatenates along the leading axis (channels, or vector entries).
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape()[1..], tb.shape()[1..], "concat trailing dims differ");
        let mut shape = ta.shape().to_vec();
        shape[0] += tb.shape()[0];
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::from_vec(&shape, data), Op::Concat(a, b), ng)
    }

    /// Contiguous sub-vector of a flat tensor.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let data = self.value(x).data()[start..start + len].to_vec();
        let ng = self.ng(x);
        self.push(Tensor::from_vec(&[len], data), Op::Slice { x, start }, ng)
    }

    /// Broadcasts a vector of length `c` to a `[c, h, w]` map.
    pub fn tile(&mut self, x: Var, h: usize, w: usize) -> Var {
        let v = self.value(x).data();
        let mut data = Vec::with_capacity(v.len() * h * w);
        for &c in v {
            data.extend(std::iter::repeat_n(c, h * w));
        }
        let shape = [v.len(), h, w];
        let ng = self.ng(x);
        self.push(Tensor::from_vec(&shape, data), Op::Tile(x), ng)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (c, h, w) = t.dims3();
        let (h2, w2) = (2 * h, 2 * w);
        let src = t.data();
        let mut data = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let srow = &src[ch * h * w + (y / 2) * w..][..w];
                let drow = &mut data[ch * h2 * w2 + y * w2..][..w2];
                for (xo, d) in drow.iter_mut().enumerate() {
                    *d = srow[xo / 2];
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::from_vec(&[c, h2, w2], data), Op::Upsample2(x), ng)
    }

    /// 2×2 max pooling with stride 2.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (c, h, w) = t.dims3();
        let (ho, wo) = (h / 2, w / 2);
        let src = t.data();
        let mut data = Vec::with_capacity(c * ho * wo);
        let mut idx = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = ch * h * w + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    data.push(src[best]);
                    idx.push(best as u32);
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::from_vec(&[c, ho, wo], data), Op::MaxPool2 { x, idx }, ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        let ng = self.ng(x);
        self.push(t, Op::Reshape(x), ng)
    }

    /// Multiplies by a fixed mask (entries `0` or `1 / (1 - rate)`).
    pub fn dropout_mask(&mut self, x: Var, mask: Vec<T>) -> Var {
        let t = self.value(x);
        assert_eq!(mask.len(), t.len());
        let data = t.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::from_vec(t.shape(), data);
        let ng = self.ng(x);
        self.push(out, Op::Dropout { x, mask }, ng)
    }

    /// Row `row` of a `[rows, dim]` table.
    pub fn embed_row(&mut self, table: Var, row: usize) -> Var {
        let t = self.value(table);
        let dim = t.shape()[1];
        let data = t.data()[row * dim..(row + 1) * dim].to_vec();
        let ng = self.ng(table);
        self.push(Tensor::from_vec(&[dim], data), Op::EmbedRow { table, row }, ng)
    }

    /// `Σ (pred − target)²` as a scalar node.
    pub fn sum_squares(&mut self, pred: Var, target: Vec<T>) -> Var {
        let p = self.value(pred).data();
        assert_eq!(p.len(), target.len(), "loss target shape mismatch");
        let s: T = p.iter().zip(&target).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let ng = self.ng(pred);
        self.push(Tensor::from_vec(&[1], vec![s]), Op::SumSquares { pred, target }, ng)
    }

    /// `−log softmax(logits)[label]` as a scalar node.
    pub fn softmax_xent(&mut self, logits: Var, label: usize) -> Var {
        let z = self.value(logits).data();
        let probs = softmax(z);
        let loss = -(probs[label].max(T::min_positive_value())).ln();
        let ng = self.ng(logits);
        self.push(Tensor::from_vec(&[1], vec![loss]), Op::SoftmaxXent { logits, label, probs }, ng)
    }

    /// Reverse pass from scalar node `root`; parameter gradients are added into `grads`.
    pub fn backward(mut self, root: Var, grads: &mut Grads<T>) {
        let n = self.nodes.len();
        let mut g: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        let root_len = self.value(root).len();
        g[root.0] = Some(vec![T::one(); root_len]);

        for i in (0..n).rev() {
            let Some(dy) = g[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Input);
            match &op {
                Op::Input => {}
                Op::Param(id) => {
                    for (a, &d) in grads.buf_mut(*id).iter_mut().zip(&dy) {
                        *a += d;
                    }
                }
                Op::Conv2d { x, w, b, geom, cols } => {
                    let cout = self.value(*w).shape()[0];
                    let hw = geom.hout * geom.wout;
                    let ckk = geom.cin * geom.k * geom.k;
                    if self.ng(*w) {
                        let src = cols.as_deref().unwrap_or_else(|| self.value(*x).data());
                        let mut dw = vec![T::zero(); cout * ckk];
                        gemm(cout, hw, ckk, &dy, false, src, true, &mut dw, false);
                        acc(&mut g, *w, &dw);
                    }
                    if self.ng(*b) {
                        let db: Vec<T> = dy.chunks(hw).map(|c| c.iter().copied().sum()).collect();
                        acc(&mut g, *b, &db);
                    }
                    if self.ng(*x) {
                        let wv = self.value(*w).data();
                        if geom.pointwise() {
                            let mut dx = vec![T::zero(); ckk * hw];
                            gemm(ckk, cout, hw, wv, true, &dy, false, &mut dx, false);
                            acc(&mut g, *x, &dx);
                        } else {
                            let mut dcols = vec![T::zero(); ckk * hw];
                            gemm(ckk, cout, hw, wv, true, &dy, false, &mut dcols, false);
                            let slot = slot(&mut g, *x, geom.cin * geom.h * geom.w);
                            col2im_add(&dcols, geom, slot);
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let wt = self.value(*w);
                    let in_dim = wt.shape()[1];
                    if self.ng(*w) {
                        let xv = self.value(*x).data();
                        let mut dw = vec![T::zero(); dy.len() * in_dim];
                        for (o, &d) in dy.iter().enumerate() {
                            for (dst, &xi) in dw[o * in_dim..(o + 1) * in_dim].iter_mut().zip(xv) {
                                *dst = d * xi;
                            }
                        }
                        acc(&mut g, *w, &dw);
                    }
                    if self.ng(*b) {
                        acc(&mut g, *b, &dy);
                    }
                    if self.ng(*x) {
                        let wt = self.value(*w).data();
                        let mut dx = vec![T::zero(); in_dim];
                        for (o, &d) in dy.iter().enumerate() {
                            for (dst, &wv) in dx.iter_mut().zip(&wt[o * in_dim..(o + 1) * in_dim]) {
                                *dst += d * wv;
                            }
                        }
                        acc(&mut g, *x, &dx);
                    }
                }
                Op::Relu(x) => {
                    let y = self.nodes[i].value.as_ref().expect("value").data();
                    let dx: Vec<T> =
                        dy.iter().zip(y).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }).collect();
                    acc(&mut g, *x, &dx);
                }
                Op::Sigmoid(x) => {
                    let y = self.nodes[i].value.as_ref().expect("value").data();
                    let dx: Vec<T> = dy.iter().zip(y).map(|(&d, &s)| d * s * (T::one() - s)).collect();
                    acc(&mut g, *x, &dx);
                }
                Op::Tanh(x) => {
                    let y = self.nodes[i].value.as_ref().expect("value").data();
                    let dx: Vec<T> = dy.iter().zip(y).map(|(&d, &t)| d * (T::one() - t * t)).collect();
                    acc(&mut g, *x, &dx);
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        acc(&mut g, *a, &dy);
                    }
                    if self.ng(*b) {
                        acc(&mut g, *b, &dy);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        let bv = self.value(*b).data();
                        let da: Vec<T> = dy.iter().zip(bv).map(|(&d, &v)| d * v).collect();
                        acc(&mut g, *a, &da);
                    }
                    if self.ng(*b) {
                        let av = self.value(*a).data();
                        let db: Vec<T> = dy.iter().zip(av).map(|(&d, &v)| d * v).collect();
                        acc(&mut g, *b, &db);
                    }
                }
                Op::Concat(a, b) => {
                    let la = self.value(*a).len();
                    if self.ng(*a) {
                        acc(&mut g, *a, &dy[..la]);
                    }
                    if self.ng(*b) {
                        acc(&mut g, *b, &dy[la..]);
                    }
                }
                Op::Slice { x, start } => {
                    let len = self.value(*x).len();
                    let s = slot(&mut g, *x, len);
                    for (dst, &d) in s[*start..*start + dy.len()].iter_mut().zip(&dy) {
                        *dst += d;
                    }
                }
                Op::Tile(x) => {
                    let c = self.value(*x).len();
                    let hw = dy.len() / c;
                    let dx: Vec<T> = dy.chunks(hw).map(|ch| ch.iter().copied().sum()).collect();
                    acc(&mut g, *x, &dx);
                }
                Op::Upsample2(x) => {
                    let (c, h, w) = self.value(*x).dims3();
                    let w2 = 2 * w;
                    let s = slot(&mut g, *x, c * h * w);
                    for ch in 0..c {
                        for y in 0..2 * h {
                            let drow = &dy[ch * 4 * h * w + y * w2..][..w2];
                            let srow = &mut s[ch * h * w + (y / 2) * w..][..w];
                            for (xo, &d) in drow.iter().enumerate() {
                                srow[xo / 2] += d;
                            }
                        }
                    }
                }
                Op::MaxPool2 { x, idx } => {
                    let len = self.value(*x).len();
                    let s = slot(&mut g, *x, len);
                    for (&j, &d) in idx.iter().zip(&dy) {
                        s[j as usize] += d;
                    }
                }
                Op::Reshape(x) => acc(&mut g, *x, &dy),
                Op::Dropout { x, mask } => {
                    let dx: Vec<T> = dy.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                    acc(&mut g, *x, &dx);
                }
                Op::EmbedRow { table, row } => {
                    let len = self.value(*table).len();
                    let dim = dy.len();
                    let s = slot(&mut g, *table, len);
                    for (dst, &d) in s[row * dim..(row + 1) * dim].iter_mut().zip(&dy) {
                        *dst += d;
                    }
                }
                Op::SumSquares { pred, target } => {
                    let p = self.value(*pred).data();
                    let two = T::one() + T::one();
                    let dx: Vec<T> = p.iter().zip(target).map(|(&a, &b)| two * (a - b) * dy[0]).collect();
                    acc(&mut g, *pred, &dx);
                }
                Op::SoftmaxXent { logits, label, probs } => {
                    let mut dx: Vec<T> = probs.iter().map(|&p| p * dy[0]).collect();
                    dx[*label] -= dy[0];
                    acc(&mut g, *logits, &dx);
                }
            }
            self.nodes[i].op = op;
        }
    }
}

fn slot<T: Scalar>(g: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    g[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn acc<T: Scalar>(g: &mut [Option<Vec<T>>], v: Var, d: &[T]) {
    match &mut g[v.0] {
        Some(buf) => {
            for (a, &b) in buf.iter_mut().zip(d) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(d.to_vec()),
    }
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Output columns `[lo, hi)` whose kernel tap `kj` lands inside the input row.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = if g.pad > kj { (g.pad - kj).div_ceil(g.stride) } else { 0 };
    let hi = if g.w + g.pad > kj { ((g.w - 1 + g.pad - kj) / g.stride + 1).min(g.wout) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let hw = g.hout * g.wout;
    let zeros = |n: usize| std::iter::repeat_n(T::zero(), n);
    let mut cols = Vec::with_capacity(g.cin * g.k * g.k * hw);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.hout {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        cols.extend(zeros(g.wout));
                        continue;
                    }
                    let srow = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    cols.extend(zeros(lo));
                    if g.stride == 1 {
                        let first = lo + kj - g.pad;
                        cols.extend_from_slice(&srow[first..first + hi - lo]);
                    } else {
                        cols.extend((lo..hi).map(|ox| srow[ox * g.stride + kj - g.pad]));
                    }
                    cols.extend(zeros(g.wout - hi));
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let hw = g.hout * g.wout;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                let (lo, hi) = valid_cols(g, kj);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.hout {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * g.wout + lo..oy * g.wout + hi];
                    if g.stride == 1 {
                        let first = lo + kj - g.pad;
                        for (d, &s) in drow[first..first + hi - lo].iter_mut().zip(srow) {
                            *d += s;
                        }
                    } else {
                        for (ox, &s) in (lo..hi).zip(srow) {
                            drow[ox * g.stride + kj - g.pad] += s;
                        }
                    }
                }
            }
        }
    }
}
