use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Init, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Debug)]
pub struct Conv2d {
    w: ParamId,
    b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Same-padding convolution when `stride == 1` and `k` is odd.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (cin * k * k) as f64;
        let w = store.add(&format!("{name}.w"), &[cout, cin * k * k], Init::Uniform((6.0 / fan_in).sqrt()), rng);
        let b = store.add(&format!("{name}.b"), &[cout], Init::Zeros, rng);
        Self { w, b, cin, cout, k, stride, pad: k / 2 }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv2d(x, w, b, self.k, self.stride, self.pad)
    }

    pub fn weight_id(&self) -> ParamId {
        self.w
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = store.add(&format!("{name}.w"), &[fan_out, fan_in], Init::Uniform(bound), rng);
        let b = store.add(&format!("{name}.b"), &[fan_out], Init::Zeros, rng);
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, b)
    }

    pub fn bias_id(&self) -> ParamId {
        self.b
    }
}

/// Trainable lookup table stored as `[vocab, dim]`; row `k` is the vector of token `k`.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, vocab: usize, dim: usize, rng: &mut R) -> Self {
        let table = store.add(&format!("{name}.table"), &[vocab, dim], Init::Uniform(0.5), rng);
        Self { table, vocab, dim }
    }

    pub fn table_id(&self) -> ParamId {
        self.table
    }

    pub fn lookup<T: Scalar>(&self, g: &mut Graph<'_, T>, token: usize) -> Var {
        let t = g.param(self.table);
        g.embed_row(t, token)
    }
}

/// Single-layer LSTM; `forward` returns the final hidden state.
#[derive(Clone, Debug)]
pub struct Lstm {
    gates: Linear,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let gates = Linear::new(store, &format!("{name}.gates"), input + hidden, 4 * hidden, rng);
        // gate order: input, forget, cell, output; forget bias starts at 1
        let b = store.get_mut(gates.bias_id()).data_mut();
        for v in &mut b[hidden..2 * hidden] {
            *v = T::one();
        }
        Self { gates, input, hidden }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, xs: &[Var]) -> Var {
        let hd = self.hidden;
        let mut h = g.input(Tensor::zeros(&[hd]));
        let mut c = g.input(Tensor::zeros(&[hd]));
        for &x in xs {
            let xh = g.concat(x, h);
            let z = self.gates.forward(g, xh);
            let zi = g.slice(z, 0, hd);
            let zf = g.slice(z, hd, hd);
            let zg = g.slice(z, 2 * hd, hd);
            let zo = g.slice(z, 3 * hd, hd);
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let gg = g.tanh(zg);
            let o = g.sigmoid(zo);
            let fc = g.mul(f, c);
            let ig = g.mul(i, gg);
            c = g.add(fc, ig);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
        }
        h
    }
}

/// Inverted-dropout mask: each entry is `0` with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<T: Scalar, R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep: T = lit(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect()
}

/// Applies dropout when an rng is supplied, identity otherwise.
pub fn maybe_dropout<T: Scalar, R: Rng>(g: &mut Graph<'_, T>, x: Var, rate: f64, rng: Option<&mut R>) -> Var {
    match rng {
        Some(rng) if rate > 0.0 => {
            let mask = dropout_mask(g.value(x).len(), rate, rng);
            g.dropout_mask(x, mask)
        }
        _ => x,
    }
}
