use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::scalar::{lit, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam<T> {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Self { cfg, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>) {
        self.step += 1;
        let b1: T = lit(self.cfg.beta1);
        let b2: T = lit(self.cfg.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(self.step);
        let bc2 = one - b2.powi(self.step);
        let lr: T = lit(self.cfg.lr);
        let eps: T = lit(self.cfg.eps);
        for (((param, g), m), v) in store
            .tensors_mut()
            .iter_mut()
            .zip(grads.bufs())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &g), m), v) in param.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;
    use rand::SeedableRng;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", &[2], Init::Const(3.0), &mut rng);
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &store);
        let mut grads = Grads::zeros_like(&store);
        for _ in 0..2000 {
            grads.zero();
            let x = store.get(id).data().to_vec();
            grads.buf_mut(id)[0] = 2.0 * (x[0] - 1.0);
            grads.buf_mut(id)[1] = 2.0 * (x[1] + 2.0);
            opt.step(&mut store, &grads);
        }
        let x = store.get(id).data();
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 2.0).abs() < 1e-3, "{x:?}");
    }
}
