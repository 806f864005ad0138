//! Minimal CPU network engine: tensors, a per-sample autodiff tape, layers
//! and the Adam optimizer.

mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{softmax, Graph, Var};
pub use layers::{dropout_mask, maybe_dropout, Conv2d, Embedding, Linear, Lstm};
pub use optim::{Adam, AdamConfig};
pub use params::{Grads, Init, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod gradcheck {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `loss` against every parameter entry.
    fn check(store: &mut ParamStore<f64>, loss: impl Fn(&mut Graph<'_, f64>) -> Var) {
        let mut grads = Grads::zeros_like(store);
        {
            let mut g = Graph::new(store);
            let l = loss(&mut g);
            g.backward(l, &mut grads);
        }
        let eval = |s: &ParamStore<f64>| {
            let mut g = Graph::new(s);
            let l = loss(&mut g);
            g.value(l).data()[0]
        };
        let ids: Vec<ParamId> = (0..store.len()).map(ParamId).collect();
        let eps = 1e-6;
        for id in ids {
            for j in 0..store.get(id).len() {
                let orig = store.get(id).data()[j];
                store.get_mut(id).data_mut()[j] = orig + eps;
                let up = eval(store);
                store.get_mut(id).data_mut()[j] = orig - eps;
                let down = eval(store);
                store.get_mut(id).data_mut()[j] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = grads.get(id)[j];
                let tol = 1e-5 * (1.0 + fd.abs().max(an.abs()));
                assert!((fd - an).abs() < tol, "param {id:?}[{j}]: fd {fd} vs analytic {an}");
            }
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_pool_upsample_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let c1 = Conv2d::new(&mut store, "c1", 2, 3, 3, 2, &mut rng);
        let c2 = Conv2d::new(&mut store, "c2", 3, 3, 3, 1, &mut rng);
        let c3 = Conv2d::new(&mut store, "c3", 6, 2, 1, 1, &mut rng);
        let x = random_input(&mut rng, &[2, 8, 8]);
        let target: Vec<f64> = (0..2 * 4 * 4).map(|i| (i as f64 * 0.3).sin()).collect();
        check(&mut store, |g| {
            let xi = g.input(x.clone());
            let a = c1.forward(g, xi); // 3x4x4
            let a = g.relu(a);
            let p = g.max_pool2(a); // 3x2x2
            let u = g.upsample2(p); // 3x4x4
            let b = c2.forward(g, u);
            let cat = g.concat(a, b); // 6x4x4
            let out = c3.forward(g, cat);
            g.sum_squares(out, target.clone())
        });
    }

    #[test]
    fn lstm_linear_embedding_xent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "emb", 5, 3, &mut rng);
        let lstm = Lstm::new(&mut store, "lstm", 3, 4, &mut rng);
        let fc = Linear::new(&mut store, "fc", 4, 6, &mut rng);
        let tokens = [1usize, 4, 1, 2];
        check(&mut store, |g| {
            let xs: Vec<Var> = tokens.iter().map(|&t| emb.lookup(g, t)).collect();
            let h = lstm.forward(g, &xs);
            let t = g.tile(h, 2, 2);
            let flat = g.reshape(t, &[16]);
            let s = g.slice(flat, 3, 4);
            let m = g.mul(s, h);
            let z = fc.forward(g, m);
            let z = g.tanh(z);
            let z = g.sigmoid(z);
            g.softmax_xent(z, 2)
        });
    }

    #[test]
    fn dropout_is_a_fixed_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let fc = Linear::new(&mut store, "fc", 6, 6, &mut rng);
        let mask: Vec<f64> = dropout_mask(6, 0.3, &mut rng);
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 1.0 / 0.7).abs() < 1e-12));
        let x = random_input(&mut rng, &[6]);
        check(&mut store, |g| {
            let xi = g.input(x.clone());
            let y = fc.forward(g, xi);
            let y = g.dropout_mask(y, mask.clone());
            g.sum_squares(y, vec![0.5; 6])
        });
    }
}
