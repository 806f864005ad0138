//! The comparison regressor: a small CNN over a downsampled image fused with
//! the sum of the command's word embeddings, predicting the normalized pick
//! position directly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointMeta, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::evaluation::success;
use crate::grounding::GroundingExample;
use crate::language::Vocab;
use crate::nn::{Conv2d, Embedding, Graph, Grads, Linear, ParamStore, Tensor, Var};
use crate::scalar::{lit, Scalar};
use crate::train::{self, TrainConfig, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub vocab_size: usize,
    pub n_i: usize,
    /// Side of the area-averaged image fed to the CNN.
    pub input_side: usize,
    pub conv_channels: [usize; 3],
    pub embed_dim: usize,
    pub hidden: usize,
}

impl BaselineConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self { vocab_size, n_i: 256, input_side: 64, conv_channels: [16, 32, 64], embed_dim: 32, hidden: 128 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || !self.input_side.is_multiple_of(8) || !self.n_i.is_multiple_of(self.input_side) {
            return Err(Error::Config(format!(
                "baseline input side {} must divide {} and be a multiple of 8",
                self.input_side, self.n_i
            )));
        }
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden == 0 || self.conv_channels.contains(&0) {
            return Err(Error::Config("baseline sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct BaselineArch {
    convs: [Conv2d; 3],
    embed: Embedding,
    fc: Linear,
    out: Linear,
}

#[derive(Clone, Debug)]
pub struct BaselineModel<T: Scalar> {
    config: BaselineConfig,
    arch: BaselineArch,
    params: ParamStore<T>,
}

/// Area-averages a `[3, n, n]` image tensor down to `[3, side, side]`.
pub fn area_pool<T: Scalar>(image: &Tensor<T>, side: usize) -> Result<Tensor<T>> {
    let (c, h, w) = image.dims3();
    if h != w || side == 0 || h % side != 0 {
        return Err(Error::Shape(format!("cannot area-average {:?} down to {side}", image.shape())));
    }
    if h == side {
        return Ok(image.clone());
    }
    let f = h / side;
    let norm: T = lit(1.0 / (f * f) as f64);
    let src = image.data();
    let mut out = vec![T::zero(); c * side * side];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst = &mut out[(ch * side + y / f) * side..(ch * side + y / f + 1) * side];
            for (x, &v) in row.iter().enumerate() {
                dst[x / f] += v * norm;
            }
        }
    }
    Ok(Tensor::from_vec(&[c, side, side], out))
}

impl<T: Scalar> BaselineModel<T> {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let [c1, c2, c3] = config.conv_channels;
        let convs = [
            Conv2d::new(&mut p, "baseline.conv1", 3, c1, 3, 1, &mut rng),
            Conv2d::new(&mut p, "baseline.conv2", c1, c2, 3, 1, &mut rng),
            Conv2d::new(&mut p, "baseline.conv3", c2, c3, 3, 1, &mut rng),
        ];
        let side = config.input_side / 8;
        let feat = c3 * side * side + config.embed_dim;
        let arch = BaselineArch {
            convs,
            embed: Embedding::new(&mut p, "baseline.embed", config.vocab_size, config.embed_dim, &mut rng),
            fc: Linear::new(&mut p, "baseline.fc", feat, config.hidden, &mut rng),
            out: Linear::new(&mut p, "baseline.out", config.hidden, 2, &mut rng),
        };
        Ok(Self { config, arch, params: p })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn check_words(&self, words: &[usize]) -> Result<()> {
        if words.is_empty() {
            return Err(Error::EmptyCommand);
        }
        if let Some(&w) = words.iter().find(|&&w| w >= self.config.vocab_size) {
            return Err(Error::BadToken { index: w, size: self.config.vocab_size });
        }
        Ok(())
    }

    /// Pools a full-resolution image tensor to the network input.
    pub fn prepare(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.config.n_i;
        if image.shape() != [3, n, n] {
            return Err(Error::Shape(format!("baseline image {:?}, expected [3, {n}, {n}]", image.shape())));
        }
        area_pool(image, self.config.input_side)
    }

    /// Normalized `(x, y)` output node; `input` is already pooled.
    fn graph(&self, g: &mut Graph<'_, T>, input: &Tensor<T>, words: &[usize]) -> Var {
        let a = &self.arch;
        let mut x = g.input(input.clone());
        for conv in &a.convs {
            let y = conv.forward(g, x);
            let y = g.relu(y);
            x = g.max_pool2(y);
        }
        let n = g.value(x).len();
        let img = g.reshape(x, &[n]);
        let mut lang = a.embed.lookup(g, words[0]);
        for &w in &words[1..] {
            let e = a.embed.lookup(g, w);
            lang = g.add(lang, e);
        }
        let cat = g.concat(img, lang);
        let h = a.fc.forward(g, cat);
        let h = g.relu(h);
        let o = a.out.forward(g, h);
        g.sigmoid(o)
    }

    /// Normalized position `p` in `[0, 1]²` from a pooled input.
    pub fn forward_prepared(&self, input: &Tensor<T>, words: &[usize]) -> Result<[f64; 2]> {
        let s = self.config.input_side;
        if input.shape() != [3, s, s] {
            return Err(Error::Shape(format!("baseline input {:?}, expected [3, {s}, {s}]", input.shape())));
        }
        self.check_words(words)?;
        let mut g = Graph::new(&self.params);
        let v = self.graph(&mut g, input, words);
        let d = g.value(v).data();
        Ok([d[0].to_f64().unwrap_or(f64::NAN), d[1].to_f64().unwrap_or(f64::NAN)])
    }

    pub fn save(&self, path: &Path, vocab: &Vocab, seed: u64, log: Option<&TrainLog>) -> Result<()> {
        checkpoint::write(path, &self.meta(vocab, seed, log), &self.params)
    }

    pub fn meta(&self, vocab: &Vocab, seed: u64, log: Option<&TrainLog>) -> CheckpointMeta {
        CheckpointMeta {
            schema_version: SCHEMA_VERSION,
            kind: "baseline".into(),
            dtype: T::DTYPE.into(),
            vocab_hash: vocab.hash(),
            n_i: self.config.n_i,
            n_m: 0,
            hyperparameters: serde_json::to_value(&self.config).expect("config serializes"),
            train_seed: seed,
            training: log
                .map(|l| serde_json::json!({ "loss": "mse", "final_loss": l.final_loss() }))
                .unwrap_or_default(),
        }
    }

    pub fn from_bytes(bytes: &[u8], vocab: &Vocab) -> Result<Self> {
        let meta = checkpoint::decode_meta(bytes)?;
        meta.check_kind("baseline")?;
        meta.check_vocab(vocab)?;
        let config: BaselineConfig = serde_json::from_value(meta.hyperparameters)?;
        let mut model = Self::new(config, 0)?;
        checkpoint::decode_into(bytes, &mut model.params)?;
        Ok(model)
    }

    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, vocab)
    }
}

/// Predicted pick in pixels for a full-resolution `[3, n_i, n_i]` image.
pub fn baseline_forward<T: Scalar>(model: &BaselineModel<T>, image: &Tensor<T>, words: &[usize]) -> Result<[f64; 2]> {
    let p = model.forward_prepared(&model.prepare(image)?, words)?;
    let n = model.config.n_i as f64;
    Ok([p[0] * n, p[1] * n])
}

fn pooled<T: Scalar>(model: &BaselineModel<T>, images: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    images.iter().map(|im| model.prepare(im)).collect()
}

fn accuracy_pooled<T: Scalar>(model: &BaselineModel<T>, inputs: &[Tensor<T>], examples: &[GroundingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyEval);
    }
    let n = model.config.n_i;
    let mut hits = 0;
    for ex in examples {
        let input = inputs.get(ex.image).ok_or_else(|| Error::Config(format!("image index {} missing", ex.image)))?;
        let p = model.forward_prepared(input, &ex.words)?;
        let pick = [p[0] * n as f64, p[1] * n as f64];
        hits += usize::from(success(pick, [ex.target[0] as f64, ex.target[1] as f64], n));
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Fraction of examples predicted within the success radius.
pub fn baseline_accuracy<T: Scalar>(
    model: &BaselineModel<T>,
    images: &[Tensor<T>],
    examples: &[GroundingExample],
) -> Result<f64> {
    accuracy_pooled(model, &pooled(model, images)?, examples)
}

/// Trains with mean squared error on the normalized target coordinates.
pub fn train_baseline<T: Scalar>(
    images: &[Tensor<T>],
    examples: &[GroundingExample],
    config: BaselineConfig,
    train_cfg: &TrainConfig,
) -> Result<(BaselineModel<T>, TrainLog)> {
    let mut model = BaselineModel::new(config, train_cfg.seed)?;
    let inputs = pooled(&model, images)?;
    for ex in examples {
        if ex.image >= inputs.len() {
            return Err(Error::Config(format!("image index {} missing", ex.image)));
        }
        model.check_words(&ex.words)?;
    }
    let n = model.config.n_i as f64;
    let targets: Vec<Vec<T>> =
        examples.iter().map(|ex| vec![lit(ex.target[0] as f64 / n), lit(ex.target[1] as f64 / n)]).collect();
    let shell = BaselineModel { config: model.config.clone(), arch: model.arch.clone(), params: ParamStore::new() };
    let half: T = lit(0.5);
    let log = train::fit(
        &mut model.params,
        examples.len(),
        train_cfg,
        |params: &ParamStore<T>, i, _rng: &mut ChaCha8Rng, grads: &mut Grads<T>| {
            let ex = &examples[i];
            let mut g = Graph::new(params);
            let p = shell.graph(&mut g, &inputs[ex.image], &ex.words);
            // sum_squares over two coordinates; halve for the mean.
            let loss = g.sum_squares(p, targets[i].clone());
            let l = g.value(loss).data()[0] * half;
            g.backward(loss, grads);
            l
        },
        |_, _| None,
    )?;
    Ok((model, log))
}
