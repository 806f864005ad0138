//! The Text2Pickup grounding network: an hourglass over the image whose
//! decoder is conditioned on an LSTM encoding of the command, plus
//! Monte-Carlo dropout estimates of the position heatmap and its spread.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blockworld::{gaussian_at, pixel_to_cell, Image};
use crate::checkpoint::{self, CheckpointMeta, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::evaluation::success;
use crate::heatmap::Heatmap;
use crate::language::Vocab;
use crate::nn::{maybe_dropout, Conv2d, Embedding, Graph, Grads, Linear, Lstm, ParamStore, Tensor, Var};
use crate::scalar::{lit, Scalar};
use crate::train::{self, TrainConfig, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct T2PConfig {
    pub vocab_size: usize,
    pub n_i: usize,
    pub n_m: usize,
    pub stem_channels: usize,
    /// Feature width per hourglass level, finest (`n_m`) first. Each further
    /// level halves the resolution.
    pub channels: Vec<usize>,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Width of the per-stage language projection that is tiled onto the features.
    pub lang_dim: usize,
    /// Dropout rate of the decoder and language projections.
    pub dropout: f64,
}

impl T2PConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            n_i: 256,
            n_m: 64,
            stem_channels: 8,
            channels: vec![16, 32, 32, 32, 32],
            embed_dim: 32,
            hidden: 64,
            lang_dim: 16,
            dropout: 0.1,
        }
    }

    pub fn paper(vocab_size: usize) -> Self {
        Self {
            stem_channels: 64,
            channels: vec![256; 5],
            embed_dim: 300,
            hidden: 256,
            lang_dim: 64,
            ..Self::desk(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_i != 4 * self.n_m {
            return Err(Error::Config(format!("image size {} must be 4 x heatmap size {}", self.n_i, self.n_m)));
        }
        let levels = self.channels.len();
        if levels < 2 || !self.n_m.is_multiple_of(1 << (levels - 1)) {
            return Err(Error::Config(format!("{levels} hourglass levels do not fit a {0}x{0} grid", self.n_m)));
        }
        if self.channels.contains(&0) || self.stem_channels == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct UpStage {
    lang: Linear,
    merge: Conv2d,
    conv: Conv2d,
}

#[derive(Clone, Debug)]
struct Arch {
    stem: Conv2d,
    down: Vec<Conv2d>,
    bottom: Conv2d,
    /// `up[l]` produces level `l` from level `l + 1`.
    up: Vec<UpStage>,
    head: Conv2d,
    embed: Embedding,
    lstm: Lstm,
}

/// Deterministic part of a forward pass, reused across dropout samples.
struct Encoded<T> {
    skips: Vec<Tensor<T>>,
    bottom: Tensor<T>,
    h: Tensor<T>,
}

struct EncodedVars {
    skips: Vec<Var>,
    bottom: Var,
    h: Var,
}

fn coord_channels<T: Scalar>(n: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(2 * n * n);
    let step = 2.0 / (n - 1).max(1) as f64;
    for _y in 0..n {
        for x in 0..n {
            data.push(lit(-1.0 + step * x as f64));
        }
    }
    for y in 0..n {
        for _x in 0..n {
            data.push(lit(-1.0 + step * y as f64));
        }
    }
    Tensor::from_vec(&[2, n, n], data)
}

impl Arch {
    fn build<T: Scalar, R: Rng>(c: &T2PConfig, p: &mut ParamStore<T>, rng: &mut R) -> Self {
        let ch = &c.channels;
        let stem = Conv2d::new(p, "t2p.stem", 3, c.stem_channels, 3, 2, rng);
        let mut down = vec![Conv2d::new(p, "t2p.down0", c.stem_channels + 2, ch[0], 3, 1, rng)];
        for l in 1..ch.len() {
            down.push(Conv2d::new(p, &format!("t2p.down{l}"), ch[l - 1], ch[l], 3, 1, rng));
        }
        let last = *ch.last().expect("levels");
        let bottom = Conv2d::new(p, "t2p.bottom", last, last, 3, 1, rng);
        let up = (0..ch.len() - 1)
            .map(|l| UpStage {
                lang: Linear::new(p, &format!("t2p.up{l}.lang"), c.hidden, c.lang_dim, rng),
                merge: Conv2d::new(p, &format!("t2p.up{l}.merge"), ch[l + 1] + c.lang_dim, ch[l], 1, 1, rng),
                conv: Conv2d::new(p, &format!("t2p.up{l}.conv"), ch[l], ch[l], 3, 1, rng),
            })
            .collect();
        let head = Conv2d::new(p, "t2p.head", ch[0], 1, 3, 1, rng);
        // start near the all-zero heatmap
        for w in p.get_mut(head.weight_id()).data_mut() {
            *w *= lit(0.1);
        }
        let embed = Embedding::new(p, "t2p.embed", c.vocab_size, c.embed_dim, rng);
        let lstm = Lstm::new(p, "t2p.lstm", c.embed_dim, c.hidden, rng);
        Self { stem, down, bottom, up, head, embed, lstm }
    }

    fn encode<T: Scalar>(&self, c: &T2PConfig, g: &mut Graph<'_, T>, image: &Tensor<T>, words: &[usize]) -> EncodedVars {
        let x = g.input(image.clone());
        let x = self.stem.forward(g, x);
        let x = g.relu(x);
        let x = g.max_pool2(x);
        let coords = g.input(coord_channels(c.n_m));
        let mut x = g.concat(x, coords);
        let mut skips = Vec::with_capacity(self.down.len());
        for (l, conv) in self.down.iter().enumerate() {
            if l > 0 {
                x = g.max_pool2(x);
            }
            let y = conv.forward(g, x);
            x = g.relu(y);
            skips.push(x);
        }
        let y = self.bottom.forward(g, x);
        let y = g.relu(y);
        let bottom = g.add(x, y);
        let xs: Vec<Var> = words.iter().map(|&w| self.embed.lookup(g, w)).collect();
        let h = self.lstm.forward(g, &xs);
        EncodedVars { skips, bottom, h }
    }

    fn decode<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedVars,
        dropout: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let mut d = enc.bottom;
        for l in (0..self.up.len()).rev() {
            let stage = &self.up[l];
            let lang = stage.lang.forward(g, enc.h);
            let lang = g.relu(lang);
            let lang = maybe_dropout(g, lang, dropout, rng.as_deref_mut());
            let (_, hh, ww) = g.value(d).dims3();
            let tiled = g.tile(lang, hh, ww);
            let cat = g.concat(d, tiled);
            let z = stage.merge.forward(g, cat);
            let z = g.relu(z);
            let u = g.upsample2(z);
            let s = g.add(u, enc.skips[l]);
            let y = stage.conv.forward(g, s);
            let y = g.relu(y);
            d = maybe_dropout(g, y, dropout, rng.as_deref_mut());
        }
        self.head.forward(g, d)
    }
}

/// The grounding network with its weights.
#[derive(Clone, Debug)]
pub struct T2PModel<T: Scalar> {
    config: T2PConfig,
    arch: Arch,
    params: ParamStore<T>,
}

impl<T: Scalar> T2PModel<T> {
    pub fn new(config: T2PConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let arch = Arch::build(&config, &mut params, &mut rng);
        Ok(Self { config, arch, params })
    }

    pub fn config(&self) -> &T2PConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn check(&self, image: &Tensor<T>, words: &[usize]) -> Result<()> {
        let n = self.config.n_i;
        if image.shape() != [3, n, n] {
            return Err(Error::Shape(format!("image tensor {:?}, expected [3, {n}, {n}]", image.shape())));
        }
        if words.is_empty() {
            return Err(Error::EmptyCommand);
        }
        if let Some(&w) = words.iter().find(|&&w| w >= self.config.vocab_size) {
            return Err(Error::BadToken { index: w, size: self.config.vocab_size });
        }
        Ok(())
    }

    fn to_heatmap(&self, g: &Graph<'_, T>, v: Var) -> Heatmap<T> {
        Heatmap::from_vec(self.config.n_m, g.value(v).data().to_vec()).expect("head emits n_m x n_m")
    }

    /// One heatmap prediction. With `rng` the decoder dropout is active and
    /// the result is one stochastic sample; without it the pass is deterministic.
    pub fn forward_tensor(&self, image: &Tensor<T>, words: &[usize], rng: Option<&mut ChaCha8Rng>) -> Result<Heatmap<T>> {
        self.check(image, words)?;
        let mut g = Graph::new(&self.params);
        let enc = self.arch.encode(&self.config, &mut g, image, words);
        let out = self.arch.decode(&mut g, &enc, self.config.dropout, rng);
        Ok(self.to_heatmap(&g, out))
    }

    fn encode_values(&self, image: &Tensor<T>, words: &[usize]) -> Encoded<T> {
        let mut g = Graph::new(&self.params);
        let enc = self.arch.encode(&self.config, &mut g, image, words);
        Encoded {
            skips: enc.skips.iter().map(|&v| g.value(v).clone()).collect(),
            bottom: g.value(enc.bottom).clone(),
            h: g.value(enc.h).clone(),
        }
    }

    fn decode_sample(&self, enc: &Encoded<T>, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Heatmap<T> {
        let mut g = Graph::new(&self.params);
        let vars = EncodedVars {
            skips: enc.skips.iter().map(|t| g.input(t.clone())).collect(),
            bottom: g.input(enc.bottom.clone()),
            h: g.input(enc.h.clone()),
        };
        let out = self.arch.decode(&mut g, &vars, rate, rng);
        self.to_heatmap(&g, out)
    }

    pub fn save(&self, path: &Path, vocab: &Vocab, seed: u64, log: Option<&TrainLog>) -> Result<()> {
        checkpoint::write(path, &self.meta(vocab, seed, log), &self.params)
    }

    pub fn meta(&self, vocab: &Vocab, seed: u64, log: Option<&TrainLog>) -> CheckpointMeta {
        CheckpointMeta {
            schema_version: SCHEMA_VERSION,
            kind: "t2p".into(),
            dtype: T::DTYPE.into(),
            vocab_hash: vocab.hash(),
            n_i: self.config.n_i,
            n_m: self.config.n_m,
            hyperparameters: serde_json::to_value(&self.config).expect("config serializes"),
            train_seed: seed,
            training: log
                .map(|l| serde_json::json!({ "loss": "sum_squares", "final_loss": l.final_loss() }))
                .unwrap_or_default(),
        }
    }

    pub fn from_bytes(bytes: &[u8], vocab: &Vocab) -> Result<Self> {
        let meta = checkpoint::decode_meta(bytes)?;
        meta.check_kind("t2p")?;
        meta.check_vocab(vocab)?;
        let config: T2PConfig = serde_json::from_value(meta.hyperparameters)?;
        let mut model = Self::new(config, 0)?;
        checkpoint::decode_into(bytes, &mut model.params)?;
        Ok(model)
    }

    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, vocab)
    }
}

/// Heatmap prediction for an image. `rng` switches dropout on.
pub fn t2p_forward<T: Scalar>(
    model: &T2PModel<T>,
    image: &Image,
    words: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Heatmap<T>> {
    model.forward_tensor(&image.to_tensor(), words, rng)
}

/// Mean heatmap, its elementwise standard deviation and how they were sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyEstimate<T> {
    pub mp: Heatmap<T>,
    pub mu: Heatmap<T>,
    pub samples: usize,
    pub dropout: f64,
}

/// Mean and standard deviation of a stack of sampled heatmaps.
///
/// The variance is `mean(x²) − mean(x)²` with both moments taken around
/// the first sample, which leaves the value unchanged but avoids
/// cancellation. Rounding can still produce tiny negative variances; those
/// are clamped to zero before the square root.
pub fn mc_statistics<T: Scalar>(samples: &[Heatmap<T>]) -> Result<(Heatmap<T>, Heatmap<T>)> {
    if samples.len() < 2 {
        return Err(Error::Config(format!("need at least 2 samples, got {}", samples.len())));
    }
    let side = samples[0].side();
    if samples.iter().any(|s| s.side() != side) {
        return Err(Error::Shape("sample heatmaps differ in size".into()));
    }
    let t: T = lit(samples.len() as f64);
    let pivot = samples[0].data();
    let mut s1 = vec![T::zero(); side * side];
    let mut s2 = vec![T::zero(); side * side];
    for s in &samples[1..] {
        for (i, &v) in s.data().iter().enumerate() {
            let d = v - pivot[i];
            s1[i] += d;
            s2[i] += d * d;
        }
    }
    let mut mean = Vec::with_capacity(side * side);
    let mut std = Vec::with_capacity(side * side);
    for i in 0..side * side {
        let m1 = s1[i] / t;
        let var = s2[i] / t - m1 * m1;
        mean.push(pivot[i] + m1);
        std.push(var.max(T::zero()).sqrt());
    }
    Ok((Heatmap::from_vec(side, mean)?, Heatmap::from_vec(side, std)?))
}

/// `samples` stochastic passes with dropout rate `rate`; the encoder runs once.
pub fn predict_with_uncertainty<T: Scalar>(
    model: &T2PModel<T>,
    image: &Image,
    words: &[usize],
    samples: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<UncertaintyEstimate<T>> {
    predict_tensor_with_uncertainty(model, &image.to_tensor(), words, samples, rate, rng)
}

pub fn predict_tensor_with_uncertainty<T: Scalar>(
    model: &T2PModel<T>,
    image: &Tensor<T>,
    words: &[usize],
    samples: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<UncertaintyEstimate<T>> {
    if samples < 2 {
        return Err(Error::Config(format!("need at least 2 dropout samples, got {samples}")));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    model.check(image, words)?;
    let enc = model.encode_values(image, words);
    let stack: Vec<Heatmap<T>> = (0..samples).map(|_| model.decode_sample(&enc, rate, Some(rng))).collect();
    let (mp, mu) = mc_statistics(&stack)?;
    Ok(UncertaintyEstimate { mp, mu, samples, dropout: rate })
}

/// A pick location in image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub x: f64,
    pub y: f64,
    /// The heatmap had no unique maximum region (all values equal).
    pub degenerate: bool,
}

impl Pick {
    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Center of the highest cell, scaled to image pixels.
pub fn pick_position<T: Scalar>(mp: &Heatmap<T>, n_i: usize) -> Pick {
    let (cx, cy) = mp.argmax();
    let scale = n_i as f64 / mp.side() as f64;
    Pick { x: (cx as f64 + 0.5) * scale, y: (cy as f64 + 0.5) * scale, degenerate: mp.max() == mp.min() }
}

/// One supervised grounding pair; `image` indexes a shared image list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingExample {
    pub image: usize,
    pub words: Vec<usize>,
    /// Target block center in pixels.
    pub target: [i32; 2],
}

/// Fraction of examples whose deterministic pick lands within the success radius.
pub fn grounding_accuracy<T: Scalar>(
    model: &T2PModel<T>,
    images: &[Tensor<T>],
    examples: &[GroundingExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyEval);
    }
    let n_i = model.config.n_i;
    let mut hits = 0;
    for ex in examples {
        let mp = model.forward_tensor(&images[ex.image], &ex.words, None)?;
        let p = pick_position(&mp, n_i);
        hits += usize::from(success(p.xy(), [ex.target[0] as f64, ex.target[1] as f64], n_i));
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Token substitutions that keep a command true of a mirrored scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MirrorTokens {
    horizontal: Vec<usize>,
    vertical: Vec<usize>,
}

impl MirrorTokens {
    pub fn new(vocab: &Vocab) -> Self {
        let table = |pairs: &[(&str, &str)]| {
            let mut t: Vec<usize> = (0..vocab.len()).collect();
            for &(a, b) in pairs {
                if vocab.contains(a) && vocab.contains(b) {
                    let (i, j) = (vocab.index_of(a), vocab.index_of(b));
                    t.swap(i, j);
                }
            }
            t
        };
        Self {
            horizontal: table(&[("left", "right"), ("leftmost", "rightmost")]),
            vertical: table(&[("upper", "lower"), ("uppermost", "lowermost"), ("top", "bottom")]),
        }
    }
}

/// Mirrors a `[c, n, n]` image left-right and/or top-bottom.
fn mirror_image<T: Scalar>(image: &Tensor<T>, horizontal: bool, vertical: bool) -> Tensor<T> {
    let (c, h, w) = image.dims3();
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        for y in 0..h {
            let sy = if vertical { h - 1 - y } else { y };
            let row = &src[(ch * h + sy) * w..(ch * h + sy + 1) * w];
            if horizontal {
                out.extend(row.iter().rev());
            } else {
                out.extend_from_slice(row);
            }
        }
    }
    Tensor::from_vec(image.shape(), out)
}

/// Minimizes the summed squared heatmap error against unit Gaussians at the
/// target cells. When `monitor` is given its accuracy is logged every epoch.
///
/// With `mirror`, every sample is drawn in one of four mirrorings (none,
/// left-right, top-bottom, both), with the command's direction words
/// swapped to match.
pub fn train_t2p<T: Scalar>(
    images: &[Tensor<T>],
    examples: &[GroundingExample],
    config: T2PConfig,
    train_cfg: &TrainConfig,
    monitor: Option<&[GroundingExample]>,
    mirror: Option<&MirrorTokens>,
) -> Result<(T2PModel<T>, TrainLog)> {
    let mut model = T2PModel::new(config, train_cfg.seed)?;
    for ex in examples.iter().chain(monitor.unwrap_or(&[])) {
        let image = images.get(ex.image).ok_or_else(|| Error::Config(format!("image index {} missing", ex.image)))?;
        model.check(image, &ex.words)?;
    }
    if let Some(m) = mirror {
        if m.horizontal.len() != model.config.vocab_size {
            return Err(Error::Config(format!(
                "mirror table covers {} tokens, model has {}",
                m.horizontal.len(),
                model.config.vocab_size
            )));
        }
    }
    let cfg = model.config.clone();
    let arch = model.arch.clone();
    let n_i = cfg.n_i as u32;
    let target_of = |ex: &GroundingExample, h: bool, v: bool| {
        let n = n_i as i32;
        let t = [if h { n - ex.target[0] } else { ex.target[0] }, if v { n - ex.target[1] } else { ex.target[1] }];
        gaussian_at::<T>(pixel_to_cell(t, n_i, cfg.n_m), cfg.n_m).into_vec()
    };
    let targets: Vec<Vec<T>> = examples.iter().map(|ex| target_of(ex, false, false)).collect();
    let rate = cfg.dropout;
    let log = train::fit(
        &mut model.params,
        examples.len(),
        train_cfg,
        |params: &ParamStore<T>, i, rng: &mut ChaCha8Rng, grads: &mut Grads<T>| {
            let ex = &examples[i];
            let mut g = Graph::new(params);
            let (enc, target) = match mirror {
                Some(m) => {
                    let k: u8 = rng.gen_range(0..4);
                    let (h, v) = (k & 1 == 1, k & 2 == 2);
                    let words: Vec<usize> = ex
                        .words
                        .iter()
                        .map(|&w| if h { m.horizontal[w] } else { w })
                        .map(|w| if v { m.vertical[w] } else { w })
                        .collect();
                    let image = mirror_image(&images[ex.image], h, v);
                    (arch.encode(&cfg, &mut g, &image, &words), target_of(ex, h, v))
                }
                None => (arch.encode(&cfg, &mut g, &images[ex.image], &ex.words), targets[i].clone()),
            };
            let out = arch.decode(&mut g, &enc, rate, Some(rng));
            let loss = g.sum_squares(out, target);
            let l = g.value(loss).data()[0];
            g.backward(loss, grads);
            l
        },
        |params, _| {
            let set = monitor?;
            let view = T2PModel { config: cfg.clone(), arch: arch.clone(), params: params.clone() };
            grounding_accuracy(&view, images, set).ok()
        },
    )?;
    Ok((model, log))
}
