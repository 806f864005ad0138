//! Clarifying questions: the fixed catalog, confidence fusion, the question
//! network and question selection.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blockworld::{predicates_within, Color, Image, Predicate, Scene};
use crate::checkpoint::{self, CheckpointMeta, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::language::{canonical_word, Vocab};
use crate::nn::{maybe_dropout, Conv2d, Embedding, Graph, Grads, Linear, Lstm, ParamStore, Tensor, Var};
use crate::scalar::{lit, Scalar};
use crate::train::{self, TrainConfig, TrainLog};

pub const NUM_QUESTIONS: usize = 15;
pub const CONFIRM_ID: usize = 14;
/// Weight of the uncertainty term in the confidence map.
pub const DEFAULT_BETA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    Color,
    Position,
    Confirm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Attribute {
    Color(Color),
    Position(Predicate),
    Confirm,
}

impl Attribute {
    /// Words that state this attribute in a command.
    pub fn words(self) -> &'static [&'static str] {
        match self {
            Attribute::Color(c) => match c {
                Color::Red => &["red"],
                Color::Blue => &["blue"],
                Color::Green => &["green"],
                Color::Yellow => &["yellow"],
                Color::Purple => &["purple"],
            },
            Attribute::Position(p) => p.words(),
            Attribute::Confirm => &[],
        }
    }

    /// Whether every word of the attribute occurs in the command, after
    /// mapping position synonyms such as "leftmost" onto "left".
    pub fn stated_in(self, command_text: &str) -> bool {
        let words = self.words();
        if words.is_empty() {
            return false;
        }
        let lower = command_text.to_lowercase();
        let said: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(canonical_word)
            .collect();
        words.iter().all(|w| said.contains(w))
    }

    /// Whether the attribute is true of `block_id`, with positions judged
    /// among the `reference` blocks.
    pub fn holds(self, scene: &Scene, block_id: u32, reference: &[u32]) -> Result<bool> {
        Ok(match self {
            Attribute::Color(c) => scene.block(block_id)?.color == c,
            Attribute::Position(p) => predicates_within(scene, block_id, reference)?.contains(&p),
            Attribute::Confirm => true,
        })
    }

    fn payload(self) -> Option<String> {
        match self {
            Attribute::Color(c) => Some(c.name().to_string()),
            Attribute::Position(p) => Some(p.tag().to_string()),
            Attribute::Confirm => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "QuestionRecord", into = "QuestionRecord")]
pub struct Question {
    pub id: usize,
    pub attribute: Attribute,
    pub text: String,
}

impl Question {
    pub fn kind(&self) -> QuestionKind {
        match self.attribute {
            Attribute::Color(_) => QuestionKind::Color,
            Attribute::Position(_) => QuestionKind::Position,
            Attribute::Confirm => QuestionKind::Confirm,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct QuestionRecord {
    id: usize,
    kind: QuestionKind,
    attribute: Option<String>,
    text: String,
}

impl From<Question> for QuestionRecord {
    fn from(q: Question) -> Self {
        Self { id: q.id, kind: q.kind(), attribute: q.attribute.payload(), text: q.text }
    }
}

impl TryFrom<QuestionRecord> for Question {
    type Error = String;

    fn try_from(r: QuestionRecord) -> std::result::Result<Self, String> {
        let attribute = match (r.kind, r.attribute.as_deref()) {
            (QuestionKind::Color, Some(a)) => {
                Attribute::Color(Color::from_name(a).ok_or_else(|| format!("unknown color {a:?}"))?)
            }
            (QuestionKind::Position, Some(a)) => Attribute::Position(
                Predicate::ALL.into_iter().find(|p| p.tag() == a).ok_or_else(|| format!("unknown predicate {a:?}"))?,
            ),
            (QuestionKind::Confirm, None) => Attribute::Confirm,
            (k, a) => return Err(format!("question kind {k:?} with attribute {a:?}")),
        };
        Ok(Question { id: r.id, attribute, text: r.text })
    }
}

/// The fifteen askable questions: colors (ids 0–4), positions (5–13) and
/// the confirmation "this one?" (14).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuestionCatalog {
    questions: Vec<Question>,
}

impl QuestionCatalog {
    pub fn standard() -> Self {
        let mut questions = Vec::with_capacity(NUM_QUESTIONS);
        for c in Color::ALL {
            questions.push(Question { id: questions.len(), attribute: Attribute::Color(c), text: format!("{c} one?") });
        }
        for p in Predicate::ALL {
            questions.push(Question {
                id: questions.len(),
                attribute: Attribute::Position(p),
                text: format!("{} one?", p.phrase()),
            });
        }
        questions.push(Question { id: CONFIRM_ID, attribute: Attribute::Confirm, text: "this one?".into() });
        Self { questions }
    }

    pub fn from_questions(questions: Vec<Question>) -> Result<Self> {
        if questions.len() != NUM_QUESTIONS {
            return Err(Error::Config(format!("catalog needs {NUM_QUESTIONS} questions, got {}", questions.len())));
        }
        for (i, q) in questions.iter().enumerate() {
            if q.id != i {
                return Err(Error::Config(format!("question at position {i} has id {}", q.id)));
            }
        }
        let count = |k| questions.iter().filter(|q| q.kind() == k).count();
        if count(QuestionKind::Color) != 5 || count(QuestionKind::Position) != 9 || count(QuestionKind::Confirm) != 1 {
            return Err(Error::Config("catalog needs 5 color, 9 position and 1 confirm question".into()));
        }
        Ok(Self { questions })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Question> {
        self.questions.get(id)
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn color(&self, c: Color) -> &Question {
        self.find(Attribute::Color(c))
    }

    pub fn position(&self, p: Predicate) -> &Question {
        self.find(Attribute::Position(p))
    }

    pub fn confirm(&self) -> &Question {
        self.find(Attribute::Confirm)
    }

    fn find(&self, a: Attribute) -> &Question {
        self.questions.iter().find(|q| q.attribute == a).expect("catalog covers every attribute")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.questions).expect("questions serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_questions(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Upper-confidence fusion of a position map and its uncertainty.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap<T> {
    pub grid: Heatmap<T>,
    pub beta: f64,
}

/// `M_p + β·M_u`, elementwise.
pub fn confidence_map<T: Scalar>(mp: &Heatmap<T>, mu: &Heatmap<T>, beta: f64) -> Result<ConfidenceMap<T>> {
    if mp.side() != mu.side() {
        return Err(Error::Shape(format!("position map {0}x{0} vs uncertainty map {1}x{1}", mp.side(), mu.side())));
    }
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
    }
    let b: T = lit(beta);
    let data = mp.data().iter().zip(mu.data()).map(|(&p, &u)| p + b * u).collect();
    Ok(ConfidenceMap { grid: Heatmap::from_vec(mp.side(), data)?, beta })
}

/// Channel-major `[4, n_m, n_m]` stack: the area-averaged image as R, G, B
/// followed by the confidence map.
pub fn build_qgn_input<T: Scalar>(image: &Image, mc: &Heatmap<T>) -> Result<Tensor<T>> {
    let n = mc.side();
    let mut data = image.downsample::<T>(n)?.into_vec();
    data.extend_from_slice(mc.data());
    Ok(Tensor::from_vec(&[4, n, n], data))
}

/// The highest-scoring question and the full ranking, best first; ties go
/// to the lower id.
pub fn select_question<'c, T: Scalar>(scores: &[T], catalog: &'c QuestionCatalog) -> Result<(&'c Question, Vec<usize>)> {
    if scores.len() != catalog.len() {
        return Err(Error::Shape(format!("{} scores for {} questions", scores.len(), catalog.len())));
    }
    let mut ranking: Vec<usize> = (0..scores.len()).collect();
    ranking.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    Ok((catalog.get(ranking[0]).expect("ranked id in catalog"), ranking))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QgnConfig {
    pub vocab_size: usize,
    pub n_m: usize,
    pub conv_channels: [usize; 3],
    pub embed_dim: usize,
    /// Width of the command encoder, f2 and f3.
    pub hidden: usize,
    pub n_q: usize,
}

impl QgnConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self { vocab_size, n_m: 64, conv_channels: [16, 32, 64], embed_dim: 32, hidden: 64, n_q: NUM_QUESTIONS }
    }

    pub fn paper(vocab_size: usize) -> Self {
        Self { embed_dim: 300, hidden: 256, ..Self::desk(vocab_size) }
    }

    fn validate(&self) -> Result<()> {
        if !self.n_m.is_multiple_of(8) || self.n_m == 0 {
            return Err(Error::Config(format!("question network needs n_m divisible by 8, got {}", self.n_m)));
        }
        if self.vocab_size == 0 || self.hidden == 0 || self.embed_dim == 0 || self.n_q == 0 {
            return Err(Error::Config("question network sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct QgnArch {
    convs: [Conv2d; 3],
    embed: Embedding,
    lstm: Lstm,
    f2: Linear,
    f3: Linear,
    out: Linear,
}

/// The question network: a three-stage CNN over the image and confidence map,
/// an LSTM over the command, and the multiplicative fusion head.
#[derive(Clone, Debug)]
pub struct QgnModel<T: Scalar> {
    config: QgnConfig,
    arch: QgnArch,
    params: ParamStore<T>,
}

impl<T: Scalar> QgnModel<T> {
    pub fn new(config: QgnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let [c1, c2, c3] = config.conv_channels;
        let convs = [
            Conv2d::new(&mut p, "qgn.conv1", 4, c1, 3, 1, &mut rng),
            Conv2d::new(&mut p, "qgn.conv2", c1, c2, 3, 1, &mut rng),
            Conv2d::new(&mut p, "qgn.conv3", c2, c3, 3, 1, &mut rng),
        ];
        let side = config.n_m / 8;
        let f1 = c3 * side * side;
        let h = config.hidden;
        let arch = QgnArch {
            convs,
            embed: Embedding::new(&mut p, "qgn.embed", config.vocab_size, config.embed_dim, &mut rng),
            lstm: Lstm::new(&mut p, "qgn.lstm", config.embed_dim, h, &mut rng),
            f2: Linear::new(&mut p, "qgn.f2", f1, h, &mut rng),
            f3: Linear::new(&mut p, "qgn.f3", 2 * h, h, &mut rng),
            out: Linear::new(&mut p, "qgn.out", h, config.n_q, &mut rng),
        };
        Ok(Self { config, arch, params: p })
    }

    pub fn config(&self) -> &QgnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn check(&self, input: &Tensor<T>, words: &[usize]) -> Result<()> {
        let n = self.config.n_m;
        if input.shape() != [4, n, n] {
            return Err(Error::Shape(format!("question input {:?}, expected [4, {n}, {n}]", input.shape())));
        }
        if words.is_empty() {
            return Err(Error::EmptyCommand);
        }
        if let Some(&w) = words.iter().find(|&&w| w >= self.config.vocab_size) {
            return Err(Error::BadToken { index: w, size: self.config.vocab_size });
        }
        Ok(())
    }

    fn graph(
        &self,
        g: &mut Graph<'_, T>,
        input: &Tensor<T>,
        words: &[usize],
        dropout: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let a = &self.arch;
        let mut x = g.input(input.clone());
        for conv in &a.convs {
            let y = conv.forward(g, x);
            let y = g.relu(y);
            x = g.max_pool2(y);
        }
        let n = g.value(x).len();
        let f1 = g.reshape(x, &[n]);
        let f1 = maybe_dropout(g, f1, dropout, rng);
        let f2 = a.f2.forward(g, f1);
        let f2 = g.relu(f2);
        let xs: Vec<Var> = words.iter().map(|&w| a.embed.lookup(g, w)).collect();
        let gn = a.lstm.forward(g, &xs);
        let cat = g.concat(f2, gn);
        let f3 = a.f3.forward(g, cat);
        let f3 = g.relu(f3);
        let fused = g.mul(f3, gn);
        a.out.forward(g, fused)
    }

    /// Raw question scores `V_Q` (no softmax).
    pub fn forward(&self, input: &Tensor<T>, words: &[usize]) -> Result<Vec<T>> {
        self.check(input, words)?;
        let mut g = Graph::new(&self.params);
        let v = self.graph(&mut g, input, words, 0.0, None);
        Ok(g.value(v).data().to_vec())
    }

    pub fn save(&self, path: &Path, vocab: &Vocab, seed: u64, log: Option<&TrainLog>) -> Result<()> {
        checkpoint::write(path, &self.meta(vocab, seed, log), &self.params)
    }

    pub fn meta(&self, vocab: &Vocab, seed: u64, log: Option<&TrainLog>) -> CheckpointMeta {
        CheckpointMeta {
            schema_version: SCHEMA_VERSION,
            kind: "qgn".into(),
            dtype: T::DTYPE.into(),
            vocab_hash: vocab.hash(),
            n_i: 0,
            n_m: self.config.n_m,
            hyperparameters: serde_json::to_value(&self.config).expect("config serializes"),
            train_seed: seed,
            training: log.map(|l| serde_json::json!({ "loss": "softmax_xent", "final_loss": l.final_loss() }))
                .unwrap_or_default(),
        }
    }

    pub fn from_bytes(bytes: &[u8], vocab: &Vocab) -> Result<Self> {
        let meta = checkpoint::decode_meta(bytes)?;
        meta.check_kind("qgn")?;
        meta.check_vocab(vocab)?;
        let config: QgnConfig = serde_json::from_value(meta.hyperparameters)?;
        let mut model = Self::new(config, 0)?;
        checkpoint::decode_into(bytes, &mut model.params)?;
        Ok(model)
    }

    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, vocab)
    }
}

/// One training example for the question network.
#[derive(Clone, Debug)]
pub struct QgnExample<T> {
    pub input: Tensor<T>,
    pub words: Vec<usize>,
    pub label: usize,
}

pub fn qgn_accuracy<T: Scalar>(model: &QgnModel<T>, examples: &[QgnExample<T>]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut hits = 0;
    for ex in examples {
        let v = model.forward(&ex.input, &ex.words)?;
        let best = (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        hits += usize::from(best == ex.label);
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Trains with softmax cross-entropy over the question ids.
pub fn train_qgn<T: Scalar>(
    examples: &[QgnExample<T>],
    config: QgnConfig,
    train_cfg: &TrainConfig,
) -> Result<(QgnModel<T>, TrainLog)> {
    let mut model = QgnModel::new(config, train_cfg.seed)?;
    for ex in examples {
        model.check(&ex.input, &ex.words)?;
        if ex.label >= model.config.n_q {
            return Err(Error::Config(format!("label {} outside {} questions", ex.label, model.config.n_q)));
        }
    }
    let arch = model.arch.clone();
    let cfg = model.config.clone();
    let shell = QgnModel { config: cfg, arch, params: ParamStore::new() };
    let log = train::fit(
        &mut model.params,
        examples.len(),
        train_cfg,
        |params: &ParamStore<T>, i, rng: &mut ChaCha8Rng, grads: &mut Grads<T>| {
            let ex = &examples[i];
            let mut g = Graph::new(params);
            let v = shell.graph(&mut g, &ex.input, &ex.words, train_cfg.dropout, Some(rng));
            let loss = g.softmax_xent(v, ex.label);
            let l = g.value(loss).data()[0];
            g.backward(loss, grads);
            l
        },
        |_, _| None,
    )?;
    Ok((model, log))
}
