//! Vocabulary, tokenization, templated pickup commands, word embeddings and
//! the answer-augmentation rule.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blockworld::{between_colors, predicates_within, Color, Predicate, Scene};
use crate::error::{Error, Result};
use crate::inquiry::Question;
use crate::scalar::{lit, Scalar};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
/// Commands are padded (or truncated) to this many tokens when stored densely.
pub const MAX_COMMAND_LEN: usize = 24;

const VERBS: [&str; 4] = ["pick up", "grab", "take", "get"];
const NOUNS: [&str; 4] = ["block", "object", "cube", "one"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unk: usize,
    pad: usize,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format { offset: i, msg: format!("invalid token {t:?}") });
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format { offset: i, msg: format!("duplicate token {t:?}") });
            }
        }
        let unk = *index.get(UNK).ok_or_else(|| Error::Format { offset: 0, msg: "vocabulary lacks <unk>".into() })?;
        let pad = *index.get(PAD).ok_or_else(|| Error::Format { offset: 0, msg: "vocabulary lacks <pad>".into() })?;
        Ok(Self { tokens, index, unk, pad })
    }

    /// Every word the command templates, questions and answers can emit.
    pub fn standard() -> Self {
        let mut words: BTreeSet<String> = BTreeSet::new();
        let mut add = |s: &str| {
            for w in s.split_whitespace() {
                words.insert(w.to_string());
            }
        };
        for s in VERBS.iter().chain(NOUNS.iter()) {
            add(s);
        }
        for t in COLOR_TEMPLATES.iter().chain(GLOBAL_TEMPLATES).chain(PAIR_TEMPLATES).chain(BETWEEN_TEMPLATES) {
            add(&strip_slots(t));
        }
        for c in Color::ALL {
            add(c.name());
        }
        for p in Predicate::ALL {
            add(&p.phrase());
            add(global_word(p));
            add(side_phrase(p));
        }
        add("yes this one");
        let mut tokens = vec![PAD.to_string(), UNK.to_string()];
        tokens.extend(words);
        Self::from_tokens(tokens).expect("standard vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_index(&self) -> usize {
        self.unk
    }

    pub fn pad_index(&self) -> usize {
        self.pad
    }

    pub fn index_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(self.unk)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn token(&self, i: usize) -> Option<&str> {
        self.tokens.get(i).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

fn strip_slots(template: &str) -> String {
    let mut out = String::new();
    let mut depth = 0;
    for ch in template.chars() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                out.push(' ');
            }
            _ if depth == 0 => out.push(ch),
            _ => {}
        }
    }
    out
}

/// Lowercases, strips punctuation and maps words to vocabulary indices
/// (unknown words become `<unk>`).
pub fn tokenize(text: &str, vocab: &Vocab) -> Result<Vec<usize>> {
    let cleaned: String =
        text.chars().map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' }).collect();
    let words: Vec<usize> = cleaned.split_whitespace().map(|w| vocab.index_of(w)).collect();
    if words.is_empty() {
        return Err(Error::EmptyCommand);
    }
    Ok(words)
}

pub fn detokenize(words: &[usize], vocab: &Vocab) -> String {
    words.iter().map(|&w| vocab.token(w).unwrap_or(UNK)).collect::<Vec<_>>().join(" ")
}

/// Fixed-length copy padded with `<pad>`; the true length is returned alongside.
pub fn pad_words(words: &[usize], vocab: &Vocab) -> ([usize; MAX_COMMAND_LEN], usize) {
    let mut out = [vocab.pad_index(); MAX_COMMAND_LEN];
    let n = words.len().min(MAX_COMMAND_LEN);
    out[..n].copy_from_slice(&words[..n]);
    (out, n)
}

/// What a command asks for, in scene terms.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Color>,
    /// Evaluated among the blocks of `color` when one is given, else among all blocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Predicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub between: Option<Color>,
}

/// Blocks matching a constraint, by brute force over the scene.
pub fn resolve(scene: &Scene, c: &Constraint) -> Result<Vec<u32>> {
    let base: Vec<u32> = match c.color {
        Some(color) => scene.blocks_of(color),
        None => scene.ids(),
    };
    let mut out = Vec::new();
    for &id in &base {
        if let Some(bc) = c.between {
            if !between_colors(scene, id)?.contains(&bc) {
                continue;
            }
        }
        if let Some(p) = c.position {
            if !predicates_within(scene, id, &base)?.contains(&p) {
                continue;
            }
        }
        out.push(id);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub text: String,
    pub words: Vec<usize>,
    pub ambiguous: bool,
    pub target_id: Option<u32>,
    pub candidate_ids: Vec<u32>,
    #[serde(default)]
    pub constraint: Constraint,
}

impl Command {
    /// Wraps free text (for example typed by a user) with no ground truth attached.
    pub fn from_text(text: &str, vocab: &Vocab) -> Result<Self> {
        Ok(Self {
            text: text.trim().to_string(),
            words: tokenize(text, vocab)?,
            ambiguous: false,
            target_id: None,
            candidate_ids: Vec::new(),
            constraint: Constraint::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

const COLOR_TEMPLATES: &[&str] = &[
    "{verb} the {color} {noun}",
    "{verb} a {color} {noun}",
    "i want the {color} {noun}",
    "give me the {color} {noun}",
    "{verb} the {noun} whose color is {color}",
    "{verb} the {color} colored {noun}",
];

const GLOBAL_TEMPLATES: &[&str] = &["{verb} the {most} {noun}", "{verb} the {noun} {where}", "give me the {most} {noun}"];

/// Position among the (two) blocks of one color. The last form mirrors a
/// command extended by a dialogue answer.
const PAIR_TEMPLATES: &[&str] = &[
    "{verb} the {pos} {noun} whose color is {color}",
    "{verb} the {color} {noun} {where}",
    "{verb} the {pos} {color} {noun}",
    "{color_command} {pos} one",
];

const BETWEEN_TEMPLATES: &[&str] = &[
    "{verb} the {noun} between two {color} blocks",
    "{verb} the {noun} between the {color} blocks",
    "{verb} the {noun} in between the two {color} blocks",
];

fn global_word(p: Predicate) -> &'static str {
    match p {
        Predicate::Left => "leftmost",
        Predicate::Right => "rightmost",
        Predicate::Upper => "uppermost",
        Predicate::Lower => "lowermost",
        Predicate::Middle => "middle",
        Predicate::UpperLeft => "upper left",
        Predicate::UpperRight => "upper right",
        Predicate::LowerLeft => "lower left",
        Predicate::LowerRight => "lower right",
    }
}

fn side_phrase(p: Predicate) -> &'static str {
    match p {
        Predicate::Left => "on the left side",
        Predicate::Right => "on the right side",
        Predicate::Upper => "on the upper side",
        Predicate::Lower => "on the lower side",
        Predicate::Middle => "in the middle",
        Predicate::UpperLeft => "in the upper left corner",
        Predicate::UpperRight => "in the upper right corner",
        Predicate::LowerLeft => "in the lower left corner",
        Predicate::LowerRight => "in the lower right corner",
    }
}

/// Maps position synonyms onto the predicate words used by questions.
pub fn canonical_word(w: &str) -> &str {
    match w {
        "leftmost" => "left",
        "rightmost" => "right",
        "uppermost" | "top" => "upper",
        "lowermost" | "bottom" => "lower",
        other => other,
    }
}

struct Fill<'a> {
    color: Option<Color>,
    pos: Option<Predicate>,
    color_command: Option<&'a str>,
}

fn fill_template<R: Rng>(template: &str, fill: &Fill<'_>, rng: &mut R) -> String {
    let mut s = template.to_string();
    if let Some(cc) = fill.color_command {
        s = s.replace("{color_command}", cc);
    }
    s = s.replace("{verb}", VERBS.choose(rng).expect("verbs"));
    s = s.replace("{noun}", NOUNS.choose(rng).expect("nouns"));
    if let Some(c) = fill.color {
        s = s.replace("{color}", c.name());
    }
    if let Some(p) = fill.pos {
        s = s.replace("{pos}", &p.phrase());
        s = s.replace("{most}", global_word(p));
        s = s.replace("{where}", side_phrase(p));
    }
    debug_assert!(!s.contains('{'), "unfilled template {s}");
    s
}

fn make_command(text: String, vocab: &Vocab, constraint: Constraint, candidates: Vec<u32>) -> Result<Command> {
    let words = tokenize(&text, vocab)?;
    let ambiguous = candidates.len() >= 2;
    Ok(Command {
        text,
        words,
        ambiguous,
        target_id: if ambiguous { None } else { candidates.first().copied() },
        candidate_ids: candidates,
        constraint,
    })
}

/// Kinds of unambiguous description available for one block.
#[derive(Clone, Debug)]
enum Description {
    Color(Color),
    Global(Predicate),
    Pair(Color, Predicate),
    Between(Color),
}

fn descriptions(scene: &Scene, block_id: u32) -> Result<Vec<Vec<Description>>> {
    let block = scene.block(block_id)?;
    let mut groups = Vec::new();
    let same = scene.blocks_of(block.color);
    if same.len() == 1 {
        groups.push(vec![Description::Color(block.color)]);
    }
    let global: Vec<Description> =
        predicates_within(scene, block_id, &scene.ids())?.into_iter().map(Description::Global).collect();
    if !global.is_empty() {
        groups.push(global);
    }
    if same.len() == 2 {
        let pair: Vec<Description> = predicates_within(scene, block_id, &same)?
            .into_iter()
            .map(|p| Description::Pair(block.color, p))
            .collect();
        if !pair.is_empty() {
            groups.push(pair);
        }
    }
    let between: Vec<Description> = between_colors(scene, block_id)?.into_iter().map(Description::Between).collect();
    if !between.is_empty() {
        groups.push(between);
    }
    Ok(groups)
}

fn render_description<R: Rng>(d: &Description, vocab: &Vocab, rng: &mut R) -> Result<(String, Constraint)> {
    Ok(match *d {
        Description::Color(c) => {
            let t = COLOR_TEMPLATES.choose(rng).expect("templates");
            (fill_template(t, &Fill { color: Some(c), pos: None, color_command: None }, rng), Constraint {
                color: Some(c),
                ..Default::default()
            })
        }
        Description::Global(p) => {
            let t = GLOBAL_TEMPLATES.choose(rng).expect("templates");
            (fill_template(t, &Fill { color: None, pos: Some(p), color_command: None }, rng), Constraint {
                position: Some(p),
                ..Default::default()
            })
        }
        Description::Pair(c, p) => {
            let t = PAIR_TEMPLATES.choose(rng).expect("templates");
            let base = COLOR_TEMPLATES.choose(rng).expect("templates");
            let base = fill_template(base, &Fill { color: Some(c), pos: None, color_command: None }, rng);
            let text = fill_template(t, &Fill { color: Some(c), pos: Some(p), color_command: Some(&base) }, rng);
            (text, Constraint { color: Some(c), position: Some(p), between: None })
        }
        Description::Between(c) => {
            let t = BETWEEN_TEMPLATES.choose(rng).expect("templates");
            let _ = vocab;
            (fill_template(t, &Fill { color: Some(c), pos: None, color_command: None }, rng), Constraint {
                between: Some(c),
                ..Default::default()
            })
        }
    })
}

/// A command that identifies exactly `block_id`.
///
/// A description family (color, scene-wide position, position within a
/// same-color pair, between a color pair) is drawn uniformly among those
/// that apply, then a predicate and a phrasing.
pub fn generate_unambiguous<R: Rng>(scene: &Scene, block_id: u32, vocab: &Vocab, rng: &mut R) -> Result<Command> {
    let groups = descriptions(scene, block_id)?;
    let group = groups
        .choose(rng)
        .ok_or_else(|| Error::NotDescribable(format!("block {block_id} has no unique description")))?;
    let d = group.choose(rng).expect("non-empty group");
    let (text, constraint) = render_description(d, vocab, rng)?;
    let candidates = resolve(scene, &constraint)?;
    if candidates != [block_id] {
        return Err(Error::NotDescribable(format!("`{text}` matches {candidates:?}, not block {block_id}")));
    }
    make_command(text, vocab, constraint, candidates)
}

/// A color command matching both blocks of a duplicated color.
pub fn generate_ambiguous<R: Rng>(scene: &Scene, vocab: &Vocab, rng: &mut R) -> Result<Command> {
    let colors: Vec<Color> = Color::ALL.into_iter().filter(|&c| scene.blocks_of(c).len() >= 2).collect();
    let &color = colors.choose(rng).ok_or_else(|| Error::NotDescribable("every color is unique".into()))?;
    generate_ambiguous_for(scene, color, vocab, rng)
}

pub fn generate_ambiguous_for<R: Rng>(scene: &Scene, color: Color, vocab: &Vocab, rng: &mut R) -> Result<Command> {
    let constraint = Constraint { color: Some(color), ..Default::default() };
    let candidates = resolve(scene, &constraint)?;
    if candidates.len() < 2 {
        return Err(Error::NotDescribable(format!("only {} {color} block(s)", candidates.len())));
    }
    let t = COLOR_TEMPLATES.choose(rng).expect("templates");
    let text = fill_template(t, &Fill { color: Some(color), pos: None, color_command: None }, rng);
    make_command(text, vocab, constraint, candidates)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub words: Vec<usize>,
    pub is_yes: bool,
}

impl Answer {
    pub fn parse(text: &str, vocab: &Vocab) -> Result<Self> {
        let words = tokenize(text, vocab)?;
        let is_yes = words.len() == 1 && vocab.token(words[0]) == Some("yes");
        Ok(Self { text: text.trim().to_string(), words, is_yes })
    }
}

/// Extends a command with the answer, or with the question's own words when
/// the answer is "yes". The input command is left untouched.
pub fn augment(command: &Command, question: &Question, answer: &Answer, vocab: &Vocab) -> Command {
    let (extra_text, extra_words) = if answer.is_yes {
        let text = question.text.trim_end_matches('?').to_string();
        let words = tokenize(&text, vocab).expect("question text is non-empty");
        (text, words)
    } else {
        (answer.text.clone(), answer.words.clone())
    };
    let mut out = command.clone();
    out.text = format!("{} {}", command.text, extra_text);
    out.words.extend(extra_words);
    out
}

/// `n_e × d` word-vector matrix; column `k` embeds token `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    dim: usize,
    vocab: usize,
    /// Stored token-major: entries `[k·dim, (k+1)·dim)` are column `k`.
    data: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn from_columns(dim: usize, vocab: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != dim * vocab {
            return Err(Error::Shape(format!("{} values for a {dim}x{vocab} embedding table", data.len())));
        }
        Ok(Self { dim, vocab, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn column(&self, k: usize) -> &[T] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_token_major(&self) -> &[T] {
        &self.data
    }

    /// Loads `word v1 … v_dim` lines; vocabulary words absent from the file keep zero vectors.
    pub fn load_text(path: &Path, vocab: &Vocab) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_text(&text, vocab)
    }

    pub fn parse_text(text: &str, vocab: &Vocab) -> Result<Self> {
        let mut dim = None;
        let mut rows: HashMap<String, Vec<T>> = HashMap::new();
        let mut offset = 0;
        for line in text.lines() {
            let mut parts = line.split_whitespace();
            if let Some(word) = parts.next() {
                let vals: Vec<T> = parts
                    .map(|p| p.parse::<f64>().map(lit))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Format { offset, msg: format!("bad float: {e}") })?;
                match dim {
                    None => dim = Some(vals.len()),
                    Some(d) if d != vals.len() => {
                        return Err(Error::Format { offset, msg: format!("expected {d} values, found {}", vals.len()) })
                    }
                    _ => {}
                }
                rows.insert(word.to_string(), vals);
            }
            offset += line.len() + 1;
        }
        let dim = dim.filter(|&d| d > 0).ok_or(Error::Format { offset: 0, msg: "empty embedding file".into() })?;
        let mut data = vec![T::zero(); dim * vocab.len()];
        for (k, tok) in vocab.tokens().iter().enumerate() {
            if let Some(v) = rows.get(tok) {
                data[k * dim..(k + 1) * dim].copy_from_slice(v);
            }
        }
        Self::from_columns(dim, vocab.len(), data)
    }
}

/// Column `words[k]` of the table for every `k`.
pub fn embed<T: Scalar>(words: &[usize], table: &EmbeddingTable<T>) -> Result<Vec<Vec<T>>> {
    words
        .iter()
        .map(|&w| {
            if w >= table.vocab_size() {
                Err(Error::BadToken { index: w, size: table.vocab_size() })
            } else {
                Ok(table.column(w).to_vec())
            }
        })
        .collect()
}

/// Sum of the word vectors of a command.
pub fn embed_sum<T: Scalar>(words: &[usize], table: &EmbeddingTable<T>) -> Result<Vec<T>> {
    let mut acc = vec![T::zero(); table.dim()];
    for v in embed(words, table)? {
        for (a, b) in acc.iter_mut().zip(v) {
            *a += b;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockworld::{generate_scene, Block, SceneConfig};
    use crate::inquiry::QuestionCatalog;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene_of(blocks: &[(Color, i32, i32)]) -> Scene {
        Scene {
            image_size: 256,
            seed: 0,
            blocks: blocks
                .iter()
                .enumerate()
                .map(|(i, &(color, x, y))| Block { id: i as u32, color, center: [x, y], side: 40 })
                .collect(),
        }
    }

    #[test]
    fn tokenize_known_and_unknown() {
        let v = Vocab::standard();
        let w = tokenize("Pick up the red block", &v).unwrap();
        assert_eq!(w.len(), 5);
        assert!(w.iter().all(|&i| i != v.unk_index()));
        let w = tokenize("Pick up the crimson block!", &v).unwrap();
        assert!(w.contains(&v.unk_index()));
        assert!(matches!(tokenize("", &v), Err(Error::EmptyCommand)));
        assert!(matches!(tokenize("  ?! ", &v), Err(Error::EmptyCommand)));
    }

    #[test]
    fn sole_red_block_color_command() {
        let v = Vocab::standard();
        let s = scene_of(&[(Color::Red, 60, 60), (Color::Blue, 200, 60), (Color::Green, 128, 200)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut saw_color = false;
        for _ in 0..50 {
            let c = generate_unambiguous(&s, 0, &v, &mut rng).unwrap();
            assert_eq!(c.candidate_ids, vec![0]);
            assert!(!c.ambiguous);
            saw_color |= c.constraint == Constraint { color: Some(Color::Red), ..Default::default() };
        }
        assert!(saw_color);
    }

    #[test]
    fn left_green_in_pair() {
        let v = Vocab::standard();
        let s = scene_of(&[(Color::Green, 50, 120), (Color::Green, 180, 140), (Color::Blue, 120, 220)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let found = (0..200).map(|_| generate_unambiguous(&s, 0, &v, &mut rng).unwrap()).any(|c| {
            c.constraint == Constraint { color: Some(Color::Green), position: Some(Predicate::Left), between: None }
        });
        assert!(found);
    }

    #[test]
    fn between_purple_is_generated() {
        let v = Vocab::standard();
        let s = scene_of(&[(Color::Purple, 40, 128), (Color::Purple, 216, 128), (Color::Red, 128, 132)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let texts: Vec<Command> = (0..200).map(|_| generate_unambiguous(&s, 2, &v, &mut rng).unwrap()).collect();
        assert!(texts.iter().any(|c| c.constraint.between == Some(Color::Purple) && c.text.contains("between")));
    }

    #[test]
    fn ambiguous_yellow_pair() {
        let v = Vocab::standard();
        let s = scene_of(&[(Color::Yellow, 50, 200), (Color::Yellow, 200, 50), (Color::Red, 128, 128)]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = generate_ambiguous(&s, &v, &mut rng).unwrap();
        assert!(c.ambiguous);
        assert_eq!(c.candidate_ids, vec![0, 1]);
        assert!(c.text.contains("yellow"));
        let distinct = scene_of(&[(Color::Yellow, 50, 200), (Color::Blue, 200, 50), (Color::Red, 128, 128)]);
        assert!(matches!(generate_ambiguous(&distinct, &v, &mut rng), Err(Error::NotDescribable(_))));
        let a = generate_ambiguous(&s, &v, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate_ambiguous(&s, &v, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embed_columns_and_sum() {
        let v = Vocab::standard();
        let d = v.len();
        let data: Vec<f64> = (0..d * 3).map(|i| i as f64).collect();
        let table = EmbeddingTable::from_columns(3, d, data).unwrap();
        let out = embed(&[4], &table).unwrap();
        assert_eq!(out[0], vec![12.0, 13.0, 14.0]);
        assert!(embed(&[], &table).unwrap().is_empty());
        let s = embed_sum(&[1, 2], &table).unwrap();
        assert_eq!(s, vec![3.0 + 6.0, 4.0 + 7.0, 5.0 + 8.0]);
        assert!(matches!(embed(&[d], &table), Err(Error::BadToken { .. })));
    }

    #[test]
    fn embedding_text_loader() {
        let v = Vocab::standard();
        let t = EmbeddingTable::<f32>::parse_text("red 1 2\nblue 3 4\nzebra 5 6\n", &v).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.column(v.index_of("blue")), &[3.0, 4.0]);
        assert_eq!(t.column(v.index_of("green")), &[0.0, 0.0]);
        assert!(matches!(EmbeddingTable::<f32>::parse_text("red 1 2\nblue 3\n", &v), Err(Error::Format { .. })));
    }

    #[test]
    fn augment_appends_answer_or_question() {
        let v = Vocab::standard();
        let cat = QuestionCatalog::standard();
        let c = Command::from_text("pick up the yellow block", &v).unwrap();
        let q = cat.position(Predicate::UpperRight);
        let a = Answer::parse("left one", &v).unwrap();
        let plus = augment(&c, q, &a, &v);
        assert_eq!(plus.words.len(), c.words.len() + a.words.len());
        assert_eq!(&plus.words[..c.words.len()], &c.words[..]);
        assert_eq!(plus.text, "pick up the yellow block left one");

        let red = cat.color(Color::Red);
        let yes = Answer::parse("yes", &v).unwrap();
        assert!(yes.is_yes);
        let plus = augment(&c, red, &yes, &v);
        assert_eq!(detokenize(&plus.words, &v), "pick up the yellow block red one");
        assert_eq!(c.text, "pick up the yellow block");
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocab::standard();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let back = Vocab::load(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
    }

    proptest! {
        #[test]
        fn tokenize_inverts_detokenize(ws in proptest::collection::vec(2usize..40, 1..12)) {
            let v = Vocab::standard();
            let ws: Vec<usize> = ws.into_iter().map(|w| w % v.len()).map(|w| w.max(2)).collect();
            prop_assert_eq!(tokenize(&detokenize(&ws, &v), &v).unwrap(), ws);
        }

        #[test]
        fn generated_commands_match_brute_force(seed in 0u64..300) {
            let v = Vocab::standard();
            let scene = generate_scene(&SceneConfig::default(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for id in scene.ids() {
                if let Ok(c) = generate_unambiguous(&scene, id, &v, &mut rng) {
                    prop_assert_eq!(&c.candidate_ids, &vec![id]);
                    prop_assert_eq!(resolve(&scene, &c.constraint).unwrap(), vec![id]);
                }
            }
            if let Ok(c) = generate_ambiguous(&scene, &v, &mut rng) {
                prop_assert!(c.candidate_ids.len() >= 2);
                let color = c.constraint.color.unwrap();
                let brute: Vec<u32> = scene.blocks.iter().filter(|b| b.color == color).map(|b| b.id).collect();
                prop_assert_eq!(c.candidate_ids, brute);
            }
        }
    }
}
