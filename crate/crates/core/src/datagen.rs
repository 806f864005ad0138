//! Corpus assembly: scenes, labelled commands, heatmap targets, question
//! labels, scene-level splits and the on-disk dataset layout.
//!
//! ```text
//! root/manifest.json          version, seed, config, counts, scene list
//! root/t2p.jsonl              grounding samples, one per line
//! root/qgn.jsonl              question samples (optional)
//! root/vocab.txt
//! root/scenes/NNNNN.json      scene descriptions
//! root/images/NNNNN.png       rendered scenes
//! root/heatmaps/*.bin         target and predicted heatmaps
//! ```

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blockworld::{gt_heatmap, render, Color, Scene, SceneConfig};
use crate::error::{Error, Result};
use crate::grounding::{predict_tensor_with_uncertainty, GroundingExample, T2PModel};
use crate::heatmap::Heatmap;
use crate::inquiry::{build_qgn_input, confidence_map, QgnExample, QuestionCatalog, CONFIRM_ID};
use crate::language::{generate_ambiguous_for, generate_unambiguous, Command, Vocab};
use crate::nn::Tensor;
use crate::scalar::Scalar;

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_scenes: usize,
    pub n_test: usize,
    pub commands_per_block: usize,
    /// Ambiguous commands generated per duplicated color in a scene.
    pub ambiguous_per_color: usize,
    pub n_m: usize,
    pub scene: SceneConfig,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            n_scenes: 120,
            n_test: 24,
            commands_per_block: 8,
            ambiguous_per_color: 4,
            n_m: 64,
            scene: SceneConfig::default(),
            seed,
        }
    }

    pub fn paper(seed: u64) -> Self {
        Self { n_scenes: 477, n_test: 22, commands_per_block: 11, ambiguous_per_color: 12, ..Self::desk(seed) }
    }

    /// Test scenes for `n` scenes at the preset's test ratio, keeping both splits non-empty.
    pub fn with_scenes(mut self, n: usize) -> Self {
        let ratio = self.n_test as f64 / self.n_scenes as f64;
        self.n_scenes = n;
        self.n_test = ((n as f64 * ratio).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scenes < 2 || self.n_test == 0 || self.n_test >= self.n_scenes {
            return Err(Error::Config(format!(
                "need at least one train and one test scene, got {} scenes with {} for test",
                self.n_scenes, self.n_test
            )));
        }
        if self.n_m == 0 || !(self.scene.image_size as usize).is_multiple_of(self.n_m) {
            return Err(Error::Config(format!("heatmap size {} must divide the image size", self.n_m)));
        }
        self.scene.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: usize,
    pub split: Split,
    pub scene: Scene,
}

impl SceneRecord {
    pub fn scene_file(&self) -> String {
        format!("scenes/{:05}.json", self.id)
    }

    pub fn image_file(&self) -> String {
        format!("images/{:05}.png", self.id)
    }
}

/// A command paired with its intended block. For ambiguous commands the
/// intended block is one candidate drawn uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct T2PSample {
    pub scene: usize,
    pub split: Split,
    pub command: Command,
    pub target_id: u32,
}

impl T2PSample {
    pub fn heatmap_file(&self) -> String {
        format!("heatmaps/s{:05}_b{}.bin", self.scene, self.target_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QgnSample {
    pub scene: usize,
    pub split: Split,
    pub command: Command,
    pub target_id: u32,
    pub label: usize,
    #[serde(skip)]
    pub mp: Heatmap<f32>,
    #[serde(skip)]
    pub mu: Heatmap<f32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub scenes: BTreeMap<Split, usize>,
    pub unambiguous: BTreeMap<Split, usize>,
    pub ambiguous: BTreeMap<Split, usize>,
    pub qgn: BTreeMap<Split, usize>,
}

/// Settings used to derive question samples from a grounding model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QgnBuildConfig {
    pub ambiguous: usize,
    pub unambiguous: usize,
    pub mc_samples: usize,
    pub dropout: f64,
    pub beta: f64,
    pub seed: u64,
}

impl QgnBuildConfig {
    pub fn desk(seed: u64) -> Self {
        Self { ambiguous: 1000, unambiguous: 200, mc_samples: 20, dropout: 0.1, beta: 2.0, seed }
    }

    pub fn paper(seed: u64) -> Self {
        Self { ambiguous: 7119, unambiguous: 1394, mc_samples: 100, ..Self::desk(seed) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub vocab_hash: String,
    pub scenes: Vec<SceneRecord>,
    pub t2p: Vec<T2PSample>,
    pub qgn: Vec<QgnSample>,
    pub qgn_config: Option<QgnBuildConfig>,
}

fn scene_seed(seed: u64, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Generates scenes and grounding commands. The last `n_test` scenes form
/// the test split.
pub fn build_t2p_dataset(config: &DatasetConfig, vocab: &Vocab) -> Result<Dataset> {
    config.validate()?;
    let mut scenes = Vec::with_capacity(config.n_scenes);
    let mut t2p = Vec::new();
    for i in 0..config.n_scenes {
        let split = if i >= config.n_scenes - config.n_test { Split::Test } else { Split::Train };
        let seed = scene_seed(config.seed, i);
        let scene = crate::blockworld::generate_scene(&config.scene, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f_6d6d);
        for id in scene.ids() {
            for _ in 0..config.commands_per_block {
                match generate_unambiguous(&scene, id, vocab, &mut rng) {
                    Ok(command) => t2p.push(T2PSample { scene: i, split, command, target_id: id }),
                    Err(Error::NotDescribable(_)) => break,
                    Err(e) => return Err(e),
                }
            }
        }
        for color in Color::ALL {
            if scene.blocks_of(color).len() < 2 {
                continue;
            }
            for _ in 0..config.ambiguous_per_color {
                let command = generate_ambiguous_for(&scene, color, vocab, &mut rng)?;
                let target_id = *command.candidate_ids.choose(&mut rng).expect("two candidates");
                t2p.push(T2PSample { scene: i, split, command, target_id });
            }
        }
        scenes.push(SceneRecord { id: i, split, scene });
    }
    Ok(Dataset { config: config.clone(), vocab_hash: vocab.hash(), scenes, t2p, qgn: Vec::new(), qgn_config: None })
}

/// The question that a perfect asker would choose for this command.
///
/// Unambiguous commands get the confirmation. For ambiguous commands the
/// first catalog question (colors before positions) that the command does
/// not already state and that is true of some but not all candidates wins;
/// positions are judged among the candidates.
pub fn derive_question_label(scene: &Scene, command: &Command, catalog: &QuestionCatalog) -> Result<usize> {
    if !command.ambiguous {
        return Ok(CONFIRM_ID);
    }
    let cands = &command.candidate_ids;
    for q in catalog.questions() {
        if q.id == CONFIRM_ID || q.attribute.stated_in(&command.text) {
            continue;
        }
        let mut hits = 0;
        for &id in cands {
            hits += usize::from(q.attribute.holds(scene, id, cands)?);
        }
        if hits >= 1 && hits < cands.len() {
            return Ok(q.id);
        }
    }
    Err(Error::Unlabelable(command.text.clone()))
}

impl Dataset {
    pub fn scene(&self, id: usize) -> &Scene {
        &self.scenes[id].scene
    }

    pub fn samples(&self, split: Split) -> impl Iterator<Item = &T2PSample> {
        self.t2p.iter().filter(move |s| s.split == split)
    }

    pub fn counts(&self) -> Counts {
        let mut c = Counts::default();
        for s in &self.scenes {
            *c.scenes.entry(s.split).or_default() += 1;
        }
        for s in &self.t2p {
            let m = if s.command.ambiguous { &mut c.ambiguous } else { &mut c.unambiguous };
            *m.entry(s.split).or_default() += 1;
        }
        for s in &self.qgn {
            *c.qgn.entry(s.split).or_default() += 1;
        }
        c
    }

    /// Rendered image tensors for every scene, indexed by scene id.
    pub fn image_tensors<T: Scalar>(&self) -> Vec<Tensor<T>> {
        self.scenes.iter().map(|s| render(&s.scene).to_tensor()).collect()
    }

    /// Grounding examples of one split, optionally restricted by ambiguity.
    pub fn grounding_examples(&self, split: Split, ambiguous: Option<bool>) -> Vec<GroundingExample> {
        self.samples(split)
            .filter(|s| ambiguous.is_none_or(|a| s.command.ambiguous == a))
            .map(|s| GroundingExample {
                image: s.scene,
                words: s.command.words.clone(),
                target: self.scene(s.scene).block(s.target_id).expect("target in scene").center,
            })
            .collect()
    }

    /// Question-network inputs for one split.
    pub fn qgn_examples<T: Scalar>(&self, split: Split) -> Result<Vec<QgnExample<T>>> {
        let beta = self.qgn_config.as_ref().map_or(crate::inquiry::DEFAULT_BETA, |c| c.beta);
        let mut images: BTreeMap<usize, crate::blockworld::Image> = BTreeMap::new();
        let mut out = Vec::new();
        for s in self.qgn.iter().filter(|s| s.split == split) {
            let image = images.entry(s.scene).or_insert_with(|| render(self.scene(s.scene)));
            let mc = confidence_map(&s.mp.cast::<T>(), &s.mu.cast::<T>(), beta)?;
            out.push(QgnExample { input: build_qgn_input(image, &mc.grid)?, words: s.command.words.clone(), label: s.label });
        }
        Ok(out)
    }

    /// Draws question samples from both splits and attaches dropout heatmaps
    /// from `model`. Ambiguous samples are fresh color commands over scenes
    /// with a duplicated color; unambiguous ones are drawn from the grounding
    /// samples. Commands without a valid label are skipped. The test split
    /// receives a share proportional to its scene count.
    pub fn build_qgn<T: Scalar>(
        &mut self,
        model: &T2PModel<T>,
        vocab: &Vocab,
        cfg: &QgnBuildConfig,
    ) -> Result<()> {
        let catalog = QuestionCatalog::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let tensors: Vec<Tensor<T>> = self.image_tensors();
        let test_share = self.config.n_test as f64 / self.config.n_scenes as f64;
        let mut qgn = Vec::new();
        for split in [Split::Train, Split::Test] {
            let share = if split == Split::Test { test_share } else { 1.0 - test_share };
            let n_amb = (cfg.ambiguous as f64 * share).round() as usize;
            let n_unamb = (cfg.unambiguous as f64 * share).round() as usize;
            let dup: Vec<(usize, Color)> = self
                .scenes
                .iter()
                .filter(|s| s.split == split)
                .flat_map(|s| {
                    Color::ALL.into_iter().filter(|&c| s.scene.blocks_of(c).len() >= 2).map(move |c| (s.id, c))
                })
                .collect();
            let mut picked: Vec<(usize, Command, u32)> = Vec::new();
            if !dup.is_empty() {
                for _ in 0..n_amb {
                    let &(sid, color) = dup.choose(&mut rng).expect("non-empty");
                    let command = generate_ambiguous_for(self.scene(sid), color, vocab, &mut rng)?;
                    let target = *command.candidate_ids.choose(&mut rng).expect("two candidates");
                    picked.push((sid, command, target));
                }
            }
            let unamb: Vec<&T2PSample> = self.samples(split).filter(|s| !s.command.ambiguous).collect();
            for s in unamb.choose_multiple(&mut rng, n_unamb.min(unamb.len())) {
                picked.push((s.scene, s.command.clone(), s.target_id));
            }
            for (sid, command, target_id) in picked {
                let label = match derive_question_label(self.scene(sid), &command, &catalog) {
                    Ok(l) => l,
                    Err(Error::Unlabelable(_)) => continue,
                    Err(e) => return Err(e),
                };
                let mut mc_rng = ChaCha8Rng::seed_from_u64(rng.gen());
                let est =
                    predict_tensor_with_uncertainty(model, &tensors[sid], &command.words, cfg.mc_samples, cfg.dropout, &mut mc_rng)?;
                qgn.push(QgnSample { scene: sid, split, command, target_id, label, mp: est.mp.cast(), mu: est.mu.cast() });
            }
        }
        self.qgn = qgn;
        self.qgn_config = Some(cfg.clone());
        Ok(())
    }

    fn t2p_heatmap(&self, s: &T2PSample) -> Result<Heatmap<f32>> {
        Ok(gt_heatmap::<f32>(self.scene(s.scene), s.target_id, self.config.n_m)?.grid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    seed: u64,
    vocab_hash: String,
    config: DatasetConfig,
    counts: Counts,
    scenes: Vec<ManifestScene>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qgn: Option<QgnBuildConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestScene {
    id: usize,
    split: Split,
    scene_file: String,
    image_file: String,
}

/// One line of `t2p.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct T2PLine {
    scene: usize,
    split: Split,
    image_file: String,
    text: String,
    tokens: Vec<usize>,
    ambiguity: bool,
    target_id: u32,
    candidates: Vec<u32>,
    heatmap_file: String,
    #[serde(default)]
    constraint: crate::language::Constraint,
}

/// One line of `qgn.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct QgnLine {
    scene: usize,
    split: Split,
    image_file: String,
    text: String,
    tokens: Vec<usize>,
    ambiguity: bool,
    target_id: u32,
    candidates: Vec<u32>,
    label: usize,
    mp_file: String,
    mu_file: String,
    #[serde(default)]
    constraint: crate::language::Constraint,
}

fn command_of(text: String, tokens: Vec<usize>, ambiguity: bool, candidates: Vec<u32>, c: crate::language::Constraint) -> Command {
    Command {
        text,
        words: tokens,
        ambiguous: ambiguity,
        target_id: if ambiguity { None } else { candidates.first().copied() },
        candidate_ids: candidates,
        constraint: c,
    }
}

fn write_jsonl<S: Serialize>(path: &Path, rows: impl Iterator<Item = S>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, &r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn read_jsonl<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<S>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.lines() {
        if !line.trim().is_empty() {
            out.push(
                serde_json::from_str(line)
                    .map_err(|e| Error::Format { offset, msg: format!("{}: {e}", path.display()) })?,
            );
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

/// Writes the dataset under `root`, creating directories as needed.
pub fn write_dataset(ds: &Dataset, vocab: &Vocab, root: &Path) -> Result<()> {
    for d in ["scenes", "images", "heatmaps"] {
        std::fs::create_dir_all(root.join(d))?;
    }
    vocab.save(&root.join("vocab.txt"))?;
    let mut scenes = Vec::with_capacity(ds.scenes.len());
    for s in &ds.scenes {
        std::fs::write(root.join(s.scene_file()), s.scene.to_json())?;
        render(&s.scene).save_png(&root.join(s.image_file()))?;
        scenes.push(ManifestScene { id: s.id, split: s.split, scene_file: s.scene_file(), image_file: s.image_file() });
    }
    let mut written = std::collections::BTreeSet::new();
    for s in &ds.t2p {
        let file = s.heatmap_file();
        if written.insert(file.clone()) {
            ds.t2p_heatmap(s)?.write(&root.join(&file))?;
        }
    }
    write_jsonl(
        &root.join("t2p.jsonl"),
        ds.t2p.iter().map(|s| T2PLine {
            scene: s.scene,
            split: s.split,
            image_file: ds.scenes[s.scene].image_file(),
            text: s.command.text.clone(),
            tokens: s.command.words.clone(),
            ambiguity: s.command.ambiguous,
            target_id: s.target_id,
            candidates: s.command.candidate_ids.clone(),
            heatmap_file: s.heatmap_file(),
            constraint: s.command.constraint.clone(),
        }),
    )?;
    let qgn_path = root.join("qgn.jsonl");
    if ds.qgn_config.is_some() {
        let mut lines = Vec::with_capacity(ds.qgn.len());
        for (i, s) in ds.qgn.iter().enumerate() {
            let mp_file = format!("heatmaps/q{i:05}_mp.bin");
            let mu_file = format!("heatmaps/q{i:05}_mu.bin");
            s.mp.write(&root.join(&mp_file))?;
            s.mu.write(&root.join(&mu_file))?;
            lines.push(QgnLine {
                scene: s.scene,
                split: s.split,
                image_file: ds.scenes[s.scene].image_file(),
                text: s.command.text.clone(),
                tokens: s.command.words.clone(),
                ambiguity: s.command.ambiguous,
                target_id: s.target_id,
                candidates: s.command.candidate_ids.clone(),
                label: s.label,
                mp_file,
                mu_file,
                constraint: s.command.constraint.clone(),
            });
        }
        write_jsonl(&qgn_path, lines.into_iter())?;
    } else if qgn_path.exists() {
        std::fs::remove_file(qgn_path)?;
    }
    let manifest = ManifestFile {
        version: DATASET_VERSION,
        seed: ds.config.seed,
        vocab_hash: ds.vocab_hash.clone(),
        config: ds.config.clone(),
        counts: ds.counts(),
        scenes,
        qgn: ds.qgn_config.clone(),
    };
    std::fs::write(root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let raw = std::fs::read(root.join("manifest.json"))?;
    let value: serde_json::Value = serde_json::from_slice(&raw)?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == DATASET_VERSION as u64 => {}
        other => return Err(Error::Version(format!("dataset version {other:?} (supported: {DATASET_VERSION})"))),
    }
    let manifest: ManifestFile = serde_json::from_value(value)?;
    let mut scenes = Vec::with_capacity(manifest.scenes.len());
    for (i, s) in manifest.scenes.iter().enumerate() {
        if s.id != i {
            return Err(Error::Format { offset: 0, msg: format!("scene list out of order at {i}") });
        }
        let scene = Scene::from_json(&std::fs::read_to_string(root.join(&s.scene_file))?)?;
        scenes.push(SceneRecord { id: s.id, split: s.split, scene });
    }
    let t2p = read_jsonl::<T2PLine>(&root.join("t2p.jsonl"))?
        .into_iter()
        .map(|l| {
            if l.scene >= scenes.len() {
                return Err(Error::Format { offset: 0, msg: format!("sample refers to unknown scene {}", l.scene) });
            }
            Ok(T2PSample {
                scene: l.scene,
                split: l.split,
                command: command_of(l.text, l.tokens, l.ambiguity, l.candidates, l.constraint),
                target_id: l.target_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut qgn = Vec::new();
    if manifest.qgn.is_some() {
        for l in read_jsonl::<QgnLine>(&root.join("qgn.jsonl"))? {
            qgn.push(QgnSample {
                scene: l.scene,
                split: l.split,
                command: command_of(l.text, l.tokens, l.ambiguity, l.candidates, l.constraint),
                target_id: l.target_id,
                label: l.label,
                mp: Heatmap::read(&root.join(&l.mp_file))?,
                mu: Heatmap::read(&root.join(&l.mu_file))?,
            });
        }
    }
    Ok(Dataset {
        config: manifest.config,
        vocab_hash: manifest.vocab_hash,
        scenes,
        t2p,
        qgn,
        qgn_config: manifest.qgn,
    })
}

/// SHA-256 over the manifest and sample lists of a written dataset.
pub fn dataset_fingerprint(root: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for f in ["manifest.json", "t2p.jsonl", "qgn.jsonl"] {
        let p = root.join(f);
        if p.exists() {
            h.update(std::fs::read(p)?);
        }
    }
    Ok(hex::encode(h.finalize()))
}
