//! Subcommand implementations behind the `it2p` binary.
//!
//! Settings resolve as flags over an optional JSON config file over the
//! scale preset, and the resolved values are written next to every output.

pub mod demo;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use it2p::baseline::{train_baseline, BaselineConfig};
use it2p::datagen::{build_t2p_dataset, dataset_fingerprint, read_dataset, write_dataset, Counts, Dataset, DatasetConfig, QgnBuildConfig, Split};
use it2p::dialogue::{SessionConfig, Transcript};
use it2p::evaluation::{compare_baseline, evaluate_grounding, evaluate_interactive, EvalReport, TargetStub};
use it2p::grounding::{train_t2p, MirrorTokens, T2PConfig};
use it2p::inquiry::{train_qgn, QgnConfig, QuestionCatalog};
use it2p::language::Vocab;
use it2p::train::{LrSchedule, TrainConfig, TrainLog};
use it2p::{BaselineModel, Error, QgnModel, Real, Result, T2PModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    T2p,
    Qgn,
    Baseline,
}

/// Optional settings. Unset fields fall through to the next source.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scale: Option<Scale>,
    pub scenes: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub dropout: Option<f64>,
    /// Random horizontal/vertical mirroring while training the grounding network.
    pub mirror: Option<bool>,
    pub mc_samples: Option<usize>,
    pub beta: Option<f64>,
    pub rounds: Option<usize>,
    /// Ambiguous and unambiguous question samples drawn for the question network.
    pub qgn_ambiguous: Option<usize>,
    pub qgn_unambiguous: Option<usize>,
}

impl Overrides {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Fields of `self` take precedence over those of `base`.
    pub fn over(self, base: Overrides) -> Overrides {
        Overrides {
            seed: self.seed.or(base.seed),
            scale: self.scale.or(base.scale),
            scenes: self.scenes.or(base.scenes),
            epochs: self.epochs.or(base.epochs),
            batch_size: self.batch_size.or(base.batch_size),
            lr: self.lr.or(base.lr),
            dropout: self.dropout.or(base.dropout),
            mirror: self.mirror.or(base.mirror),
            mc_samples: self.mc_samples.or(base.mc_samples),
            beta: self.beta.or(base.beta),
            rounds: self.rounds.or(base.rounds),
            qgn_ambiguous: self.qgn_ambiguous.or(base.qgn_ambiguous),
            qgn_unambiguous: self.qgn_unambiguous.or(base.qgn_unambiguous),
        }
    }

    /// Merges with the config file at `path`, if given.
    pub fn with_file(self, path: Option<&Path>) -> Result<Overrides> {
        match path {
            Some(p) => Ok(self.over(Overrides::load(p)?)),
            None => Ok(self),
        }
    }

    pub fn scale(&self) -> Scale {
        self.scale.unwrap_or_default()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }
}

pub fn dataset_config(o: &Overrides) -> DatasetConfig {
    let cfg = match o.scale() {
        Scale::Desk => DatasetConfig::desk(o.seed()),
        Scale::Paper => DatasetConfig::paper(o.seed()),
    };
    match o.scenes {
        Some(n) => cfg.with_scenes(n),
        None => cfg,
    }
}

/// Optimizer settings of each network at each scale.
pub fn train_config(kind: ModelKind, o: &Overrides) -> TrainConfig {
    let preset = match (o.scale(), kind) {
        (Scale::Desk, ModelKind::T2p) => TrainConfig { epochs: 30, batch_size: 8, lr: 2e-3, schedule: LrSchedule::Cosine, dropout: 0.1, seed: 0 },
        (Scale::Desk, ModelKind::Qgn) => TrainConfig { epochs: 30, batch_size: 8, lr: 1e-3, schedule: LrSchedule::Cosine, dropout: 0.1, seed: 0 },
        (Scale::Desk, ModelKind::Baseline) => TrainConfig { epochs: 15, batch_size: 8, lr: 1e-3, schedule: LrSchedule::Cosine, dropout: 0.0, seed: 0 },
        (Scale::Paper, ModelKind::Qgn) => TrainConfig { epochs: 1000, batch_size: 8, lr: 1e-5, schedule: LrSchedule::Constant, dropout: 0.1, seed: 0 },
        (Scale::Paper, _) => TrainConfig { epochs: 300, batch_size: 8, lr: 1e-5, schedule: LrSchedule::Constant, dropout: 0.1, seed: 0 },
    };
    TrainConfig {
        epochs: o.epochs.unwrap_or(preset.epochs),
        batch_size: o.batch_size.unwrap_or(preset.batch_size),
        lr: o.lr.unwrap_or(preset.lr),
        dropout: o.dropout.unwrap_or(preset.dropout),
        seed: o.seed(),
        ..preset
    }
}

pub fn session_config(o: &Overrides) -> SessionConfig {
    let samples = match o.scale() {
        Scale::Desk => 20,
        Scale::Paper => 100,
    };
    let d = SessionConfig::default();
    SessionConfig {
        rounds: o.rounds.unwrap_or(d.rounds),
        mc_samples: o.mc_samples.unwrap_or(samples),
        dropout: o.dropout.unwrap_or(d.dropout),
        beta: o.beta.unwrap_or(d.beta),
        seed: o.seed(),
    }
}

pub fn qgn_build_config(o: &Overrides) -> QgnBuildConfig {
    let cfg = match o.scale() {
        Scale::Desk => QgnBuildConfig::desk(o.seed()),
        Scale::Paper => QgnBuildConfig::paper(o.seed()),
    };
    QgnBuildConfig {
        ambiguous: o.qgn_ambiguous.unwrap_or(cfg.ambiguous),
        unambiguous: o.qgn_unambiguous.unwrap_or(cfg.unambiguous),
        mc_samples: o.mc_samples.unwrap_or(cfg.mc_samples),
        beta: o.beta.unwrap_or(cfg.beta),
        ..cfg
    }
}

fn t2p_config(o: &Overrides, vocab: &Vocab) -> T2PConfig {
    let cfg = match o.scale() {
        Scale::Desk => T2PConfig::desk(vocab.len()),
        Scale::Paper => T2PConfig::paper(vocab.len()),
    };
    T2PConfig { dropout: train_config(ModelKind::T2p, o).dropout, ..cfg }
}

fn qgn_config(o: &Overrides, vocab: &Vocab) -> QgnConfig {
    match o.scale() {
        Scale::Desk => QgnConfig::desk(vocab.len()),
        Scale::Paper => QgnConfig::paper(vocab.len()),
    }
}

pub fn vocab_path(data: &Path) -> PathBuf {
    data.join("vocab.txt")
}

#[derive(Clone, Debug, Serialize)]
pub struct GenSummary {
    pub out: PathBuf,
    pub config: DatasetConfig,
    pub counts: Counts,
    pub fingerprint: String,
}

pub fn gen_data(out: &Path, o: &Overrides) -> Result<GenSummary> {
    let vocab = Vocab::standard();
    let config = dataset_config(o);
    let ds = build_t2p_dataset(&config, &vocab)?;
    write_dataset(&ds, &vocab, out)?;
    Ok(GenSummary { out: out.to_path_buf(), counts: ds.counts(), config, fingerprint: dataset_fingerprint(out)? })
}

/// A dataset and the vocabulary stored beside it.
pub fn load_data(data: &Path) -> Result<(Dataset, Vocab)> {
    let ds = read_dataset(data)?;
    let vocab = Vocab::load(&vocab_path(data))?;
    if vocab.hash() != ds.vocab_hash {
        return Err(Error::Compatibility(format!("vocabulary in {} does not match the manifest", data.display())));
    }
    Ok((ds, vocab))
}

/// Everything a training run used, saved as `<checkpoint>.log.json`.
#[derive(Clone, Debug, Serialize)]
pub struct TrainRecord {
    pub kind: ModelKind,
    pub scale: Scale,
    pub dataset: String,
    pub samples: usize,
    pub train: TrainConfig,
    pub model: serde_json::Value,
    pub mirror: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qgn_build: Option<QgnBuildConfig>,
    pub seconds: f64,
    pub final_loss: Option<f64>,
    pub log: TrainLog,
}

pub fn log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".log.json");
    PathBuf::from(s)
}

/// Trains one network on the train split of `data` and writes the
/// checkpoint to `out`. The question network needs a grounding checkpoint
/// to produce its dropout heatmaps.
pub fn train(kind: ModelKind, data: &Path, out: &Path, t2p_ckpt: Option<&Path>, o: &Overrides) -> Result<TrainRecord> {
    let (mut ds, vocab) = load_data(data)?;
    let tc = train_config(kind, o);
    let start = Instant::now();
    let dataset = dataset_fingerprint(data)?;
    let mirror = o.mirror.unwrap_or(kind == ModelKind::T2p);
    let (model, log, samples, qgn_build) = match kind {
        ModelKind::T2p => {
            let images = ds.image_tensors::<Real>();
            let train = ds.grounding_examples(Split::Train, None);
            let monitor = ds.grounding_examples(Split::Test, Some(false));
            let monitor = &monitor[..monitor.len().min(300)];
            let table = MirrorTokens::new(&vocab);
            let (m, log) = train_t2p(&images, &train, t2p_config(o, &vocab), &tc, Some(monitor), mirror.then_some(&table))?;
            m.save(out, &vocab, tc.seed, Some(&log))?;
            (serde_json::to_value(m.config())?, log, train.len(), None)
        }
        ModelKind::Qgn => {
            let path = t2p_ckpt.ok_or_else(|| {
                Error::Compatibility("the question network needs a grounding checkpoint (--t2p-ckpt)".into())
            })?;
            let t2p = T2PModel::load(path, &vocab)?;
            let build = qgn_build_config(o);
            ds.build_qgn(&t2p, &vocab, &build)?;
            let train = ds.qgn_examples::<Real>(Split::Train)?;
            let (m, log) = train_qgn(&train, qgn_config(o, &vocab), &tc)?;
            m.save(out, &vocab, tc.seed, Some(&log))?;
            (serde_json::to_value(m.config())?, log, train.len(), Some(build))
        }
        ModelKind::Baseline => {
            let images = ds.image_tensors::<Real>();
            let train = ds.grounding_examples(Split::Train, None);
            let (m, log) = train_baseline(&images, &train, BaselineConfig::desk(vocab.len()), &tc)?;
            m.save(out, &vocab, tc.seed, Some(&log))?;
            (serde_json::to_value(m.config())?, log, train.len(), None)
        }
    };
    let record = TrainRecord {
        kind,
        scale: o.scale(),
        dataset,
        samples,
        train: tc,
        model,
        mirror: mirror && kind == ModelKind::T2p,
        qgn_build,
        seconds: start.elapsed().as_secs_f64(),
        final_loss: log.final_loss(),
        log,
    };
    std::fs::write(log_path(out), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Grounding,
    Interactive,
    BaselineCompare,
}

#[derive(Clone, Debug, Default)]
pub struct Checkpoints {
    pub t2p: Option<PathBuf>,
    pub qgn: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    /// Replace the grounding network with one that reads the target off the command.
    pub perfect_stub: bool,
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("this experiment needs {flag}")))
}

/// Runs an experiment on the test split and writes the report (plus
/// `config.json`, and `transcripts.jsonl` for interactive runs) to `report_dir`.
pub fn eval(exp: Experiment, data: &Path, ckpts: &Checkpoints, report_dir: &Path, o: &Overrides) -> Result<EvalReport> {
    let (ds, vocab) = load_data(data)?;
    let stub = TargetStub { n_m: ds.config.n_m };
    let load_t2p = || T2PModel::load(required(&ckpts.t2p, "--t2p-ckpt")?, &vocab);
    let mut transcripts: Vec<Transcript> = Vec::new();
    let session = session_config(o);
    let report = match exp {
        Experiment::Grounding if ckpts.perfect_stub => evaluate_grounding::<Real>(&stub, &ds, Split::Test)?,
        Experiment::Grounding => evaluate_grounding(&load_t2p()?, &ds, Split::Test)?,
        Experiment::BaselineCompare => {
            let base = BaselineModel::load(required(&ckpts.baseline, "--baseline-ckpt")?, &vocab)?;
            if ckpts.perfect_stub {
                compare_baseline(&base, &stub, &ds, Split::Test)?
            } else {
                compare_baseline(&base, &load_t2p()?, &ds, Split::Test)?
            }
        }
        Experiment::Interactive => {
            let qgn = QgnModel::load(required(&ckpts.qgn, "--qgn-ckpt")?, &vocab)?;
            let catalog = QuestionCatalog::standard();
            let (r, t) = if ckpts.perfect_stub {
                evaluate_interactive(&stub, &qgn, &ds, Split::Test, &catalog, &vocab, &session)?
            } else {
                evaluate_interactive(&load_t2p()?, &qgn, &ds, Split::Test, &catalog, &vocab, &session)?
            };
            transcripts = t;
            r
        }
    };
    report.write(report_dir)?;
    let config = serde_json::json!({
        "experiment": exp,
        "dataset": dataset_fingerprint(data)?,
        "split": Split::Test,
        "perfect_stub": ckpts.perfect_stub,
        "session": session,
        "overrides": o,
    });
    std::fs::write(report_dir.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    if exp == Experiment::Interactive {
        let lines: Vec<String> = transcripts.iter().map(serde_json::to_string).collect::<serde_json::Result<_>>()?;
        std::fs::write(report_dir.join("transcripts.jsonl"), lines.join("\n") + "\n")?;
    }
    Ok(report)
}
