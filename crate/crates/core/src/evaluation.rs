//! Success metric, batch experiments and comparison reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{baseline_forward, BaselineModel};
use crate::blockworld::{gaussian_at, pixel_to_cell, render};
use crate::datagen::{Dataset, Split, T2PSample};
use crate::dialogue::{run_session, Asker, Grounder, Outcome, Query, SessionConfig, Transcript};
use crate::error::{Error, Result};
use crate::grounding::{pick_position, UncertaintyEstimate};
use crate::heatmap::Heatmap;
use crate::inquiry::QuestionCatalog;
use crate::language::Vocab;
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Euclidean pick error strictly below 20 px at a 256-px image, scaled with image size.
pub fn success(pick: [f64; 2], target: [f64; 2], n_i: usize) -> bool {
    let threshold = 20.0 * n_i as f64 / 256.0;
    let (dx, dy) = (pick[0] - target[0], pick[1] - target[1]);
    (dx * dx + dy * dy).sqrt() < threshold
}

pub const UNAMBIGUOUS: &str = "unambiguous";
pub const AMBIGUOUS: &str = "ambiguous";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub class: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl ReportRow {
    fn new(variant: &str, class: &str, hits: &[bool]) -> Self {
        let correct = hits.iter().filter(|&&h| h).count();
        Self {
            variant: variant.into(),
            class: class.into(),
            correct,
            total: hits.len(),
            accuracy: correct as f64 / hits.len() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub rows: Vec<ReportRow>,
    /// Interactive over non-interactive accuracy on ambiguous commands.
    pub improvement_ratio: Option<f64>,
    /// Session outcomes: `success`, `miss` and one entry per failure reason.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub outcomes: BTreeMap<String, usize>,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn accuracy(&self, variant: &str, class: &str) -> Option<f64> {
        self.row(variant, class).map(|r| r.accuracy)
    }

    pub fn row(&self, variant: &str, class: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.variant == variant && r.class == class)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("## {}\n\n| model | commands | correct | total | accuracy |\n|---|---|---:|---:|---:|\n", self.experiment);
        for r in &self.rows {
            let _ = writeln!(s, "| {} | {} | {} | {} | {:.2}% |", r.variant, r.class, r.correct, r.total, 100.0 * r.accuracy);
        }
        if let Some(ratio) = self.improvement_ratio {
            let _ = writeln!(s, "\nImprovement ratio: {ratio:.2}x");
        }
        if !self.outcomes.is_empty() {
            s.push_str("\n| outcome | sessions |\n|---|---:|\n");
            for (k, v) in &self.outcomes {
                let _ = writeln!(s, "| {k} | {v} |");
            }
        }
        let _ = writeln!(s, "\nfingerprint `{}`", self.fingerprint);
        s
    }

    /// Grouped bar chart: one group per command class, one bar per model.
    pub fn chart_png(&self) -> Result<Vec<u8>> {
        const PALETTE: [[u8; 3]; 4] = [[90, 90, 90], [52, 101, 164], [204, 0, 0], [78, 154, 6]];
        let mut classes: Vec<&str> = Vec::new();
        let mut variants: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !classes.contains(&r.class.as_str()) {
                classes.push(&r.class);
            }
            if !variants.contains(&r.variant.as_str()) {
                variants.push(&r.variant);
            }
        }
        let (w, h, margin) = (480u32, 320u32, 30u32);
        let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
        let plot_h = h - 2 * margin;
        for tick in 0..=4 {
            let y = h - margin - plot_h * tick / 4;
            for x in margin..w - margin {
                img.put_pixel(x, y, image::Rgb(if tick == 0 { [0, 0, 0] } else { [220, 220, 220] }));
            }
        }
        let group_w = (w - 2 * margin) / classes.len().max(1) as u32;
        let bar_w = (group_w * 3 / 4) / variants.len().max(1) as u32;
        for (gi, class) in classes.iter().enumerate() {
            for (vi, variant) in variants.iter().enumerate() {
                let Some(acc) = self.accuracy(variant, class) else { continue };
                let x0 = margin + gi as u32 * group_w + group_w / 8 + vi as u32 * bar_w;
                let top = h - margin - (acc.clamp(0.0, 1.0) * plot_h as f64).round() as u32;
                for x in x0..x0 + bar_w.saturating_sub(2) {
                    for y in top..h - margin {
                        img.put_pixel(x, y, image::Rgb(PALETTE[vi % PALETTE.len()]));
                    }
                }
            }
        }
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Writes `report.json`, `report.md` and `chart.png` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("report.md"), self.to_markdown())?;
        std::fs::write(dir.join("chart.png"), self.chart_png()?)?;
        Ok(())
    }
}

fn fingerprint(ds: &Dataset, split: Split, extra: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&ds.config).expect("config serializes"));
    h.update(ds.vocab_hash.as_bytes());
    h.update(serde_json::to_vec(&split).expect("split serializes"));
    h.update(serde_json::to_vec(extra).expect("value serializes"));
    hex::encode(&h.finalize()[..8])
}

/// Rendered image tensors, built on first use.
struct Images<T> {
    cache: BTreeMap<usize, Tensor<T>>,
}

impl<T: Scalar> Images<T> {
    fn new() -> Self {
        Self { cache: BTreeMap::new() }
    }

    fn get(&mut self, ds: &Dataset, scene: usize) -> &Tensor<T> {
        self.cache.entry(scene).or_insert_with(|| render(ds.scene(scene)).to_tensor())
    }
}

fn target_center(ds: &Dataset, s: &T2PSample) -> Result<[f64; 2]> {
    let b = ds.scene(s.scene).block(s.target_id)?;
    Ok([b.x() as f64, b.y() as f64])
}

fn class_of(s: &T2PSample) -> &'static str {
    if s.command.ambiguous {
        AMBIGUOUS
    } else {
        UNAMBIGUOUS
    }
}

/// Grounder that reads the answer off the command: a ground-truth heatmap
/// centred on `target_id`, or on the first candidate when the target is hidden.
/// Used to check the evaluation plumbing end to end.
#[derive(Clone, Copy, Debug, Default)]
pub struct TargetStub {
    pub n_m: usize,
}

impl TargetStub {
    fn map<T: Scalar>(&self, q: &Query<'_, T>) -> Result<Heatmap<T>> {
        let id = q.command.target_id.or(q.command.candidate_ids.first().copied()).ok_or_else(|| {
            Error::ContractViolation(format!("command \"{}\" names no target for the stub", q.command.text))
        })?;
        let b = q.scene.block(id)?;
        Ok(gaussian_at(pixel_to_cell(b.center, q.scene.image_size, self.n_m), self.n_m))
    }
}

impl<T: Scalar> Grounder<T> for TargetStub {
    fn position_map(&self, q: &Query<'_, T>) -> Result<Heatmap<T>> {
        self.map(q)
    }

    fn estimate(&self, q: &Query<'_, T>, samples: usize, rate: f64, _: &mut ChaCha8Rng) -> Result<UncertaintyEstimate<T>> {
        Ok(UncertaintyEstimate { mp: self.map(q)?, mu: Heatmap::zeros(self.n_m), samples, dropout: rate })
    }
}

/// Scores one pick function per ambiguity class over a split.
fn score_classes(
    ds: &Dataset,
    split: Split,
    mut pick: impl FnMut(&T2PSample) -> Result<[f64; 2]>,
) -> Result<BTreeMap<&'static str, Vec<bool>>> {
    let mut hits: BTreeMap<&'static str, Vec<bool>> = BTreeMap::new();
    for s in ds.samples(split) {
        let p = pick(s)?;
        let n_i = ds.scene(s.scene).image_size as usize;
        hits.entry(class_of(s)).or_default().push(success(p, target_center(ds, s)?, n_i));
    }
    if hits.is_empty() {
        return Err(Error::EmptyEval);
    }
    Ok(hits)
}

fn rows_for(variant: &str, hits: &BTreeMap<&'static str, Vec<bool>>) -> Vec<ReportRow> {
    [UNAMBIGUOUS, AMBIGUOUS]
        .into_iter()
        .filter_map(|c| hits.get(c).map(|h| ReportRow::new(variant, c, h)))
        .collect()
}

/// The heatmap pick of a dropout-off pass, scored against the intended block.
pub fn evaluate_grounding<T: Scalar>(model: &impl Grounder<T>, ds: &Dataset, split: Split) -> Result<EvalReport> {
    let mut images = Images::<T>::new();
    let hits = score_classes(ds, split, |s| {
        let scene = ds.scene(s.scene);
        let q = Query { scene, image: images.get(ds, s.scene), command: &s.command };
        Ok(pick_position(&model.position_map(&q)?, scene.image_size as usize).xy())
    })?;
    Ok(EvalReport {
        experiment: "grounding".into(),
        rows: rows_for("t2p", &hits),
        improvement_ratio: None,
        outcomes: BTreeMap::new(),
        fingerprint: fingerprint(ds, split, &serde_json::Value::Null),
    })
}

/// Grounding network against the regression baseline on the same split.
pub fn compare_baseline<T: Scalar>(
    baseline: &BaselineModel<T>,
    t2p: &impl Grounder<T>,
    ds: &Dataset,
    split: Split,
) -> Result<EvalReport> {
    let mut images = Images::<T>::new();
    let base = score_classes(ds, split, |s| baseline_forward(baseline, images.get(ds, s.scene), &s.command.words))?;
    let mut report = evaluate_grounding(t2p, ds, split)?;
    let mut rows = rows_for("baseline", &base);
    rows.append(&mut report.rows);
    report.rows = rows;
    report.experiment = "baseline comparison".into();
    Ok(report)
}

/// Ambiguous commands of a split, once without interaction and once through
/// a dialogue session with the simulated human.
///
/// Session `i` uses seed `config.seed + i`. Returns the report and every
/// session transcript.
pub fn evaluate_interactive<T: Scalar>(
    t2p: &impl Grounder<T>,
    qgn: &impl Asker<T>,
    ds: &Dataset,
    split: Split,
    catalog: &QuestionCatalog,
    vocab: &Vocab,
    config: &SessionConfig,
) -> Result<(EvalReport, Vec<Transcript>)> {
    let samples: Vec<&T2PSample> = ds.samples(split).filter(|s| s.command.ambiguous).collect();
    if samples.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut images = Images::<T>::new();
    let mut direct = Vec::with_capacity(samples.len());
    let mut interactive = Vec::with_capacity(samples.len());
    let mut outcomes: BTreeMap<String, usize> =
        ["success", "miss", "repeated_info", "irrelevant_question", "wrong_confirm"].map(|k| (k.to_string(), 0)).into();
    let mut transcripts = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let scene = ds.scene(s.scene);
        let n_i = scene.image_size as usize;
        let center = target_center(ds, s)?;
        let q = Query { scene, image: images.get(ds, s.scene), command: &s.command };
        direct.push(success(pick_position(&t2p.position_map(&q)?, n_i).xy(), center, n_i));

        let cfg = SessionConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
        let id = format!("{}-{i:05}", serde_json::to_value(split)?.as_str().unwrap_or("split"));
        let session = run_session(&id, scene, &s.command, s.target_id, t2p, qgn, catalog, vocab, &cfg)?;
        let outcome = session.outcome().expect("finished session has an outcome");
        let key = match outcome {
            Outcome::Success => "success".to_string(),
            Outcome::Miss | Outcome::Unscored => "miss".to_string(),
            Outcome::RuleFailure { reason } => reason.to_string(),
        };
        *outcomes.entry(key).or_default() += 1;
        interactive.push(outcome == Outcome::Success);
        transcripts.push(session.transcript());
    }
    let base = ReportRow::new("t2p", AMBIGUOUS, &direct);
    let it = ReportRow::new("it2p", AMBIGUOUS, &interactive);
    let ratio = (base.accuracy > 0.0).then(|| it.accuracy / base.accuracy);
    let report = EvalReport {
        experiment: "interaction".into(),
        rows: vec![base, it],
        improvement_ratio: ratio,
        outcomes,
        fingerprint: fingerprint(ds, split, &serde_json::to_value(config)?),
    };
    Ok((report, transcripts))
}

/// Successes and total sessions, recounted from transcripts.
pub fn recount(transcripts: &[Transcript]) -> (usize, usize) {
    let ok = transcripts.iter().filter(|t| t.outcome == Some(Outcome::Success)).count();
    (ok, transcripts.len())
}
