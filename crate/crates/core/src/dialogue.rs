//! The interaction protocol: a session state machine around the grounding
//! and question networks, and a simulated human that answers questions
//! about a hidden target.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blockworld::{predicates_within, render, Image, Predicate, Scene};
use crate::error::{Error, Result};
use crate::evaluation::success;
use crate::grounding::{pick_position, predict_tensor_with_uncertainty, Pick, T2PModel, UncertaintyEstimate};
use crate::heatmap::Heatmap;
use crate::inquiry::{
    build_qgn_input, confidence_map, select_question, Attribute, ConfidenceMap, QgnModel, Question, QuestionCatalog,
    DEFAULT_BETA,
};
use crate::language::{augment, resolve, Answer, Command, Vocab};
use crate::nn::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    RepeatedInfo,
    IrrelevantQuestion,
    WrongConfirm,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureReason::RepeatedInfo => "repeated_info",
            FailureReason::IrrelevantQuestion => "irrelevant_question",
            FailureReason::WrongConfirm => "wrong_confirm",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum OracleVerdict {
    Answer { text: String },
    Failure { reason: FailureReason },
}

/// Blocks the command could refer to: its recorded candidates, or whatever
/// its constraint resolves to (every block for free text).
fn candidate_set(scene: &Scene, command: &Command) -> Result<Vec<u32>> {
    if !command.candidate_ids.is_empty() {
        return Ok(command.candidate_ids.clone());
    }
    resolve(scene, &command.constraint)
}

fn color_answer(scene: &Scene, target: u32) -> Result<String> {
    Ok(format!("{} one", scene.block(target)?.color))
}

/// The simulated human.
///
/// `pick` is the current pick in pixels; it is only consulted for the
/// confirmation question, which it requires. Positions are judged among the
/// command's candidates.
pub fn oracle_answer(
    scene: &Scene,
    target: u32,
    question: &Question,
    command: &Command,
    pick: Option<[f64; 2]>,
) -> Result<OracleVerdict> {
    let t = scene.block(target)?;
    if question.attribute == Attribute::Confirm {
        let pick = pick.ok_or_else(|| Error::ContractViolation("confirmation needs a current pick".into()))?;
        let center = [t.x() as f64, t.y() as f64];
        return Ok(if success(pick, center, scene.image_size as usize) {
            OracleVerdict::Answer { text: "yes".into() }
        } else {
            OracleVerdict::Failure { reason: FailureReason::WrongConfirm }
        });
    }
    if question.attribute.stated_in(&command.text) {
        return Ok(OracleVerdict::Failure { reason: FailureReason::RepeatedInfo });
    }
    let cands = candidate_set(scene, command)?;
    let mut relevant = false;
    for &id in &cands {
        relevant |= question.attribute.holds(scene, id, &cands)?;
    }
    if !relevant {
        return Ok(OracleVerdict::Failure { reason: FailureReason::IrrelevantQuestion });
    }
    if question.attribute.holds(scene, target, &cands)? {
        return Ok(OracleVerdict::Answer { text: "yes".into() });
    }
    let text = match question.attribute {
        Attribute::Color(_) => color_answer(scene, target)?,
        Attribute::Position(_) => {
            let mut preds = predicates_within(scene, target, &cands)?;
            if preds.is_empty() {
                preds = predicates_within(scene, target, &scene.ids())?;
            }
            match Predicate::ALL.into_iter().find(|p| preds.contains(p)) {
                Some(p) => format!("{} one", p.phrase()),
                None => color_answer(scene, target)?,
            }
        }
        Attribute::Confirm => unreachable!("handled above"),
    };
    Ok(OracleVerdict::Answer { text })
}

/// Tokenizes an oracle answer.
pub fn answer_to_words(verdict: &OracleVerdict, vocab: &Vocab) -> Result<Answer> {
    match verdict {
        OracleVerdict::Answer { text } => Answer::parse(text, vocab),
        OracleVerdict::Failure { reason } => {
            Err(Error::ContractViolation(format!("a {reason} verdict carries no answer")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitCommand,
    Estimated,
    Asked,
    Answered,
    ReEstimated,
    Done,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("state serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Miss,
    RuleFailure { reason: FailureReason },
    /// The session had no known target to score against.
    Unscored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Question rounds; the default single round is the studied protocol,
    /// more rounds re-ask the question network on the augmented command.
    pub rounds: usize,
    pub mc_samples: usize,
    pub dropout: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { rounds: 1, mc_samples: 20, dropout: 0.1, beta: DEFAULT_BETA, seed: 0 }
    }
}

/// What a model sees when asked about a scene. Learned models only look at
/// the image and the command words; the scene is there for scripted stand-ins.
pub struct Query<'a, T> {
    pub scene: &'a Scene,
    pub image: &'a Tensor<T>,
    pub command: &'a Command,
}

/// Produces position heatmaps for a query.
pub trait Grounder<T: Scalar> {
    /// Dropout-off point estimate.
    fn position_map(&self, q: &Query<'_, T>) -> Result<Heatmap<T>>;
    fn estimate(&self, q: &Query<'_, T>, samples: usize, rate: f64, rng: &mut ChaCha8Rng) -> Result<UncertaintyEstimate<T>>;
    fn vocab_size(&self) -> Option<usize> {
        None
    }
}

/// Scores the catalog questions for a query and its `[4, n, n]` input stack.
pub trait Asker<T: Scalar> {
    fn scores(&self, q: &Query<'_, T>, input: &Tensor<T>) -> Result<Vec<T>>;
    fn vocab_size(&self) -> Option<usize> {
        None
    }
}

impl<T: Scalar> Grounder<T> for T2PModel<T> {
    fn position_map(&self, q: &Query<'_, T>) -> Result<Heatmap<T>> {
        self.forward_tensor(q.image, &q.command.words, None)
    }

    fn estimate(&self, q: &Query<'_, T>, samples: usize, rate: f64, rng: &mut ChaCha8Rng) -> Result<UncertaintyEstimate<T>> {
        predict_tensor_with_uncertainty(self, q.image, &q.command.words, samples, rate, rng)
    }

    fn vocab_size(&self) -> Option<usize> {
        Some(self.config().vocab_size)
    }
}

impl<T: Scalar> Asker<T> for QgnModel<T> {
    fn scores(&self, q: &Query<'_, T>, input: &Tensor<T>) -> Result<Vec<T>> {
        self.forward(input, &q.command.words)
    }

    fn vocab_size(&self) -> Option<usize> {
        Some(self.config().vocab_size)
    }
}

/// One heatmap estimate with its confidence map and pick.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate<T> {
    pub uncertainty: UncertaintyEstimate<T>,
    pub confidence: ConfidenceMap<T>,
    pub pick: Pick,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Round<T> {
    pub question: Question,
    pub ranking: Vec<usize>,
    pub answer: Option<Answer>,
    pub failure: Option<FailureReason>,
    /// Estimate on the augmented command.
    pub after: Option<Estimate<T>>,
}

/// One interaction episode. Methods enforce the state order
/// `AwaitCommand → Estimated → Asked → Answered → ReEstimated → Done`.
#[derive(Clone, Debug)]
pub struct Session<T: Scalar> {
    pub id: String,
    pub scene: Scene,
    pub scene_file: Option<String>,
    target: Option<u32>,
    config: SessionConfig,
    state: SessionState,
    image: Image,
    image_tensor: Tensor<T>,
    rng: ChaCha8Rng,
    initial: Option<Command>,
    current: Option<Command>,
    before: Option<Estimate<T>>,
    rounds: Vec<Round<T>>,
    final_pick: Option<Pick>,
    outcome: Option<Outcome>,
}

impl<T: Scalar> Session<T> {
    pub fn new(id: impl Into<String>, scene: Scene, target: Option<u32>, config: SessionConfig) -> Result<Self> {
        scene.validate()?;
        if let Some(t) = target {
            scene.block(t)?;
        }
        if !(0.0..1.0).contains(&config.dropout) || config.mc_samples < 2 || !(config.beta >= 0.0) {
            return Err(Error::Config("session needs ≥2 samples, dropout in [0, 1) and β ≥ 0".into()));
        }
        let image = render(&scene);
        let image_tensor = image.to_tensor();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            id: id.into(),
            scene,
            scene_file: None,
            target,
            config,
            state: SessionState::AwaitCommand,
            image,
            image_tensor,
            rng,
            initial: None,
            current: None,
            before: None,
            rounds: Vec::new(),
            final_pick: None,
            outcome: None,
        })
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn target(&self) -> Option<u32> {
        self.target
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn initial_command(&self) -> Option<&Command> {
        self.initial.as_ref()
    }

    /// The command as augmented so far.
    pub fn command(&self) -> Option<&Command> {
        self.current.as_ref()
    }

    pub fn before(&self) -> Option<&Estimate<T>> {
        self.before.as_ref()
    }

    pub fn rounds(&self) -> &[Round<T>] {
        &self.rounds
    }

    /// The most recent estimate.
    pub fn latest(&self) -> Option<&Estimate<T>> {
        self.rounds.iter().rev().find_map(|r| r.after.as_ref()).or(self.before.as_ref())
    }

    pub fn pending_question(&self) -> Option<&Question> {
        (self.state == SessionState::Asked).then(|| &self.rounds.last().expect("asked").question)
    }

    pub fn final_pick(&self) -> Option<Pick> {
        self.final_pick
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    /// Whether another question may be asked from the current state.
    pub fn can_ask(&self) -> bool {
        matches!(self.state, SessionState::Estimated | SessionState::ReEstimated)
            && self.rounds.len() < self.config.rounds
            && !self.confirmed()
    }

    fn confirmed(&self) -> bool {
        self.rounds
            .last()
            .is_some_and(|r| r.question.attribute == Attribute::Confirm && r.answer.as_ref().is_some_and(|a| a.is_yes))
    }

    fn expect(&self, allowed: &[SessionState]) -> Result<()> {
        if allowed.contains(&self.state) {
            return Ok(());
        }
        let expected = allowed.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" or ");
        Err(Error::State { expected, actual: self.state.to_string() })
    }

    fn estimate(&mut self, t2p: &impl Grounder<T>, command: &Command) -> Result<Estimate<T>> {
        let c = &self.config;
        let q = Query { scene: &self.scene, image: &self.image_tensor, command };
        let uncertainty = t2p.estimate(&q, c.mc_samples, c.dropout, &mut self.rng)?;
        let confidence = confidence_map(&uncertainty.mp, &uncertainty.mu, c.beta)?;
        let pick = pick_position(&uncertainty.mp, self.scene.image_size as usize);
        Ok(Estimate { uncertainty, confidence, pick })
    }

    /// Grounds the initial command with MC dropout.
    pub fn submit_command(&mut self, t2p: &impl Grounder<T>, command: Command) -> Result<&Estimate<T>> {
        self.expect(&[SessionState::AwaitCommand])?;
        if command.is_empty() {
            return Err(Error::EmptyCommand);
        }
        let est = self.estimate(t2p, &command)?;
        self.before = Some(est);
        self.initial = Some(command.clone());
        self.current = Some(command);
        self.state = SessionState::Estimated;
        Ok(self.before.as_ref().expect("just set"))
    }

    /// Selects the next question from the latest confidence map.
    pub fn ask(&mut self, qgn: &impl Asker<T>, catalog: &QuestionCatalog) -> Result<&Question> {
        self.expect(&[SessionState::Estimated, SessionState::ReEstimated])?;
        if !self.can_ask() {
            return Err(Error::ContractViolation(format!("no question rounds left ({})", self.config.rounds)));
        }
        let est = self.latest().expect("estimated");
        let input = build_qgn_input(&self.image, &est.confidence.grid)?;
        let command = self.current.as_ref().expect("command");
        let scores = qgn.scores(&Query { scene: &self.scene, image: &self.image_tensor, command }, &input)?;
        let (q, ranking) = select_question(&scores, catalog)?;
        self.rounds.push(Round { question: q.clone(), ranking, answer: None, failure: None, after: None });
        self.state = SessionState::Asked;
        Ok(&self.rounds.last().expect("pushed").question)
    }

    /// Appends an answer to the command.
    pub fn answer(&mut self, answer: Answer, vocab: &Vocab) -> Result<&Command> {
        self.expect(&[SessionState::Asked])?;
        if answer.words.is_empty() {
            return Err(Error::EmptyCommand);
        }
        let round = self.rounds.last_mut().expect("asked");
        let next = augment(self.current.as_ref().expect("command"), &round.question, &answer, vocab);
        round.answer = Some(answer);
        self.current = Some(next);
        self.state = SessionState::Answered;
        Ok(self.current.as_ref().expect("just set"))
    }

    /// Ends the session on a broken interaction rule.
    pub fn fail(&mut self, reason: FailureReason) -> Result<()> {
        self.expect(&[SessionState::Asked])?;
        self.rounds.last_mut().expect("asked").failure = Some(reason);
        self.final_pick = self.latest().map(|e| e.pick);
        self.outcome = Some(Outcome::RuleFailure { reason });
        self.state = SessionState::Done;
        Ok(())
    }

    /// Lets the simulated human answer the pending question.
    pub fn answer_with_oracle(&mut self, vocab: &Vocab) -> Result<OracleVerdict> {
        self.expect(&[SessionState::Asked])?;
        let target = self.target.ok_or_else(|| Error::ContractViolation("the oracle needs a known target".into()))?;
        let q = &self.rounds.last().expect("asked").question;
        let pick = self.latest().expect("estimated").pick.xy();
        let verdict = oracle_answer(&self.scene, target, q, self.current.as_ref().expect("command"), Some(pick))?;
        match &verdict {
            OracleVerdict::Failure { reason } => self.fail(*reason)?,
            OracleVerdict::Answer { .. } => {
                self.answer(answer_to_words(&verdict, vocab)?, vocab)?;
            }
        }
        Ok(verdict)
    }

    /// Grounds the augmented command.
    pub fn reestimate(&mut self, t2p: &impl Grounder<T>) -> Result<&Estimate<T>> {
        self.expect(&[SessionState::Answered])?;
        let command = self.current.clone().expect("command");
        let est = self.estimate(t2p, &command)?;
        let round = self.rounds.last_mut().expect("answered");
        round.after = Some(est);
        self.state = SessionState::ReEstimated;
        Ok(round.after.as_ref().expect("just set"))
    }

    /// Fixes the final pick and scores it. A confirmed pick is kept as is;
    /// otherwise the latest estimate decides.
    pub fn finish(&mut self) -> Result<Outcome> {
        self.expect(&[SessionState::Estimated, SessionState::ReEstimated])?;
        let pick = if self.confirmed() {
            let n = self.rounds.len();
            if n >= 2 { self.rounds[n - 2].after.as_ref() } else { self.before.as_ref() }.expect("estimated").pick
        } else {
            self.latest().expect("estimated").pick
        };
        let outcome = match self.target {
            Some(t) => {
                let b = self.scene.block(t)?;
                if success(pick.xy(), [b.x() as f64, b.y() as f64], self.scene.image_size as usize) {
                    Outcome::Success
                } else {
                    Outcome::Miss
                }
            }
            None => Outcome::Unscored,
        };
        self.final_pick = Some(pick);
        self.outcome = Some(outcome);
        self.state = SessionState::Done;
        Ok(outcome)
    }

    /// Named heatmaps computed so far: `position`, `uncertainty` and
    /// `confidence` for the initial estimate, `*_post` for the last
    /// re-estimate.
    pub fn heatmap(&self, which: &str) -> Option<&Heatmap<T>> {
        let post = self.rounds.iter().rev().find_map(|r| r.after.as_ref());
        match which {
            "position" => self.before.as_ref().map(|e| &e.uncertainty.mp),
            "uncertainty" => self.before.as_ref().map(|e| &e.uncertainty.mu),
            "confidence" => self.before.as_ref().map(|e| &e.confidence.grid),
            "position_post" => post.map(|e| &e.uncertainty.mp),
            "uncertainty_post" => post.map(|e| &e.uncertainty.mu),
            "confidence_post" => post.map(|e| &e.confidence.grid),
            _ => None,
        }
    }

    pub fn transcript(&self) -> Transcript {
        let mut heatmaps = BTreeMap::new();
        for which in HEATMAP_STAGES {
            if let Some(h) = self.heatmap(which) {
                let digest = hex::encode(Sha256::digest(h.to_bytes()));
                heatmaps.insert(which.to_string(), HeatmapRef { file: format!("{}_{which}.bin", self.id), sha256: digest });
            }
        }
        let first = self.rounds.first();
        Transcript {
            id: self.id.clone(),
            scene_file: self.scene_file.clone(),
            scene_seed: self.scene.seed,
            target: self.target,
            state: self.state,
            initial_command: self.initial.as_ref().map(|c| c.text.clone()),
            final_command: self.current.as_ref().map(|c| c.text.clone()),
            question: first.map(|r| QuestionRef { id: r.question.id, text: r.question.text.clone() }),
            answer: first.and_then(|r| r.answer.as_ref().map(|a| a.text.clone())),
            rounds: self
                .rounds
                .iter()
                .map(|r| RoundRecord {
                    question: QuestionRef { id: r.question.id, text: r.question.text.clone() },
                    answer: r.answer.as_ref().map(|a| a.text.clone()),
                    failure: r.failure,
                    pick: r.after.as_ref().map(|e| e.pick.xy()),
                })
                .collect(),
            outcome: self.outcome,
            pick_before: self.before.as_ref().map(|e| e.pick.xy()),
            pick_after: self.final_pick.map(|p| p.xy()),
            heatmaps,
        }
    }

    /// Writes every computed heatmap into `dir` under the transcript's file names.
    pub fn write_heatmaps(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for which in HEATMAP_STAGES {
            if let Some(h) = self.heatmap(which) {
                h.write(&dir.join(format!("{}_{which}.bin", self.id)))?;
            }
        }
        Ok(())
    }
}

pub const HEATMAP_STAGES: [&str; 6] =
    ["position", "uncertainty", "confidence", "position_post", "uncertainty_post", "confidence_post"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRef {
    pub id: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapRef {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub question: QuestionRef,
    pub answer: Option<String>,
    pub failure: Option<FailureReason>,
    pub pick: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub scene_file: Option<String>,
    pub scene_seed: u64,
    pub target: Option<u32>,
    pub state: SessionState,
    pub initial_command: Option<String>,
    pub final_command: Option<String>,
    pub question: Option<QuestionRef>,
    pub answer: Option<String>,
    pub rounds: Vec<RoundRecord>,
    pub outcome: Option<Outcome>,
    pub pick_before: Option<[f64; 2]>,
    pub pick_after: Option<[f64; 2]>,
    pub heatmaps: BTreeMap<String, HeatmapRef>,
}

impl Transcript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }
}

/// Checks that the models and the vocabulary agree on token ids.
pub fn check_models<T: Scalar>(t2p: &impl Grounder<T>, qgn: &impl Asker<T>, vocab: &Vocab) -> Result<()> {
    for (what, size) in [("grounding", t2p.vocab_size()), ("question", qgn.vocab_size())] {
        if let Some(n) = size.filter(|&n| n != vocab.len()) {
            return Err(Error::Compatibility(format!("{what} model has {n} tokens, vocabulary {}", vocab.len())));
        }
    }
    Ok(())
}

/// A complete episode against the simulated human.
#[allow(clippy::too_many_arguments)]
pub fn run_session<T: Scalar>(
    id: &str,
    scene: &Scene,
    command: &Command,
    target: u32,
    t2p: &impl Grounder<T>,
    qgn: &impl Asker<T>,
    catalog: &QuestionCatalog,
    vocab: &Vocab,
    config: &SessionConfig,
) -> Result<Session<T>> {
    check_models(t2p, qgn, vocab)?;
    let mut s = Session::new(id, scene.clone(), Some(target), config.clone())?;
    s.submit_command(t2p, command.clone())?;
    while s.can_ask() {
        s.ask(qgn, catalog)?;
        if let OracleVerdict::Failure { .. } = s.answer_with_oracle(vocab)? {
            return Ok(s);
        }
        s.reestimate(t2p)?;
    }
    s.finish()?;
    Ok(s)
}
