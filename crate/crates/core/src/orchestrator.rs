//! The retouching loop: critique, generate, execute, select, repeat.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentError, ChatBackend, ChatCodegen, ChatCritic, CodeGenerator, CriticRequest, RuleCodegen, RuleCritic, VisualCritic,
};
use crate::evaluation::MetricReport;
use crate::filters::{execute_program, FilterError, FilterKind, RetouchStep};
use crate::program::{DifferenceDescription, RetouchProgram};
use crate::raster::{compute_stats, save_image, BitDepth, ImageBuffer, ImageError, ImageStats};
use crate::scoring::{
    argmin_lowest_index, ColorSpace, DistributionProvider, PromptSetKind, ScoreTarget, Scorer, ScoringError,
};

/// Consecutive source selections that end a session.
pub const STAGNATION_LIMIT: usize = 3;
const WARM_START_FLOOR: f64 = 1e-4;
const CODEGEN_VARIABLE: &str = "adj";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    ClipKlGlobal,
    ClipKlAll,
    RgbHist,
    YuvHist,
}

impl ScoreKind {
    pub fn prompt_set(self) -> Option<PromptSetKind> {
        match self {
            ScoreKind::ClipKlGlobal => Some(PromptSetKind::GlobalOnly),
            ScoreKind::ClipKlAll => Some(PromptSetKind::AllFilters),
            ScoreKind::RgbHist | ScoreKind::YuvHist => None,
        }
    }

    pub fn scorer(self, provider: Arc<dyn DistributionProvider>) -> Scorer {
        match self {
            ScoreKind::ClipKlGlobal | ScoreKind::ClipKlAll => {
                Scorer::prompt_kl(provider, self.prompt_set().expect("prompt score"))
            }
            ScoreKind::RgbHist => Scorer::Histogram(ColorSpace::Rgb),
            ScoreKind::YuvHist => Scorer::Histogram(ColorSpace::Yuv),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Chat,
    Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Reference,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub max_iters: usize,
    pub n_candidates: usize,
    /// Expected reference count; informational.
    pub n_refs: usize,
    pub score: ScoreKind,
    pub agent: AgentKind,
    pub mode: Mode,
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            max_iters: 10,
            n_candidates: 3,
            n_refs: 5,
            score: ScoreKind::ClipKlGlobal,
            agent: AgentKind::Rule,
            mode: Mode::Reference,
            warm_start: true,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.max_iters == 0 {
            return Err(SessionError::InvalidInput("max_iters must be at least 1".into()));
        }
        if self.n_candidates == 0 {
            return Err(SessionError::InvalidInput("n_candidates must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    StoppedCriticStop,
    StoppedStagnation,
    StoppedBudget,
    AwaitingUser,
}

impl SessionStatus {
    pub fn is_stopped(self) -> bool {
        matches!(
            self,
            SessionStatus::StoppedCriticStop | SessionStatus::StoppedStagnation | SessionStatus::StoppedBudget
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSource {
    Score,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateOrigin {
    Source,
    Description { index: usize },
    WarmStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub origin: CandidateOrigin,
    /// Applied to the iteration's source; empty for the source itself.
    pub program: RetouchProgram,
    pub codegen_raw: Option<String>,
    pub codegen_attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodegenFailure {
    pub description: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IterationOutcome {
    Selected,
    CriticStop,
    /// The critic failed every attempt; the iteration was skipped.
    AgentFailure { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub critic_raw: String,
    pub critic_attempts: usize,
    pub descriptions: Vec<DifferenceDescription>,
    pub candidates: Vec<CandidateRecord>,
    pub codegen_failures: Vec<CodegenFailure>,
    /// One per candidate; absent when the user chose.
    pub scores: Option<Vec<f64>>,
    pub selected: Option<usize>,
    pub selection_source: Option<SelectionSource>,
    pub outcome: IterationOutcome,
    pub wall_ms: u64,
}

impl IterationRecord {
    /// Score of the selected candidate.
    pub fn selected_score(&self) -> Option<f64> {
        Some(self.scores.as_ref()?[self.selected?])
    }

    pub fn source_score(&self) -> Option<f64> {
        self.scores.as_ref()?.first().copied()
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("operation needs status {expected}, session is {actual:?}")]
    WrongState { expected: &'static str, actual: SessionStatus },
    #[error("candidate index {index} out of range (have {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error(transparent)]
    Agent(AgentError),
    #[error(transparent)]
    Scoring(ScoringError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{0}")]
    Io(String),
}

impl SessionError {
    /// Failures of external services worth retrying.
    pub fn is_backend(&self) -> bool {
        matches!(self, SessionError::Backend(_) | SessionError::Agent(AgentError::Failure { .. }))
    }
}

impl From<AgentError> for SessionError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Backend(msg) => SessionError::Backend(msg),
            other => SessionError::Agent(other),
        }
    }
}

impl From<ScoringError> for SessionError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::Backend(msg) => SessionError::Backend(msg),
            other => SessionError::Scoring(other),
        }
    }
}

/// Critic and code generator used by a session.
#[derive(Clone)]
pub struct Agents {
    pub critic: Arc<dyn VisualCritic>,
    pub codegen: Arc<dyn CodeGenerator>,
}

impl Agents {
    pub fn new(critic: Arc<dyn VisualCritic>, codegen: Arc<dyn CodeGenerator>) -> Self {
        Agents { critic, codegen }
    }

    pub fn rule() -> Self {
        Agents { critic: Arc::new(RuleCritic), codegen: Arc::new(RuleCodegen) }
    }

    /// Chat critic and code generator sharing one backend.
    pub fn chat(backend: Arc<dyn ChatBackend>, temperatures: [f64; 3]) -> Self {
        Agents {
            critic: Arc::new(ChatCritic::new(backend.clone(), temperatures)),
            codegen: Arc::new(ChatCodegen::new(backend, temperatures)),
        }
    }
}

/// The rule-based first-iteration candidate program.
pub fn warm_start_program(source: &ImageStats, refs: &ImageStats) -> RetouchProgram {
    let mu_src = source.pixel_mean.max(WARM_START_FLOOR);
    let mu_ref = refs.pixel_mean.max(WARM_START_FLOOR);
    let s_src = source.sat_mean.max(WARM_START_FLOOR);
    let exposure = (mu_ref / mu_src).log2().clamp(-1.0, 1.0);
    let saturation = (refs.sat_mean / s_src - 1.0).clamp(-1.0, 1.0);
    RetouchProgram::new(vec![
        RetouchStep::new(FilterKind::Exposure, exposure).expect("clamped"),
        RetouchStep::new(FilterKind::Saturation, saturation).expect("clamped"),
    ])
    .with_provenance("warm start")
}

/// Applies [`warm_start_program`] to `source`.
pub fn warm_start_candidate(source: &ImageBuffer, refs: &[ImageBuffer]) -> Result<ImageBuffer, SessionError> {
    let ref_stats: Vec<ImageStats> = refs.iter().map(compute_stats).collect();
    let mean = ImageStats::mean_of(&ref_stats).ok_or(SessionError::InvalidInput("no reference images".into()))?;
    Ok(execute_program(source, &warm_start_program(&compute_stats(source), &mean))?)
}

/// Candidates offered to the user, index 0 being the current source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingSelection {
    pub instruction: String,
    pub record: IterationRecord,
}

/// Serializable view of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub config: SessionConfig,
    pub status: SessionStatus,
    pub consecutive_source_selections: usize,
    pub history: Vec<IterationRecord>,
    pub pending: Option<PendingSelection>,
    pub composed_program: RetouchProgram,
    pub source_width: usize,
    pub source_height: usize,
    pub n_refs: usize,
}

type CandidateAttempt = Result<(CandidateRecord, ImageBuffer), String>;
type BuiltCandidates = (Vec<CandidateRecord>, Vec<ImageBuffer>, Vec<CodegenFailure>);

pub struct Session {
    config: SessionConfig,
    original: ImageBuffer,
    source: ImageBuffer,
    refs: Vec<ImageBuffer>,
    ref_stats: Option<ImageStats>,
    target: Option<ScoreTarget>,
    history: Vec<IterationRecord>,
    /// Source at the start of each iteration, plus the current one.
    sources: Vec<ImageBuffer>,
    consecutive_source: usize,
    status: SessionStatus,
    composed: RetouchProgram,
    pending: Option<(PendingSelection, Vec<ImageBuffer>)>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("status", &self.status)
            .field("iterations", &self.history.len())
            .field("source", &self.source)
            .finish()
    }
}

impl Session {
    /// A reference-mode session scoring candidates against `refs`.
    pub fn new_reference(
        source: ImageBuffer,
        refs: Vec<ImageBuffer>,
        config: SessionConfig,
        scorer: &Scorer,
    ) -> Result<Self, SessionError> {
        config.validate()?;
        if config.mode != Mode::Reference {
            return Err(SessionError::InvalidInput("config mode must be reference".into()));
        }
        if refs.is_empty() {
            return Err(SessionError::InvalidInput("reference mode needs at least one reference image".into()));
        }
        let stats: Vec<ImageStats> = refs.iter().map(compute_stats).collect();
        let target = scorer.target(&refs)?;
        Ok(Session {
            ref_stats: ImageStats::mean_of(&stats),
            target: Some(target),
            ..Self::bare(source, refs, config)
        })
    }

    /// An instruction-mode session driven by user choices.
    pub fn new_instruction(source: ImageBuffer, config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        if config.mode != Mode::Instruction {
            return Err(SessionError::InvalidInput("config mode must be instruction".into()));
        }
        Ok(Self::bare(source, Vec::new(), config))
    }

    fn bare(source: ImageBuffer, refs: Vec<ImageBuffer>, config: SessionConfig) -> Self {
        Session {
            config,
            original: source.clone(),
            sources: vec![source.clone()],
            source,
            refs,
            ref_stats: None,
            target: None,
            history: Vec::new(),
            consecutive_source: 0,
            status: SessionStatus::Running,
            composed: RetouchProgram::new(Vec::new()),
            pending: None,
        }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn source(&self) -> &ImageBuffer {
        &self.source
    }

    pub fn original(&self) -> &ImageBuffer {
        &self.original
    }

    pub fn refs(&self) -> &[ImageBuffer] {
        &self.refs
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    pub fn consecutive_source_selections(&self) -> usize {
        self.consecutive_source
    }

    /// Concatenation of every selected candidate's program.
    pub fn composed_program(&self) -> &RetouchProgram {
        &self.composed
    }

    pub fn pending(&self) -> Option<&PendingSelection> {
        self.pending.as_ref().map(|(p, _)| p)
    }

    pub fn pending_images(&self) -> Option<&[ImageBuffer]> {
        self.pending.as_ref().map(|(_, imgs)| imgs.as_slice())
    }

    /// Source image at the start of iteration `t`; `t = history.len()` is the current source.
    pub fn source_at(&self, t: usize) -> Option<&ImageBuffer> {
        self.sources.get(t)
    }

    /// Re-executes candidate `index` of iteration `t`.
    pub fn candidate_image(&self, t: usize, index: usize) -> Result<ImageBuffer, SessionError> {
        let record = self.history.get(t).ok_or(SessionError::IndexOutOfRange { index: t, len: self.history.len() })?;
        let cand = record
            .candidates
            .get(index)
            .ok_or(SessionError::IndexOutOfRange { index, len: record.candidates.len() })?;
        Ok(execute_program(&self.sources[t], &cand.program)?)
    }

    pub fn transcript(&self) -> SessionTranscript {
        SessionTranscript {
            config: self.config.clone(),
            status: self.status,
            consecutive_source_selections: self.consecutive_source,
            history: self.history.clone(),
            pending: self.pending().cloned(),
            composed_program: self.composed.clone(),
            source_width: self.original.width(),
            source_height: self.original.height(),
            n_refs: self.refs.len(),
        }
    }

    /// Current source's score against the references.
    pub fn current_score(&self) -> Result<Option<f64>, SessionError> {
        match &self.target {
            Some(t) => Ok(Some(t.score(&self.source)?)),
            None => Ok(None),
        }
    }

    fn require_status(&self, ok: &[SessionStatus], expected: &'static str) -> Result<(), SessionError> {
        if ok.contains(&self.status) {
            Ok(())
        } else {
            Err(SessionError::WrongState { expected, actual: self.status })
        }
    }

    fn critic_request<'a>(&'a self, instruction: Option<String>, agents: &Agents) -> CriticRequest<'a> {
        let score_summary = if self.refs.is_empty() || !agents.critic.wants_score_summary() {
            None
        } else {
            MetricReport::averaged(&self.source, &self.refs)
        };
        let history = if instruction.is_some() {
            self.sources[..self.sources.len() - 1].iter().map(compute_stats).collect()
        } else {
            Vec::new()
        };
        CriticRequest {
            source: &self.source,
            refs: &self.refs,
            source_stats: compute_stats(&self.source),
            ref_stats_mean: self.ref_stats,
            score_summary,
            instruction,
            history,
            n_candidates: self.config.n_candidates,
        }
    }

    /// Generates and executes one program per Go description, concurrently.
    fn build_candidates(
        &self,
        descriptions: &[DifferenceDescription],
        agents: &Agents,
    ) -> Result<BuiltCandidates, SessionError> {
        let results: Vec<(usize, CandidateAttempt)> = descriptions
            .par_iter()
            .enumerate()
            .filter(|(_, d)| !d.is_stop())
            .map(|(i, d)| {
                let outcome = match agents.codegen.generate(d, CODEGEN_VARIABLE) {
                    Ok(out) => match execute_program(&self.source, &out.program) {
                        Ok(img) => Ok(Ok((
                            CandidateRecord {
                                origin: CandidateOrigin::Description { index: i },
                                program: out.program,
                                codegen_raw: Some(out.raw),
                                codegen_attempts: out.attempts,
                            },
                            img,
                        ))),
                        Err(e) => Ok(Err(e.to_string())),
                    },
                    Err(AgentError::Backend(msg)) => Err(SessionError::Backend(msg)),
                    Err(e) => Ok(Err(e.to_string())),
                };
                outcome.map(|o| (i, o))
            })
            .collect::<Result<_, SessionError>>()?;
        let mut records = Vec::new();
        let mut images = Vec::new();
        let mut failures = Vec::new();
        for (i, r) in results {
            match r {
                Ok((rec, img)) => {
                    records.push(rec);
                    images.push(img);
                }
                Err(error) => failures.push(CodegenFailure { description: i, error }),
            }
        }
        Ok((records, images, failures))
    }

    fn source_candidate() -> CandidateRecord {
        CandidateRecord {
            origin: CandidateOrigin::Source,
            program: RetouchProgram::new(Vec::new()),
            codegen_raw: None,
            codegen_attempts: 0,
        }
    }

    fn finish_iteration(&mut self, record: IterationRecord) {
        self.history.push(record);
        self.sources.push(self.source.clone());
        if self.consecutive_source >= STAGNATION_LIMIT {
            self.status = SessionStatus::StoppedStagnation;
        } else if self.history.len() >= self.config.max_iters {
            self.status = SessionStatus::StoppedBudget;
        }
    }

    /// One automatic iteration in reference mode.
    pub fn run_iteration(&mut self, agents: &Agents) -> Result<&IterationRecord, SessionError> {
        self.require_status(&[SessionStatus::Running], "running")?;
        if self.config.mode != Mode::Reference {
            return Err(SessionError::InvalidInput("automatic iterations need reference mode".into()));
        }
        let started = Instant::now();
        let t = self.history.len();
        let mut record = IterationRecord {
            t,
            critic_raw: String::new(),
            critic_attempts: 0,
            descriptions: Vec::new(),
            candidates: Vec::new(),
            codegen_failures: Vec::new(),
            scores: None,
            selected: None,
            selection_source: None,
            outcome: IterationOutcome::Selected,
            wall_ms: 0,
        };

        let critique = agents.critic.describe(&self.critic_request(None, agents));
        let critique = match critique {
            Ok(c) => c,
            Err(AgentError::Failure { attempts, last_error }) => {
                log::warn!("iteration {t}: critic failed after {attempts} attempts, skipping");
                record.critic_attempts = attempts;
                record.outcome = IterationOutcome::AgentFailure { error: last_error };
                record.wall_ms = started.elapsed().as_millis() as u64;
                self.finish_iteration(record);
                return Ok(self.history.last().expect("just pushed"));
            }
            Err(e) => return Err(e.into()),
        };
        record.critic_raw = critique.raw;
        record.critic_attempts = critique.attempts;
        record.descriptions = critique.descriptions;

        if record.descriptions.iter().all(|d| d.is_stop()) {
            record.outcome = IterationOutcome::CriticStop;
            record.wall_ms = started.elapsed().as_millis() as u64;
            self.history.push(record);
            self.sources.push(self.source.clone());
            self.status = SessionStatus::StoppedCriticStop;
            return Ok(self.history.last().expect("just pushed"));
        }

        let (generated, generated_images, failures) = self.build_candidates(&record.descriptions, agents)?;
        record.codegen_failures = failures;
        let mut candidates = vec![Self::source_candidate()];
        let mut images = vec![self.source.clone()];
        candidates.extend(generated);
        images.extend(generated_images);
        if t == 0 && self.config.warm_start {
            let program = warm_start_program(&compute_stats(&self.source), self.ref_stats.as_ref().expect("reference mode"));
            images.push(execute_program(&self.source, &program)?);
            candidates.push(CandidateRecord {
                origin: CandidateOrigin::WarmStart,
                program,
                codegen_raw: None,
                codegen_attempts: 0,
            });
        }

        let target = self.target.as_ref().expect("reference mode");
        let scores = target.score_all(&images)?;
        let selected = argmin_lowest_index(&scores).expect("source is always a candidate");
        if selected == 0 {
            self.consecutive_source += 1;
        } else {
            self.consecutive_source = 0;
            self.composed.extend(&candidates[selected].program);
            self.source = images.swap_remove(selected);
        }
        record.candidates = candidates;
        record.scores = Some(scores);
        record.selected = Some(selected);
        record.selection_source = Some(SelectionSource::Score);
        record.wall_ms = started.elapsed().as_millis() as u64;
        self.finish_iteration(record);
        Ok(self.history.last().expect("just pushed"))
    }

    /// Iterates until the session stops.
    pub fn run_to_completion(&mut self, agents: &Agents) -> Result<(), SessionError> {
        while self.status == SessionStatus::Running {
            self.run_iteration(agents)?;
        }
        Ok(())
    }

    /// Produces candidates for `instruction` and waits for [`Session::user_select`].
    pub fn interactive_step(&mut self, instruction: &str, agents: &Agents) -> Result<&PendingSelection, SessionError> {
        self.require_status(&[SessionStatus::Running, SessionStatus::AwaitingUser], "running or awaiting_user")?;
        if self.config.mode != Mode::Instruction {
            return Err(SessionError::InvalidInput("instructions need an instruction-mode session".into()));
        }
        if instruction.trim().is_empty() {
            return Err(SessionError::InvalidInput("instruction is empty".into()));
        }
        let started = Instant::now();
        let critique = agents.critic.describe(&self.critic_request(Some(instruction.to_string()), agents))?;
        let (generated, generated_images, failures) = self.build_candidates(&critique.descriptions, agents)?;
        let mut candidates = vec![Self::source_candidate()];
        let mut images = vec![self.source.clone()];
        candidates.extend(generated);
        images.extend(generated_images);
        let record = IterationRecord {
            t: self.history.len(),
            critic_raw: critique.raw,
            critic_attempts: critique.attempts,
            descriptions: critique.descriptions,
            candidates,
            codegen_failures: failures,
            scores: None,
            selected: None,
            selection_source: None,
            outcome: IterationOutcome::Selected,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        self.pending = Some((PendingSelection { instruction: instruction.to_string(), record }, images));
        self.status = SessionStatus::AwaitingUser;
        Ok(self.pending().expect("just set"))
    }

    /// Makes pending candidate `index` the new source.
    pub fn user_select(&mut self, index: usize) -> Result<&IterationRecord, SessionError> {
        self.require_status(&[SessionStatus::AwaitingUser], "awaiting_user")?;
        let len = self.pending.as_ref().map_or(0, |(_, imgs)| imgs.len());
        if index >= len {
            return Err(SessionError::IndexOutOfRange { index, len });
        }
        let (pending, mut images) = self.pending.take().expect("awaiting user");
        let mut record = pending.record;
        if index != 0 {
            self.composed.extend(&record.candidates[index].program);
            self.source = images.swap_remove(index);
        }
        record.selected = Some(index);
        record.selection_source = Some(SelectionSource::User);
        self.history.push(record);
        self.sources.push(self.source.clone());
        self.status = SessionStatus::Running;
        Ok(self.history.last().expect("just pushed"))
    }

    /// Writes `final.png`, `program.retouch.json` and `session.json` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>, depth: BitDepth) -> Result<(), SessionError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| SessionError::Io(format!("{}: {e}", dir.display())))?;
        save_image(&self.source, dir.join("final.png"), depth)?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| SessionError::Io(format!("{}: {e}", path.display())))
        };
        write("program.retouch.json", self.composed.to_json_pretty())?;
        write(
            "session.json",
            serde_json::to_string_pretty(&self.transcript()).map_err(|e| SessionError::Io(e.to_string()))?,
        )
    }
}

/// Final image, session state and composed program of a finished run.
pub struct SessionResult {
    pub final_image: ImageBuffer,
    pub session: Session,
    pub program: RetouchProgram,
}

/// Runs a reference-mode session to completion.
pub fn run_session(
    source: ImageBuffer,
    refs: Vec<ImageBuffer>,
    config: SessionConfig,
    agents: &Agents,
    scorer: &Scorer,
) -> Result<SessionResult, SessionError> {
    let mut session = Session::new_reference(source, refs, config, scorer)?;
    session.run_to_completion(agents)?;
    Ok(SessionResult {
        final_image: session.source().clone(),
        program: session.composed_program().clone(),
        session,
    })
}
