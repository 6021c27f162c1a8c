//! The streaming loop: route, retrieve, run base and memory-augmented
//! inference, score, update posteriors, evolve the store. Also the frozen
//! test protocol and the train/test alignment diagnostic.

use crate::cascade::{
    contrastive_reflect, extract_success, run_cascade, CascadeConfig, CascadeLevel, CascadeSources, CascadeStats,
    LevelTally,
};
use crate::consolidation::{apply_actions, llm_audit, rule_audit, ActionRecord, ConsolidationConfig, CuratorMode};
use crate::embedding::{cosine_sim, Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::factory::{Extraction, MemoryFactory};
use crate::feedback::{advantage_pairwise, advantage_verifiable, apply_feedback, PairwiseOutcome, UpdateConfig};
use crate::model::{
    verifiable_score, Memory, MemoryId, MemoryKind, TaskInstance, TaskKind, Trajectory, TrajectorySource,
};
use crate::preference::{extract_preference, judge_pair};
use crate::prompts::Templates;
use crate::retrieval::{retrieve, RetrievalConfig};
use crate::rng::stream;
use crate::sources::{CompletionRequest, KnowledgeSource};
use crate::store::MemoryStore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    Training,
    FrozenTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub retrieval: RetrievalConfig,
    pub update: UpdateConfig,
    pub cascade: CascadeConfig,
    pub consolidation: ConsolidationConfig,
    /// Sampling temperature for actor, cascade and extraction calls while training.
    pub train_temperature: f64,
    /// Sampling temperature for actor calls in the frozen test phase.
    pub eval_temperature: f64,
    pub seed: u64,
    pub mode: EngineMode,
    /// When false, posteriors are never updated. A non-faithful ablation.
    pub advantage_updates: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            update: UpdateConfig::default(),
            cascade: CascadeConfig::default(),
            consolidation: ConsolidationConfig::default(),
            train_temperature: 0.7,
            eval_temperature: 0.2,
            seed: 0,
            mode: EngineMode::Training,
            advantage_updates: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.update.validate()?;
        self.cascade.validate()?;
        self.consolidation.validate()?;
        for (name, t) in [("train_temperature", self.train_temperature), ("eval_temperature", self.eval_temperature)] {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("{name} {t} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Temperature of calls that should be as deterministic as the source allows.
const CONTROL_TEMPERATURE: f64 = 0.0;

/// Every model role the loop talks to.
#[derive(Clone, Copy)]
pub struct EngineSources<'a> {
    /// Solves tasks; also routes untagged tasks.
    pub actor: &'a dyn KnowledgeSource,
    pub teacher: &'a dyn KnowledgeSource,
    pub tool_teacher: &'a dyn KnowledgeSource,
    pub expert: &'a dyn KnowledgeSource,
    pub judge: &'a dyn KnowledgeSource,
    pub extractor: &'a dyn KnowledgeSource,
    pub curator: &'a dyn KnowledgeSource,
}

impl<'a> EngineSources<'a> {
    /// One source in every role.
    pub fn uniform(source: &'a dyn KnowledgeSource) -> Self {
        Self {
            actor: source,
            teacher: source,
            tool_teacher: source,
            expert: source,
            judge: source,
            extractor: source,
            curator: source,
        }
    }

    fn cascade(&self) -> CascadeSources<'a> {
        CascadeSources { teacher: self.teacher, tool_teacher: self.tool_teacher, expert: self.expert }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum TaskStatus {
    Completed,
    /// A per-task failure, such as a source outage; the store was not touched.
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeRecord {
    pub level_used: Option<CascadeLevel>,
    pub attempts: LevelTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub step: u64,
    pub task_id: String,
    pub kind: Option<TaskKind>,
    pub status: TaskStatus,
    pub retrieved: Vec<MemoryId>,
    pub r_mem: Option<f64>,
    pub r_base: Option<f64>,
    pub advantage: Option<f64>,
    pub cascade: Option<CascadeRecord>,
    /// Memories minted by extraction before the consolidation audit.
    pub extracted: usize,
    pub actions: Vec<ActionRecord>,
    /// Non-fatal problems, such as an unparseable extraction reply.
    pub notes: Vec<String>,
    pub store_size: usize,
}

impl TaskRecord {
    fn skipped(step: u64, task: &TaskInstance, kind: Option<TaskKind>, reason: String, store_size: usize) -> Self {
        Self {
            step,
            task_id: task.id.clone(),
            kind,
            status: TaskStatus::Skipped(reason),
            retrieved: Vec::new(),
            r_mem: None,
            r_base: None,
            advantage: None,
            cascade: None,
            extracted: 0,
            actions: Vec::new(),
            notes: Vec::new(),
            store_size,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == TaskStatus::Completed
    }
}

/// Summary numbers; always a pure function of the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportAggregates {
    pub tasks: usize,
    pub completed: usize,
    pub skipped: usize,
    /// Memory-augmented accuracy over completed verifiable tasks.
    pub accuracy: Option<f64>,
    /// Base accuracy over completed verifiable tasks that ran base inference.
    pub base_accuracy: Option<f64>,
    /// Memory-augmented win rate over completed non-verifiable tasks.
    pub win_rate: Option<f64>,
    pub mean_advantage: Option<f64>,
    pub cascade: CascadeStats,
    pub expert_call_fraction: f64,
    pub store_sizes: Vec<usize>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl ReportAggregates {
    pub fn from_records(records: &[TaskRecord]) -> Self {
        let done = || records.iter().filter(|r| r.is_completed());
        let of_kind = |k: TaskKind| move |r: &&TaskRecord| r.kind == Some(k);
        let mut cascade = CascadeStats::default();
        for c in records.iter().filter_map(|r| r.cascade.as_ref()) {
            cascade.total_failures += 1;
            cascade.calls.add(&c.attempts);
            match c.level_used {
                Some(level) => cascade.resolved.bump(level),
                None => cascade.exhausted += 1,
            }
        }
        Self {
            tasks: records.len(),
            completed: done().count(),
            skipped: records.len() - done().count(),
            accuracy: mean(done().filter(of_kind(TaskKind::Verifiable)).filter_map(|r| r.r_mem)),
            base_accuracy: mean(done().filter(of_kind(TaskKind::Verifiable)).filter_map(|r| r.r_base)),
            win_rate: mean(done().filter(of_kind(TaskKind::NonVerifiable)).filter_map(|r| r.r_mem)),
            mean_advantage: mean(done().filter_map(|r| r.advantage)),
            expert_call_fraction: cascade.expert_call_fraction(),
            cascade,
            store_sizes: records.iter().map(|r| r.store_size).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub mode: EngineMode,
    pub seed: u64,
    pub store_digest_before: String,
    pub store_digest_after: String,
    pub records: Vec<TaskRecord>,
    pub aggregates: ReportAggregates,
}

impl StreamReport {
    fn new(mode: EngineMode, seed: u64, before: String, after: String, records: Vec<TaskRecord>) -> Self {
        let aggregates = ReportAggregates::from_records(&records);
        Self { mode, seed, store_digest_before: before, store_digest_after: after, records, aggregates }
    }

    /// Re-derives the aggregates and fails if they disagree with the stored ones.
    pub fn verify_aggregates(&self) -> Result<()> {
        let derived = ReportAggregates::from_records(&self.records);
        if derived != self.aggregates {
            return Err(Error::SchemaViolation("report aggregates do not match its records".into()));
        }
        Ok(())
    }

    /// Canonical JSON, as written by the CLI.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Called once per test task with the frozen store. Lets tests inject
/// writes; any error it returns aborts the run.
pub type StoreProbe<'p> = dyn Fn(&mut MemoryStore) -> Result<()> + 'p;

/// Errors confined to one task. Anything else aborts the stream.
fn is_task_local(e: &Error) -> bool {
    matches!(
        e,
        Error::Source(_)
            | Error::JudgeUnavailable(_)
            | Error::JudgeParseError(_)
            | Error::RouterParseError(_)
            | Error::MissingReference
    )
}

/// Reads a router reply. Checked for the negative label first since it
/// contains the positive one.
pub fn parse_route(reply: &str) -> Result<TaskKind> {
    let upper = reply.to_ascii_uppercase().replace(['_', ' '], "-");
    if upper.contains("NON-VERIFIABLE") || upper.contains("NONVERIFIABLE") {
        Ok(TaskKind::NonVerifiable)
    } else if upper.contains("VERIFIABLE") {
        Ok(TaskKind::Verifiable)
    } else {
        Err(Error::RouterParseError(reply.chars().take(200).collect()))
    }
}

/// Everything retrieved for one task, global before local.
struct Retrieved<'s> {
    memories: Vec<&'s Memory>,
}

impl Retrieved<'_> {
    fn ids(&self) -> Vec<MemoryId> {
        self.memories.iter().map(|m| m.id.clone()).collect()
    }
}

struct Scored {
    r_mem: f64,
    r_base: Option<f64>,
    advantage: Option<f64>,
    mem: Trajectory,
    /// Judged (winner, loser) texts for a strict non-verifiable outcome.
    preference_pair: Option<(String, String)>,
}

pub struct Engine<'a> {
    pub sources: EngineSources<'a>,
    pub embedder: &'a dyn Embedder,
    pub templates: &'a Templates,
    pub config: EngineConfig,
}

impl<'a> Engine<'a> {
    pub fn new(
        sources: EngineSources<'a>,
        embedder: &'a dyn Embedder,
        templates: &'a Templates,
        config: EngineConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self { sources, embedder, templates, config })
    }

    /// The task's own tag, or the actor's classification.
    pub fn route(&self, task: &TaskInstance) -> Result<TaskKind> {
        if let Some(kind) = task.kind {
            return Ok(kind);
        }
        let request = CompletionRequest::new(
            self.templates.router(&task.prompt),
            CONTROL_TEMPERATURE,
            format!("{}/route", task.id),
        );
        parse_route(&self.sources.actor.complete(&request)?)
    }

    fn retrieve<'s>(&self, task: &TaskInstance, kind: TaskKind, store: &'s MemoryStore) -> Result<Retrieved<'s>> {
        let query = self.embedder.embed(&task.prompt)?;
        let banks: &[MemoryKind] = match kind {
            TaskKind::Verifiable => &[MemoryKind::GlobalProcedural, MemoryKind::LocalCorrective],
            TaskKind::NonVerifiable => &[MemoryKind::Preference],
        };
        let mut memories = Vec::new();
        for &bank in banks {
            let mut rng = stream(self.config.seed, &format!("{}/retrieve/{}", task.id, bank.label()));
            let result = retrieve(&query, store.bank(bank), &self.config.retrieval, &mut rng)?;
            memories.extend(result.items.iter().map(|item| store.get(&item.id).expect("retrieved from store")));
        }
        Ok(Retrieved { memories })
    }

    fn solve(
        &self,
        task: &TaskInstance,
        kind: TaskKind,
        memories: &[&Memory],
        tag: &str,
        temperature: f64,
    ) -> Result<Trajectory> {
        let prompt = match kind {
            TaskKind::Verifiable => self.templates.solve_math(&task.prompt, memories),
            TaskKind::NonVerifiable => self.templates.solve_open(&task.prompt, memories),
        };
        let text =
            self.sources.actor.complete(&CompletionRequest::new(prompt, temperature, format!("{}/{tag}", task.id)))?;
        let used = memories.iter().map(|m| m.id.clone()).collect();
        Ok(Trajectory::new(&task.id, text, used, TrajectorySource::Actor))
    }

    /// Memory-augmented and base inference plus scoring. Base inference is
    /// skipped for verifiable tasks when `with_base` is false.
    fn infer_and_score(
        &self,
        task: &TaskInstance,
        kind: TaskKind,
        retrieved: &Retrieved<'_>,
        temperature: f64,
        with_base: bool,
    ) -> Result<Scored> {
        let mem = self.solve(task, kind, &retrieved.memories, "mem", temperature)?;
        match kind {
            TaskKind::Verifiable => {
                let reference = task.reference.as_deref().ok_or(Error::MissingReference)?;
                let s_mem = verifiable_score(&mem.final_answer, Some(reference))?;
                let s_base = if with_base {
                    let base = self.solve(task, kind, &[], "base", temperature)?;
                    Some(verifiable_score(&base.final_answer, Some(reference))?)
                } else {
                    None
                };
                Ok(Scored {
                    r_mem: f64::from(s_mem),
                    r_base: s_base.map(f64::from),
                    advantage: s_base.map(|b| f64::from(advantage_verifiable(s_mem, b))),
                    mem,
                    preference_pair: None,
                })
            }
            TaskKind::NonVerifiable => {
                let base = self.solve(task, kind, &[], "base", temperature)?;
                let judgement = judge_pair(
                    task,
                    &mem.text,
                    &base.text,
                    self.sources.judge,
                    self.templates,
                    "mem-vs-base",
                    CONTROL_TEMPERATURE,
                )?;
                let outcome = judgement.outcome_for_first();
                let preference_pair = match outcome {
                    PairwiseOutcome::MemWins => Some((mem.text.clone(), base.text.clone())),
                    PairwiseOutcome::BaseWins => Some((base.text.clone(), mem.text.clone())),
                    PairwiseOutcome::Tie => None,
                };
                Ok(Scored {
                    r_mem: f64::from(advantage_pairwise(outcome)),
                    r_base: Some(f64::from(u8::from(outcome == PairwiseOutcome::BaseWins))),
                    advantage: Some(f64::from(advantage_pairwise(outcome))),
                    mem,
                    preference_pair,
                })
            }
        }
    }

    /// One training step. The store is updated only if the whole step
    /// succeeds; a task-local failure yields a skipped record.
    pub fn run_training_step(&self, task: &TaskInstance, step: u64, store: &mut MemoryStore) -> Result<TaskRecord> {
        if self.config.mode != EngineMode::Training {
            return Err(Error::InvalidParams("training step requires Training mode".into()));
        }
        if let Err(e) = task.validate() {
            return Ok(TaskRecord::skipped(step, task, task.kind, e.to_string(), store.len()));
        }
        let mut kind = task.kind;
        let mut work = store.clone();
        match self.training_step_inner(task, step, &mut work, &mut kind) {
            Ok(record) => {
                *store = work;
                Ok(record)
            }
            Err(e) if is_task_local(&e) => {
                tracing::warn!(task = %task.id, error = %e, "task skipped");
                Ok(TaskRecord::skipped(step, task, kind, e.to_string(), store.len()))
            }
            Err(e) => Err(e),
        }
    }

    fn training_step_inner(
        &self,
        task: &TaskInstance,
        step: u64,
        work: &mut MemoryStore,
        kind_out: &mut Option<TaskKind>,
    ) -> Result<TaskRecord> {
        let t = self.config.train_temperature;
        let kind = self.route(task)?;
        *kind_out = Some(kind);
        let (retrieved_ids, scored) = {
            let retrieved = self.retrieve(task, kind, work)?;
            (retrieved.ids(), self.infer_and_score(task, kind, &retrieved, t, true)?)
        };
        let advantage = scored.advantage.expect("training runs base inference");
        if self.config.advantage_updates {
            apply_feedback(work, &retrieved_ids, advantage, &self.config.update)?;
        }

        let mut notes = Vec::new();
        let mut cascade_record = None;
        let new_memories: Vec<Memory> = {
            let ex = Extraction {
                extractor: self.sources.extractor,
                factory: MemoryFactory {
                    store: work,
                    embedder: self.embedder,
                    retrieval: &self.config.retrieval,
                    step,
                },
                templates: self.templates,
                temperature: t,
            };
            let extracted = match kind {
                TaskKind::Verifiable if scored.r_mem >= 1.0 => extract_success(&ex, task, &scored.mem).map(|m| vec![m]),
                TaskKind::Verifiable => {
                    let run = run_cascade(task, &self.sources.cascade(), &self.config.cascade, self.templates, t)?;
                    cascade_record = Some(CascadeRecord {
                        level_used: run.resolved.as_ref().map(|(_, l)| *l),
                        attempts: run.attempts,
                    });
                    match &run.resolved {
                        Some((reference, level)) => contrastive_reflect(
                            &ex,
                            task,
                            &scored.mem,
                            reference,
                            *level,
                            self.config.cascade.max_memories,
                        ),
                        None => {
                            notes.push("cascade exhausted; no memory".to_string());
                            Ok(Vec::new())
                        }
                    }
                }
                TaskKind::NonVerifiable => match &scored.preference_pair {
                    Some((winner, loser)) => extract_preference(&ex, task, winner, loser),
                    None => Ok(Vec::new()),
                },
            };
            match extracted {
                Ok(ms) => ms,
                Err(e @ Error::ExtractionParseError(_)) => {
                    tracing::warn!(task = %task.id, error = %e, "extraction produced no memory");
                    notes.push(e.to_string());
                    Vec::new()
                }
                Err(e) => return Err(e),
            }
        };

        let actions = if new_memories.is_empty() {
            Vec::new()
        } else {
            let audit_scope: Vec<&Memory> = retrieved_ids.iter().filter_map(|id| work.get(id)).collect();
            let actions = match self.config.consolidation.mode {
                CuratorMode::Rule => rule_audit(&new_memories, &audit_scope, &self.config.consolidation)?,
                CuratorMode::Llm => {
                    let factory =
                        MemoryFactory { store: work, embedder: self.embedder, retrieval: &self.config.retrieval, step };
                    llm_audit(
                        &new_memories,
                        &audit_scope,
                        task,
                        &scored.mem,
                        self.sources.curator,
                        self.templates,
                        &factory,
                        &self.config.consolidation,
                    )?
                }
            };
            apply_actions(work, &actions, self.embedder, &self.config.retrieval)?;
            actions
        };

        Ok(TaskRecord {
            step,
            task_id: task.id.clone(),
            kind: Some(kind),
            status: TaskStatus::Completed,
            retrieved: retrieved_ids,
            r_mem: Some(scored.r_mem),
            r_base: scored.r_base,
            advantage: Some(advantage),
            cascade: cascade_record,
            extracted: new_memories.len(),
            actions: actions.iter().map(|a| a.record()).collect(),
            notes,
            store_size: work.len(),
        })
    }

    /// Streams `tasks` in order, evolving `store`.
    pub fn run_training_stream(&self, tasks: &[TaskInstance], store: &mut MemoryStore) -> Result<StreamReport> {
        self.check_provider(store)?;
        let before = store.digest();
        let mut records = Vec::with_capacity(tasks.len());
        for (i, task) in tasks.iter().enumerate() {
            records.push(self.run_training_step(task, i as u64, store)?);
        }
        Ok(StreamReport::new(EngineMode::Training, self.config.seed, before, store.digest(), records))
    }

    /// Frozen evaluation: retrieval, memory inference and scoring only.
    /// Verifiable tasks skip base inference; non-verifiable tasks need it
    /// as the judged counterpart.
    pub fn run_test_stream(&self, tasks: &[TaskInstance], store: &MemoryStore) -> Result<StreamReport> {
        self.run_test_stream_probed(tasks, store, None)
    }

    pub fn run_test_stream_probed(
        &self,
        tasks: &[TaskInstance],
        store: &MemoryStore,
        probe: Option<&StoreProbe<'_>>,
    ) -> Result<StreamReport> {
        if self.config.mode != EngineMode::FrozenTest {
            return Err(Error::InvalidParams("test stream requires FrozenTest mode".into()));
        }
        self.check_provider(store)?;
        let before = store.digest();
        let mut frozen = store.clone();
        frozen.freeze();
        let mut records = Vec::with_capacity(tasks.len());
        for (i, task) in tasks.iter().enumerate() {
            if let Some(probe) = probe {
                probe(&mut frozen)?;
            }
            let step = i as u64;
            if let Err(e) = task.validate() {
                records.push(TaskRecord::skipped(step, task, task.kind, e.to_string(), frozen.len()));
                continue;
            }
            let mut kind = task.kind;
            let outcome = (|| {
                let k = self.route(task)?;
                kind = Some(k);
                let retrieved = self.retrieve(task, k, &frozen)?;
                Ok::<_, Error>((
                    retrieved.ids(),
                    self.infer_and_score(task, k, &retrieved, self.config.eval_temperature, false)?,
                ))
            })();
            let record = match outcome {
                Ok((retrieved, scored)) => TaskRecord {
                    step,
                    task_id: task.id.clone(),
                    kind,
                    status: TaskStatus::Completed,
                    retrieved,
                    r_mem: Some(scored.r_mem),
                    r_base: scored.r_base,
                    advantage: scored.advantage,
                    cascade: None,
                    extracted: 0,
                    actions: Vec::new(),
                    notes: Vec::new(),
                    store_size: frozen.len(),
                },
                Err(e) if is_task_local(&e) => TaskRecord::skipped(step, task, kind, e.to_string(), frozen.len()),
                Err(e) => return Err(e),
            };
            records.push(record);
        }
        let after = frozen.digest();
        if after != before {
            return Err(Error::FrozenStoreMutation);
        }
        Ok(StreamReport::new(EngineMode::FrozenTest, self.config.seed, before, after, records))
    }

    fn check_provider(&self, store: &MemoryStore) -> Result<()> {
        if store.provider_id() != self.embedder.provider_id() {
            return Err(Error::Config(format!(
                "store was built with embedder {:?}, engine uses {:?}",
                store.provider_id(),
                self.embedder.provider_id()
            )));
        }
        if store.embed_dim() != self.embedder.dimension() {
            return Err(Error::DimensionMismatch { expected: store.embed_dim(), actual: self.embedder.dimension() });
        }
        Ok(())
    }
}

/// Mean over `test` of the best cosine similarity to any `train` vector.
pub fn amcs(test: &[EmbeddingVector], train: &[EmbeddingVector]) -> Result<f64> {
    if test.is_empty() || train.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut total = 0.0;
    for q in test {
        let mut best = f64::NEG_INFINITY;
        for t in train {
            best = best.max(cosine_sim(q, t)?);
        }
        total += best;
    }
    Ok(total / test.len() as f64)
}

/// [`amcs`] over task prompts.
pub fn amcs_tasks(test: &[TaskInstance], train: &[TaskInstance], embedder: &dyn Embedder) -> Result<f64> {
    let embed = |ts: &[TaskInstance]| ts.iter().map(|t| embedder.embed(&t.prompt)).collect::<Result<Vec<_>>>();
    amcs(&embed(test)?, &embed(train)?)
}
