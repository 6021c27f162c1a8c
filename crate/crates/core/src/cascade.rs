//! Cost-aware reference acquisition and the two verifiable extraction paths.
//!
//! A failed verifiable task escalates teacher, then tool-augmented teacher,
//! then expert until one produces a verified-correct trajectory. The failed
//! and reference trajectories are then contrasted into corrective memories.
//! A successful task skips the cascade and yields one procedural memory.

use crate::error::{Error, Result};
use crate::factory::{Extraction, MemoryDraft};
use crate::model::{
    verifiable_score, Memory, MemoryContent, MemoryKind, SourceLevel, TaskInstance, Trajectory, TrajectorySource,
};
use crate::prompts::Templates;
use crate::sources::{CompletionRequest, KnowledgeSource};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CascadeLevel {
    Teacher,
    ToolTeacher,
    Expert,
}

impl CascadeLevel {
    pub const ORDER: [CascadeLevel; 3] = [Self::Teacher, Self::ToolTeacher, Self::Expert];

    pub fn rank(self) -> u8 {
        match self {
            Self::Teacher => 1,
            Self::ToolTeacher => 2,
            Self::Expert => 3,
        }
    }

    pub fn source_level(self) -> SourceLevel {
        match self {
            Self::Teacher => SourceLevel::Teacher,
            Self::ToolTeacher => SourceLevel::ToolTeacher,
            Self::Expert => SourceLevel::Expert,
        }
    }

    pub fn trajectory_source(self) -> TrajectorySource {
        match self {
            Self::Teacher => TrajectorySource::Teacher,
            Self::ToolTeacher => TrajectorySource::ToolTeacher,
            Self::Expert => TrajectorySource::Expert,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Self::Teacher => "teacher",
            Self::ToolTeacher => "tool-teacher",
            Self::Expert => "expert",
        }
    }
}

/// Per-level counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelTally {
    pub teacher: u64,
    pub tool_teacher: u64,
    pub expert: u64,
}

impl LevelTally {
    pub fn get(&self, level: CascadeLevel) -> u64 {
        match level {
            CascadeLevel::Teacher => self.teacher,
            CascadeLevel::ToolTeacher => self.tool_teacher,
            CascadeLevel::Expert => self.expert,
        }
    }

    pub fn bump(&mut self, level: CascadeLevel) {
        match level {
            CascadeLevel::Teacher => self.teacher += 1,
            CascadeLevel::ToolTeacher => self.tool_teacher += 1,
            CascadeLevel::Expert => self.expert += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.teacher + self.tool_teacher + self.expert
    }

    pub fn add(&mut self, other: &LevelTally) {
        self.teacher += other.teacher;
        self.tool_teacher += other.tool_teacher;
        self.expert += other.expert;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub max_attempts_per_level: u32,
    /// Cap on memories kept from one contrastive reflection.
    pub max_memories: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self { max_attempts_per_level: 1, max_memories: 3 }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_attempts_per_level == 0 {
            return Err(Error::Config("max_attempts_per_level must be at least 1".into()));
        }
        if self.max_memories == 0 {
            return Err(Error::Config("max_memories must be at least 1".into()));
        }
        Ok(())
    }
}

pub struct CascadeSources<'a> {
    pub teacher: &'a dyn KnowledgeSource,
    pub tool_teacher: &'a dyn KnowledgeSource,
    pub expert: &'a dyn KnowledgeSource,
}

impl CascadeSources<'_> {
    pub fn get(&self, level: CascadeLevel) -> &dyn KnowledgeSource {
        match level {
            CascadeLevel::Teacher => self.teacher,
            CascadeLevel::ToolTeacher => self.tool_teacher,
            CascadeLevel::Expert => self.expert,
        }
    }
}

/// A verified reference and what it cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeOutcome {
    pub reference: Trajectory,
    pub level_used: CascadeLevel,
    /// Calls made per level, failed attempts included.
    pub attempts: LevelTally,
}

/// Result of one escalation, resolved or not.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeRun {
    pub resolved: Option<(Trajectory, CascadeLevel)>,
    pub attempts: LevelTally,
}

/// Escalates through the levels until one answer verifies. Every call is
/// counted. Source errors abort the run.
pub fn run_cascade(
    task: &TaskInstance,
    sources: &CascadeSources<'_>,
    config: &CascadeConfig,
    templates: &Templates,
    temperature: f64,
) -> Result<CascadeRun> {
    let reference = task.reference.as_deref().ok_or(Error::MissingReference)?;
    let prompt = templates.solve_math(&task.prompt, &[]);
    let mut attempts = LevelTally::default();
    for level in CascadeLevel::ORDER {
        for attempt in 0..config.max_attempts_per_level {
            let tag = format!("{}/cascade/{}/{attempt}", task.id, level.tag());
            attempts.bump(level);
            let text = sources.get(level).complete(&CompletionRequest::new(prompt.clone(), temperature, tag))?;
            let trajectory = Trajectory::new(&task.id, text, Vec::new(), level.trajectory_source());
            if verifiable_score(&trajectory.final_answer, Some(reference))? == 1 {
                return Ok(CascadeRun { resolved: Some((trajectory, level)), attempts });
            }
        }
    }
    Ok(CascadeRun { resolved: None, attempts })
}

/// As [`run_cascade`], but exhaustion is an error.
pub fn acquire_reference(
    task: &TaskInstance,
    sources: &CascadeSources<'_>,
    config: &CascadeConfig,
    templates: &Templates,
    temperature: f64,
) -> Result<CascadeOutcome> {
    let run = run_cascade(task, sources, config, templates, temperature)?;
    match run.resolved {
        Some((reference, level_used)) => Ok(CascadeOutcome { reference, level_used, attempts: run.attempts }),
        None => Err(Error::CascadeExhausted { calls: run.attempts.total() as u32 }),
    }
}

/// Aggregate cascade accounting over a stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CascadeStats {
    pub total_failures: u64,
    pub resolved: LevelTally,
    pub exhausted: u64,
    pub calls: LevelTally,
}

impl CascadeStats {
    pub fn record(&mut self, run: &CascadeRun) {
        self.total_failures += 1;
        self.calls.add(&run.attempts);
        match &run.resolved {
            Some((_, level)) => self.resolved.bump(*level),
            None => self.exhausted += 1,
        }
    }

    pub fn fraction(&self, level: CascadeLevel) -> f64 {
        if self.total_failures == 0 {
            return 0.0;
        }
        self.resolved.get(level) as f64 / self.total_failures as f64
    }

    /// Share of failures that had to be resolved by the expert.
    pub fn expert_call_fraction(&self) -> f64 {
        self.fraction(CascadeLevel::Expert)
    }
}

/// One `MEMORY i:` block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedBlock {
    pub title: String,
    pub description: String,
    pub content: String,
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[ \t>#*_-]*memory[ \t]+\d+[ \t*_]*:[ \t*_]*").expect("valid regex"))
}

fn line_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[ \t>#*_-]*(title|description|content|trigger|dimension|comparison)[ \t*_]*:[ \t*_]*")
            .expect("valid regex")
    })
}

fn inline_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[ \t](TITLE|DESCRIPTION|CONTENT|TRIGGER|DIMENSION|COMPARISON)[ \t]*:[ \t]*").expect("valid regex")
    })
}

/// Splits `raw` into the bodies following each `MEMORY i:` marker.
fn block_bodies(raw: &str) -> Vec<&str> {
    let starts: Vec<(usize, usize)> = marker_re().find_iter(raw).map(|m| (m.start(), m.end())).collect();
    starts
        .iter()
        .enumerate()
        .map(|(i, &(_, body_start))| {
            let end = starts.get(i + 1).map_or(raw.len(), |&(s, _)| s);
            &raw[body_start..end]
        })
        .collect()
}

/// Labelled fields of one block. The last label in `labels` runs to the end
/// of the block; the others run to the next label. Line-start labels match
/// any case; inline labels must be upper case.
fn labelled_fields(body: &str, labels: &[&str; 3]) -> Option<[String; 3]> {
    let mut found: Vec<(usize, usize, usize)> = Vec::new();
    let mut note = |label: &str, start: usize, end: usize| {
        if let Some(idx) = labels.iter().position(|l| l.eq_ignore_ascii_case(label)) {
            found.push((start, end, idx));
        }
    };
    for c in line_label_re().captures_iter(body) {
        let m = c.get(0).expect("match");
        note(&c[1], m.start(), m.end());
    }
    for c in inline_label_re().captures_iter(body) {
        let m = c.get(0).expect("match");
        note(&c[1], m.start(), m.end());
    }
    found.sort();
    let mut end = 0;
    found.retain(|f| {
        let keep = f.0 >= end;
        if keep {
            end = f.1;
        }
        keep
    });
    let last = labels.len() - 1;
    let last_start = found.iter().find(|f| f.2 == last)?.0;
    // Labels after the final field belong to its text.
    found.retain(|f| f.0 <= last_start);
    let mut out: [Option<String>; 3] = [None, None, None];
    for (i, &(_, value_start, idx)) in found.iter().enumerate() {
        if out[idx].is_some() {
            continue;
        }
        let value_end = if idx == last { body.len() } else { found.get(i + 1).map_or(body.len(), |f| f.0) };
        out[idx] = Some(clean(&body[value_start..value_end]));
    }
    let [a, b, c] = out;
    let fields = [a?, b?, c?];
    fields.iter().all(|f| !f.is_empty()).then_some(fields)
}

fn clean(s: &str) -> String {
    s.trim().trim_matches(|c| c == '*' || c == '_').trim().to_string()
}

/// Every well-formed `MEMORY i:` block with TITLE, DESCRIPTION and CONTENT.
/// Blocks missing a field are skipped.
pub fn parse_memories(raw: &str) -> Vec<ParsedBlock> {
    block_bodies(raw)
        .into_iter()
        .filter_map(|body| labelled_fields(body, &["title", "description", "content"]))
        .map(|[title, description, content]| ParsedBlock { title, description, content })
        .collect()
}

/// Every well-formed `MEMORY i:` block with TRIGGER, DIMENSION and COMPARISON.
pub fn parse_preference_blocks(raw: &str) -> Vec<[String; 3]> {
    block_bodies(raw)
        .into_iter()
        .filter_map(|body| labelled_fields(body, &["trigger", "dimension", "comparison"]))
        .collect()
}

/// Canonical `MEMORY i:` text for `blocks`; [`parse_memories`] inverts it.
pub fn render_memories(blocks: &[ParsedBlock]) -> String {
    let items: Vec<String> = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            format!("MEMORY {}:\nTITLE: {}\nDESCRIPTION: {}\nCONTENT: {}\n", i + 1, b.title, b.description, b.content)
        })
        .collect();
    items.join("\n")
}

/// Canonical preference text; [`parse_preference_blocks`] inverts it.
pub fn render_preference_blocks(blocks: &[[String; 3]]) -> String {
    let items: Vec<String> = blocks
        .iter()
        .enumerate()
        .map(|(i, [t, d, c])| format!("MEMORY {}:\nTRIGGER: {t}\nDIMENSION: {d}\nCOMPARISON: {c}\n", i + 1))
        .collect();
    items.join("\n")
}

/// Content opening with `Step 1:` is procedural; anything else is corrective.
pub fn infer_kind(content: &str) -> MemoryKind {
    let head: String = content.trim_start().chars().take(7).collect();
    if head.eq_ignore_ascii_case("step 1:") {
        MemoryKind::GlobalProcedural
    } else {
        MemoryKind::LocalCorrective
    }
}

/// Contrasts a failed trajectory with a verified reference and mints up to
/// `max_memories` global or local memories.
pub fn contrastive_reflect(
    ex: &Extraction<'_>,
    task: &TaskInstance,
    failed: &Trajectory,
    reference: &Trajectory,
    level: CascadeLevel,
    max_memories: usize,
) -> Result<Vec<Memory>> {
    let prompt = ex.templates.failure_extraction(&task.prompt, &failed.text, &reference.text, max_memories);
    let raw = ex.ask(prompt, format!("{}/reflect", task.id))?;
    let blocks = parse_memories(&raw);
    if blocks.is_empty() {
        return Err(Error::ExtractionParseError(format!("no memory blocks in reflection for task {}", task.id)));
    }
    if blocks.len() > max_memories {
        tracing::debug!(task = %task.id, parsed = blocks.len(), kept = max_memories, "reflection capped");
    }
    blocks
        .into_iter()
        .take(max_memories)
        .map(|b| {
            let draft = MemoryDraft {
                kind: infer_kind(&b.content),
                title: b.title,
                description: b.description,
                content: MemoryContent::Text(b.content),
            };
            ex.factory.build(draft, level.source_level())
        })
        .collect()
}

/// Distills one global procedural memory from a successful trajectory.
pub fn extract_success(ex: &Extraction<'_>, task: &TaskInstance, success: &Trajectory) -> Result<Memory> {
    let prompt = ex.templates.success_extraction(&task.prompt, &success.text);
    let raw = ex.ask(prompt, format!("{}/success", task.id))?;
    let mut blocks = parse_memories(&raw);
    if blocks.is_empty() {
        return Err(Error::ExtractionParseError(format!("no memory block in success extraction for task {}", task.id)));
    }
    if blocks.len() > 1 {
        tracing::warn!(task = %task.id, parsed = blocks.len(), "success extraction returned several memories; keeping the first");
    }
    let b = blocks.swap_remove(0);
    let draft = MemoryDraft {
        kind: MemoryKind::GlobalProcedural,
        title: b.title,
        description: b.description,
        content: MemoryContent::Text(b.content),
    };
    ex.factory.build(draft, SourceLevel::SelfSuccess)
}
