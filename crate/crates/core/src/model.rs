//! Domain types shared by every module.

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

/// Lower bound on any posterior variance the engine produces.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Engine-generated memory identifier: `<run id>-<zero-padded counter>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryId(String);

impl MemoryId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MemoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Monotonic id source. Safe to share across threads.
#[derive(Debug)]
pub struct IdGenerator {
    run_id: String,
    next: AtomicU64,
}

impl IdGenerator {
    pub fn new(run_id: impl Into<String>, next: u64) -> Self {
        Self { run_id: run_id.into(), next: AtomicU64::new(next) }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    /// The sequence number the next call to [`IdGenerator::next_id`] will use.
    pub fn peek(&self) -> u64 {
        self.next.load(Ordering::SeqCst)
    }

    pub fn next_id(&self) -> MemoryId {
        let seq = self.next.fetch_add(1, Ordering::SeqCst);
        MemoryId(format!("{}-{seq:08}", self.run_id))
    }
}

impl Clone for IdGenerator {
    fn clone(&self) -> Self {
        Self::new(self.run_id.clone(), self.peek())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MemoryKind {
    GlobalProcedural,
    LocalCorrective,
    Preference,
}

impl MemoryKind {
    pub const ALL: [MemoryKind; 3] = [Self::GlobalProcedural, Self::LocalCorrective, Self::Preference];

    pub fn label(self) -> &'static str {
        match self {
            Self::GlobalProcedural => "global",
            Self::LocalCorrective => "local",
            Self::Preference => "preference",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label().eq_ignore_ascii_case(s.trim()))
    }
}

/// Where a memory's knowledge came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceLevel {
    SelfSuccess,
    Teacher,
    ToolTeacher,
    Expert,
    PairwiseJudge,
}

/// A ⟨trigger, dimension, comparison⟩ preference rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub trigger: String,
    pub dimension: String,
    pub comparison: String,
}

/// Memory body: free text, or a preference rule for `Preference` memories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MemoryContent {
    Text(String),
    Preference(PreferenceRecord),
}

impl MemoryContent {
    /// Flattened text form used in prompts.
    pub fn render(&self) -> String {
        match self {
            Self::Text(t) => t.clone(),
            Self::Preference(p) => p.comparison.clone(),
        }
    }
}

/// Gaussian belief N(mean, variance) over a memory's marginal usefulness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityPosterior {
    pub mean: f64,
    pub variance: f64,
}

impl UtilityPosterior {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() {
            return Err(Error::SchemaViolation("posterior parameters must be finite".into()));
        }
        if variance < VARIANCE_FLOOR {
            return Err(Error::SchemaViolation(format!("posterior variance {variance} below floor")));
        }
        Ok(Self { mean, variance })
    }

    /// Builds a posterior, raising the variance to [`VARIANCE_FLOOR`] if needed.
    pub(crate) fn floored(mean: f64, variance: f64) -> Self {
        Self { mean, variance: variance.max(VARIANCE_FLOOR) }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// One durable knowledge unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memory {
    pub id: MemoryId,
    pub kind: MemoryKind,
    pub title: String,
    pub description: String,
    pub content: MemoryContent,
    pub embedding: EmbeddingVector,
    pub posterior: UtilityPosterior,
    pub created_at: u64,
    pub feedback_count: u64,
    pub source_level: SourceLevel,
}

/// Everything needed to mint a [`Memory`] except its id.
#[derive(Debug, Clone)]
pub struct MemoryFields {
    pub kind: MemoryKind,
    pub title: String,
    pub description: String,
    pub content: MemoryContent,
    pub embedding: EmbeddingVector,
    pub posterior: UtilityPosterior,
    pub source_level: SourceLevel,
    pub step: u64,
}

/// Text embedded for retrieval: title and description, newline separated.
pub fn retrieval_text(title: &str, description: &str) -> String {
    format!("{title}\n{description}")
}

/// Validates `fields` and assigns a fresh id.
pub fn make_memory(ids: &IdGenerator, fields: MemoryFields) -> Result<Memory> {
    let memory = Memory {
        id: ids.next_id(),
        kind: fields.kind,
        title: fields.title,
        description: fields.description,
        content: fields.content,
        embedding: fields.embedding,
        posterior: fields.posterior,
        created_at: fields.step,
        feedback_count: 0,
        source_level: fields.source_level,
    };
    memory.validate()?;
    Ok(memory)
}

impl Memory {
    pub fn validate(&self) -> Result<()> {
        let blank = |s: &str| s.trim().is_empty();
        if blank(&self.title) {
            return Err(Error::SchemaViolation(format!("memory {} has an empty title", self.id)));
        }
        if blank(&self.description) {
            return Err(Error::SchemaViolation(format!("memory {} has an empty description", self.id)));
        }
        match (&self.kind, &self.content) {
            (MemoryKind::Preference, MemoryContent::Preference(p)) => {
                if blank(&p.trigger) || blank(&p.dimension) || blank(&p.comparison) {
                    return Err(Error::SchemaViolation(format!(
                        "preference memory {} is missing a trigger, dimension or comparison",
                        self.id
                    )));
                }
            }
            (MemoryKind::Preference, MemoryContent::Text(_)) => {
                return Err(Error::SchemaViolation(format!("preference memory {} has text content", self.id)));
            }
            (_, MemoryContent::Preference(_)) => {
                return Err(Error::SchemaViolation(format!(
                    "{:?} memory {} carries preference fields",
                    self.kind, self.id
                )));
            }
            (_, MemoryContent::Text(t)) => {
                if blank(t) {
                    return Err(Error::SchemaViolation(format!("memory {} has empty content", self.id)));
                }
            }
        }
        if (self.embedding.norm() - 1.0).abs() > crate::embedding::UNIT_NORM_TOLERANCE {
            return Err(Error::SchemaViolation(format!("memory {} embedding is not unit norm", self.id)));
        }
        UtilityPosterior::new(self.posterior.mean, self.posterior.variance)?;
        Ok(())
    }

    pub fn retrieval_text(&self) -> String {
        retrieval_text(&self.title, &self.description)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[serde(alias = "Verifiable")]
    Verifiable,
    #[serde(alias = "NonVerifiable", alias = "non-verifiable")]
    NonVerifiable,
}

/// One streamed query. `kind` may be absent, in which case the router decides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TaskKind>,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default)]
    pub step: u64,
}

impl TaskInstance {
    pub fn verifiable(id: impl Into<String>, prompt: impl Into<String>, reference: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: Some(TaskKind::Verifiable),
            prompt: prompt.into(),
            reference: Some(reference.into()),
            step: 0,
        }
    }

    pub fn non_verifiable(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self { id: id.into(), kind: Some(TaskKind::NonVerifiable), prompt: prompt.into(), reference: None, step: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() || self.prompt.trim().is_empty() {
            return Err(Error::SchemaViolation("task needs a non-empty id and prompt".into()));
        }
        match (self.kind, &self.reference) {
            (Some(TaskKind::Verifiable), None) => {
                Err(Error::SchemaViolation(format!("verifiable task {} has no reference answer", self.id)))
            }
            (Some(TaskKind::NonVerifiable), Some(_)) => {
                Err(Error::SchemaViolation(format!("non-verifiable task {} carries a reference answer", self.id)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrajectorySource {
    Actor,
    Teacher,
    ToolTeacher,
    Expert,
}

/// A full reasoning output and the answer extracted from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub text: String,
    pub final_answer: String,
    pub used_memory_ids: Vec<MemoryId>,
    pub source: TrajectorySource,
}

impl Trajectory {
    pub fn new(task_id: &str, text: String, used_memory_ids: Vec<MemoryId>, source: TrajectorySource) -> Self {
        let final_answer = extract_final_answer(&text);
        Self { task_id: task_id.to_string(), text, final_answer, used_memory_ids, source }
    }
}

/// Scores of memory-augmented and base inference plus their advantage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSignal {
    pub r_mem: f64,
    pub r_base: f64,
    pub advantage: f64,
}

/// Trim, case-fold and strip trailing punctuation.
pub fn normalize_answer(s: &str) -> String {
    let folded = s.trim().to_lowercase();
    folded.trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?') || c.is_whitespace()).to_string()
}

/// Binary exact-match correctness after normalization.
pub fn verifiable_score(final_answer: &str, reference: Option<&str>) -> Result<u8> {
    let reference = reference.ok_or(Error::MissingReference)?;
    let answer = normalize_answer(final_answer);
    if answer.is_empty() {
        return Ok(0);
    }
    Ok(u8::from(answer == normalize_answer(reference)))
}

/// The last `\boxed{...}` or fenced `answer` block, else the last non-empty line.
pub fn extract_final_answer(text: &str) -> String {
    let boxed = last_boxed(text);
    let fenced = last_answer_fence(text);
    match (boxed, fenced) {
        (Some((bp, b)), Some((fp, f))) => {
            if bp > fp {
                b
            } else {
                f
            }
        }
        (Some((_, b)), None) => b,
        (None, Some((_, f))) => f,
        (None, None) => text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string(),
    }
}

fn last_boxed(text: &str) -> Option<(usize, String)> {
    const OPEN: &str = "\\boxed{";
    let mut found = None;
    let mut from = 0;
    while let Some(rel) = text[from..].find(OPEN) {
        let start = from + rel;
        let body = start + OPEN.len();
        let mut depth = 1usize;
        let mut end = None;
        for (i, c) in text[body..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(body + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(end) = end {
            found = Some((start, text[body..end].trim().to_string()));
        }
        from = body;
    }
    found
}

fn last_answer_fence(text: &str) -> Option<(usize, String)> {
    const OPEN: &str = "```answer";
    let start = text.rfind(OPEN)?;
    let body_start = start + OPEN.len();
    let close = text[body_start..].find("```")?;
    Some((start, text[body_start..body_start + close].trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::test_embed;
    use proptest::prelude::*;

    fn fields(kind: MemoryKind, content: MemoryContent) -> MemoryFields {
        MemoryFields {
            kind,
            title: "t".into(),
            description: "d".into(),
            content,
            embedding: test_embed("t\nd"),
            posterior: UtilityPosterior::new(0.0, 1.1).unwrap(),
            source_level: SourceLevel::Teacher,
            step: 0,
        }
    }

    #[test]
    fn make_memory_assigns_fresh_ids() {
        let ids = IdGenerator::new("run", 0);
        let a = make_memory(&ids, fields(MemoryKind::GlobalProcedural, MemoryContent::Text("c".into()))).unwrap();
        let b = make_memory(&ids, fields(MemoryKind::GlobalProcedural, MemoryContent::Text("c".into()))).unwrap();
        assert_eq!(a.feedback_count, 0);
        assert_eq!(a.created_at, 0);
        assert_ne!(a.id, b.id);
        assert!(a.id < b.id);
    }

    #[test]
    fn make_memory_rejects_empty_title() {
        let ids = IdGenerator::new("run", 0);
        let mut f = fields(MemoryKind::GlobalProcedural, MemoryContent::Text("c".into()));
        f.title = String::new();
        assert!(matches!(make_memory(&ids, f), Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn preference_kind_requires_all_three_fields() {
        let ids = IdGenerator::new("run", 0);
        let pref = PreferenceRecord { trigger: "when".into(), dimension: "".into(), comparison: "prefer".into() };
        let f = fields(MemoryKind::Preference, MemoryContent::Preference(pref));
        assert!(matches!(make_memory(&ids, f), Err(Error::SchemaViolation(_))));

        let text_pref = fields(MemoryKind::Preference, MemoryContent::Text("c".into()));
        assert!(make_memory(&ids, text_pref).is_err());

        let pref = PreferenceRecord { trigger: "a".into(), dimension: "b".into(), comparison: "c".into() };
        let global_with_pref = fields(MemoryKind::GlobalProcedural, MemoryContent::Preference(pref));
        assert!(make_memory(&ids, global_with_pref).is_err());
    }

    #[test]
    fn posterior_respects_floor() {
        assert!(UtilityPosterior::new(0.0, 1e-7).is_err());
        assert!(UtilityPosterior::new(f64::NAN, 1.0).is_err());
        assert_eq!(UtilityPosterior::floored(0.0, 0.0).variance, VARIANCE_FLOOR);
    }

    #[test]
    fn verifiable_score_examples() {
        assert_eq!(verifiable_score("907", Some("907")).unwrap(), 1);
        assert_eq!(verifiable_score(" 907 ", Some("907")).unwrap(), 1);
        assert_eq!(verifiable_score("906", Some("907")).unwrap(), 0);
        assert_eq!(verifiable_score("Paris.", Some("paris")).unwrap(), 1);
        assert_eq!(verifiable_score("", Some("907")).unwrap(), 0);
        assert!(matches!(verifiable_score("907", None), Err(Error::MissingReference)));
    }

    #[test]
    fn final_answer_extraction() {
        assert_eq!(extract_final_answer("so the answer is \\boxed{12} and \\boxed{907}."), "907");
        assert_eq!(extract_final_answer("\\boxed{\\frac{1}{2}}"), "\\frac{1}{2}");
        assert_eq!(extract_final_answer("work\n```answer\n42\n```\n"), "42");
        assert_eq!(extract_final_answer("line one\nfinal: 7\n\n"), "final: 7");
        assert_eq!(extract_final_answer(""), "");
    }

    #[test]
    fn task_reference_invariant() {
        assert!(TaskInstance::verifiable("a", "q", "1").validate().is_ok());
        let mut t = TaskInstance::verifiable("a", "q", "1");
        t.reference = None;
        assert!(t.validate().is_err());
        let mut n = TaskInstance::non_verifiable("b", "q");
        n.reference = Some("x".into());
        assert!(n.validate().is_err());
    }

    proptest! {
        #[test]
        fn score_is_invariant_under_normalization(a in "[ a-zA-Z0-9.,!?;:]{0,12}", b in "[a-zA-Z0-9]{1,8}") {
            let direct = verifiable_score(&a, Some(&b)).unwrap();
            let normalized = verifiable_score(&normalize_answer(&a), Some(&normalize_answer(&b))).unwrap();
            prop_assert_eq!(direct, normalized);
        }
    }
}
