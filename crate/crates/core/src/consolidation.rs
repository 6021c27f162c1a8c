//! Streaming store maintenance. Each extraction event is audited against the
//! memories retrieved for the same task and resolved into Append, Merge or
//! Prune actions, applied as one atomic batch.

use crate::cascade::{infer_kind, parse_memories, ParsedBlock};
use crate::embedding::{cosine_sim, Embedder};
use crate::error::{Error, Result};
use crate::factory::{MemoryDraft, MemoryFactory};
use crate::model::{
    retrieval_text, Memory, MemoryContent, MemoryId, MemoryKind, PreferenceRecord, TaskInstance, Trajectory,
};
use crate::prompts::Templates;
use crate::retrieval::{init_posterior, RetrievalConfig};
use crate::sources::{CompletionRequest, KnowledgeSource};
use crate::store::MemoryStore;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuratorMode {
    /// Deterministic similarity thresholds.
    Rule,
    /// The curator source refines the pool; parse failures fall back to rules.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsolidationConfig {
    pub mode: CuratorMode,
    pub theta_merge: f64,
    pub theta_dup: f64,
}

impl Default for ConsolidationConfig {
    fn default() -> Self {
        Self { mode: CuratorMode::Rule, theta_merge: 0.85, theta_dup: 0.95 }
    }
}

impl ConsolidationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.theta_merge && self.theta_merge < self.theta_dup && self.theta_dup <= 1.0) {
            return Err(Error::Config(format!(
                "thresholds need 0 < theta_merge ({}) < theta_dup ({}) <= 1",
                self.theta_merge, self.theta_dup
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurationAction {
    Append(Memory),
    /// Replace the text of `target`, keeping its id and posterior.
    Merge {
        target: MemoryId,
        merged: Memory,
    },
    Prune(MemoryId),
}

/// Serializable trace of an applied action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "id", rename_all = "snake_case")]
pub enum ActionRecord {
    Append(MemoryId),
    Merge(MemoryId),
    Prune(MemoryId),
}

impl CurationAction {
    pub fn target(&self) -> &MemoryId {
        match self {
            Self::Append(m) => &m.id,
            Self::Merge { target, .. } => target,
            Self::Prune(id) => id,
        }
    }

    pub fn record(&self) -> ActionRecord {
        match self {
            Self::Append(m) => ActionRecord::Append(m.id.clone()),
            Self::Merge { target, .. } => ActionRecord::Merge(target.clone()),
            Self::Prune(id) => ActionRecord::Prune(id.clone()),
        }
    }
}

/// Appends `new` to `old` unless `old` already contains it verbatim.
fn concat_content(old: &MemoryContent, new: &MemoryContent) -> MemoryContent {
    match (old, new) {
        (MemoryContent::Preference(a), MemoryContent::Preference(b)) if a.comparison.contains(b.comparison.trim()) => {
            old.clone()
        }
        (a, b) if a.render().contains(b.render().trim()) => old.clone(),
        (MemoryContent::Preference(a), MemoryContent::Preference(b)) => MemoryContent::Preference(PreferenceRecord {
            trigger: a.trigger.clone(),
            dimension: a.dimension.clone(),
            comparison: format!("{} {}", a.comparison.trim_end(), b.comparison.trim()),
        }),
        (a, b) => MemoryContent::Text(format!("{}\n{}", a.render().trim_end(), b.render().trim())),
    }
}

/// Threshold curator. For each new memory, `s` is its best cosine against
/// retrieved memories of the same kind and against new memories accepted
/// earlier in the batch. `s >= theta_dup` drops it; `theta_merge <= s`
/// merges its content into the best retrieved match (or drops it if the
/// best match is itself new); otherwise it is appended.
pub fn rule_audit(new: &[Memory], retrieved: &[&Memory], config: &ConsolidationConfig) -> Result<Vec<CurationAction>> {
    let mut appended: Vec<Memory> = Vec::new();
    let mut merges: BTreeMap<MemoryId, Memory> = BTreeMap::new();
    for m in new {
        let mut best: Option<(f64, &MemoryId, bool)> = None;
        let olds = retrieved.iter().copied().filter(|r| r.kind == m.kind).map(|r| (r, false));
        let pending = appended.iter().filter(|r| r.kind == m.kind).map(|r| (r, true));
        for (cand, is_new) in olds.chain(pending) {
            let s = cosine_sim(&m.embedding, &cand.embedding)?;
            let better = match best {
                None => true,
                Some((bs, bid, _)) => s > bs || (s == bs && &cand.id < bid),
            };
            if better {
                best = Some((s, &cand.id, is_new));
            }
        }
        match best {
            Some((s, _, _)) if s >= config.theta_dup => {}
            Some((s, _, true)) if s >= config.theta_merge => {}
            Some((s, target, false)) if s >= config.theta_merge => {
                let base = merges.get(target).cloned().unwrap_or_else(|| {
                    (*retrieved.iter().find(|r| &r.id == target).expect("target retrieved")).clone()
                });
                let merged = Memory { content: concat_content(&base.content, &m.content), ..base };
                merges.insert(target.clone(), merged);
            }
            _ => appended.push(m.clone()),
        }
    }
    let mut actions: Vec<CurationAction> =
        merges.into_iter().map(|(target, merged)| CurationAction::Merge { target, merged }).collect();
    actions.extend(appended.into_iter().map(CurationAction::Append));
    Ok(actions)
}

fn norm_title(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// The block view of a memory, as rendered into the curator prompt.
fn as_block(m: &Memory) -> ParsedBlock {
    ParsedBlock { title: m.title.clone(), description: m.description.clone(), content: m.content.render() }
}

fn draft_from_block(b: &ParsedBlock, preference: bool) -> MemoryDraft {
    if preference {
        MemoryDraft {
            kind: MemoryKind::Preference,
            title: b.title.clone(),
            description: b.description.clone(),
            content: MemoryContent::Preference(PreferenceRecord {
                trigger: b.description.clone(),
                dimension: b.title.clone(),
                comparison: b.content.clone(),
            }),
        }
    } else {
        MemoryDraft {
            kind: infer_kind(&b.content),
            title: b.title.clone(),
            description: b.description.clone(),
            content: MemoryContent::Text(b.content.clone()),
        }
    }
}

/// Diffs the curator's refined list against the audited pool.
///
/// A returned block is matched by title, retrieved memories first. A match
/// with unchanged text keeps the memory (retrieved: no action; new: Append).
/// Changed text on a retrieved memory is a Merge; on a new memory, an Append
/// of the rewrite. Unmatched blocks are appended as fresh memories.
/// Retrieved memories left unmatched are pruned; unmatched new ones dropped.
pub fn diff_refined(
    blocks: &[ParsedBlock],
    new: &[Memory],
    retrieved: &[&Memory],
    factory: &MemoryFactory<'_>,
) -> Result<Vec<CurationAction>> {
    let preference = new.iter().chain(retrieved.iter().copied()).any(|m| m.kind == MemoryKind::Preference);
    let source_level = new.first().map(|m| m.source_level).unwrap_or(crate::model::SourceLevel::SelfSuccess);
    let mut old_used = vec![false; retrieved.len()];
    let mut new_used = vec![false; new.len()];
    let mut actions = Vec::new();
    let mut appends = Vec::new();
    for b in blocks {
        let key = norm_title(&b.title);
        if let Some(i) = (0..retrieved.len()).find(|&i| !old_used[i] && norm_title(&retrieved[i].title) == key) {
            old_used[i] = true;
            let old = retrieved[i];
            if as_block(old) != *b {
                let d = draft_from_block(b, preference);
                let merged = Memory { title: d.title, description: d.description, content: d.content, ..old.clone() };
                merged.validate()?;
                actions.push(CurationAction::Merge { target: old.id.clone(), merged });
            }
        } else if let Some(i) = (0..new.len()).find(|&i| !new_used[i] && norm_title(&new[i].title) == key) {
            new_used[i] = true;
            if as_block(&new[i]) == *b {
                appends.push(new[i].clone());
            } else {
                appends.push(factory.build(draft_from_block(b, preference), new[i].source_level)?);
            }
        } else {
            appends.push(factory.build(draft_from_block(b, preference), source_level)?);
        }
    }
    for (i, used) in old_used.iter().enumerate() {
        if !used {
            actions.push(CurationAction::Prune(retrieved[i].id.clone()));
        }
    }
    actions.extend(appends.into_iter().map(CurationAction::Append));
    Ok(actions)
}

/// Curator-driven audit. An unparseable reply falls back to [`rule_audit`].
#[allow(clippy::too_many_arguments)]
pub fn llm_audit(
    new: &[Memory],
    retrieved: &[&Memory],
    task: &TaskInstance,
    trajectory: &Trajectory,
    curator: &dyn KnowledgeSource,
    templates: &Templates,
    factory: &MemoryFactory<'_>,
    config: &ConsolidationConfig,
) -> Result<Vec<CurationAction>> {
    let new_refs: Vec<&Memory> = new.iter().collect();
    let prompt = templates.consolidation(&task.prompt, &trajectory.text, &new_refs, retrieved);
    let reply = curator.complete(&CompletionRequest::new(prompt, 0.0, format!("{}/curate", task.id)))?;
    let blocks = parse_memories(&reply);
    if blocks.is_empty() {
        tracing::warn!(task = %task.id, "curator reply unparseable; using rule audit");
        return rule_audit(new, retrieved, config);
    }
    diff_refined(&blocks, new, retrieved, factory)
}

/// Applies a batch atomically. Appends get a prior from their bank at apply
/// time; merges keep the target's id and posterior and are re-embedded;
/// prunes remove the entry.
pub fn apply_actions(
    store: &mut MemoryStore,
    actions: &[CurationAction],
    embedder: &dyn Embedder,
    retrieval: &RetrievalConfig,
) -> Result<()> {
    if actions.is_empty() {
        return Ok(());
    }
    if store.is_frozen() {
        return Err(Error::FrozenStoreMutation);
    }
    let mut seen = BTreeSet::new();
    for a in actions {
        if !seen.insert(a.target().clone()) {
            return Err(Error::InvalidParams(format!("memory {} targeted twice in one batch", a.target())));
        }
    }
    let mut work = store.clone();
    for a in actions {
        match a {
            CurationAction::Append(m) => {
                let mut m = m.clone();
                m.posterior = init_posterior(&m.embedding, work.bank(m.kind), retrieval)?;
                work.insert(m)?;
            }
            CurationAction::Merge { target, merged } => {
                let embedding = embedder.embed(&retrieval_text(&merged.title, &merged.description))?;
                let slot = work.get_mut(target)?;
                let updated = Memory {
                    id: slot.id.clone(),
                    kind: merged.kind,
                    title: merged.title.clone(),
                    description: merged.description.clone(),
                    content: merged.content.clone(),
                    embedding,
                    posterior: slot.posterior,
                    created_at: slot.created_at,
                    feedback_count: slot.feedback_count,
                    source_level: slot.source_level,
                };
                updated.validate()?;
                if updated.kind != slot.kind {
                    return Err(Error::SchemaViolation(format!("merge would move {target} to another bank")));
                }
                *slot = updated;
            }
            CurationAction::Prune(id) => {
                work.remove(id)?;
            }
        }
    }
    *store = work;
    Ok(())
}
