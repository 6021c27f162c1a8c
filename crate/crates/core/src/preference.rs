//! The non-verifiable path: judge two responses, then distill why the winner
//! won into trigger / dimension / comparison rules.

use crate::cascade::parse_preference_blocks;
use crate::error::{Error, Result};
use crate::factory::{Extraction, MemoryDraft};
use crate::feedback::PairwiseOutcome;
use crate::model::{Memory, MemoryContent, MemoryKind, PreferenceRecord, SourceLevel, TaskInstance};
use crate::prompts::Templates;
use crate::rng::unit_hash;
use crate::sources::{CompletionRequest, KnowledgeSource};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Most rules kept from one extraction.
pub const MAX_PREFERENCE_RULES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairWinner {
    First,
    Second,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairJudgement {
    pub winner: PairWinner,
    pub rationale: Option<String>,
    /// Whether the pair was shown to the judge in reversed order.
    pub swapped: bool,
}

impl PairJudgement {
    /// Outcome from the perspective of `first`.
    pub fn outcome_for_first(&self) -> PairwiseOutcome {
        match self.winner {
            PairWinner::First => PairwiseOutcome::MemWins,
            PairWinner::Second => PairwiseOutcome::BaseWins,
            PairWinner::Tie => PairwiseOutcome::Tie,
        }
    }
}

fn verdict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[ \t>#*_-]*winner[ \t*_]*:[ \t*_]*(1|2|tie)\b").expect("valid regex"))
}

/// The last `WINNER: 1|2|TIE` line, in presented order.
pub fn parse_verdict(text: &str) -> Result<PairWinner> {
    let caps = verdict_re()
        .captures_iter(text)
        .last()
        .ok_or_else(|| Error::JudgeParseError(format!("no WINNER line in {:?}", truncate(text, 200))))?;
    Ok(match caps[1].to_ascii_lowercase().as_str() {
        "1" => PairWinner::First,
        "2" => PairWinner::Second,
        _ => PairWinner::Tie,
    })
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Judges `first` against `second`. Presentation order is flipped by a
/// seeded coin keyed on the tag; the verdict is mapped back to the caller's
/// order.
pub fn judge_pair(
    task: &TaskInstance,
    first: &str,
    second: &str,
    judge: &dyn KnowledgeSource,
    templates: &Templates,
    rng_tag: &str,
    temperature: f64,
) -> Result<PairJudgement> {
    if first.trim().is_empty() || second.trim().is_empty() {
        return Err(Error::InvalidParams("judge_pair needs two non-empty responses".into()));
    }
    let swapped = unit_hash(&[b"judge-swap", task.id.as_bytes(), rng_tag.as_bytes()]) < 0.5;
    let (shown_1, shown_2) = if swapped { (second, first) } else { (first, second) };
    let prompt = templates.judge_pair(&task.prompt, shown_1, shown_2);
    let request = CompletionRequest::new(prompt, temperature, format!("{}/judge/{rng_tag}", task.id));
    let reply = judge.complete(&request).map_err(|e| Error::JudgeUnavailable(e.to_string()))?;
    let shown = parse_verdict(&reply)?;
    let winner = match (shown, swapped) {
        (PairWinner::Tie, _) => PairWinner::Tie,
        (w, false) => w,
        (PairWinner::First, true) => PairWinner::Second,
        (PairWinner::Second, true) => PairWinner::First,
    };
    let rationale = verdict_re().split(&reply).next().map(str::trim).filter(|r| !r.is_empty()).map(str::to_owned);
    Ok(PairJudgement { winner, rationale, swapped })
}

/// Distills 1 to 3 preference memories from a judged winner and loser.
pub fn extract_preference(ex: &Extraction<'_>, task: &TaskInstance, winner: &str, loser: &str) -> Result<Vec<Memory>> {
    let prompt = ex.templates.pairwise_extraction(&task.prompt, winner, loser);
    let raw = ex.ask(prompt, format!("{}/preference", task.id))?;
    let blocks = parse_preference_blocks(&raw);
    if blocks.is_empty() {
        return Err(Error::ExtractionParseError(format!("no preference blocks for task {}", task.id)));
    }
    blocks
        .into_iter()
        .take(MAX_PREFERENCE_RULES)
        .map(|[trigger, dimension, comparison]| {
            let draft = MemoryDraft {
                kind: MemoryKind::Preference,
                title: dimension.clone(),
                description: trigger.clone(),
                content: MemoryContent::Preference(PreferenceRecord { trigger, dimension, comparison }),
            };
            ex.factory.build(draft, SourceLevel::PairwiseJudge)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Embedder, HashingEmbedder, DEFAULT_TEST_DIM};
    use crate::factory::MemoryFactory;
    use crate::retrieval::RetrievalConfig;
    use crate::sources::{FnSource, ScriptedFixture, ScriptedSource};
    use crate::store::MemoryStore;

    fn task() -> TaskInstance {
        TaskInstance::non_verifiable("nv1", "Write a short poem without numbered lists.")
    }

    fn section<'a>(prompt: &'a str, open: &str, close: &str) -> &'a str {
        let start = prompt.find(open).unwrap() + open.len();
        let end = prompt[start..].find(close).unwrap() + start;
        prompt[start..end].trim()
    }

    /// Prefers the longer response; ties on equal length.
    fn length_judge() -> FnSource {
        FnSource::new("judge", |r| {
            let a = section(&r.prompt, "[Response 1]:", "[Response 2]:");
            let b = section(&r.prompt, "[Response 2]:", "Decide which");
            let v = match a.len().cmp(&b.len()) {
                std::cmp::Ordering::Greater => "1",
                std::cmp::Ordering::Less => "2",
                std::cmp::Ordering::Equal => "TIE",
            };
            Ok(format!("Comparing lengths.\nWINNER: {v}"))
        })
    }

    #[test]
    fn verdict_grammar() {
        assert_eq!(parse_verdict("blah\nWINNER: 1").unwrap(), PairWinner::First);
        assert_eq!(parse_verdict("**Winner:** 2").unwrap(), PairWinner::Second);
        assert_eq!(parse_verdict("WINNER: tie").unwrap(), PairWinner::Tie);
        assert_eq!(parse_verdict("WINNER: 1\nactually\nWINNER: 2").unwrap(), PairWinner::Second);
        assert!(matches!(parse_verdict("Response one is better."), Err(Error::JudgeParseError(_))));
        assert!(matches!(parse_verdict("WINNER: 3"), Err(Error::JudgeParseError(_))));
    }

    #[test]
    fn longer_text_wins_in_original_order() {
        let j = length_judge();
        let t = Templates::builtin();
        for tag in 0..40 {
            let out = judge_pair(&task(), "a much longer answer", "short", &j, &t, &tag.to_string(), 0.2).unwrap();
            assert_eq!(out.winner, PairWinner::First);
            assert_eq!(out.rationale.as_deref(), Some("Comparing lengths."));
        }
    }

    #[test]
    fn swap_is_seeded_and_balanced() {
        let j = length_judge();
        let t = Templates::builtin();
        let swaps = (0..1000)
            .filter(|i| judge_pair(&task(), "aaa", "bb", &j, &t, &i.to_string(), 0.2).unwrap().swapped)
            .count();
        assert!((400..=600).contains(&swaps), "{swaps}");
        let a = judge_pair(&task(), "aaa", "bb", &j, &t, "x", 0.2).unwrap();
        let b = judge_pair(&task(), "aaa", "bb", &j, &t, "x", 0.2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn position_swap_consistency() {
        let j = length_judge();
        let t = Templates::builtin();
        for tag in 0..50 {
            let tag = tag.to_string();
            let ab = judge_pair(&task(), "first answer here", "second", &j, &t, &tag, 0.2).unwrap();
            let ba = judge_pair(&task(), "second", "first answer here", &j, &t, &tag, 0.2).unwrap();
            assert_eq!(ab.winner, PairWinner::First);
            assert_eq!(ba.winner, PairWinner::Second);
        }
    }

    #[test]
    fn identical_responses_tie() {
        let out = judge_pair(&task(), "same", "same", &length_judge(), &Templates::builtin(), "t", 0.2).unwrap();
        assert_eq!(out.winner, PairWinner::Tie);
        assert_eq!(out.outcome_for_first(), PairwiseOutcome::Tie);
    }

    #[test]
    fn judge_failures() {
        let garbage = ScriptedSource::new("judge", ScriptedFixture::new(vec![], "I like both."));
        let t = Templates::builtin();
        assert!(matches!(judge_pair(&task(), "a", "b", &garbage, &t, "t", 0.2), Err(Error::JudgeParseError(_))));
        let down = FnSource::new("judge", |_| Err(crate::error::SourceError::HttpStatus(503)));
        assert!(matches!(judge_pair(&task(), "a", "b", &down, &t, "t", 0.2), Err(Error::JudgeUnavailable(_))));
        assert!(matches!(judge_pair(&task(), "", "b", &down, &t, "t", 0.2), Err(Error::InvalidParams(_))));
    }

    fn pref_block(i: usize) -> String {
        format!(
            "MEMORY {i}:\nTRIGGER: When the user forbids numbered lists {i}\nDIMENSION: format adherence\nCOMPARISON: Use bullets or prose instead of numbers.\n\n"
        )
    }

    #[test]
    fn extraction_builds_preference_memories_and_caps_at_three() {
        let emb = HashingEmbedder::new(DEFAULT_TEST_DIM, 0).unwrap();
        let store = MemoryStore::new("p", DEFAULT_TEST_DIM, emb.provider_id());
        let cfg = RetrievalConfig::default();
        let templates = Templates::builtin();
        let run = |reply: String| {
            let src = ScriptedSource::new("x", ScriptedFixture::new(vec![], reply));
            let ex = Extraction {
                extractor: &src,
                factory: MemoryFactory { store: &store, embedder: &emb, retrieval: &cfg, step: 0 },
                templates: &templates,
                temperature: 0.7,
            };
            extract_preference(&ex, &task(), "win", "lose")
        };
        let one = run(pref_block(1)).unwrap();
        assert_eq!(one.len(), 1);
        let m = &one[0];
        assert_eq!(m.kind, MemoryKind::Preference);
        assert_eq!(m.title, "format adherence");
        assert_eq!(m.source_level, SourceLevel::PairwiseJudge);
        match &m.content {
            MemoryContent::Preference(p) => {
                assert_eq!(p.trigger, "When the user forbids numbered lists 1");
                assert_eq!(p.comparison, "Use bullets or prose instead of numbers.");
            }
            other => panic!("{other:?}"),
        }
        let back: Memory = serde_json::from_str(&serde_json::to_string(m).unwrap()).unwrap();
        assert_eq!(&back, m);

        let four: String = (1..=4).map(pref_block).collect();
        assert_eq!(run(four).unwrap().len(), 3);
        assert!(matches!(run("no rules today".into()), Err(Error::ExtractionParseError(_))));
    }
}
