//! Prompt templates and their renderers.
//!
//! Templates ship as plain-text resources under `templates/`. Each carries a
//! set of placeholders and anchor phrases that parsers downstream rely on;
//! [`verify_templates`] fails loudly if either drifts.

use crate::error::{Error, Result};
use crate::model::{Memory, MemoryContent, MemoryKind};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateId {
    SuccessExtraction,
    FailureExtraction,
    PairwiseExtraction,
    SolveMath,
    StrategiesSection,
    StrategyItem,
    SolveOpen,
    RulesSection,
    PreferenceItem,
    Consolidation,
    JudgePair,
    Router,
}

impl TemplateId {
    pub const ALL: [TemplateId; 12] = [
        Self::SuccessExtraction,
        Self::FailureExtraction,
        Self::PairwiseExtraction,
        Self::SolveMath,
        Self::StrategiesSection,
        Self::StrategyItem,
        Self::SolveOpen,
        Self::RulesSection,
        Self::PreferenceItem,
        Self::Consolidation,
        Self::JudgePair,
        Self::Router,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Self::SuccessExtraction => "success_extraction.txt",
            Self::FailureExtraction => "failure_extraction.txt",
            Self::PairwiseExtraction => "pairwise_extraction.txt",
            Self::SolveMath => "solve_math.txt",
            Self::StrategiesSection => "strategies_section.txt",
            Self::StrategyItem => "strategy_item.txt",
            Self::SolveOpen => "solve_open.txt",
            Self::RulesSection => "rules_section.txt",
            Self::PreferenceItem => "preference_item.txt",
            Self::Consolidation => "consolidation.txt",
            Self::JudgePair => "judge_pair.txt",
            Self::Router => "router.txt",
        }
    }

    pub fn builtin(self) -> &'static str {
        match self {
            Self::SuccessExtraction => include_str!("../templates/success_extraction.txt"),
            Self::FailureExtraction => include_str!("../templates/failure_extraction.txt"),
            Self::PairwiseExtraction => include_str!("../templates/pairwise_extraction.txt"),
            Self::SolveMath => include_str!("../templates/solve_math.txt"),
            Self::StrategiesSection => include_str!("../templates/strategies_section.txt"),
            Self::StrategyItem => include_str!("../templates/strategy_item.txt"),
            Self::SolveOpen => include_str!("../templates/solve_open.txt"),
            Self::RulesSection => include_str!("../templates/rules_section.txt"),
            Self::PreferenceItem => include_str!("../templates/preference_item.txt"),
            Self::Consolidation => include_str!("../templates/consolidation.txt"),
            Self::JudgePair => include_str!("../templates/judge_pair.txt"),
            Self::Router => include_str!("../templates/router.txt"),
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            Self::SuccessExtraction => &["question", "reasoning"],
            Self::FailureExtraction => &["question", "reasoning", "reasoning_teacher", "max_items"],
            Self::PairwiseExtraction => &["context_text", "r1", "r2"],
            Self::SolveMath => &["strategies_section", "question"],
            Self::StrategiesSection => &["strategies"],
            Self::StrategyItem => &["index", "title", "type", "description", "content"],
            Self::SolveOpen => &["rules_section", "question"],
            Self::RulesSection => &["rules"],
            Self::PreferenceItem => &["index", "trigger", "dimension", "comparison"],
            Self::Consolidation => &["question", "reasoning", "new_memories", "retrieved_memories"],
            Self::JudgePair => &["question", "response_1", "response_2"],
            Self::Router => &["question"],
        }
    }

    /// Phrases that must appear verbatim.
    pub fn anchors(self) -> &'static [&'static str] {
        match self {
            Self::SuccessExtraction => &["Produce only 1 memory", "MEMORY 1:", "TITLE:", "DESCRIPTION:", "CONTENT:"],
            Self::FailureExtraction => {
                &["Identify the First Bifurcation Point", "MEMORY 1:", "TITLE:", "DESCRIPTION:", "CONTENT:"]
            }
            Self::PairwiseExtraction => {
                &["Return 1 to 3 rules total", "MEMORY 1:", "TRIGGER:", "DIMENSION:", "COMPARISON:"]
            }
            Self::SolveMath => &["Problem: ", "Please put your final answer within \\boxed{}."],
            Self::StrategiesSection => &["=== Retrieved Problem-Solving Strategies ===", "=== End Strategies ==="],
            Self::StrategyItem => &["[Strategy ", "Type: ", "Description: "],
            Self::SolveOpen => {
                &["You are a helpful assistant. Please answer following open-ended problems.", "Problem: "]
            }
            Self::RulesSection => &["If relevant, use these instruction-following rules as guidance:"],
            Self::PreferenceItem => &["Preference ", ". For \""],
            Self::Consolidation => {
                &["Elimination (Redundancy Check)", "PROBLEM THAT SUCCEED:", "MEMORY 1:", "TITLE:", "CONTENT:"]
            }
            Self::JudgePair => &["WINNER: 1", "WINNER: 2", "WINNER: TIE"],
            Self::Router => &["VERIFIABLE", "NON-VERIFIABLE"],
        }
    }
}

/// Checks one template text against its contract.
pub fn check_template(id: TemplateId, text: &str) -> Result<()> {
    let drift = |missing: String| Error::TemplateDrift { template: id.file_name().to_string(), missing };
    for p in id.placeholders() {
        let token = format!("{{{p}}}");
        if !text.contains(&token) {
            return Err(drift(token));
        }
    }
    for a in id.anchors() {
        if !text.contains(a) {
            return Err(drift((*a).to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateReport {
    /// (file name, placeholders checked, anchors checked)
    pub checked: Vec<(String, usize, usize)>,
}

/// Verifies every built-in template.
pub fn verify_templates() -> Result<TemplateReport> {
    Templates::builtin().verify()
}

/// A full template set. Built-ins by default; a directory may override any
/// subset, and overrides are verified on load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    texts: BTreeMap<TemplateId, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self { texts: TemplateId::ALL.iter().map(|&id| (id, id.builtin().to_string())).collect() }
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.join(id.file_name());
            if path.exists() {
                t.texts.insert(id, std::fs::read_to_string(&path)?);
            }
        }
        t.verify()?;
        Ok(t)
    }

    pub fn with_override(mut self, id: TemplateId, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        check_template(id, &text)?;
        self.texts.insert(id, text);
        Ok(self)
    }

    pub fn get(&self, id: TemplateId) -> &str {
        &self.texts[&id]
    }

    pub fn verify(&self) -> Result<TemplateReport> {
        let mut checked = Vec::new();
        for id in TemplateId::ALL {
            check_template(id, self.get(id))?;
            checked.push((id.file_name().to_string(), id.placeholders().len(), id.anchors().len()));
        }
        Ok(TemplateReport { checked })
    }

    pub fn success_extraction(&self, question: &str, reasoning: &str) -> String {
        render(self.get(TemplateId::SuccessExtraction), &[("question", question), ("reasoning", reasoning)])
    }

    pub fn failure_extraction(
        &self,
        question: &str,
        reasoning: &str,
        reasoning_teacher: &str,
        max_items: usize,
    ) -> String {
        render(
            self.get(TemplateId::FailureExtraction),
            &[
                ("question", question),
                ("reasoning", reasoning),
                ("reasoning_teacher", reasoning_teacher),
                ("max_items", &max_items.to_string()),
            ],
        )
    }

    pub fn pairwise_extraction(&self, context_text: &str, better: &str, worse: &str) -> String {
        render(
            self.get(TemplateId::PairwiseExtraction),
            &[("context_text", context_text), ("r1", better), ("r2", worse)],
        )
    }

    /// Math solving prompt. With no memories the strategies section is omitted.
    pub fn solve_math(&self, question: &str, memories: &[&Memory]) -> String {
        let section = if memories.is_empty() {
            String::new()
        } else {
            let items: String = memories
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    render(
                        self.get(TemplateId::StrategyItem),
                        &[
                            ("index", &(i + 1).to_string()),
                            ("title", &m.title),
                            ("type", strategy_type(m.kind)),
                            ("description", &m.description),
                            ("content", &m.content.render()),
                        ],
                    )
                })
                .collect();
            render(self.get(TemplateId::StrategiesSection), &[("strategies", &items)])
        };
        render(self.get(TemplateId::SolveMath), &[("strategies_section", &section), ("question", question)])
    }

    /// Open-ended solving prompt. With no memories the rules section is omitted.
    pub fn solve_open(&self, question: &str, memories: &[&Memory]) -> String {
        let section = if memories.is_empty() {
            String::new()
        } else {
            let items: String = memories
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let (trigger, dimension, comparison) = match &m.content {
                        MemoryContent::Preference(p) => (p.trigger.clone(), p.dimension.clone(), p.comparison.clone()),
                        MemoryContent::Text(t) => (m.description.clone(), m.title.clone(), t.clone()),
                    };
                    render(
                        self.get(TemplateId::PreferenceItem),
                        &[
                            ("index", &(i + 1).to_string()),
                            ("trigger", &trigger),
                            ("dimension", &dimension),
                            ("comparison", &comparison),
                        ],
                    )
                })
                .collect();
            render(self.get(TemplateId::RulesSection), &[("rules", &items)])
        };
        render(self.get(TemplateId::SolveOpen), &[("rules_section", &section), ("question", question)])
    }

    pub fn consolidation(&self, question: &str, reasoning: &str, new: &[&Memory], retrieved: &[&Memory]) -> String {
        render(
            self.get(TemplateId::Consolidation),
            &[
                ("question", question),
                ("reasoning", reasoning),
                ("new_memories", &memory_blocks(new)),
                ("retrieved_memories", &memory_blocks(retrieved)),
            ],
        )
    }

    pub fn judge_pair(&self, question: &str, first: &str, second: &str) -> String {
        render(
            self.get(TemplateId::JudgePair),
            &[("question", question), ("response_1", first), ("response_2", second)],
        )
    }

    pub fn router(&self, question: &str) -> String {
        render(self.get(TemplateId::Router), &[("question", question)])
    }
}

fn strategy_type(kind: MemoryKind) -> &'static str {
    match kind {
        MemoryKind::GlobalProcedural => "Global Solution Flow",
        MemoryKind::LocalCorrective => "Local Correction",
        MemoryKind::Preference => "Preference",
    }
}

/// Memories in the `MEMORY i:` / `TITLE:` / `DESCRIPTION:` / `CONTENT:`
/// block format. Preference memories map dimension to TITLE, trigger to
/// DESCRIPTION and comparison to CONTENT.
pub fn memory_blocks(memories: &[&Memory]) -> String {
    if memories.is_empty() {
        return "(none)".to_string();
    }
    let blocks: Vec<String> = memories
        .iter()
        .enumerate()
        .map(|(i, m)| {
            format!(
                "MEMORY {}:\nTITLE: {}\nDESCRIPTION: {}\nCONTENT: {}",
                i + 1,
                m.title,
                m.description,
                m.content.render()
            )
        })
        .collect();
    blocks.join("\n\n")
}

/// Single-pass substitution of `{name}` for each provided name. Unknown
/// braces are left intact, and substituted values are never rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
