use super::{CompletionRequest, KnowledgeSource};
use crate::error::{Error, Result, SourceError};
use crate::rng::unit_hash;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Mutex;

/// Predicate over the prompt text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptMatcher {
    Contains(String),
    ContainsAll(Vec<String>),
    /// Hex SHA-256 of the exact prompt.
    PromptSha256(String),
    Any,
}

impl PromptMatcher {
    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Self::Contains(s) => prompt.contains(s.as_str()),
            Self::ContainsAll(all) => all.iter().all(|s| prompt.contains(s.as_str())),
            Self::PromptSha256(h) => prompt_digest(prompt).eq_ignore_ascii_case(h),
            Self::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedResponse {
    pub text: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// A rule answers with one of its responses. With several, the choice is a
/// deterministic function of (source role, prompt, rng tag) distributed
/// according to the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedRule {
    pub matcher: PromptMatcher,
    pub responses: Vec<WeightedResponse>,
}

impl ScriptedRule {
    pub fn new(matcher: PromptMatcher, response: impl Into<String>) -> Self {
        Self { matcher, responses: vec![WeightedResponse { text: response.into(), weight: 1.0 }] }
    }

    pub fn weighted(matcher: PromptMatcher, responses: Vec<(String, f64)>) -> Self {
        Self {
            matcher,
            responses: responses.into_iter().map(|(text, weight)| WeightedResponse { text, weight }).collect(),
        }
    }

    fn pick(&self, u: f64) -> &str {
        let total: f64 = self.responses.iter().map(|r| r.weight).sum();
        let mut acc = 0.0;
        for r in &self.responses {
            acc += r.weight / total;
            if u < acc {
                return &r.text;
            }
        }
        &self.responses.last().expect("rule has a response").text
    }
}

/// Ordered rules plus a default. First matching rule wins.
///
/// On disk this is JSONL, one rule per line:
///
/// ```text
/// {"contains": "2+2", "response": "4"}
/// {"contains_all": ["[Strategy", "Problem: 7"], "responses": [{"text": "\\boxed{7}", "weight": 0.8}, {"text": "\\boxed{1}", "weight": 0.2}]}
/// {"sha256": "<hex digest of the exact prompt>", "response": "..."}
/// {"any": true, "response": "..."}
/// {"default": "UNKNOWN"}
/// ```
///
/// Blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScriptedFixture {
    pub rules: Vec<ScriptedRule>,
    pub default: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contains_all: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    any: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    responses: Option<Vec<WeightedResponse>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<String>,
}

impl ScriptedFixture {
    pub fn new(rules: Vec<ScriptedRule>, default: impl Into<String>) -> Self {
        Self { rules, default: default.into() }
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut fixture = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let corrupt = |reason: String| Error::CorruptLine { line: line_no, reason };
            let raw: RawLine = serde_json::from_str(trimmed).map_err(|e| corrupt(e.to_string()))?;
            if let Some(d) = raw.default {
                fixture.default = d;
                continue;
            }
            let matchers = [
                raw.contains.map(PromptMatcher::Contains),
                raw.contains_all.map(PromptMatcher::ContainsAll),
                raw.sha256.map(PromptMatcher::PromptSha256),
                raw.any.filter(|a| *a).map(|_| PromptMatcher::Any),
            ];
            let mut present = matchers.into_iter().flatten();
            let matcher = present.next().ok_or_else(|| corrupt("rule has no matcher".into()))?;
            if present.next().is_some() {
                return Err(corrupt("rule has more than one matcher".into()));
            }
            let responses = match (raw.response, raw.responses) {
                (Some(r), None) => vec![WeightedResponse { text: r, weight: 1.0 }],
                (None, Some(rs)) if !rs.is_empty() => rs,
                _ => return Err(corrupt("rule needs exactly one of response / responses".into())),
            };
            if responses.iter().any(|r| !(r.weight > 0.0 && r.weight.is_finite())) {
                return Err(corrupt("response weights must be positive".into()));
            }
            fixture.rules.push(ScriptedRule { matcher, responses });
        }
        Ok(fixture)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rule in &self.rules {
            let mut raw = RawLine::default();
            match &rule.matcher {
                PromptMatcher::Contains(s) => raw.contains = Some(s.clone()),
                PromptMatcher::ContainsAll(v) => raw.contains_all = Some(v.clone()),
                PromptMatcher::PromptSha256(h) => raw.sha256 = Some(h.clone()),
                PromptMatcher::Any => raw.any = Some(true),
            }
            if let [single] = rule.responses.as_slice() {
                if single.weight == 1.0 {
                    raw.response = Some(single.text.clone());
                }
            }
            if raw.response.is_none() {
                raw.responses = Some(rule.responses.clone());
            }
            out.push_str(&serde_json::to_string(&raw).expect("rule serializes"));
            out.push('\n');
        }
        let default = RawLine { default: Some(self.default.clone()), ..Default::default() };
        out.push_str(&serde_json::to_string(&default).expect("default serializes"));
        out.push('\n');
        out
    }
}

/// One logged call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub prompt_sha256: String,
    pub rng_tag: String,
    /// Index of the rule that answered, `None` for the default.
    pub rule: Option<usize>,
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// A fixture-driven source. Deterministic given (prompt, rng tag).
#[derive(Debug)]
pub struct ScriptedSource {
    role: String,
    fixture: ScriptedFixture,
    cost_weight: f64,
    log: Mutex<Vec<CallRecord>>,
}

impl ScriptedSource {
    pub fn new(role: impl Into<String>, fixture: ScriptedFixture) -> Self {
        Self { role: role.into(), fixture, cost_weight: 1.0, log: Mutex::new(Vec::new()) }
    }

    pub fn with_cost_weight(mut self, w: f64) -> Self {
        self.cost_weight = w;
        self
    }

    pub fn fixture(&self) -> &ScriptedFixture {
        &self.fixture
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("call log poisoned").len()
    }

    /// Answers `prompt` without going through the trait.
    pub fn scripted_complete(&self, prompt: &str, rng_tag: &str) -> String {
        let hit = self.fixture.rules.iter().enumerate().find(|(_, r)| r.matcher.matches(prompt));
        let (rule, text) = match hit {
            Some((i, r)) => {
                let u = unit_hash(&[self.role.as_bytes(), prompt.as_bytes(), rng_tag.as_bytes()]);
                (Some(i), r.pick(u).to_string())
            }
            None => (None, self.fixture.default.clone()),
        };
        self.log.lock().expect("call log poisoned").push(CallRecord {
            prompt_sha256: prompt_digest(prompt),
            rng_tag: rng_tag.to_string(),
            rule,
        });
        text
    }
}

impl KnowledgeSource for ScriptedSource {
    fn complete(&self, request: &CompletionRequest) -> Result<String, SourceError> {
        Ok(self.scripted_complete(&request.prompt, &request.rng_tag))
    }

    fn role(&self) -> &str {
        &self.role
    }

    fn cost_weight(&self) -> f64 {
        self.cost_weight
    }
}
