//! External intelligences behind one text-in/text-out contract.
//!
//! Actor, teachers, expert, judge, extractor, curator and router differ only
//! in the prompts they receive. Implementations: [`ScriptedSource`] for
//! fixtures, [`HttpChatSource`] for chat-completions endpoints,
//! [`ToolAugmentedSource`] wrapping any source in a sandboxed code loop, and
//! [`FnSource`] for closures.

mod http;
mod scripted;
mod tool;

pub use http::{ChatEndpointConfig, EmbeddingEndpointConfig, HttpChatSource, HttpEmbedder};
pub use scripted::{CallRecord, PromptMatcher, ScriptedFixture, ScriptedRule, ScriptedSource, WeightedResponse};
pub use tool::{extract_code_block, run_sandboxed, CodeBlock, SandboxConfig, SandboxOutput, ToolAugmentedSource};

use crate::error::SourceError;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// One completion call.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    /// Threads determinism into scripted sources: two samples of one prompt
    /// with different tags may differ, the same tag always reproduces.
    pub rng_tag: String,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64, rng_tag: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), temperature, rng_tag: rng_tag.into() }
    }
}

pub trait KnowledgeSource: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, SourceError>;

    fn role(&self) -> &str;

    /// Relative cost of one call, used only for reporting.
    fn cost_weight(&self) -> f64 {
        1.0
    }
}

pub type SharedSource = Arc<dyn KnowledgeSource>;

type CompleteFn = dyn Fn(&CompletionRequest) -> Result<String, SourceError> + Send + Sync;

/// A source backed by a closure. Counts its calls.
pub struct FnSource {
    role: String,
    f: Box<CompleteFn>,
    calls: AtomicU64,
}

impl FnSource {
    pub fn new<F>(role: impl Into<String>, f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, SourceError> + Send + Sync + 'static,
    {
        Self { role: role.into(), f: Box::new(f), calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl KnowledgeSource for FnSource {
    fn complete(&self, request: &CompletionRequest) -> Result<String, SourceError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(request)
    }

    fn role(&self) -> &str {
        &self.role
    }
}

impl std::fmt::Debug for FnSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnSource").field("role", &self.role).field("calls", &self.calls()).finish()
    }
}
