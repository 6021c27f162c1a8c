//! Minting new memories: embed the retrieval text, transfer a prior from the
//! same bank, assign an id.

use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::model::{make_memory, retrieval_text, Memory, MemoryContent, MemoryFields, MemoryKind, SourceLevel};
use crate::prompts::Templates;
use crate::retrieval::{init_posterior, RetrievalConfig};
use crate::sources::{CompletionRequest, KnowledgeSource};
use crate::store::MemoryStore;

/// Parsed memory text before embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryDraft {
    pub kind: MemoryKind,
    pub title: String,
    pub description: String,
    pub content: MemoryContent,
}

pub struct MemoryFactory<'a> {
    pub store: &'a MemoryStore,
    pub embedder: &'a dyn Embedder,
    pub retrieval: &'a RetrievalConfig,
    pub step: u64,
}

impl MemoryFactory<'_> {
    pub fn build(&self, draft: MemoryDraft, source_level: SourceLevel) -> Result<Memory> {
        let embedding = self.embedder.embed(&retrieval_text(&draft.title, &draft.description))?;
        if embedding.dim() != self.store.embed_dim() {
            return Err(Error::DimensionMismatch { expected: self.store.embed_dim(), actual: embedding.dim() });
        }
        let posterior = init_posterior(&embedding, self.store.bank(draft.kind), self.retrieval)?;
        make_memory(
            self.store.ids(),
            MemoryFields {
                kind: draft.kind,
                title: draft.title,
                description: draft.description,
                content: draft.content,
                embedding,
                posterior,
                source_level,
                step: self.step,
            },
        )
    }
}

/// Everything an extraction call needs besides its inputs.
pub struct Extraction<'a> {
    pub extractor: &'a dyn KnowledgeSource,
    pub factory: MemoryFactory<'a>,
    pub templates: &'a Templates,
    pub temperature: f64,
}

impl Extraction<'_> {
    pub(crate) fn ask(&self, prompt: String, rng_tag: String) -> Result<String> {
        let request = CompletionRequest::new(prompt, self.temperature, rng_tag);
        Ok(self.extractor.complete(&request)?)
    }
}
