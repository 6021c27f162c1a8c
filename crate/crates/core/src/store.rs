//! The memory store: three banks keyed by memory kind, one id space.
//!
//! Writes go through `&mut self` (single writer); readers borrow. A frozen
//! store rejects every mutation with [`Error::FrozenStoreMutation`].

use crate::error::{Error, Result};
use crate::model::{IdGenerator, Memory, MemoryId, MemoryKind};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct MemoryStore {
    ids: IdGenerator,
    memories: BTreeMap<MemoryId, Memory>,
    embed_dim: usize,
    provider_id: String,
    frozen: bool,
}

impl MemoryStore {
    pub fn new(run_id: impl Into<String>, embed_dim: usize, provider_id: impl Into<String>) -> Self {
        Self::with_next_id(run_id, 0, embed_dim, provider_id)
    }

    pub fn with_next_id(
        run_id: impl Into<String>,
        next_id: u64,
        embed_dim: usize,
        provider_id: impl Into<String>,
    ) -> Self {
        Self {
            ids: IdGenerator::new(run_id, next_id),
            memories: BTreeMap::new(),
            embed_dim,
            provider_id: provider_id.into(),
            frozen: false,
        }
    }

    pub fn ids(&self) -> &IdGenerator {
        &self.ids
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn len(&self) -> usize {
        self.memories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memories.is_empty()
    }

    pub fn get(&self, id: &MemoryId) -> Option<&Memory> {
        self.memories.get(id)
    }

    pub fn contains(&self, id: &MemoryId) -> bool {
        self.memories.contains_key(id)
    }

    /// All memories in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Memory> {
        self.memories.values()
    }

    /// Memories of one bank in ascending id order.
    pub fn bank(&self, kind: MemoryKind) -> impl Iterator<Item = &Memory> {
        self.memories.values().filter(move |m| m.kind == kind)
    }

    pub fn bank_len(&self, kind: MemoryKind) -> usize {
        self.bank(kind).count()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn ensure_writable(&self) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenStoreMutation);
        }
        Ok(())
    }

    pub fn insert(&mut self, memory: Memory) -> Result<()> {
        self.ensure_writable()?;
        memory.validate()?;
        if memory.embedding.dim() != self.embed_dim {
            return Err(Error::DimensionMismatch { expected: self.embed_dim, actual: memory.embedding.dim() });
        }
        if self.memories.contains_key(&memory.id) {
            return Err(Error::SchemaViolation(format!("duplicate memory id {}", memory.id)));
        }
        self.memories.insert(memory.id.clone(), memory);
        Ok(())
    }

    pub fn remove(&mut self, id: &MemoryId) -> Result<Memory> {
        self.ensure_writable()?;
        self.memories.remove(id).ok_or_else(|| Error::UnknownMemoryId(id.clone()))
    }

    /// Mutable access for in-place updates; fails on frozen stores.
    pub fn get_mut(&mut self, id: &MemoryId) -> Result<&mut Memory> {
        self.ensure_writable()?;
        self.memories.get_mut(id).ok_or_else(|| Error::UnknownMemoryId(id.clone()))
    }

    /// SHA-256 over the canonical JSON of every memory, in id order.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for m in self.memories.values() {
            hasher.update(serde_json::to_vec(m).expect("memory serializes"));
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}
