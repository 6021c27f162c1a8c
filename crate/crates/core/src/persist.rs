//! On-disk formats: the JSONL memory store and JSONL task files.
//!
//! A store file is a header line followed by one memory per line. Writes go
//! to a temporary file in the target directory and are renamed into place,
//! under an advisory lock on a sibling `.lock` file.

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::model::{Memory, MemoryContent, MemoryId, MemoryKind, SourceLevel, TaskInstance, UtilityPosterior};
use crate::store::MemoryStore;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreHeader {
    pub format_version: u32,
    pub embed_dim: usize,
    pub embed_provider_id: String,
    pub run_id: String,
    /// Sequence number of the next minted id.
    pub next_seq: u64,
}

/// One memory as a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredMemory {
    pub id: MemoryId,
    pub kind: MemoryKind,
    pub title: String,
    pub description: String,
    pub content: MemoryContent,
    pub embedding: Vec<f64>,
    pub mu: f64,
    pub sigma_sq: f64,
    pub feedback_count: u64,
    pub source_level: SourceLevel,
    pub created_at: u64,
}

impl From<&Memory> for StoredMemory {
    fn from(m: &Memory) -> Self {
        Self {
            id: m.id.clone(),
            kind: m.kind,
            title: m.title.clone(),
            description: m.description.clone(),
            content: m.content.clone(),
            embedding: m.embedding.as_slice().to_vec(),
            mu: m.posterior.mean,
            sigma_sq: m.posterior.variance,
            feedback_count: m.feedback_count,
            source_level: m.source_level,
            created_at: m.created_at,
        }
    }
}

impl StoredMemory {
    fn into_memory(self) -> Result<Memory> {
        let m = Memory {
            id: self.id,
            kind: self.kind,
            title: self.title,
            description: self.description,
            content: self.content,
            embedding: EmbeddingVector::from_unit(self.embedding)?,
            posterior: UtilityPosterior::new(self.mu, self.sigma_sq)?,
            created_at: self.created_at,
            feedback_count: self.feedback_count,
            source_level: self.source_level,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Serializes `store` to the JSONL format.
pub fn store_to_jsonl(store: &MemoryStore) -> String {
    let header = StoreHeader {
        format_version: STORE_FORMAT_VERSION,
        embed_dim: store.embed_dim(),
        embed_provider_id: store.provider_id().to_string(),
        run_id: store.ids().run_id().to_string(),
        next_seq: store.ids().peek(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for m in store.iter() {
        out.push_str(&serde_json::to_string(&StoredMemory::from(m)).expect("memory serializes"));
        out.push('\n');
    }
    out
}

/// Parses the JSONL format. Line numbers in errors are 1-based.
pub fn store_from_jsonl(text: &str) -> Result<MemoryStore> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::CorruptLine { line: 1, reason: "missing header".into() })?;
    let version: serde_json::Value =
        serde_json::from_str(first).map_err(|e| Error::CorruptLine { line: 1, reason: e.to_string() })?;
    match version.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(STORE_FORMAT_VERSION) => {}
        other => {
            return Err(Error::FormatVersionMismatch(format!(
                "store format_version {other:?}, expected {STORE_FORMAT_VERSION}"
            )))
        }
    }
    let header: StoreHeader =
        serde_json::from_value(version).map_err(|e| Error::CorruptLine { line: 1, reason: e.to_string() })?;
    let mut store =
        MemoryStore::with_next_id(header.run_id, header.next_seq, header.embed_dim, header.embed_provider_id);
    for (i, line) in lines {
        let line_no = i + 1;
        let corrupt = |reason: String| Error::CorruptLine { line: line_no, reason };
        let stored: StoredMemory = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        if stored.embedding.len() != header.embed_dim {
            return Err(Error::FormatVersionMismatch(format!(
                "line {line_no}: embedding has {} dimensions, header declares {}",
                stored.embedding.len(),
                header.embed_dim
            )));
        }
        let memory = stored.into_memory().map_err(|e| corrupt(e.to_string()))?;
        store.insert(memory).map_err(|e| corrupt(e.to_string()))?;
    }
    Ok(store)
}

fn lock_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".lock");
    path.with_file_name(name)
}

/// Holds an exclusive advisory lock for the lifetime of the guard.
struct WriteLock(File);

impl WriteLock {
    fn acquire(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(lock_path(path))?;
        file.try_lock().map_err(|e| match e {
            std::fs::TryLockError::WouldBlock => {
                Error::Io(std::io::Error::new(std::io::ErrorKind::WouldBlock, format!("{} is locked", path.display())))
            }
            std::fs::TryLockError::Error(e) => Error::Io(e),
        })?;
        Ok(Self(file))
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

/// Writes `contents` to `path` atomically.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let _lock = WriteLock::acquire(path)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        w.write_all(contents)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_store(store: &MemoryStore, path: &Path) -> Result<()> {
    write_atomic(path, store_to_jsonl(store).as_bytes())
}

pub fn load_store(path: &Path) -> Result<MemoryStore> {
    store_from_jsonl(&std::fs::read_to_string(path)?)
}

/// Parses a task file: one `{id, kind, prompt, reference?}` object per line.
/// Blank lines and `#` comments are skipped.
pub fn tasks_from_jsonl(text: &str) -> Result<Vec<TaskInstance>> {
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let corrupt = |reason: String| Error::CorruptLine { line: i + 1, reason };
        let task: TaskInstance = serde_json::from_str(trimmed).map_err(|e| corrupt(e.to_string()))?;
        task.validate().map_err(|e| corrupt(e.to_string()))?;
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn tasks_to_jsonl(tasks: &[TaskInstance]) -> String {
    tasks.iter().map(|t| serde_json::to_string(t).expect("task serializes") + "\n").collect()
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskInstance>> {
    tasks_from_jsonl(&std::fs::read_to_string(path)?)
}
