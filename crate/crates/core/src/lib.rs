//! Memory engine for frozen-backbone agents.
//!
//! Memories carry a Gaussian utility posterior. Retrieval fuses cosine
//! similarity with a Thompson sample from that posterior, and each task's
//! advantage over memory-free inference updates the posteriors of what was
//! retrieved. Failures escalate through a teacher cascade to mint corrective
//! memories; a curator keeps the store compact.

pub mod cascade;
pub mod config;
pub mod consolidation;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod factory;
pub mod feedback;
pub mod fixtures;
pub mod model;
pub mod persist;
pub mod preference;
pub mod prompts;
pub mod retrieval;
pub mod rng;
pub mod sim;
pub mod sources;
pub mod store;

pub use cascade::{CascadeConfig, CascadeLevel, CascadeStats};
pub use config::RunConfig;
pub use consolidation::{ConsolidationConfig, CurationAction, CuratorMode};
pub use embedding::{cosine_sim, Embedder, EmbeddingVector, HashingEmbedder};
pub use engine::{amcs, amcs_tasks, Engine, EngineConfig, EngineMode, EngineSources, StreamReport, TaskRecord};
pub use error::{Error, Result, SourceError};
pub use feedback::{bayes_update, UpdateConfig};
pub use model::{
    Memory, MemoryContent, MemoryId, MemoryKind, PreferenceRecord, SourceLevel, TaskInstance, TaskKind, Trajectory,
    UtilityPosterior,
};
pub use persist::{load_store, load_tasks, save_store};
pub use prompts::Templates;
pub use retrieval::{retrieve, RetrievalConfig};
pub use sources::{KnowledgeSource, ScriptedFixture, ScriptedSource};
pub use store::MemoryStore;
