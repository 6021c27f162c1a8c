//! Run configuration: engine settings, the embedder, one source per role
//! and dataset paths, read from TOML. Relative paths resolve against the
//! config file's directory and must exist at load time.

use crate::embedding::{Embedder, HashingEmbedder, DEFAULT_TEST_DIM};
use crate::engine::{Engine, EngineConfig, EngineMode, EngineSources};
use crate::error::{Error, Result};
use crate::prompts::Templates;
use crate::sources::{
    ChatEndpointConfig, EmbeddingEndpointConfig, HttpChatSource, HttpEmbedder, SandboxConfig, ScriptedFixture,
    ScriptedSource, SharedSource, ToolAugmentedSource,
};
use crate::store::MemoryStore;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

fn default_dim() -> usize {
    DEFAULT_TEST_DIM
}

fn default_cost() -> f64 {
    1.0
}

fn default_rounds() -> u32 {
    ToolAugmentedSource::DEFAULT_ROUNDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderSpec {
    Hashing {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Http(EmbeddingEndpointConfig),
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self::Hashing { dim: DEFAULT_TEST_DIM, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Scripted {
        fixture: PathBuf,
        #[serde(default = "default_cost")]
        cost_weight: f64,
    },
    Http(ChatEndpointConfig),
    /// Wraps `inner` in the sandboxed code-execution loop.
    Tool {
        inner: Box<SourceSpec>,
        #[serde(default)]
        sandbox: SandboxConfig,
        #[serde(default = "default_rounds")]
        max_rounds: u32,
    },
}

impl SourceSpec {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            Self::Scripted { fixture, .. } => vec![fixture],
            Self::Http(_) => vec![],
            Self::Tool { inner, .. } => inner.paths_mut(),
        }
    }

    pub fn build(&self, role: &str) -> Result<SharedSource> {
        Ok(match self {
            Self::Scripted { fixture, cost_weight } => {
                Arc::new(ScriptedSource::new(role, ScriptedFixture::load(fixture)?).with_cost_weight(*cost_weight))
            }
            Self::Http(cfg) => Arc::new(HttpChatSource::new(role, cfg.clone())?),
            Self::Tool { inner, sandbox, max_rounds } => Arc::new(
                ToolAugmentedSource::new(role, inner.build(role)?, sandbox.clone()).with_max_rounds(*max_rounds),
            ),
        })
    }
}

/// Sources by role. A missing role falls back to `default`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourcesSpec {
    pub default: Option<SourceSpec>,
    pub actor: Option<SourceSpec>,
    pub teacher: Option<SourceSpec>,
    pub tool_teacher: Option<SourceSpec>,
    pub expert: Option<SourceSpec>,
    pub judge: Option<SourceSpec>,
    pub extractor: Option<SourceSpec>,
    pub curator: Option<SourceSpec>,
}

pub const ROLES: [&str; 7] = ["actor", "teacher", "tool_teacher", "expert", "judge", "extractor", "curator"];

impl SourcesSpec {
    pub fn role(&self, role: &str) -> Option<&SourceSpec> {
        let own = match role {
            "actor" => &self.actor,
            "teacher" => &self.teacher,
            "tool_teacher" => &self.tool_teacher,
            "expert" => &self.expert,
            "judge" => &self.judge,
            "extractor" => &self.extractor,
            "curator" => &self.curator,
            _ => return None,
        };
        own.as_ref().or(self.default.as_ref())
    }

    fn all_mut(&mut self) -> impl Iterator<Item = &mut SourceSpec> {
        [
            &mut self.default,
            &mut self.actor,
            &mut self.teacher,
            &mut self.tool_teacher,
            &mut self.expert,
            &mut self.judge,
            &mut self.extractor,
            &mut self.curator,
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub train_tasks: Option<PathBuf>,
    pub test_tasks: Option<PathBuf>,
    /// Directory of template overrides; built-in templates otherwise.
    pub templates_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub embedder: EmbedderSpec,
    pub sources: SourcesSpec,
    #[serde(default)]
    pub data: DataSpec,
}

/// Owned sources for every role.
pub struct BuiltSources {
    roles: Vec<SharedSource>,
}

impl BuiltSources {
    pub fn engine_sources(&self) -> EngineSources<'_> {
        let r = |i: usize| self.roles[i].as_ref();
        EngineSources {
            actor: r(0),
            teacher: r(1),
            tool_teacher: r(2),
            expert: r(3),
            judge: r(4),
            extractor: r(5),
            curator: r(6),
        }
    }
}

impl RunConfig {
    /// Parses TOML text; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        for spec in cfg.sources.all_mut() {
            spec.paths_mut().into_iter().for_each(resolve);
        }
        [&mut cfg.data.train_tasks, &mut cfg.data.test_tasks, &mut cfg.data.templates_dir]
            .into_iter()
            .flatten()
            .for_each(resolve);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        for role in ROLES {
            if self.sources.role(role).is_none() {
                return Err(Error::Config(format!("no source for role {role} and no default")));
            }
        }
        let mut paths: Vec<&Path> = Vec::new();
        let mut specs: Vec<&SourceSpec> = self.sources.default.iter().collect();
        specs.extend(ROLES.iter().filter_map(|r| self.sources.role(r)));
        while let Some(spec) = specs.pop() {
            match spec {
                SourceSpec::Scripted { fixture, cost_weight } => {
                    paths.push(fixture);
                    if cost_weight.is_nan() || *cost_weight <= 0.0 {
                        return Err(Error::Config(format!("cost_weight {cost_weight} must be > 0")));
                    }
                }
                SourceSpec::Http(cfg) => cfg.validate()?,
                SourceSpec::Tool { inner, max_rounds, .. } => {
                    if *max_rounds == 0 {
                        return Err(Error::Config("max_rounds must be at least 1".into()));
                    }
                    specs.push(inner);
                }
            }
        }
        paths.extend(
            [&self.data.train_tasks, &self.data.test_tasks, &self.data.templates_dir]
                .into_iter()
                .flatten()
                .map(PathBuf::as_path),
        );
        if let Some(missing) = paths.iter().find(|p| !p.exists()) {
            return Err(Error::Config(format!("referenced path {} does not exist", missing.display())));
        }
        if let EmbedderSpec::Hashing { dim: 0, .. } = self.embedder {
            return Err(Error::Config("embedder dim must be positive".into()));
        }
        Ok(())
    }

    pub fn build_sources(&self) -> Result<BuiltSources> {
        let roles = ROLES
            .iter()
            .map(|role| self.sources.role(role).expect("validated").build(role))
            .collect::<Result<Vec<_>>>()?;
        Ok(BuiltSources { roles })
    }

    pub fn build_embedder(&self) -> Result<Box<dyn Embedder>> {
        Ok(match &self.embedder {
            EmbedderSpec::Hashing { dim, seed } => Box::new(HashingEmbedder::new(*dim, *seed)?),
            EmbedderSpec::Http(cfg) => Box::new(HttpEmbedder::new(cfg.clone())?),
        })
    }

    pub fn templates(&self) -> Result<Templates> {
        match &self.data.templates_dir {
            Some(dir) => Templates::load_dir(dir),
            None => Ok(Templates::builtin()),
        }
    }
}

/// A loaded configuration with its sources, embedder and templates built.
pub struct Runtime {
    pub config: RunConfig,
    sources: BuiltSources,
    embedder: Box<dyn Embedder>,
    templates: Templates,
}

impl Runtime {
    pub fn new(config: RunConfig) -> Result<Self> {
        let sources = config.build_sources()?;
        let embedder = config.build_embedder()?;
        let templates = config.templates()?;
        Ok(Self { config, sources, embedder, templates })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(RunConfig::load(path)?)
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    /// An engine over the configured settings, switched to `mode`.
    pub fn engine(&self, mode: EngineMode) -> Result<Engine<'_>> {
        let config = EngineConfig { mode, ..self.config.engine.clone() };
        Engine::new(self.sources.engine_sources(), self.embedder.as_ref(), &self.templates, config)
    }

    /// An empty store bound to the configured embedder.
    pub fn empty_store(&self, run_id: &str) -> MemoryStore {
        MemoryStore::new(run_id, self.embedder.dimension(), self.embedder.provider_id())
    }

    /// Run id used when none is given: derived from the engine seed.
    pub fn default_run_id(&self) -> String {
        format!("run-{}", self.config.engine.seed)
    }
}
