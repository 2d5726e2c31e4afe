//! Run configuration, corpus profiling and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analyzer::{Whitelist, WhitelistError};
use crate::dedup::DEFAULT_THRESHOLD;
use crate::extract::SourceCategory;
use crate::fsutil::write_atomic;
use crate::gateway::{
    ChatProvider, Gateway, HttpProfile, HttpProvider, MockProvider, MockScript, RequestLog, RetryPolicy,
    DEFAULT_MAX_IN_FLIGHT,
};
use crate::prompts::PromptSet;
use crate::rag::PipelineConfig;
use crate::retrieval::{
    EmbeddingProvider, HashedBagProvider, HttpEmbeddingProfile, HttpEmbeddingProvider, IndexManifest, DEFAULT_DIM,
};
use crate::sandbox::{ErrorRules, SubprocessExecutor, DEFAULT_LIMIT};
use crate::verify::{ModernizeMode, Thresholds};

pub const DEFAULT_ROOT_SEED: u64 = 0x5eed_0070;
pub const NO_PROVIDER: &str = "none";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderSpec {
    /// Scripted replies from a JSON file; without a script every request fails.
    Mock {
        #[serde(default)]
        script: Option<PathBuf>,
    },
    Http(HttpProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    /// Key into `providers`, or `none`.
    pub provider: String,
    pub providers: BTreeMap<String, ProviderSpec>,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub log: Option<PathBuf>,
    /// Log content lengths instead of prompt and response text.
    pub redact_log: bool,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            provider: NO_PROVIDER.into(),
            providers: BTreeMap::new(),
            retry: RetryPolicy::default(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            log: None,
            redact_log: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub modernize: ModernizeMode,
    pub thresholds: Thresholds,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupSection {
    pub threshold: f64,
}

impl Default for DedupSection {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstructSection {
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSpec {
    Hashed { dim: usize },
    Http(HttpEmbeddingProfile),
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self::Hashed { dim: DEFAULT_DIM }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub embedding: EmbeddingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxSection {
    pub interpreter: PathBuf,
    /// Custom test shim; the bundled one when unset.
    pub shim: Option<PathBuf>,
    pub limit_secs: f64,
    pub rules: Option<PathBuf>,
    pub whitelist: Option<PathBuf>,
}

impl Default for SandboxSection {
    fn default() -> Self {
        Self {
            interpreter: PathBuf::from("python3"),
            shim: None,
            limit_secs: DEFAULT_LIMIT.as_secs_f64(),
            rules: None,
            whitelist: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub pass_k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { pass_k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; all cores when unset.
    pub workers: Option<usize>,
    pub prompts_dir: Option<PathBuf>,
    pub gateway: GatewaySection,
    pub verify: VerifySection,
    pub dedup: DedupSection,
    pub instruct: InstructSection,
    pub retrieval: RetrievalSection,
    pub pipeline: PipelineConfig,
    pub sandbox: SandboxSection,
    pub eval: EvalSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: DEFAULT_ROOT_SEED,
            workers: None,
            prompts_dir: None,
            gateway: GatewaySection::default(),
            verify: VerifySection::default(),
            dedup: DedupSection::default(),
            instruct: InstructSection::default(),
            retrieval: RetrievalSection::default(),
            pipeline: PipelineConfig::default(),
            sandbox: SandboxSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Per-module seed drawn from the root seed.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    xxhash_rust::xxh3::xxh3_64_with_seed(label.as_bytes(), root)
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline.validate().map_err(ConfigError::Invalid)?;
        if !(0.0..=1.0).contains(&self.dedup.threshold) {
            return Err(ConfigError::Invalid(format!(
                "dedup threshold must lie in [0, 1], got {}",
                self.dedup.threshold
            )));
        }
        if self.gateway.max_in_flight == 0 {
            return Err(ConfigError::Invalid("gateway.max_in_flight must be at least 1".into()));
        }
        if self.gateway.provider != NO_PROVIDER && !self.gateway.providers.contains_key(&self.gateway.provider) {
            return Err(ConfigError::Invalid(format!(
                "unknown provider {:?}",
                self.gateway.provider
            )));
        }
        if self.eval.pass_k == 0 {
            return Err(ConfigError::Invalid("eval.pass_k must be at least 1".into()));
        }
        if !self.sandbox.limit_secs.is_finite() || self.sandbox.limit_secs <= 0.0 {
            return Err(ConfigError::Invalid("sandbox.limit_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        ["dedup", "embedding"]
            .into_iter()
            .map(|l| (l.to_string(), derive_seed(self.seed, l)))
            .collect()
    }

    pub fn dedup_seed(&self) -> u64 {
        derive_seed(self.seed, "dedup")
    }

    pub fn embedding_seed(&self) -> u64 {
        derive_seed(self.seed, "embedding")
    }

    pub fn prompts(&self) -> Result<PromptSet, ConfigError> {
        match &self.prompts_dir {
            None => Ok(PromptSet::bundled()),
            Some(dir) => PromptSet::with_overrides(dir).map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }

    pub fn whitelist(&self) -> Result<Whitelist, ConfigError> {
        match &self.sandbox.whitelist {
            None => Ok(Whitelist::bundled()),
            Some(p) => Whitelist::load(p).map_err(|e: WhitelistError| ConfigError::Invalid(e.to_string())),
        }
    }

    pub fn error_rules(&self) -> Result<ErrorRules, ConfigError> {
        match &self.sandbox.rules {
            None => Ok(ErrorRules::bundled()),
            Some(p) => ErrorRules::load(p).map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display()))),
        }
    }

    pub fn executor(&self) -> SubprocessExecutor {
        let mut ex = SubprocessExecutor::bundled()
            .with_interpreter(&self.sandbox.interpreter)
            .with_limit(Duration::from_secs_f64(self.sandbox.limit_secs));
        ex.shim = self.sandbox.shim.clone();
        ex
    }

    /// The configured gateway, or `None` for provider `none`.
    pub fn gateway(&self) -> Result<Option<Gateway>, ConfigError> {
        let section = &self.gateway;
        if section.provider == NO_PROVIDER {
            return Ok(None);
        }
        let spec = section
            .providers
            .get(&section.provider)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown provider {:?}", section.provider)))?;
        let provider: Arc<dyn ChatProvider> = match spec {
            ProviderSpec::Mock { script: None } => Arc::new(MockProvider::new()),
            ProviderSpec::Mock { script: Some(path) } => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                let script: MockScript = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                Arc::new(MockProvider::from_script(script).map_err(|e| ConfigError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?)
            }
            ProviderSpec::Http(profile) => {
                Arc::new(HttpProvider::new(profile.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
        };
        let mut gw = Gateway::new(provider)
            .with_retry(section.retry)
            .with_max_in_flight(section.max_in_flight);
        if let Some(path) = &section.log {
            let log = RequestLog::open(path, section.redact_log).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            gw = gw.with_log(log);
        }
        Ok(Some(gw))
    }

    /// Provider for building a new index.
    pub fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>, ConfigError> {
        match &self.retrieval.embedding {
            EmbeddingSpec::Hashed { dim } => Ok(Box::new(HashedBagProvider {
                dim: *dim,
                seed: self.embedding_seed(),
            })),
            EmbeddingSpec::Http(p) => Ok(Box::new(
                HttpEmbeddingProvider::new(p.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            )),
        }
    }

    /// Provider for querying an existing index. A hashed index is queried
    /// with the dimension and seed it was built with.
    pub fn embedder_for(&self, manifest: &IndexManifest) -> Result<Box<dyn EmbeddingProvider>, ConfigError> {
        let hashed = HashedBagProvider {
            dim: manifest.dim,
            seed: manifest.seed,
        };
        if hashed.id() == manifest.provider_id {
            return Ok(Box::new(hashed));
        }
        let p = self.embedder()?;
        if p.id() != manifest.provider_id {
            return Err(ConfigError::Invalid(format!(
                "index was built with {}, configured provider is {}",
                manifest.provider_id,
                p.id()
            )));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub count: usize,
    /// Percentage rounded to one decimal.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub total: usize,
    pub categories: BTreeMap<SourceCategory, CategoryShare>,
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn composition(categories: impl IntoIterator<Item = SourceCategory>) -> Composition {
    let mut counts: BTreeMap<SourceCategory, usize> = SourceCategory::ALL.iter().map(|&c| (c, 0)).collect();
    let mut total = 0;
    for c in categories {
        *counts.entry(c).or_default() += 1;
        total += 1;
    }
    let categories = counts
        .into_iter()
        .map(|(c, count)| {
            let percent = if total == 0 {
                0.0
            } else {
                round1(100.0 * count as f64 / total as f64)
            };
            (c, CategoryShare { count, percent })
        })
        .collect();
    Composition { total, categories }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub config: Config,
    pub root_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub stats: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<Composition>,
    /// Set when some items could not be processed.
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>, config: &Config) -> Self {
        Self {
            command: command.into(),
            args,
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            root_seed: config.seed,
            seeds: config.seeds(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            stats: BTreeMap::new(),
            composition: None,
            partial: false,
            warnings: Vec::new(),
            started_at: now(),
            finished_at: String::new(),
        }
    }

    pub fn stat(&mut self, key: &str, value: impl Serialize) {
        self.stats
            .insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let m = message.into();
        log::warn!("{m}");
        self.warnings.push(m);
    }

    /// Stamps the finish time and writes the manifest atomically.
    pub fn finish(mut self, path: &Path) -> std::io::Result<()> {
        self.finished_at = now();
        let mut bytes = serde_json::to_vec_pretty(&self).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
