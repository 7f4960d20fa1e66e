use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lxl_core::atlas::{Atlas2D, EmbeddingSet, SeparationConfig};
use lxl_core::dataset::Dataset;
use lxl_core::explain::{explain, instance_seed, ExplainParams};
use lxl_core::models::{Aae, BlackBox};
use lxl_core::run;
use lxl_core::{LxlError, Stage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::OnceCell;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub models: PathBuf,
    pub data: PathBuf,
    pub cache: PathBuf,
    pub explain: ExplainParams,
    pub atlas: SeparationConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            models: "models".into(),
            data: "data".into(),
            cache: "cache".into(),
            explain: ExplainParams::default(),
            atlas: SeparationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job: String,
    pub instance: String,
    pub state: JobState,
    pub progress: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
}

impl JobStatus {
    /// Moves forward only; a later state or lower progress is ignored.
    pub(crate) fn advance(&mut self, state: JobState, progress: f64) {
        if state >= self.state {
            self.state = state;
            self.progress = self.progress.max(progress);
        }
    }
}

pub(crate) struct Models {
    pub blackbox: BlackBox,
    pub aae: Aae,
}

pub(crate) struct AtlasData {
    pub embeddings: EmbeddingSet,
    pub atlas: Atlas2D,
}

#[derive(Default)]
pub(crate) struct Jobs {
    pub next: u64,
    pub by_id: BTreeMap<String, JobStatus>,
    /// Instance id → job currently queued or running.
    pub active: BTreeMap<String, String>,
}

pub(crate) struct Inner {
    pub models: Option<Models>,
    pub data: Dataset,
    pub cache: PathBuf,
    pub explain: ExplainParams,
    pub atlas_config: SeparationConfig,
    pub atlas: OnceCell<Arc<AtlasData>>,
    pub jobs: Mutex<Jobs>,
}

/// Shared, read-only models and data plus the job table.
#[derive(Clone)]
pub struct AppState {
    pub(crate) inner: Arc<Inner>,
}

impl AppState {
    /// Loads models and data. Missing models leave the service up but answering 503; a missing
    /// dataset leaves an empty instance list.
    pub fn load(config: ServiceConfig) -> AppState {
        let models = match run::load_models(&config.models) {
            Ok((blackbox, aae)) => Some(Models { blackbox, aae }),
            Err(e) => {
                log::warn!("models not loaded from {}: {e}", config.models.display());
                None
            }
        };
        let data = run::load_dataset(&config.data).unwrap_or_else(|e| {
            log::warn!("dataset not loaded from {}: {e}", config.data.display());
            Dataset::new(Vec::new()).expect("empty dataset is valid")
        });
        Self::build(models, data, config)
    }

    pub fn from_parts(blackbox: Option<(BlackBox, Aae)>, data: Dataset, config: ServiceConfig) -> AppState {
        Self::build(blackbox.map(|(blackbox, aae)| Models { blackbox, aae }), data, config)
    }

    fn build(models: Option<Models>, data: Dataset, config: ServiceConfig) -> AppState {
        AppState {
            inner: Arc::new(Inner {
                models,
                data,
                cache: config.cache,
                explain: config.explain,
                atlas_config: config.atlas,
                atlas: OnceCell::new(),
                jobs: Mutex::new(Jobs::default()),
            }),
        }
    }

    pub fn models_loaded(&self) -> bool {
        self.inner.models.is_some()
    }
}

impl Inner {
    pub fn cache_path(&self, id: &str) -> PathBuf {
        let safe = id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        let name = if safe && !id.is_empty() {
            id.to_string()
        } else {
            Sha256::digest(id.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
        };
        self.cache.join("explanations").join(format!("{name}.json"))
    }

    pub fn cached(&self, id: &str) -> Option<Vec<u8>> {
        std::fs::read(self.cache_path(id)).ok()
    }

    /// Runs the explainer for `id` and stores the serialized result.
    pub fn compute(&self, id: &str) -> lxl_core::Result<Vec<u8>> {
        let m = self.models.as_ref().ok_or_else(|| LxlError::State("models are not loaded".into()))?;
        let item = self.data.get(id).ok_or_else(|| LxlError::Validation(format!("unknown instance {id}")))?;
        let e = explain(&item.image, &m.blackbox, &m.aae, &self.explain, instance_seed(id))?;
        let bytes = e.to_json()?.into_bytes();
        write_atomic(&self.cache_path(id), &bytes)?;
        Ok(bytes)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().expect("cache paths have a parent");
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}
