//! Run configuration shared by the command line, the service and the acceptance harness.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::atlas::SeparationConfig;
use crate::dataset::{generate_synthetic, read_dataset, split, Dataset};
use crate::error::{LxlError, Result};
use crate::explain::ExplainParams;
use crate::models::{AaeConfig, Aae, BlackBox, ClassifierConfig, GrowthSchedule};

pub const CLASSIFIER_FILE: &str = "classifier.lxl";
pub const AAE_FILE: &str = "aae.lxl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    pub per_class: usize,
    pub extent: usize,
    pub train_fraction: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            per_class: 100,
            extent: 28,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    pub data: Option<PathBuf>,
    pub models: Option<PathBuf>,
}

fn standard_schedule() -> GrowthSchedule {
    GrowthSchedule::desk([20, 20, 30])
}

/// Everything a run depends on. Only `seed` is required in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetParams,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub aae: AaeConfig,
    #[serde(default = "standard_schedule")]
    pub schedule: GrowthSchedule,
    #[serde(default)]
    pub explainer: ExplainParams,
    #[serde(default)]
    pub atlas: SeparationConfig,
    #[serde(default)]
    pub paths: RunPaths,
}

/// Seed of the standard run.
pub const STANDARD_SEED: u64 = 1;

impl RunConfig {
    pub fn standard() -> RunConfig {
        RunConfig {
            seed: STANDARD_SEED,
            dataset: DatasetParams::default(),
            classifier: ClassifierConfig::default(),
            aae: AaeConfig::default(),
            schedule: standard_schedule(),
            explainer: ExplainParams::default(),
            atlas: SeparationConfig::default(),
            paths: RunPaths::default(),
        }
    }

    pub fn dataset_seed(&self) -> u64 {
        self.seed
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn model_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    /// Parses JSON, reporting the path of the offending field on failure.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            LxlError::Config(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LxlError::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.per_class == 0 {
            return Err(LxlError::Config("at `dataset.per_class`: must be positive".into()));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(LxlError::Config("at `dataset.train_fraction`: must lie in (0, 1)".into()));
        }
        let tag = |field: &'static str| move |e: LxlError| LxlError::Config(format!("at `{field}`: {e}"));
        self.classifier.validate().map_err(tag("classifier"))?;
        self.aae.validate(&self.schedule).map_err(tag("aae"))?;
        self.schedule.check_dataset(d.extent).map_err(tag("schedule"))?;
        self.explainer.genetic.validate().map_err(tag("explainer.genetic"))?;
        if let Some(p) = &self.paths.data {
            if !p.is_dir() {
                return Err(LxlError::Config(format!("at `paths.data`: {} is not a directory", p.display())));
            }
        }
        if let Some(p) = &self.paths.models {
            if !p.is_dir() {
                return Err(LxlError::Config(format!("at `paths.models`: {} is not a directory", p.display())));
            }
        }
        Ok(())
    }

    pub fn generate_dataset(&self) -> Result<Dataset> {
        generate_synthetic(self.dataset.per_class, self.dataset.extent, self.dataset_seed())
    }

    /// Stratified train and held-out parts of `data`.
    pub fn split(&self, data: &Dataset) -> Result<(Dataset, Dataset)> {
        split(data, self.dataset.train_fraction, self.split_seed())
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(LxlError::Config(format!("data directory {} does not exist", dir.display())));
    }
    read_dataset(dir)
}

/// `model.lxl` → `model.report.jsonl`.
pub fn report_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("report.jsonl")
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| LxlError::Config(format!("cannot open checkpoint {}: {e}", path.display())))
}

pub fn load_classifier(path: &Path) -> Result<BlackBox> {
    BlackBox::load(open(path)?)
}

pub fn load_aae(path: &Path) -> Result<Aae> {
    Aae::load(open(path)?)
}

/// Classifier and autoencoder from a model directory.
pub fn load_models(dir: &Path) -> Result<(BlackBox, Aae)> {
    Ok((load_classifier(&dir.join(CLASSIFIER_FILE))?, load_aae(&dir.join(AAE_FILE))?))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}
