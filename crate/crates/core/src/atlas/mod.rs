//! Latent-space atlas: distances, SMACOF projection to 2D, random-forest class separation and
//! scatter export.

mod export;
mod forest;
mod mds;
mod separation;

pub use export::{export_scatter, read_scatter_csv, scatter_svg, ScatterRow};
pub use forest::{rf_train, ForestConfig, RandomForest};
pub use mds::{mds_project, pairwise_distances, Atlas2D, MdsConfig};
pub use separation::{
    paper_reference, pairwise_separation, radial_positions, relabeled_halves, stratified_split, SeparationConfig,
    SeparationReport,
};

use crate::error::{LxlError, Result};
use crate::explain::LatentModel;
use crate::dataset::Dataset;

/// Latent vectors with their labels and ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    labels: Vec<usize>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, labels: Vec<usize>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != labels.len() || ids.len() != vectors.len() {
            return Err(LxlError::shape("embedding rows", ids.len(), (labels.len(), vectors.len())));
        }
        if let Some(k) = vectors.first().map(Vec::len) {
            if vectors.iter().any(|v| v.len() != k) {
                return Err(LxlError::Validation("embedding vectors have different lengths".into()));
            }
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LxlError::NonFinite("embedding vectors".into()));
        }
        Ok(EmbeddingSet { ids, labels, vectors })
    }

    /// Encodes every item of `data`.
    pub fn encode<L: LatentModel + ?Sized>(aae: &L, data: &Dataset) -> Result<Self> {
        let vectors = crate::parallel::map(data.items(), |item| aae.encode(&item.image))
            .into_iter()
            .map(|z| z.map(|z| z.into_iter().map(f64::from).collect()))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        EmbeddingSet::new(
            data.items().iter().map(|i| i.id.clone()).collect(),
            data.items().iter().map(|i| i.label).collect(),
            vectors,
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Rows whose label satisfies `keep`, in order.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> EmbeddingSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        EmbeddingSet {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            vectors: idx.iter().map(|&i| self.vectors[i].clone()).collect(),
        }
    }
}
