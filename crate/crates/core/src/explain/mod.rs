//! Latent-space explanations for a black-box image classifier.
//!
//! A query image is encoded, a genetic search builds a neighbourhood of valid latent codes, and a
//! surrogate decision tree fitted on it yields a decision rule and counterfactual rules. Exemplars
//! are sampled inside the rule, the counter-exemplar is picked from the neighbourhood, and the
//! saliency map is the median exemplar difference.
//!
//! The pipeline talks to its models through [`BlackBoxModel`] and [`LatentModel`], so contracts
//! can be exercised with small stand-ins.

mod exemplars;
mod json;
mod neighgen;
mod pipeline;
mod rules;
mod saliency;
mod usefulness;

pub use exemplars::{generate_exemplars, select_counterexemplar, ExemplarParams, Exemplars};
pub use json::{heat_overlay, ExplanationDoc, EXPLANATION_SCHEMA};
pub use neighgen::{
    disde, disde_batch, fitness, neighgen_genetic, random_search_best, Disde, GeneticParams, LatentCandidate, Neighborhood,
    SubPopulation,
};
pub use pipeline::{explain, ExplainParams, Explanation, Neighbor};
pub use rules::{extract_rules, fit_surrogate, Rule, SurrogateTree};
pub use saliency::{median, saliency_map, SaliencyMap};
pub use usefulness::{usefulness_eval, usefulness_with, UsefulnessParams, UsefulnessReport};

use crate::error::Result;
use crate::image::Image;
use crate::models::{argmax, Aae, BlackBox};

/// A classifier queried only through its per-class scores.
pub trait BlackBoxModel: Sync {
    fn classify_batch(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>>;

    fn label(&self, image: &Image) -> Result<usize> {
        Ok(argmax(&self.classify_batch(&[image])?[0]))
    }
}

/// Encoder, decoder and latent discriminator of an autoencoder.
pub trait LatentModel: Sync {
    fn latent_dim(&self) -> usize;
    fn encode(&self, image: &Image) -> Result<Vec<f32>>;
    fn decode_batch(&self, zs: &[&[f32]]) -> Result<Vec<Image>>;
    /// Probability in [0,1] that each code is a plausible latent.
    fn discriminate_batch(&self, zs: &[&[f32]]) -> Result<Vec<f32>>;
}

impl BlackBoxModel for BlackBox {
    fn classify_batch(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        BlackBox::classify_batch(self, images)
    }
}

impl LatentModel for Aae {
    fn latent_dim(&self) -> usize {
        Aae::latent_dim(self)
    }

    fn encode(&self, image: &Image) -> Result<Vec<f32>> {
        Aae::encode(self, image)
    }

    fn decode_batch(&self, zs: &[&[f32]]) -> Result<Vec<Image>> {
        Aae::decode_batch(self, zs)
    }

    fn discriminate_batch(&self, zs: &[&[f32]]) -> Result<Vec<f32>> {
        Aae::discriminate_batch(self, zs)
    }
}

pub(crate) fn latent_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Stable per-instance seed derived from its id.
pub fn instance_seed(id: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
