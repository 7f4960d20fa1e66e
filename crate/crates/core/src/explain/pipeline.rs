use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::exemplars::{generate_exemplars, select_counterexemplar, ExemplarParams};
use super::neighgen::{neighgen_genetic, GeneticParams, LatentCandidate};
use super::rules::{extract_rules, fit_surrogate, to_f64, Rule};
use super::saliency::{saliency_map, SaliencyMap};
use super::{latent_distance, BlackBoxModel, LatentModel};
use crate::error::{LxlError, Result, Stage};
use crate::image::Image;
use crate::models::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainParams {
    pub genetic: GeneticParams,
    pub exemplars: ExemplarParams,
    /// Weight of black-box confidence against latent distance in counter-exemplar selection.
    pub lambda: f64,
    /// Length of the different-label neighbour list.
    pub neighbors: usize,
}

impl Default for ExplainParams {
    fn default() -> Self {
        ExplainParams {
            genetic: GeneticParams::default(),
            exemplars: ExemplarParams::default(),
            lambda: 0.5,
            neighbors: 8,
        }
    }
}

/// A decoded neighbour with a different black-box label.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub z: Vec<f32>,
    pub image: Image,
    pub label: usize,
    pub confidence: f32,
    pub distance: f64,
}

impl Neighbor {
    fn from_candidate(c: &LatentCandidate, z: &[f32]) -> Self {
        Neighbor {
            id: c.id,
            z: c.z.clone(),
            image: c.decoded.clone(),
            label: c.label,
            confidence: c.confidence,
            distance: latent_distance(&c.z, z),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub seed: u64,
    pub anchor: Image,
    pub anchor_label: usize,
    pub anchor_scores: Vec<f32>,
    pub latent: Vec<f32>,
    pub rule: Rule,
    pub counterfactuals: Vec<Rule>,
    pub exemplars: Vec<Image>,
    pub exemplar_latents: Vec<Vec<f32>>,
    pub exemplar_labels: Vec<usize>,
    pub counter_exemplar: Neighbor,
    pub neighbors: Vec<Neighbor>,
    pub saliency: SaliencyMap,
    pub fidelity: f64,
    pub tree_depth: usize,
    pub tree_leaves: usize,
    pub neighborhood_size: usize,
    pub same_label_count: usize,
    pub same_log: Vec<f64>,
    pub different_log: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Builds the full explanation of `x`. The result depends only on the models, `x`, `params` and
/// `seed`.
pub fn explain<B, L>(x: &Image, b: &B, aae: &L, params: &ExplainParams, seed: u64) -> Result<Explanation>
where
    B: BlackBoxModel + ?Sized,
    L: LatentModel + ?Sized,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor_scores = b.classify_batch(&[x])?.remove(0);
    let anchor_label = argmax(&anchor_scores);
    let z = aae.encode(x).map_err(|e| e.at(Stage::Encode))?;

    let h = neighgen_genetic(&z, anchor_label, b, aae, &params.genetic, &mut rng).map_err(|e| e.at(Stage::Neighborhood))?;
    let mut warnings = h.warnings.clone();
    let surrogate = fit_surrogate(&h)?;
    let (rule, counterfactuals) = extract_rules(&surrogate.tree, &to_f64(&z))?;
    if rule.consequence != anchor_label {
        warnings.push(format!(
            "surrogate predicts class {} for the anchor, black box says {anchor_label}",
            rule.consequence
        ));
    }

    let ex = generate_exemplars(&rule, &z, anchor_label, b, aae, &params.exemplars, &mut rng).map_err(|e| e.at(Stage::Exemplars))?;
    warnings.extend(ex.warnings.iter().cloned());
    if ex.images.is_empty() {
        return Err(LxlError::Infeasible {
            stage: Stage::Exemplars,
            detail: "no exemplar satisfied the rule".into(),
        });
    }

    let counter = select_counterexemplar(&z, &h, params.lambda)?;
    let mut neighbors: Vec<Neighbor> = h.different_label().map(|c| Neighbor::from_candidate(c, &z)).collect();
    neighbors.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    neighbors.truncate(params.neighbors);

    let saliency = saliency_map(x, &ex.images).map_err(|e| e.at(Stage::Saliency))?;
    Ok(Explanation {
        seed,
        anchor: x.clone(),
        anchor_label,
        anchor_scores,
        counter_exemplar: Neighbor::from_candidate(counter, &z),
        latent: z,
        rule,
        counterfactuals,
        exemplars: ex.images,
        exemplar_latents: ex.latents,
        exemplar_labels: ex.labels,
        neighbors,
        saliency,
        fidelity: surrogate.fidelity,
        tree_depth: surrogate.tree.depth(),
        tree_leaves: surrogate.tree.leaf_count(),
        neighborhood_size: h.candidates.len(),
        same_label_count: h.candidates.iter().filter(|c| c.label == anchor_label).count(),
        same_log: h.same_log,
        different_log: h.different_log,
        warnings,
    })
}
