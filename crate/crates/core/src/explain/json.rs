use serde::{Deserialize, Serialize};

use super::pipeline::{Explanation, Neighbor};
use super::rules::Rule;
use crate::dataset::CLASS_NAMES;
use crate::error::Result;
use crate::image::{Image, CHANNELS};

use super::saliency::SaliencyMap;

pub const EXPLANATION_SCHEMA: &str = "explanation/1";

fn class_name(label: usize) -> String {
    CLASS_NAMES.get(label).map_or_else(|| format!("class{label}"), |s| s.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorDoc {
    pub label: usize,
    pub class_name: String,
    pub scores: Vec<f32>,
    pub latent: Vec<f32>,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDoc {
    pub label: usize,
    pub class_name: String,
    pub latent: Vec<f32>,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaliencyDoc {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub overlay: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateDoc {
    pub fidelity: f64,
    pub depth: usize,
    pub leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborhoodDoc {
    pub size: usize,
    pub same_label: usize,
    pub different_label: usize,
    pub same_log: Vec<f64>,
    pub different_log: Vec<f64>,
}

/// Wire form of an [`Explanation`]: images as base64 PNG, rules as premise lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanationDoc {
    pub schema: String,
    pub seed: u64,
    pub anchor: AnchorDoc,
    pub rule: Rule,
    pub counterfactual_rules: Vec<Rule>,
    pub exemplars: Vec<ImageDoc>,
    pub counter_exemplar: ImageDoc,
    pub neighbors: Vec<ImageDoc>,
    pub saliency: SaliencyDoc,
    pub surrogate: SurrogateDoc,
    pub neighborhood: NeighborhoodDoc,
    pub warnings: Vec<String>,
}

fn neighbor_doc(n: &Neighbor) -> Result<ImageDoc> {
    Ok(ImageDoc {
        label: n.label,
        class_name: class_name(n.label),
        latent: n.z.clone(),
        image: n.image.to_png_base64()?,
        confidence: Some(n.confidence),
        distance: Some(n.distance),
    })
}

/// Greyscale anchor tinted red where the map is positive and blue where it is negative.
pub fn heat_overlay(anchor: &Image, map: &SaliencyMap) -> Result<Image> {
    let mut data = Vec::with_capacity(map.values.len() * CHANNELS);
    for (p, &v) in map.values.iter().enumerate() {
        let px = &anchor.data()[p * CHANNELS..(p + 1) * CHANNELS];
        let grey = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        let a = v.abs().min(1.0);
        let base = grey * (1.0 - a);
        let (r, b) = if v > 0.0 { (base + a, base) } else { (base, base + a) };
        data.extend([r, base, b]);
    }
    Image::from_clamped(map.height, map.width, data)
}

impl ExplanationDoc {
    pub fn from_explanation(e: &Explanation) -> Result<ExplanationDoc> {
        let exemplars = e
            .exemplars
            .iter()
            .zip(&e.exemplar_latents)
            .zip(&e.exemplar_labels)
            .map(|((img, z), &label)| {
                Ok(ImageDoc {
                    label,
                    class_name: class_name(label),
                    latent: z.clone(),
                    image: img.to_png_base64()?,
                    confidence: None,
                    distance: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExplanationDoc {
            schema: EXPLANATION_SCHEMA.into(),
            seed: e.seed,
            anchor: AnchorDoc {
                label: e.anchor_label,
                class_name: class_name(e.anchor_label),
                scores: e.anchor_scores.clone(),
                latent: e.latent.clone(),
                image: e.anchor.to_png_base64()?,
            },
            rule: e.rule.clone(),
            counterfactual_rules: e.counterfactuals.clone(),
            exemplars,
            counter_exemplar: neighbor_doc(&e.counter_exemplar)?,
            neighbors: e.neighbors.iter().map(neighbor_doc).collect::<Result<_>>()?,
            saliency: SaliencyDoc {
                height: e.saliency.height,
                width: e.saliency.width,
                values: e.saliency.values.clone(),
                overlay: heat_overlay(&e.anchor, &e.saliency)?.to_png_base64()?,
            },
            surrogate: SurrogateDoc {
                fidelity: e.fidelity,
                depth: e.tree_depth,
                leaves: e.tree_leaves,
            },
            neighborhood: NeighborhoodDoc {
                size: e.neighborhood_size,
                same_label: e.same_label_count,
                different_label: e.neighborhood_size - e.same_label_count,
                same_log: e.same_log.clone(),
                different_log: e.different_log.clone(),
            },
            warnings: e.warnings.clone(),
        })
    }
}

impl Explanation {
    /// Compact `explanation/1` JSON. Equal explanations give identical bytes.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ExplanationDoc::from_explanation(self)?)?)
    }
}
