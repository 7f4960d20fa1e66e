use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::neighgen::disde_batch;
use super::rules::{to_f64, Rule};
use super::{latent_distance, BlackBoxModel, LatentCandidate, LatentModel, Neighborhood};
use crate::error::{LxlError, Result, Stage};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExemplarParams {
    pub count: usize,
    /// Jitter standard deviations, cycled batch by batch.
    pub jitter: Vec<f64>,
    pub batch: usize,
    /// Maximum number of latent draws.
    pub budget: usize,
    pub tau: f32,
}

impl Default for ExemplarParams {
    fn default() -> Self {
        ExemplarParams {
            count: 4,
            jitter: vec![0.5, 1.0, 1.5, 2.0],
            batch: 64,
            budget: 8192,
            tau: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Exemplars {
    pub latents: Vec<Vec<f32>>,
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Rejection-samples codes that satisfy the rule's premise, pass the validity check and are
/// labelled `label` by the black box. Draws are Gaussian jitter around `z`, or prior samples when
/// the premise is empty.
pub fn generate_exemplars<L, B, R>(
    rule: &Rule,
    z: &[f32],
    label: usize,
    b: &B,
    aae: &L,
    params: &ExemplarParams,
    rng: &mut R,
) -> Result<Exemplars>
where
    L: LatentModel + ?Sized,
    B: BlackBoxModel + ?Sized,
    R: Rng,
{
    if params.count == 0 || params.batch == 0 || params.jitter.is_empty() {
        return Err(LxlError::Config("exemplars: count, batch and jitter must be non-empty".into()));
    }
    let mut out = Exemplars::default();
    let mut drawn = 0;
    let mut round = 0;
    while out.images.len() < params.count && drawn < params.budget {
        let n = params.batch.min(params.budget - drawn);
        drawn += n;
        let std = params.jitter[round % params.jitter.len()];
        round += 1;
        let hs: Vec<Vec<f32>> = (0..n)
            .map(|_| {
                z.iter()
                    .map(|&v| {
                        let e = rng.sample::<f64, _>(StandardNormal);
                        if rule.premise.is_empty() {
                            e as f32
                        } else {
                            v + (std * e) as f32
                        }
                    })
                    .collect()
            })
            .filter(|h: &Vec<f32>| rule.holds(&to_f64(h)))
            .collect();
        let refs: Vec<&[f32]> = hs.iter().map(|h| h.as_slice()).collect();
        for (h, d) in hs.iter().zip(disde_batch(aae, &refs, b, params.tau)?) {
            if d.valid && d.label == label && out.images.len() < params.count {
                out.latents.push(h.clone());
                out.images.push(d.decoded);
                out.labels.push(d.label);
            }
        }
    }
    if out.images.len() < params.count {
        out.warnings.push(format!(
            "exemplar budget of {} draws exhausted with {} of {} exemplars",
            params.budget,
            out.images.len(),
            params.count
        ));
    }
    Ok(out)
}

/// Different-label candidate minimising latent distance to `z` minus `lambda` times its
/// black-box confidence. Ties go to the lower candidate id.
pub fn select_counterexemplar<'a>(z: &[f32], h: &'a Neighborhood, lambda: f64) -> Result<&'a LatentCandidate> {
    let mut best: Option<(f64, &LatentCandidate)> = None;
    for c in h.different_label() {
        let s = latent_distance(z, &c.z) - lambda * f64::from(c.confidence);
        let better = match best {
            None => true,
            Some((bs, bc)) => s < bs || (s == bs && c.id < bc.id),
        };
        if better {
            best = Some((s, c));
        }
    }
    best.map(|(_, c)| c).ok_or_else(|| LxlError::Infeasible {
        stage: Stage::Counterexemplar,
        detail: "neighbourhood has no candidate with a different label".into(),
    })
}
