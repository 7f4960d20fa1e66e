use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pipeline::{explain, ExplainParams};
use super::{instance_seed, BlackBoxModel, LatentModel};
use crate::dataset::LabeledImage;
use crate::error::{LxlError, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UsefulnessParams {
    pub trials: usize,
    pub seed: u64,
    pub explain: ExplainParams,
}

impl Default for UsefulnessParams {
    fn default() -> Self {
        UsefulnessParams {
            trials: 20,
            seed: 0,
            explain: ExplainParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsefulnessReport {
    pub trials: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Standard deviation of a coin-flip accuracy over `trials`.
    pub sigma: f64,
    /// Chance level plus two `sigma`.
    pub threshold: f64,
    pub warnings: Vec<String>,
}

impl UsefulnessReport {
    pub fn beats_chance(&self) -> bool {
        self.accuracy >= self.threshold
    }
}

fn nearest(x: &Image, pool: &[Image]) -> Result<f64> {
    pool.iter().try_fold(f64::INFINITY, |m, e| Ok(m.min(x.l2_distance(e)?)))
}

/// Runs `trials` two-reference tasks on `test`: each draws a test image, a same-class and a
/// different-class reference, and assigns the test image to whichever reference owns the nearest
/// exemplar in pixel L2. `exemplars_of` supplies a reference's exemplars.
pub fn usefulness_with<F>(test: &[&LabeledImage], trials: usize, seed: u64, mut exemplars_of: F) -> Result<UsefulnessReport>
where
    F: FnMut(&LabeledImage) -> Result<Vec<Image>>,
{
    if test.is_empty() || trials == 0 {
        return Err(LxlError::Empty("usefulness test set".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<&LabeledImage>> = BTreeMap::new();
    for &item in test {
        by_class.entry(item.label).or_default().push(item);
    }
    if by_class.len() < 2 {
        return Err(LxlError::Validation("usefulness needs at least two classes".into()));
    }
    let anchors: Vec<&LabeledImage> = test.iter().copied().filter(|t| by_class[&t.label].len() >= 2).collect();
    if anchors.is_empty() {
        return Err(LxlError::Validation("usefulness needs a class with two images".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache: BTreeMap<String, Vec<Image>> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut correct = 0;
    for _ in 0..trials {
        let t = *anchors.choose(&mut rng).expect("non-empty");
        let same: Vec<&LabeledImage> = by_class[&t.label].iter().copied().filter(|s| s.id != t.id).collect();
        let other: Vec<&LabeledImage> = test.iter().copied().filter(|o| o.label != t.label).collect();
        let s = *same.choose(&mut rng).expect("class has a second image");
        let d = *other.choose(&mut rng).expect("a second class exists");
        let mut pools = Vec::with_capacity(2);
        for r in [s, d] {
            if !cache.contains_key(&r.id) {
                let ex = exemplars_of(r)?;
                if ex.is_empty() {
                    warnings.push(format!("reference {} has no exemplars", r.id));
                }
                cache.insert(r.id.clone(), ex);
            }
            pools.push(nearest(&t.image, &cache[&r.id])?);
        }
        if pools[0] < pools[1] {
            correct += 1;
        }
    }
    let sigma = (0.25 / trials as f64).sqrt();
    Ok(UsefulnessReport {
        trials,
        correct,
        accuracy: correct as f64 / trials as f64,
        sigma,
        threshold: 0.5 + 2.0 * sigma,
        warnings,
    })
}

/// [`usefulness_with`] using exemplars from full explanations, each seeded from the reference id.
/// A reference whose explanation fails contributes no exemplars.
pub fn usefulness_eval<B, L>(test: &[&LabeledImage], b: &B, aae: &L, params: &UsefulnessParams) -> Result<UsefulnessReport>
where
    B: BlackBoxModel + ?Sized,
    L: LatentModel + ?Sized,
{
    let mut failures = Vec::new();
    let mut report = usefulness_with(test, params.trials, params.seed, |r| {
        match explain(&r.image, b, aae, &params.explain, instance_seed(&r.id)) {
            Ok(e) => Ok(e.exemplars),
            Err(e) if e.is_infeasible() => {
                failures.push(format!("reference {}: {e}", r.id));
                Ok(Vec::new())
            }
            Err(e) => Err(e),
        }
    })?;
    report.warnings.splice(0..0, failures);
    Ok(report)
}
