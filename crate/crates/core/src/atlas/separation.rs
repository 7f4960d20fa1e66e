use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::{rf_train, ForestConfig};
use super::mds::{Atlas2D, MdsConfig};
use super::EmbeddingSet;
use crate::dataset::{class_index, CLASS_NAMES};
use crate::error::{LxlError, Result};

/// Smallest class size accepted by [`pairwise_separation`].
pub const MIN_CLASS_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparationConfig {
    pub forest: ForestConfig,
    pub mds: MdsConfig,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub forest_seed: u64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        SeparationConfig {
            forest: ForestConfig::default(),
            mds: MdsConfig::default(),
            train_fraction: 0.8,
            split_seed: 2020,
            forest_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub class_a: usize,
    pub class_b: usize,
    pub class_names: [String; 2],
    pub accuracy: f64,
    pub recall: [f64; 2],
    pub n_trees: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub forest_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub stress: f64,
    /// Accuracy published for this pair on the full-scale dataset, for comparison only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paper_reference: Option<f64>,
}

/// Published held-out accuracy for a class pair, if any.
#[allow(clippy::approx_constant)]
pub fn paper_reference(a: usize, b: usize) -> Option<f64> {
    let mel = class_index("MEL")?;
    let other = if a == mel { b } else if b == mel { a } else { return None };
    if other == class_index("BKL")? {
        Some(0.8560)
    } else if other == class_index("NV")? {
        Some(0.7853)
    } else {
        None
    }
}

fn name(label: usize) -> String {
    CLASS_NAMES.get(label).map_or_else(|| format!("class{label}"), |s| s.to_string())
}

/// Per-class shuffle with `seed`, keeping the first `round(fraction * n)` of each class for
/// training. Returns train and test row indices in ascending order.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for rows in by_class.values_mut() {
        rows.shuffle(&mut rng);
        let k = (fraction * rows.len() as f64).round() as usize;
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Projects the two classes to 2D and reports held-out random-forest accuracy on the projection.
pub fn pairwise_separation(e: &EmbeddingSet, a: usize, b: usize, config: &SeparationConfig) -> Result<SeparationReport> {
    if a == b {
        return Err(LxlError::Validation("separation needs two different classes".into()));
    }
    let pair = e.filter(|l| l == a || l == b);
    for c in [a, b] {
        let n = pair.labels().iter().filter(|&&l| l == c).count();
        if n < MIN_CLASS_SIZE {
            return Err(LxlError::Validation(format!(
                "class {} has {n} items, at least {MIN_CLASS_SIZE} are needed",
                name(c)
            )));
        }
    }
    let atlas = Atlas2D::from_embeddings(&pair, &config.mds)?;
    let coords: Vec<Vec<f64>> = atlas.coords.iter().map(|p| p.to_vec()).collect();
    let y: Vec<usize> = pair.labels().iter().map(|&l| usize::from(l == b)).collect();
    let (train, test) = stratified_split(&y, config.train_fraction, config.split_seed);
    if test.is_empty() {
        return Err(LxlError::Validation("held-out split is empty".into()));
    }
    let forest = rf_train(
        &train.iter().map(|&i| coords[i].clone()).collect::<Vec<_>>(),
        &train.iter().map(|&i| y[i]).collect::<Vec<_>>(),
        &config.forest,
        config.forest_seed,
    )?;
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for &i in &test {
        totals[y[i]] += 1;
        if forest.predict(&coords[i]) == y[i] {
            hits[y[i]] += 1;
        }
    }
    let recall = |c: usize| if totals[c] == 0 { 0.0 } else { hits[c] as f64 / totals[c] as f64 };
    Ok(SeparationReport {
        class_a: a,
        class_b: b,
        class_names: [name(a), name(b)],
        accuracy: (hits[0] + hits[1]) as f64 / test.len() as f64,
        recall: [recall(0), recall(1)],
        n_trees: forest.n_trees(),
        train_fraction: config.train_fraction,
        split_seed: config.split_seed,
        forest_seed: config.forest_seed,
        train_size: train.len(),
        test_size: test.len(),
        stress: atlas.stress,
        paper_reference: paper_reference(a, b),
    })
}

/// Rows of `class` with a random half relabelled `pseudo`: a pair that cannot be separated.
pub fn relabeled_halves(e: &EmbeddingSet, class: usize, pseudo: usize, seed: u64) -> Result<EmbeddingSet> {
    let only = e.filter(|l| l == class);
    let mut order: Vec<usize> = (0..only.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = only.labels().to_vec();
    for &i in &order[..only.len() / 2] {
        labels[i] = pseudo;
    }
    EmbeddingSet::new(only.ids().to_vec(), labels, only.vectors().to_vec())
}

/// Mean distance from the atlas centroid per class.
pub fn radial_positions(atlas: &Atlas2D) -> BTreeMap<usize, f64> {
    let n = atlas.coords.len().max(1) as f64;
    let cx = atlas.coords.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = atlas.coords.iter().map(|p| p[1]).sum::<f64>() / n;
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (p, &l) in atlas.coords.iter().zip(&atlas.labels) {
        let e = acc.entry(l).or_default();
        e.0 += (p[0] - cx).hypot(p[1] - cy);
        e.1 += 1;
    }
    acc.into_iter().map(|(l, (s, c))| (l, s / c as f64)).collect()
}
