use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LxlError, Result};
use crate::tree::{DecisionTree, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            max_depth: 32,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    n_classes: usize,
}

/// Bootstrap-sampled Gini trees with sqrt-many features tried per split. Tree `t` draws from
/// stream `t` of a ChaCha generator seeded with `seed`, so the forest does not depend on how
/// trees are scheduled.
pub fn rf_train(x: &[Vec<f64>], labels: &[usize], config: &ForestConfig, seed: u64) -> Result<RandomForest> {
    if config.n_trees == 0 {
        return Err(LxlError::Config("forest needs at least one tree".into()));
    }
    if x.len() != labels.len() {
        return Err(LxlError::shape("forest labels", x.len(), labels.len()));
    }
    let first = *labels.first().ok_or_else(|| LxlError::Empty("forest training set".into()))?;
    if labels.iter().all(|&l| l == first) {
        return Err(LxlError::Validation("forest needs at least two classes".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let n_features = x[0].len();
    let tree_config = TreeConfig {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        max_features: Some(((n_features as f64).sqrt().floor() as usize).max(1)),
    };
    let trees = crate::parallel::map_range(config.n_trees, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let picks: Vec<usize> = (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect();
        let bx: Vec<Vec<f64>> = picks.iter().map(|&i| x[i].clone()).collect();
        let by: Vec<usize> = picks.iter().map(|&i| labels[i]).collect();
        DecisionTree::fit(&bx, &by, n_classes, tree_config, Some(&mut rng))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(RandomForest { trees, n_classes })
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut v = vec![0; self.n_classes];
        for t in &self.trees {
            v[t.predict(x)] += 1;
        }
        v
    }

    /// Majority vote; ties go to the smaller label.
    pub fn predict(&self, x: &[f64]) -> usize {
        let v = self.votes(x);
        (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
    }

    pub fn predict_batch(&self, x: &[Vec<f64>]) -> Vec<usize> {
        crate::parallel::map(x, |r| self.predict(r))
    }
}
