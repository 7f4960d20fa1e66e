use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Neighborhood;
use crate::dataset::NUM_CLASSES;
use crate::error::{LxlError, Result, Stage};
use crate::tree::{Condition, DecisionTree, TreeConfig};

/// A conjunction of axis-aligned latent conditions implying a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub premise: Vec<Condition>,
    pub consequence: usize,
    /// Neighbourhood points in the leaf the rule was read from.
    pub support: usize,
}

impl Rule {
    pub fn holds(&self, z: &[f64]) -> bool {
        self.premise.iter().all(|c| c.holds(z))
    }

    pub fn violations(&self, z: &[f64]) -> usize {
        self.premise.iter().filter(|c| !c.holds(z)).count()
    }

    /// True when no two conditions on the same feature exclude each other.
    pub fn is_consistent(&self) -> bool {
        let mut bounds: std::collections::BTreeMap<usize, (f64, f64)> = Default::default();
        for c in &self.premise {
            let b = bounds.entry(c.feature).or_insert((f64::NEG_INFINITY, f64::INFINITY));
            match c.op {
                crate::tree::Cmp::Le => b.1 = b.1.min(c.threshold),
                crate::tree::Cmp::Gt => b.0 = b.0.max(c.threshold),
            }
            if b.0 >= b.1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateTree {
    pub tree: DecisionTree,
    /// Agreement with the black-box labels on the neighbourhood.
    pub fidelity: f64,
    /// Set when the neighbourhood had one label, so no counterfactual exists.
    pub single_label: bool,
}

pub fn surrogate_config() -> TreeConfig {
    TreeConfig {
        max_depth: 8,
        min_leaf: 5,
        max_features: None,
    }
}

pub(crate) fn to_f64(z: &[f32]) -> Vec<f64> {
    z.iter().map(|&v| f64::from(v)).collect()
}

/// Fits a Gini tree on the neighbourhood's latent codes labelled by the black box.
pub fn fit_surrogate(h: &Neighborhood) -> Result<SurrogateTree> {
    let x: Vec<Vec<f64>> = h.candidates.iter().map(|c| to_f64(&c.z)).collect();
    let y: Vec<usize> = h.candidates.iter().map(|c| c.label).collect();
    let n_classes = y.iter().copied().max().map_or(NUM_CLASSES, |m| (m + 1).max(NUM_CLASSES));
    let tree = DecisionTree::fit::<ChaCha8Rng>(&x, &y, n_classes, surrogate_config(), None).map_err(|e| e.at(Stage::Surrogate))?;
    let agree = x.iter().zip(&y).filter(|(r, &l)| tree.predict(r) == l).count();
    let single_label = y.iter().all(|&l| l == y[0]);
    Ok(SurrogateTree {
        fidelity: agree as f64 / y.len() as f64,
        single_label,
        tree,
    })
}

/// The rule on `z`'s path and the counterfactual rules of every leaf predicting another class,
/// ordered by how many conditions `z` violates, then by larger support, then by leaf position.
pub fn extract_rules(tree: &DecisionTree, z: &[f64]) -> Result<(Rule, Vec<Rule>)> {
    if z.len() != tree.n_features() {
        return Err(LxlError::shape("rule anchor", tree.n_features(), z.len()).at(Stage::Rules));
    }
    let paths = tree.paths();
    let own = tree.leaf_index(z);
    let path = paths.iter().find(|p| p.leaf == own).expect("anchor leaf is a tree leaf");
    let r = Rule {
        premise: path.conditions.clone(),
        consequence: path.label,
        support: path.support,
    };
    let mut phi: Vec<(usize, Rule)> = paths
        .iter()
        .filter(|p| p.label != r.consequence)
        .map(|p| {
            let rule = Rule {
                premise: p.conditions.clone(),
                consequence: p.label,
                support: p.support,
            };
            (rule.violations(z), rule)
        })
        .collect();
    phi.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.support.cmp(&a.1.support)));
    Ok((r, phi.into_iter().map(|(_, rule)| rule).collect()))
}
