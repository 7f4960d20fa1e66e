//! CART classification trees with Gini impurity, shared by the explanation surrogate and the
//! random forest.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LxlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` tries all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 8,
            min_leaf: 5,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: usize,
    pub op: Cmp,
    pub threshold: f64,
}

impl Condition {
    pub fn holds(&self, x: &[f64]) -> bool {
        match self.op {
            Cmp::Le => x[self.feature] <= self.threshold,
            Cmp::Gt => x[self.feature] > self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        label: usize,
        /// Training samples that reached this leaf.
        support: usize,
    },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// One root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafPath {
    pub leaf: usize,
    pub conditions: Vec<Condition>,
    pub label: usize,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

/// Majority label; ties go to the smaller label.
fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

struct Builder<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    config: TreeConfig,
    rng: Option<&'a mut R>,
    nodes: Vec<Node>,
}

impl<R: Rng> Builder<'_, R> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn candidate_features(&mut self, n_features: usize) -> Vec<usize> {
        match (self.config.max_features, self.rng.as_mut()) {
            (Some(m), Some(rng)) if m < n_features => {
                let mut f = sample(&mut **rng, n_features, m.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..n_features).collect(),
        }
    }

    /// Best `(feature, threshold, impurity decrease)` over the candidate features.
    fn best_split(&mut self, idx: &[usize], parent: &[usize]) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let min_leaf = self.config.min_leaf.max(1);
        if n < 2 * min_leaf {
            return None;
        }
        let parent_gini = gini(parent, n);
        let features = self.candidate_features(self.x[idx[0]].len());
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0usize; self.n_classes];
            let mut right = parent.to_vec();
            for pos in 0..n - 1 {
                let c = self.y[order[pos]];
                left[c] += 1;
                right[c] -= 1;
                let nl = pos + 1;
                let (v, next) = (self.x[order[pos]][f], self.x[order[pos + 1]][f]);
                if nl < min_leaf || n - nl < min_leaf || v == next {
                    continue;
                }
                let weighted = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
                let gain = parent_gini - weighted;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.2 + 1e-12) {
                    let mut threshold = v + (next - v) / 2.0;
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some((f, threshold, gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            label: majority(&counts),
            support: idx.len(),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.config.max_depth {
            return id;
        }
        let Some((feature, threshold, _)) = self.best_split(&idx, &counts) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl DecisionTree {
    /// Fits a tree on rows `x` with labels in `0..n_classes`. `rng` is needed only when
    /// `config.max_features` restricts the features tried per split.
    pub fn fit<R: Rng>(x: &[Vec<f64>], y: &[usize], n_classes: usize, config: TreeConfig, rng: Option<&mut R>) -> Result<DecisionTree> {
        let first = x.first().ok_or_else(|| LxlError::Empty("tree training set".into()))?;
        let n_features = first.len();
        if x.len() != y.len() {
            return Err(LxlError::shape("tree labels", x.len(), y.len()));
        }
        if x.iter().any(|r| r.len() != n_features) {
            return Err(LxlError::Validation("tree rows have different lengths".into()));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LxlError::NonFinite("tree features".into()));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
            return Err(LxlError::Validation(format!("label {bad} outside 0..{n_classes}")));
        }
        let mut b = Builder {
            x,
            y,
            n_classes,
            config,
            rng,
            nodes: Vec::new(),
        };
        b.grow((0..x.len()).collect(), 0);
        Ok(DecisionTree {
            nodes: b.nodes,
            n_features,
        })
    }

    /// Builds a tree from explicit nodes; node 0 is the root and children must follow parents.
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Result<DecisionTree> {
        if nodes.is_empty() {
            return Err(LxlError::Empty("tree nodes".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { feature, left, right, .. } = *n {
                if feature >= n_features || left <= i || right <= i || left >= nodes.len() || right >= nodes.len() {
                    return Err(LxlError::Validation(format!("malformed split at node {i}")));
                }
            }
        }
        Ok(DecisionTree { nodes, n_features })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { label, .. } => label,
            Node::Split { .. } => unreachable!("leaf_index ends at a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        self.paths().iter().map(|p| p.conditions.len()).max().unwrap_or(0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Every root-to-leaf path, left subtrees first.
    pub fn paths(&self) -> Vec<LeafPath> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((i, conds)) = stack.pop() {
            match self.nodes[i] {
                Node::Leaf { label, support } => out.push(LeafPath {
                    leaf: i,
                    conditions: conds,
                    label,
                    support,
                }),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let mut r = conds.clone();
                    r.push(Condition {
                        feature,
                        op: Cmp::Gt,
                        threshold,
                    });
                    let mut l = conds;
                    l.push(Condition {
                        feature,
                        op: Cmp::Le,
                        threshold,
                    });
                    stack.push((right, r));
                    stack.push((left, l));
                }
            }
        }
        out
    }

    /// Conditions on the path that `x` follows.
    pub fn path_for(&self, x: &[f64]) -> LeafPath {
        let leaf = self.leaf_index(x);
        self.paths().into_iter().find(|p| p.leaf == leaf).expect("every leaf has a path")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn fit(x: &[Vec<f64>], y: &[usize], cfg: TreeConfig) -> DecisionTree {
        DecisionTree::fit::<ChaCha8Rng>(x, y, 2, cfg, None).unwrap()
    }

    #[test]
    fn single_label_gives_one_leaf() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let t = fit(&x, &[1; 20], TreeConfig::default());
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[3.0]), 1);
        assert_eq!(t.depth(), 0);
    }

    #[test]
    fn threshold_splits_separable_line() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 0.0]).collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let t = fit(&x, &y, TreeConfig::default());
        assert_eq!(t.depth(), 1);
        assert!(x.iter().zip(&y).all(|(r, &l)| t.predict(r) == l));
        match t.nodes()[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 9.5);
            }
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn min_leaf_blocks_small_children() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let y = vec![0, 1, 1, 1, 1, 1, 1, 1];
        let t = fit(&x, &y, TreeConfig { min_leaf: 2, ..TreeConfig::default() });
        for p in t.paths() {
            assert!(p.support >= 2);
        }
        let t = fit(&x, &y, TreeConfig { min_leaf: 5, ..TreeConfig::default() });
        assert_eq!(t.nodes().len(), 1);
    }

    #[test]
    fn paths_cover_every_leaf_and_agree_with_predict() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 7) as f64, (i / 7) as f64]).collect();
        let y: Vec<usize> = x.iter().map(|r| usize::from(r[0] + r[1] > 6.0)).collect();
        let t = fit(&x, &y, TreeConfig { min_leaf: 1, ..TreeConfig::default() });
        let paths = t.paths();
        assert_eq!(paths.len(), t.leaf_count());
        for r in &x {
            let p = t.path_for(r);
            assert!(p.conditions.iter().all(|c| c.holds(r)));
            assert_eq!(p.label, t.predict(r));
        }
    }
}
