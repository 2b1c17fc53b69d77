use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, check_features, ClassIndex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_impurity_decrease: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: None, min_samples_split: 2, min_impurity_decrease: 0.0 }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(Error::config("models", "min_samples_split must be at least 2"));
        }
        if !(self.min_impurity_decrease >= 0.0) {
            return Err(Error::config("models", "min_impurity_decrease must be non-negative"));
        }
        Ok(())
    }
}

/// Node of a tree stored as a flat array; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        probs: Vec<f64>,
        class: usize,
        samples: usize,
        impurity: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        impurity: f64,
        samples: usize,
        /// Node impurity minus the sample-weighted child impurity.
        decrease: f64,
        left: usize,
        right: usize,
    },
}

pub fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Midpoint strictly below `hi`, so that `lo <= t < hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi || !m.is_finite() {
        lo
    } else {
        m
    }
}

struct Best {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

/// Feature subsampling for forests: `m` of the features per split.
pub(super) struct FeatureSampler<'a, R: Rng> {
    pub rng: &'a mut R,
    pub m: usize,
}

pub(super) fn grow<R: Rng>(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    rows: Vec<usize>,
    params: &TreeParams,
    mut sampler: Option<FeatureSampler<'_, R>>,
) -> Vec<Node> {
    let n_features = x.first().map_or(0, Vec::len);
    let mut nodes: Vec<Node> = Vec::new();
    // (slot, rows, depth); slots are filled in place so children get stable ids.
    let mut stack = vec![(0usize, rows, 0usize)];
    nodes.push(Node::Leaf { probs: Vec::new(), class: 0, samples: 0, impurity: 0.0 });
    while let Some((slot, idx, depth)) = stack.pop() {
        let n = idx.len();
        let mut counts = vec![0usize; n_classes];
        for &i in &idx {
            counts[y[i]] += 1;
        }
        let impurity = gini(&counts, n);
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n.max(1) as f64).collect();
        let leaf = Node::Leaf { class: argmax(&probs), probs, samples: n, impurity };
        let can_split =
            impurity > 0.0 && n >= params.min_samples_split && params.max_depth.is_none_or(|d| depth < d);
        if !can_split {
            nodes[slot] = leaf;
            continue;
        }
        let features: Vec<usize> = match sampler.as_mut() {
            Some(s) if s.m < n_features => {
                let mut f = index::sample(s.rng, n_features, s.m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..n_features).collect(),
        };
        let best = best_split(x, y, n_classes, &idx, &counts, impurity, &features);
        let accept = best.as_ref().is_some_and(|b| {
            b.decrease >= params.min_impurity_decrease && (b.decrease > 0.0 || params.min_impurity_decrease == 0.0)
        });
        let Some(b) = best.filter(|_| accept) else {
            nodes[slot] = leaf;
            continue;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i][b.feature] <= b.threshold);
        let left = nodes.len();
        nodes.push(Node::Leaf { probs: Vec::new(), class: 0, samples: 0, impurity: 0.0 });
        let right = nodes.len();
        nodes.push(Node::Leaf { probs: Vec::new(), class: 0, samples: 0, impurity: 0.0 });
        nodes[slot] = Node::Split {
            feature: b.feature,
            threshold: b.threshold,
            impurity,
            samples: n,
            decrease: b.decrease,
            left,
            right,
        };
        stack.push((right, r, depth + 1));
        stack.push((left, l, depth + 1));
    }
    nodes
}

fn best_split(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    idx: &[usize],
    counts: &[usize],
    impurity: f64,
    features: &[usize],
) -> Option<Best> {
    let n = idx.len();
    let mut best: Option<Best> = None;
    let mut order = idx.to_vec();
    let mut left = vec![0usize; n_classes];
    for &f in features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        left.iter_mut().for_each(|c| *c = 0);
        for j in 0..n - 1 {
            left[y[order[j]]] += 1;
            let (lo, hi) = (x[order[j]][f], x[order[j + 1]][f]);
            if lo == hi {
                continue;
            }
            let nl = j + 1;
            let nr = n - nl;
            let gl = gini(&left, nl);
            let right: Vec<usize> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
            let gr = gini(&right, nr);
            let decrease = (impurity - (nl as f64 * gl + nr as f64 * gr) / n as f64).max(0.0);
            if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                best = Some(Best { feature: f, threshold: midpoint(lo, hi), decrease });
            }
        }
    }
    best
}

pub(super) fn leaf_probs<'a>(nodes: &'a [Node], row: &[f64]) -> &'a [f64] {
    let mut at = 0;
    loop {
        match &nodes[at] {
            Node::Leaf { probs, .. } => return probs,
            Node::Split { feature, threshold, left, right, .. } => {
                at = if row[*feature] <= *threshold { *left } else { *right };
            }
        }
    }
}

/// Sample-weighted impurity decrease per feature, normalised to sum to 1
/// (all zero for a single-leaf tree).
pub(super) fn node_importance(nodes: &[Node], n_features: usize) -> Vec<f64> {
    let mut imp = vec![0.0; n_features];
    let root = match &nodes[0] {
        Node::Leaf { samples, .. } | Node::Split { samples, .. } => *samples as f64,
    };
    for node in nodes {
        if let Node::Split { feature, samples, decrease, .. } = node {
            imp[*feature] += *samples as f64 / root * decrease;
        }
    }
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        imp.iter_mut().for_each(|v| *v /= total);
    }
    imp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub classes: Vec<String>,
    pub n_features: usize,
    pub params: TreeParams,
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn fit(x: &[Vec<f64>], y: &[String], params: &TreeParams) -> Result<Self> {
        params.validate()?;
        let ci = ClassIndex::new(x, y)?;
        let nodes = grow::<rand_chacha::ChaCha8Rng>(x, &ci.y, ci.classes.len(), (0..x.len()).collect(), params, None);
        Ok(DecisionTree { classes: ci.classes, n_features: ci.n_features, params: params.clone(), nodes })
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_features(rows, self.n_features)?;
        Ok(rows.iter().map(|r| leaf_probs(&self.nodes, r).to_vec()).collect())
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((at, d)) = stack.pop() {
            best = best.max(d);
            if let Node::Split { left, right, .. } = self.nodes[at] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        best
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn feature_importance(&self) -> Vec<f64> {
        node_importance(&self.nodes, self.n_features)
    }
}
