use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, leaf_probs, node_importance, FeatureSampler, Node, TreeParams};
use super::{check_features, ClassIndex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features considered per split; `None` is ⌈√F⌉.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, max_features: None, bootstrap: true, tree: TreeParams::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestTree {
    pub seed: u64,
    /// Out-of-bag rows as a hex bitmask, row `i` in bit `i % 8` of byte `i / 8`.
    pub oob_mask: String,
    pub nodes: Vec<Node>,
}

impl ForestTree {
    pub fn oob_rows(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (b, pair) in self.oob_mask.as_bytes().chunks(2).enumerate() {
            let byte = u8::from_str_radix(std::str::from_utf8(pair).unwrap_or("00"), 16).unwrap_or(0);
            for bit in 0..8 {
                if byte >> bit & 1 == 1 {
                    out.push(b * 8 + bit);
                }
            }
        }
        out
    }
}

fn hex_mask(bits: &[bool]) -> String {
    bits.chunks(8)
        .map(|c| {
            let byte = c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << i));
            format!("{byte:02x}")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub classes: Vec<String>,
    pub n_features: usize,
    /// Resolved features per split.
    pub m: usize,
    pub params: ForestParams,
    pub trees: Vec<ForestTree>,
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[String], params: &ForestParams) -> Result<Self> {
        params.tree.validate()?;
        let ci = ClassIndex::new(x, y)?;
        if params.n_trees == 0 {
            return Err(Error::config("models", "n_trees must be at least 1"));
        }
        let f = ci.n_features;
        let m = params.max_features.unwrap_or_else(|| (f as f64).sqrt().ceil() as usize);
        if f > 0 && !(1..=f).contains(&m) {
            return Err(Error::config("models", format!("m = {m} must lie in [1, {f}]")));
        }
        let mut master = ChaCha8Rng::seed_from_u64(params.seed);
        let seeds: Vec<u64> = (0..params.n_trees).map(|_| master.gen()).collect();
        let n = x.len();
        let n_classes = ci.classes.len();
        let trees = seeds
            .into_par_iter()
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let rows: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut in_bag = vec![false; n];
                rows.iter().for_each(|&i| in_bag[i] = true);
                let oob: Vec<bool> = in_bag.iter().map(|b| !b).collect();
                let sampler = FeatureSampler { rng: &mut rng, m };
                let nodes = grow(x, &ci.y, n_classes, rows, &params.tree, Some(sampler));
                ForestTree { seed, oob_mask: hex_mask(&oob), nodes }
            })
            .collect();
        Ok(RandomForest { classes: ci.classes, n_features: f, m, params: params.clone(), trees })
    }

    /// Mean of the per-tree leaf probabilities.
    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_features(rows, self.n_features)?;
        let k = self.classes.len();
        let t = self.trees.len() as f64;
        Ok(rows
            .par_iter()
            .map(|r| {
                let mut acc = vec![0.0; k];
                for tree in &self.trees {
                    for (a, p) in acc.iter_mut().zip(leaf_probs(&tree.nodes, r)) {
                        *a += p;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= t);
                acc
            })
            .collect())
    }

    pub fn tree_importances(&self) -> Vec<Vec<f64>> {
        self.trees.iter().map(|t| node_importance(&t.nodes, self.n_features)).collect()
    }
}
