use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_features, ClassIndex};
use crate::error::{Error, Result};

/// Exact k-nearest neighbours under Euclidean distance. Features should be
/// scaled first; raw byte counts otherwise dominate the distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub classes: Vec<String>,
    pub k: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KnnModel {
    pub fn fit(x: &[Vec<f64>], y: &[String], k: usize) -> Result<Self> {
        let ci = ClassIndex::new(x, y)?;
        if k == 0 || k > x.len() {
            return Err(Error::config("models", format!("k = {k} must lie in [1, {}]", x.len())));
        }
        Ok(KnnModel { classes: ci.classes, k, x: x.to_vec(), y: ci.y })
    }

    pub fn n_features(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Training row indices of the k nearest points, nearest first; equal
    /// distances go to the lower index.
    pub fn neighbors(&self, q: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self.x.iter().enumerate().map(|(i, r)| (sq_dist(r, q), i)).collect();
        let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, by);
            d.truncate(self.k);
        }
        d.sort_by(by);
        d.into_iter().map(|(_, i)| i).collect()
    }

    /// Vote fractions among the neighbours.
    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_features(rows, self.n_features())?;
        Ok(rows
            .par_iter()
            .map(|q| {
                let mut votes = vec![0.0; self.classes.len()];
                for i in self.neighbors(q) {
                    votes[self.y[i]] += 1.0;
                }
                votes.iter_mut().for_each(|v| *v /= self.k as f64);
                votes
            })
            .collect())
    }
}
