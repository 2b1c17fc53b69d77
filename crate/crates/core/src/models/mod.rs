//! From-scratch classifiers: CART decision tree, bagged random forest and
//! brute-force k-nearest neighbours, plus grid search over k-fold CV.

mod forest;
mod grid;
mod knn;
mod tree;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{ForestParams, RandomForest};
pub use grid::{
    fit_pipeline, fit_with_chain, grid_search, CvRow, FittedPipeline, GridResult, HyperGrid, OutlierSpec, ParamSet, Prediction,
    ResampleSpec, ScopeKind, TrainingPlan,
};
pub use knn::KnnModel;
pub use tree::{gini, DecisionTree, Node, TreeParams};

const MODULE: &str = "models";

/// Labels mapped to indices of the sorted class list.
pub(crate) struct ClassIndex {
    pub classes: Vec<String>,
    pub y: Vec<usize>,
    pub n_features: usize,
}

impl ClassIndex {
    pub fn new(x: &[Vec<f64>], y: &[String]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Fit("empty training set".into()));
        }
        if x.len() != y.len() {
            return Err(Error::shape(MODULE, format!("{} rows but {} labels", x.len(), y.len())));
        }
        let n_features = x[0].len();
        check_features(x, n_features)?;
        if let Some(i) = x.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Fit(format!("training row {i} has a non-finite value")));
        }
        let classes: Vec<String> = y.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let y = y.iter().map(|l| classes.binary_search(l).expect("class present")).collect();
        Ok(ClassIndex { classes, y, n_features })
    }
}

pub(crate) fn check_features(rows: &[Vec<f64>], n_features: usize) -> Result<()> {
    if let Some(r) = rows.iter().find(|r| r.len() != n_features) {
        return Err(Error::shape(MODULE, format!("row has {} features, model expects {n_features}", r.len())));
    }
    Ok(())
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Tree(DecisionTree),
    Forest(RandomForest),
    Knn(KnnModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Tree(_) => "tree",
            Model::Forest(_) => "forest",
            Model::Knn(_) => "knn",
        }
    }

    pub fn classes(&self) -> &[String] {
        match self {
            Model::Tree(m) => &m.classes,
            Model::Forest(m) => &m.classes,
            Model::Knn(m) => &m.classes,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Tree(m) => m.n_features,
            Model::Forest(m) => m.n_features,
            Model::Knn(m) => m.n_features(),
        }
    }

    /// One probability per class, in [`Model::classes`] order.
    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            Model::Tree(m) => m.predict_proba(rows),
            Model::Forest(m) => m.predict_proba(rows),
            Model::Knn(m) => m.predict_proba(rows),
        }
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<String>> {
        let classes = self.classes();
        Ok(self.predict_proba(rows)?.iter().map(|p| classes[argmax(p)].clone()).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Model kind with its hyperparameters, before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Tree(TreeParams),
    Forest(ForestParams),
    Knn { k: usize },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Forest(ForestParams::default())
    }
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::config(MODULE, format!("{name} = {v} is not a non-negative integer")));
    }
    Ok(v as usize)
}

impl ModelSpec {
    pub fn fit(&self, x: &[Vec<f64>], y: &[String]) -> Result<Model> {
        Ok(match self {
            ModelSpec::Tree(p) => Model::Tree(DecisionTree::fit(x, y, p)?),
            ModelSpec::Forest(p) => Model::Forest(RandomForest::fit(x, y, p)?),
            ModelSpec::Knn { k } => Model::Knn(KnnModel::fit(x, y, *k)?),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Tree(_) => "tree",
            ModelSpec::Forest(_) => "forest",
            ModelSpec::Knn { .. } => "knn",
        }
    }

    /// Set one hyperparameter by name; `None` means unbounded where that
    /// makes sense (`max_depth`, `m`).
    pub fn set_param(&mut self, name: &str, value: Option<f64>) -> Result<()> {
        let need = |v: Option<f64>| v.ok_or_else(|| Error::config(MODULE, format!("{name} needs a value")));
        let unknown = || Error::config(MODULE, format!("unknown hyperparameter {name:?} for this model"));
        match self {
            ModelSpec::Tree(p) => match name {
                "max_depth" => p.max_depth = value.map(|v| as_count(name, v)).transpose()?,
                "min_samples_split" => p.min_samples_split = as_count(name, need(value)?)?,
                "min_impurity_decrease" => p.min_impurity_decrease = need(value)?,
                _ => return Err(unknown()),
            },
            ModelSpec::Forest(p) => match name {
                "max_depth" => p.tree.max_depth = value.map(|v| as_count(name, v)).transpose()?,
                "min_samples_split" => p.tree.min_samples_split = as_count(name, need(value)?)?,
                "min_impurity_decrease" => p.tree.min_impurity_decrease = need(value)?,
                "n_trees" => p.n_trees = as_count(name, need(value)?)?,
                "m" | "max_features" => p.max_features = value.map(|v| as_count(name, v)).transpose()?,
                _ => return Err(unknown()),
            },
            ModelSpec::Knn { k } => match name {
                "k" => *k = as_count(name, need(value)?)?,
                _ => return Err(unknown()),
            },
        }
        Ok(())
    }

    /// Smaller is simpler: (trees, depth, neighbours). Unbounded depth
    /// sorts last.
    pub fn complexity(&self) -> (usize, usize, usize) {
        let depth = |d: Option<usize>| d.unwrap_or(usize::MAX);
        match self {
            ModelSpec::Tree(p) => (1, depth(p.max_depth), 0),
            ModelSpec::Forest(p) => (p.n_trees, depth(p.tree.max_depth), 0),
            ModelSpec::Knn { k } => (0, 0, *k),
        }
    }
}

#[cfg(test)]
mod tests;
