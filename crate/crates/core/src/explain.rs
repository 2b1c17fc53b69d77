//! Global explanations: impurity (Gini) importance, permutation importance
//! with optional correlated-feature grouping, and partial dependence.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::models::Model;
use crate::transforms::{quantile_sorted, LabeledRows};

const MODULE: &str = "explainability";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    /// Column name, or group members joined with `+`.
    pub feature: String,
    pub columns: Vec<String>,
    pub importance: f64,
    pub std: f64,
    /// 1 is most important.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub method: String,
    pub metric: Option<String>,
    pub repeats: usize,
    pub rows: Vec<Importance>,
}

impl ImportanceTable {
    fn new(method: &str, metric: Option<String>, repeats: usize, mut rows: Vec<Importance>) -> Self {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[b].importance.total_cmp(&rows[a].importance).then(a.cmp(&b)));
        for (r, &i) in order.iter().enumerate() {
            rows[i].rank = r + 1;
        }
        ImportanceTable { method: method.into(), metric, repeats, rows }
    }

    pub fn get(&self, feature: &str) -> Option<&Importance> {
        self.rows.iter().find(|r| r.feature == feature)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "feature", "columns", "importance", "std", "repeats", "method"])?;
        let mut rows: Vec<&Importance> = self.rows.iter().collect();
        rows.sort_by_key(|r| r.rank);
        for r in rows {
            w.write_record([
                r.rank.to_string(),
                r.feature.clone(),
                r.columns.join(" "),
                r.importance.to_string(),
                r.std.to_string(),
                self.repeats.to_string(),
                self.method.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<importance table>", e))?;
        Ok(())
    }

    /// Horizontal bars scaled to the largest magnitude.
    pub fn render_text(&self, width: usize) -> String {
        let mut rows: Vec<&Importance> = self.rows.iter().collect();
        rows.sort_by_key(|r| r.rank);
        let name_w = rows.iter().map(|r| r.feature.len()).max().unwrap_or(0);
        let top = rows.iter().map(|r| r.importance.abs()).fold(0.0, f64::max);
        let mut s = String::new();
        for r in rows {
            let len = if top > 0.0 { (r.importance.abs() / top * width as f64).round() as usize } else { 0 };
            let bar = if r.importance < 0.0 { "-".repeat(len) } else { "#".repeat(len) };
            let _ = writeln!(s, "{:<name_w$}  {:>9.5}  {bar}", r.feature, r.importance);
        }
        s
    }
}

/// Mean decrease in impurity. Per-tree importances are normalised to sum
/// to 1 and then averaged over trees.
pub fn gini_importance(model: &Model, features: &[String]) -> Result<ImportanceTable> {
    let per_tree = match model {
        Model::Tree(t) => vec![t.feature_importance()],
        Model::Forest(f) => f.tree_importances(),
        Model::Knn(_) => {
            return Err(Error::UnsupportedModel("k-NN has no impurity bookkeeping; use permutation importance".into()))
        }
    };
    if features.len() != model.n_features() {
        return Err(Error::shape(MODULE, format!("{} names for {} features", features.len(), model.n_features())));
    }
    let t = per_tree.len() as f64;
    let rows = features
        .iter()
        .enumerate()
        .map(|(j, name)| Importance {
            feature: name.clone(),
            columns: vec![name.clone()],
            importance: per_tree.iter().map(|v| v[j]).sum::<f64>() / t,
            std: 0.0,
            rank: 0,
        })
        .collect();
    Ok(ImportanceTable::new("gini", None, per_tree.len(), rows))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Single-linkage clusters of columns joined whenever |r| ≥ threshold.
/// Constant columns correlate with nothing.
pub fn correlation_groups(rows: &LabeledRows, threshold: f64) -> Vec<Vec<usize>> {
    let f = rows.columns.len();
    let cols: Vec<Vec<f64>> = (0..f).map(|j| rows.x.iter().map(|r| r[j]).collect()).collect();
    let mut parent: Vec<usize> = (0..f).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for a in 0..f {
        for b in a + 1..f {
            if pearson(&cols[a], &cols[b]).abs() >= threshold {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; f];
    for j in 0..f {
        let r = root(&mut parent, j);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(j);
    }
    groups
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Grouping {
    /// One entry per column.
    #[default]
    None,
    Correlation { threshold: f64 },
    Explicit { groups: Vec<Vec<String>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationConfig {
    pub metric: String,
    pub repeats: usize,
    pub seed: u64,
    pub grouping: Grouping,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            metric: "macro_f1".into(),
            repeats: 10,
            seed: 0,
            grouping: Grouping::Correlation { threshold: 0.9 },
        }
    }
}

fn score(model: &Model, metric: Metric, x: &[Vec<f64>], y: &[String]) -> Result<f64> {
    metric.score(y, &model.predict(x)?)
}

/// Score drop when a column (or all columns of a group, under one shared
/// permutation) is shuffled. Use validation rows, not test rows.
pub fn permutation_importance(model: &Model, rows: &LabeledRows, cfg: &PermutationConfig) -> Result<ImportanceTable> {
    let metric = Metric::from_str(&cfg.metric)?;
    if cfg.repeats == 0 {
        return Err(Error::config(MODULE, "repeats must be at least 1"));
    }
    if rows.is_empty() {
        return Err(Error::shape(MODULE, "no rows to explain on"));
    }
    let groups: Vec<Vec<usize>> = match &cfg.grouping {
        Grouping::None => (0..rows.columns.len()).map(|j| vec![j]).collect(),
        Grouping::Correlation { threshold } => correlation_groups(rows, *threshold),
        Grouping::Explicit { groups } => groups
            .iter()
            .map(|g| g.iter().map(|c| feature_index(rows, c)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?,
    };
    let base = score(model, metric, &rows.x, &rows.y)?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = groups.iter().map(|_| master.gen()).collect();
    let out = groups
        .par_iter()
        .zip(seeds)
        .map(|(g, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            let mut drops = Vec::with_capacity(cfg.repeats);
            for _ in 0..cfg.repeats {
                perm.shuffle(&mut rng);
                let mut x = rows.x.clone();
                for (i, &p) in perm.iter().enumerate() {
                    for &j in g {
                        x[i][j] = rows.x[p][j];
                    }
                }
                drops.push(base - score(model, metric, &x, &rows.y)?);
            }
            let n = drops.len() as f64;
            let mean = drops.iter().sum::<f64>() / n;
            let std = (drops.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
            let columns: Vec<String> = g.iter().map(|&j| rows.columns[j].clone()).collect();
            Ok(Importance { feature: columns.join("+"), columns, importance: mean, std, rank: 0 })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImportanceTable::new("permutation", Some(cfg.metric.clone()), cfg.repeats, out))
}

fn feature_index(rows: &LabeledRows, name: &str) -> Result<usize> {
    rows.columns
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| Error::config(MODULE, format!("feature {name:?} not among the model inputs")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdpGrid {
    Values(Vec<f64>),
    /// Equally spaced quantiles of the feature, duplicates removed.
    Quantiles(usize),
}

impl Default for PdpGrid {
    fn default() -> Self {
        PdpGrid::Quantiles(20)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpCurve {
    pub feature: String,
    pub classes: Vec<String>,
    pub grid: Vec<f64>,
    /// `mean_proba[g][c]`: average probability of class `c` with the feature set to `grid[g]`.
    pub mean_proba: Vec<Vec<f64>>,
}

impl PdpCurve {
    /// Curve for one class.
    pub fn class_curve(&self, c: usize) -> Vec<f64> {
        self.mean_proba.iter().map(|p| p[c]).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![self.feature.clone()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header)?;
        for (v, p) in self.grid.iter().zip(&self.mean_proba) {
            let mut rec = vec![v.to_string()];
            rec.extend(p.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<pdp>", e))?;
        Ok(())
    }
}

/// Partial dependence: overwrite `feature` with each grid value in every
/// row and average the predicted probabilities. Assumes the feature is
/// roughly independent of the others.
pub fn partial_dependence(model: &Model, rows: &LabeledRows, feature: &str, grid: &PdpGrid) -> Result<PdpCurve> {
    let j = feature_index(rows, feature)?;
    if rows.is_empty() {
        return Err(Error::shape(MODULE, "no rows to explain on"));
    }
    let values = match grid {
        PdpGrid::Values(v) => v.clone(),
        PdpGrid::Quantiles(q) => {
            let mut col: Vec<f64> = rows.x.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            let q = (*q).max(1);
            let mut v: Vec<f64> = (0..q)
                .map(|i| quantile_sorted(&col, if q == 1 { 0.5 } else { i as f64 / (q - 1) as f64 }))
                .collect();
            v.dedup();
            v
        }
    };
    let mean_proba = values
        .par_iter()
        .map(|&v| {
            let x: Vec<Vec<f64>> = rows
                .x
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r[j] = v;
                    r
                })
                .collect();
            let p = model.predict_proba(&x)?;
            let n = p.len() as f64;
            let mut acc = vec![0.0; model.classes().len()];
            for row in &p {
                acc.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            acc.iter_mut().for_each(|a| *a /= n);
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PdpCurve { feature: feature.into(), classes: model.classes().to_vec(), grid: values, mean_proba })
}
