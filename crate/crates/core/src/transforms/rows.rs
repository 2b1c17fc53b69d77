use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scale::quantile_sorted;
use crate::dataset::{ColumnData, ColumnKind, Dataset, LABEL};
use crate::error::{Error, Result};
use crate::split::Partition;

/// Feature matrix with labels, partition tags and source row ids.
/// Synthetic rows have no row id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRows {
    pub columns: Vec<String>,
    /// Encoded categorical indicator columns.
    pub categorical: Vec<bool>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<String>,
    pub partitions: Vec<Partition>,
    pub row_ids: Vec<Option<usize>>,
}

/// Model inputs: every non-metadata, non-label column with numeric data.
pub fn feature_columns(ds: &Dataset) -> Result<(Vec<String>, Vec<bool>)> {
    let mut names = Vec::new();
    let mut categorical = Vec::new();
    for c in ds.columns() {
        match (c.kind, &c.data) {
            (ColumnKind::Numeric, ColumnData::Num(_)) => {
                names.push(c.name.clone());
                categorical.push(false);
            }
            (ColumnKind::Categorical, ColumnData::Num(_)) => {
                names.push(c.name.clone());
                categorical.push(true);
            }
            (ColumnKind::Categorical, _) => {
                return Err(Error::config("transforms", format!("categorical column {:?} must be encoded first", c.name)))
            }
            _ => {}
        }
    }
    Ok((names, categorical))
}

impl LabeledRows {
    /// Rows that are all training rows with ids `0..n`.
    pub fn new(columns: Vec<String>, x: Vec<Vec<f64>>, y: Vec<String>) -> Result<Self> {
        if x.len() != y.len() || x.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::shape("transforms", "feature rows and labels disagree in shape"));
        }
        let n = x.len();
        Ok(LabeledRows {
            categorical: vec![false; columns.len()],
            columns,
            x,
            y,
            partitions: vec![Partition::Train; n],
            row_ids: (0..n).map(Some).collect(),
        })
    }

    /// Gather `rows` of a transformed table, all tagged `partition`.
    pub fn from_dataset(ds: &Dataset, rows: &[usize], partition: Partition) -> Result<Self> {
        let (columns, categorical) = feature_columns(ds)?;
        let data: Vec<&[f64]> = columns.iter().map(|c| ds.require_nums(c, "transforms")).collect::<Result<_>>()?;
        let labels = ds.labels().ok_or_else(|| Error::config("transforms", format!("missing {LABEL:?} column")))?;
        let mut x = Vec::with_capacity(rows.len());
        for &i in rows {
            if i >= ds.n_rows() {
                return Err(Error::Lineage(format!("row {i} outside a table of {} rows", ds.n_rows())));
            }
            let row: Vec<f64> = data.iter().map(|c| c[i]).collect();
            if let Some(j) = row.iter().position(|v| v.is_nan()) {
                return Err(Error::config("transforms", format!("row {i} has a missing value in {:?}", columns[j])));
            }
            x.push(row);
        }
        Ok(LabeledRows {
            columns,
            categorical,
            x,
            y: rows.iter().map(|&i| labels[i].clone()).collect(),
            partitions: vec![partition; rows.len()],
            row_ids: rows.iter().map(|&i| Some(i)).collect(),
        })
    }

    /// The fit rows of a scope, as training rows.
    pub fn from_scope(ds: &Dataset, scope: &super::FitScope) -> Result<Self> {
        scope.check_table(ds)?;
        Self::from_dataset(ds, scope.rows(), Partition::Train)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        LabeledRows {
            columns: self.columns.clone(),
            categorical: self.categorical.clone(),
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i].clone()).collect(),
            partitions: idx.iter().map(|&i| self.partitions[i]).collect(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for y in &self.y {
            *out.entry(y.clone()).or_default() += 1;
        }
        out
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::TransformMismatch(format!("column {name:?} not among the features")))
    }

    fn ensure_train(&self, op: &str) -> Result<()> {
        if let Some(i) = self.partitions.iter().position(|&p| p != Partition::Train) {
            return Err(Error::leakage(
                "transforms",
                format!("{op} may only touch training rows, row {:?} is tagged {}", self.row_ids[i], self.partitions[i]),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnBounds {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub method: String,
    pub threshold: f64,
    pub columns: Vec<ColumnBounds>,
}

fn column_values(rows: &LabeledRows, j: usize) -> Vec<f64> {
    rows.x.iter().map(|r| r[j]).collect()
}

/// Keep `|x - mean| <= t * sigma` per column (population sigma).
pub fn outlier_bounds_zscore(rows: &LabeledRows, columns: &[String], t: f64) -> Result<Bounds> {
    rows.ensure_train("outlier fitting")?;
    let mut out = Vec::with_capacity(columns.len());
    for name in columns {
        let v = column_values(rows, rows.column_index(name)?);
        if v.is_empty() {
            return Err(Error::Fit("outlier bounds need at least one row".into()));
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        out.push(ColumnBounds { name: name.clone(), lo: mean - t * sd, hi: mean + t * sd });
    }
    Ok(Bounds { method: "zscore".into(), threshold: t, columns: out })
}

/// Keep `[Q1 - m * IQR, Q3 + m * IQR]` per column.
pub fn outlier_bounds_iqr(rows: &LabeledRows, columns: &[String], m: f64) -> Result<Bounds> {
    rows.ensure_train("outlier fitting")?;
    let mut out = Vec::with_capacity(columns.len());
    for name in columns {
        let mut v = column_values(rows, rows.column_index(name)?);
        if v.is_empty() {
            return Err(Error::Fit("outlier bounds need at least one row".into()));
        }
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let q3 = quantile_sorted(&v, 0.75);
        let iqr = q3 - q1;
        out.push(ColumnBounds { name: name.clone(), lo: q1 - m * iqr, hi: q3 + m * iqr });
    }
    Ok(Bounds { method: "iqr".into(), threshold: m, columns: out })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub rows_removed: usize,
    /// Rows outside each column's bounds (a row may count for several).
    pub flagged_by_column: BTreeMap<String, usize>,
}

/// Drop rows outside any column's bounds.
pub fn remove_outliers(rows: &LabeledRows, bounds: &Bounds) -> Result<(LabeledRows, OutlierReport)> {
    rows.ensure_train("outlier removal")?;
    let idx: Vec<usize> = bounds.columns.iter().map(|b| rows.column_index(&b.name)).collect::<Result<_>>()?;
    let mut report = OutlierReport::default();
    let mut keep = Vec::with_capacity(rows.len());
    for (i, r) in rows.x.iter().enumerate() {
        let mut ok = true;
        for (b, &j) in bounds.columns.iter().zip(&idx) {
            if r[j] < b.lo || r[j] > b.hi {
                ok = false;
                *report.flagged_by_column.entry(b.name.clone()).or_default() += 1;
            }
        }
        if ok {
            keep.push(i);
        }
    }
    report.rows_removed = rows.len() - keep.len();
    Ok((rows.select(&keep), report))
}

/// Cap every class at `ratio` times the smallest class, sampling uniformly.
pub fn undersample(rows: &LabeledRows, ratio: f64, seed: u64) -> Result<LabeledRows> {
    rows.ensure_train("undersampling")?;
    if !(ratio >= 1.0) {
        return Err(Error::config("transforms", format!("undersampling ratio {ratio} must be at least 1")));
    }
    let counts = rows.class_counts();
    let Some(&minority) = counts.values().min() else {
        return Ok(rows.clone());
    };
    let cap = (ratio * minority as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; rows.len()];
    for (class, &count) in &counts {
        if count <= cap {
            continue;
        }
        let members: Vec<usize> = (0..rows.len()).filter(|&i| &rows.y[i] == class).collect();
        let chosen = index::sample(&mut rng, count, cap);
        let mut mask = vec![false; count];
        for c in chosen.iter() {
            mask[c] = true;
        }
        for (m, &i) in members.iter().enumerate() {
            keep[i] = mask[m];
        }
    }
    let idx: Vec<usize> = (0..rows.len()).filter(|&i| keep[i]).collect();
    Ok(rows.select(&idx))
}

/// Provenance of one SMOTE row: indices refer to the input rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRow {
    pub base: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

fn sq_dist(a: &[f64], b: &[f64], numeric: &[usize]) -> f64 {
    numeric.iter().map(|&j| (a[j] - b[j]).powi(2)).sum()
}

/// Oversample every class up to the largest class count by interpolating
/// between a random member and one of its `k` nearest same-class neighbours.
/// Indicator columns are copied from the base row.
pub fn smote(rows: &LabeledRows, k: usize, seed: u64) -> Result<(LabeledRows, Vec<SyntheticRow>)> {
    rows.ensure_train("smote")?;
    if k == 0 {
        return Err(Error::config("transforms", "smote needs k >= 1"));
    }
    let counts = rows.class_counts();
    let Some(&majority) = counts.values().max() else {
        return Ok((rows.clone(), Vec::new()));
    };
    let numeric: Vec<usize> = (0..rows.columns.len()).filter(|&j| !rows.categorical[j]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = rows.clone();
    let mut made = Vec::new();
    for (class, &count) in &counts {
        if count == majority {
            continue;
        }
        if count <= k {
            return Err(Error::config(
                "transforms",
                format!("class {class:?} has {count} rows, smote with k = {k} needs more; choose a smaller k"),
            ));
        }
        let members: Vec<usize> = (0..rows.len()).filter(|&i| &rows.y[i] == class).collect();
        let neighbours: Vec<Vec<usize>> = members
            .iter()
            .map(|&a| {
                let mut others: Vec<(f64, usize)> = members
                    .iter()
                    .filter(|&&b| b != a)
                    .map(|&b| (sq_dist(&rows.x[a], &rows.x[b], &numeric), b))
                    .collect();
                others.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
                others.into_iter().take(k).map(|(_, b)| b).collect()
            })
            .collect();
        for _ in 0..majority - count {
            let m = rng.gen_range(0..members.len());
            let base = members[m];
            let neighbor = *neighbours[m].choose(&mut rng).expect("k >= 1 neighbours");
            let lambda: f64 = rng.gen();
            let x: Vec<f64> = (0..rows.columns.len())
                .map(|j| {
                    let (a, b) = (rows.x[base][j], rows.x[neighbor][j]);
                    if rows.categorical[j] {
                        a
                    } else {
                        a + lambda * (b - a)
                    }
                })
                .collect();
            out.x.push(x);
            out.y.push(class.clone());
            out.partitions.push(Partition::Train);
            out.row_ids.push(None);
            made.push(SyntheticRow { base, neighbor, lambda });
        }
    }
    Ok((out, made))
}
