//! Train-fitted feature transforms with leakage guards.
//!
//! Every fit runs over a [`FitScope`], a row set checked against the split
//! so it cannot contain evaluation rows. The fitted transform remembers the
//! scope's fingerprint and refuses to apply under any other scope.

mod encode;
mod pca;
mod rows;
mod scale;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::split::{fingerprint_rows, DesignSet, Fold, Partition, SplitAssignment};

pub use encode::{bin_port, bin_ports, OneHotColumn, PortBin};
pub use pca::{jacobi_eigen, PcaModel};
pub use rows::{
    feature_columns,
    outlier_bounds_iqr, outlier_bounds_zscore, remove_outliers, smote, undersample, Bounds, ColumnBounds, LabeledRows,
    OutlierReport,
    SyntheticRow,
};
pub use scale::{quantile_sorted, MinMaxParams, RobustParams, StandardParams};

const MODULE: &str = "transforms";

/// Row set a transform may be fitted on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitScope {
    rows: Vec<usize>,
    table_rows: usize,
    fingerprint: String,
}

impl FitScope {
    fn checked(mut rows: Vec<usize>, forbidden: &BTreeSet<usize>, table_rows: usize) -> Result<Self> {
        rows.sort_unstable();
        rows.dedup();
        if let Some(r) = rows.iter().find(|r| forbidden.contains(r)) {
            return Err(Error::leakage(MODULE, format!("fit rows include evaluation row {r}")));
        }
        if let Some(r) = rows.iter().find(|&&r| r >= table_rows) {
            return Err(Error::Lineage(format!("fit row {r} outside a table of {table_rows} rows")));
        }
        if rows.is_empty() {
            return Err(Error::config(MODULE, "fit scope is empty"));
        }
        let fingerprint = fingerprint_rows(&rows);
        Ok(FitScope { rows, table_rows, fingerprint })
    }

    /// The training partition of a split.
    pub fn train(assignment: &SplitAssignment) -> Result<Self> {
        Self::for_rows(assignment.rows(Partition::Train), assignment)
    }

    /// Arbitrary rows, all of which must be tagged train.
    pub fn for_rows(rows: Vec<usize>, assignment: &SplitAssignment) -> Result<Self> {
        let forbidden: BTreeSet<usize> = (0..assignment.len())
            .filter(|&i| assignment.partitions[i] != Partition::Train)
            .collect();
        Self::checked(rows, &forbidden, assignment.len())
    }

    /// Training side of a cross-validation fold.
    pub fn fold(fold: &Fold, assignment: &SplitAssignment) -> Result<Self> {
        let mut forbidden: BTreeSet<usize> = assignment.rows(Partition::Test).into_iter().collect();
        forbidden.extend(fold.val.iter().copied());
        Self::checked(fold.train.clone(), &forbidden, assignment.len())
    }

    /// Every design row, for the final refit after model selection.
    pub fn design(design: &DesignSet, assignment: &SplitAssignment) -> Result<Self> {
        let forbidden: BTreeSet<usize> = assignment.rows(Partition::Test).into_iter().collect();
        Self::checked(design.rows.clone(), &forbidden, assignment.len())
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn table_rows(&self) -> usize {
        self.table_rows
    }

    pub(crate) fn check_table(&self, ds: &Dataset) -> Result<()> {
        if ds.n_rows() != self.table_rows {
            return Err(Error::Lineage(format!(
                "dataset has {} rows, fit scope was drawn from {}",
                ds.n_rows(),
                self.table_rows
            )));
        }
        Ok(())
    }

    /// Values of a numeric column restricted to the scope, missing values skipped.
    fn values(&self, ds: &Dataset, name: &str) -> Result<Vec<f64>> {
        let v = ds.require_nums(name, MODULE)?;
        Ok(self.rows.iter().map(|&i| v[i]).filter(|x| !x.is_nan()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformParams {
    Standard { columns: Vec<StandardParams> },
    Minmax { columns: Vec<MinMaxParams> },
    Robust { columns: Vec<RobustParams> },
    Onehot { columns: Vec<OneHotColumn> },
    Portbin(PortBin),
    Pca(PcaModel),
}

impl TransformParams {
    pub fn kind(&self) -> &'static str {
        match self {
            TransformParams::Standard { .. } => "standard",
            TransformParams::Minmax { .. } => "minmax",
            TransformParams::Robust { .. } => "robust",
            TransformParams::Onehot { .. } => "onehot",
            TransformParams::Portbin(_) => "portbin",
            TransformParams::Pca(_) => "pca",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTransform {
    pub params: TransformParams,
    pub fit_fingerprint: String,
    pub fit_rows: usize,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// What an apply noticed: unseen categories per column and warnings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApplyReport {
    pub unseen: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

impl FittedTransform {
    fn new(params: TransformParams, scope: &FitScope, warnings: Vec<String>) -> Self {
        FittedTransform {
            params,
            fit_fingerprint: scope.fingerprint.clone(),
            fit_rows: scope.rows.len(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            warnings,
        }
    }

    pub fn kind(&self) -> &'static str {
        self.params.kind()
    }

    fn check_scope(&self, scope: &FitScope) -> Result<()> {
        if self.fit_fingerprint != scope.fingerprint {
            return Err(Error::leakage(
                MODULE,
                format!(
                    "{} transform was fitted on rows {} but is applied under scope {}",
                    self.kind(),
                    self.fit_fingerprint,
                    scope.fingerprint
                ),
            ));
        }
        Ok(())
    }

    /// Apply to every row of the table the scope was drawn from.
    pub fn apply(&self, ds: &Dataset, scope: &FitScope) -> Result<(Dataset, ApplyReport)> {
        self.check_scope(scope)?;
        scope.check_table(ds)?;
        let mut report = ApplyReport::default();
        let out = match &self.params {
            TransformParams::Standard { columns } => scale::apply_standard(ds, columns)?,
            TransformParams::Minmax { columns } => scale::apply_minmax(ds, columns)?,
            TransformParams::Robust { columns } => scale::apply_robust(ds, columns)?,
            TransformParams::Onehot { columns } => encode::apply_onehot(ds, columns, &mut report)?,
            TransformParams::Portbin(p) => encode::apply_portbin(ds, p)?,
            TransformParams::Pca(m) => m.transform_dataset(ds)?,
        };
        Ok((out, report))
    }
}

/// Numeric feature columns: numeric kind, numeric data, and not serving as
/// another column's validity flag.
pub fn default_numeric_columns(ds: &Dataset) -> Vec<String> {
    let flags: BTreeSet<&str> = ds.columns().iter().filter_map(|c| c.validity.as_deref()).collect();
    ds.columns()
        .iter()
        .filter(|c| c.kind == ColumnKind::Numeric && c.nums().is_some() && !flags.contains(c.name.as_str()))
        .map(|c| c.name.clone())
        .collect()
}

/// Categorical columns still holding text.
pub fn default_categorical_columns(ds: &Dataset) -> Vec<String> {
    ds.columns()
        .iter()
        .filter(|c| c.kind == ColumnKind::Categorical && c.texts().is_some())
        .map(|c| c.name.clone())
        .collect()
}

pub fn fit_standard(ds: &Dataset, scope: &FitScope, columns: &[String]) -> Result<FittedTransform> {
    scope.check_table(ds)?;
    let (params, warnings) = scale::fit_standard(ds, scope, columns)?;
    Ok(FittedTransform::new(TransformParams::Standard { columns: params }, scope, warnings))
}

pub fn fit_minmax(ds: &Dataset, scope: &FitScope, columns: &[String]) -> Result<FittedTransform> {
    scope.check_table(ds)?;
    let (params, warnings) = scale::fit_minmax(ds, scope, columns)?;
    Ok(FittedTransform::new(TransformParams::Minmax { columns: params }, scope, warnings))
}

pub fn fit_robust(ds: &Dataset, scope: &FitScope, columns: &[String]) -> Result<FittedTransform> {
    scope.check_table(ds)?;
    let (params, warnings) = scale::fit_robust(ds, scope, columns)?;
    Ok(FittedTransform::new(TransformParams::Robust { columns: params }, scope, warnings))
}

pub fn fit_onehot(ds: &Dataset, scope: &FitScope, columns: &[String]) -> Result<FittedTransform> {
    scope.check_table(ds)?;
    let params = encode::fit_onehot(ds, scope, columns)?;
    Ok(FittedTransform::new(TransformParams::Onehot { columns: params }, scope, Vec::new()))
}

pub fn fit_portbin(ds: &Dataset, scope: &FitScope, column: &str) -> Result<FittedTransform> {
    scope.check_table(ds)?;
    ds.require_nums(column, MODULE)?;
    Ok(FittedTransform::new(TransformParams::Portbin(PortBin::for_column(column)), scope, Vec::new()))
}

pub fn fit_pca(ds: &Dataset, scope: &FitScope, columns: &[String], n_components: usize) -> Result<FittedTransform> {
    scope.check_table(ds)?;
    let model = PcaModel::fit_dataset(ds, scope, columns, n_components)?;
    Ok(FittedTransform::new(TransformParams::Pca(model), scope, Vec::new()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaler {
    #[default]
    None,
    Standard,
    Minmax,
    Robust,
}

/// Which dataset-level transforms to fit, in application order: port
/// binning, one-hot encoding, scaling, PCA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformPlan {
    pub port_bin: Option<String>,
    pub onehot: bool,
    pub scaler: Scaler,
    pub pca_components: Option<usize>,
}

impl Default for TransformPlan {
    fn default() -> Self {
        TransformPlan { port_bin: None, onehot: true, scaler: Scaler::Standard, pca_components: None }
    }
}

/// An ordered list of fitted transforms that all share one fit scope.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformChain {
    pub steps: Vec<FittedTransform>,
}

impl TransformChain {
    /// Fit each step on the output of the previous ones.
    pub fn fit(ds: &Dataset, scope: &FitScope, plan: &TransformPlan) -> Result<(TransformChain, Dataset, ApplyReport)> {
        let mut chain = TransformChain::default();
        let mut cur = ds.clone();
        let mut report = ApplyReport::default();
        let mut step = |t: FittedTransform, cur: &mut Dataset, chain: &mut TransformChain| -> Result<()> {
            let (next, r) = t.apply(cur, scope)?;
            merge(&mut report, r);
            *cur = next;
            chain.steps.push(t);
            Ok(())
        };
        if let Some(col) = &plan.port_bin {
            let t = fit_portbin(&cur, scope, col)?;
            step(t, &mut cur, &mut chain)?;
        }
        if plan.onehot {
            let cols = default_categorical_columns(&cur);
            if !cols.is_empty() {
                let t = fit_onehot(&cur, scope, &cols)?;
                step(t, &mut cur, &mut chain)?;
            }
        }
        let numeric = default_numeric_columns(&cur);
        let scaler = match plan.scaler {
            Scaler::None => None,
            Scaler::Standard => Some(fit_standard(&cur, scope, &numeric)?),
            Scaler::Minmax => Some(fit_minmax(&cur, scope, &numeric)?),
            Scaler::Robust => Some(fit_robust(&cur, scope, &numeric)?),
        };
        if let Some(t) = scaler {
            step(t, &mut cur, &mut chain)?;
        }
        if let Some(k) = plan.pca_components {
            let t = fit_pca(&cur, scope, &numeric, k)?;
            step(t, &mut cur, &mut chain)?;
        }
        Ok((chain, cur, report))
    }

    pub fn apply(&self, ds: &Dataset, scope: &FitScope) -> Result<(Dataset, ApplyReport)> {
        let mut cur = ds.clone();
        let mut report = ApplyReport::default();
        for t in &self.steps {
            let (next, r) = t.apply(&cur, scope)?;
            merge(&mut report, r);
            cur = next;
        }
        Ok((cur, report))
    }

    pub fn warnings(&self) -> Vec<String> {
        self.steps.iter().flat_map(|s| s.warnings.iter().cloned()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn merge(into: &mut ApplyReport, from: ApplyReport) {
    for (k, v) in from.unseen {
        *into.unseen.entry(k).or_default() += v;
    }
    into.warnings.extend(from.warnings);
}
