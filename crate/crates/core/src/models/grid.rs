use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec, MODULE};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::split::{kfold, DesignSet, Partition, SplitAssignment};
use crate::transforms::{
    outlier_bounds_iqr, outlier_bounds_zscore, remove_outliers, smote, undersample, FitScope, LabeledRows,
    TransformChain, TransformPlan,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutlierSpec {
    Zscore { threshold: f64 },
    Iqr { multiplier: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResampleSpec {
    Undersample { ratio: f64 },
    Smote { k: usize },
}

/// Everything fitted on the training rows before the model: dataset
/// transforms, then outlier removal, then resampling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingPlan {
    pub transforms: TransformPlan,
    pub outliers: Option<OutlierSpec>,
    pub resample: Option<ResampleSpec>,
}

/// Which row set the pipeline was fitted on, so a later run can rebuild the
/// scope from the split files and have its fingerprint checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeKind {
    Train,
    Design,
    Fold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub spec: ModelSpec,
    pub plan: TrainingPlan,
    pub scope_kind: ScopeKind,
    pub scope_fingerprint: String,
    pub chain: TransformChain,
    pub features: Vec<String>,
    pub train_rows: usize,
    pub model: Model,
}

pub fn fit_pipeline(
    ds: &Dataset,
    scope: &FitScope,
    scope_kind: ScopeKind,
    plan: &TrainingPlan,
    spec: &ModelSpec,
    seed: u64,
) -> Result<FittedPipeline> {
    let (chain, _, _) = TransformChain::fit(ds, scope, &plan.transforms)?;
    fit_with_chain(ds, scope, scope_kind, chain, plan, spec, seed)
}

/// As [`fit_pipeline`] with an already fitted transform chain, which must
/// have been fitted under `scope`.
pub fn fit_with_chain(
    ds: &Dataset,
    scope: &FitScope,
    scope_kind: ScopeKind,
    chain: TransformChain,
    plan: &TrainingPlan,
    spec: &ModelSpec,
    seed: u64,
) -> Result<FittedPipeline> {
    let (transformed, _) = chain.apply(ds, scope)?;
    let mut rows = LabeledRows::from_scope(&transformed, scope)?;
    if let Some(o) = &plan.outliers {
        let numeric: Vec<String> = rows
            .columns
            .iter()
            .zip(&rows.categorical)
            .filter(|(_, &c)| !c)
            .map(|(n, _)| n.clone())
            .collect();
        let bounds = match *o {
            OutlierSpec::Zscore { threshold } => outlier_bounds_zscore(&rows, &numeric, threshold)?,
            OutlierSpec::Iqr { multiplier } => outlier_bounds_iqr(&rows, &numeric, multiplier)?,
        };
        rows = remove_outliers(&rows, &bounds)?.0;
    }
    match plan.resample {
        Some(ResampleSpec::Undersample { ratio }) => rows = undersample(&rows, ratio, seed)?,
        Some(ResampleSpec::Smote { k }) => rows = smote(&rows, k, seed)?.0,
        None => {}
    }
    let model = spec.fit(&rows.x, &rows.y)?;
    Ok(FittedPipeline {
        spec: spec.clone(),
        plan: plan.clone(),
        scope_kind,
        scope_fingerprint: scope.fingerprint().to_string(),
        chain,
        features: rows.columns,
        train_rows: rows.x.len(),
        model,
    })
}

impl FittedPipeline {
    /// Transform the whole table and gather `rows` as evaluation rows.
    pub fn rows(&self, ds: &Dataset, scope: &FitScope, rows: &[usize], tag: Partition) -> Result<LabeledRows> {
        if scope.fingerprint() != self.scope_fingerprint {
            return Err(Error::leakage(
                MODULE,
                format!(
                    "model was fitted under scope {} but evaluated under {}",
                    self.scope_fingerprint,
                    scope.fingerprint()
                ),
            ));
        }
        let (t, _) = self.chain.apply(ds, scope)?;
        let out = LabeledRows::from_dataset(&t, rows, tag)?;
        if out.columns != self.features {
            return Err(Error::TransformMismatch(format!(
                "transformed features {:?} differ from the model's {:?}",
                out.columns, self.features
            )));
        }
        Ok(out)
    }

    /// Predicted labels and class probabilities for `rows`, plus their true labels.
    pub fn predict(&self, ds: &Dataset, scope: &FitScope, rows: &[usize], tag: Partition) -> Result<Prediction> {
        let r = self.rows(ds, scope, rows, tag)?;
        let proba = self.model.predict_proba(&r.x)?;
        let classes = self.model.classes();
        let predicted = proba.iter().map(|p| classes[super::argmax(p)].clone()).collect();
        Ok(Prediction { rows: rows.to_vec(), actual: r.y, predicted, proba })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub rows: Vec<usize>,
    pub actual: Vec<String>,
    pub predicted: Vec<String>,
    pub proba: Vec<Vec<f64>>,
}

/// Hyperparameter name to candidate values; `null` means unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub params: BTreeMap<String, Vec<Option<f64>>>,
    pub metric: String,
    pub folds: usize,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid { params: BTreeMap::new(), metric: "macro_f1".into(), folds: 3 }
    }
}

pub type ParamSet = BTreeMap<String, Option<f64>>;

impl HyperGrid {
    pub fn validate(&self) -> Result<Metric> {
        if self.params.is_empty() {
            return Err(Error::config(MODULE, "hyperparameter grid is empty"));
        }
        for (name, values) in &self.params {
            if values.is_empty() {
                return Err(Error::config(MODULE, format!("no values listed for {name}")));
            }
            if values.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::config(MODULE, format!("non-finite value listed for {name}")));
            }
        }
        if self.folds < 2 {
            return Err(Error::config(MODULE, "grid search needs at least 2 folds"));
        }
        Metric::from_str(&self.metric)
    }

    /// Cartesian product in key order, last key varying fastest.
    pub fn combinations(&self) -> Vec<ParamSet> {
        let mut out = vec![ParamSet::new()];
        for (name, values) in &self.params {
            out = out
                .into_iter()
                .flat_map(|base| {
                    values.iter().map(move |v| {
                        let mut p = base.clone();
                        p.insert(name.clone(), *v);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub params: ParamSet,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub metric: String,
    pub table: Vec<CvRow>,
    pub best: usize,
    pub best_spec: ModelSpec,
    pub pipeline: FittedPipeline,
}

impl GridResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let names: Vec<&String> = self.table.first().map(|r| r.params.keys().collect()).unwrap_or_default();
        let folds = self.table.first().map_or(0, |r| r.fold_scores.len());
        let mut header: Vec<String> = names.iter().map(|n| n.to_string()).collect();
        header.extend((0..folds).map(|f| format!("fold{f}")));
        header.extend(["mean".into(), "std".into(), "best".into()]);
        w.write_record(&header)?;
        for (i, row) in self.table.iter().enumerate() {
            let mut rec: Vec<String> =
                row.params.values().map(|v| v.map_or_else(|| "none".to_string(), |x| x.to_string())).collect();
            rec.extend(row.fold_scores.iter().map(f64::to_string));
            rec.extend([row.mean.to_string(), row.std.to_string(), (i == self.best).to_string()]);
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<cv table>", e))?;
        Ok(())
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Exhaustive grid search with k-fold CV over the design set. Every fold
/// refits the full training plan on its own training rows. The winner is
/// refitted on the whole design set.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    ds: &Dataset,
    assignment: &SplitAssignment,
    design: &DesignSet,
    plan: &TrainingPlan,
    base: &ModelSpec,
    grid: &HyperGrid,
    seed: u64,
    allow_temporal: bool,
) -> Result<GridResult> {
    let metric = grid.validate()?;
    assignment.check_rows(ds.n_rows())?;
    if let Some(r) = design.rows.iter().find(|&&r| assignment.partitions.get(r) == Some(&Partition::Test)) {
        return Err(Error::leakage(MODULE, format!("design set contains test row {r}")));
    }
    let folds = kfold(design, grid.folds, seed, allow_temporal)?;
    let scopes: Vec<FitScope> = folds.iter().map(|f| FitScope::fold(f, assignment)).collect::<Result<_>>()?;
    let specs: Vec<ModelSpec> = grid
        .combinations()
        .into_iter()
        .map(|p| {
            let mut s = base.clone();
            for (k, v) in &p {
                s.set_param(k, *v)?;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let table: Vec<CvRow> = grid
        .combinations()
        .into_par_iter()
        .zip(specs.par_iter())
        .map(|(params, spec)| {
            let fold_scores = folds
                .iter()
                .zip(&scopes)
                .map(|(fold, scope)| {
                    let p = fit_pipeline(ds, scope, ScopeKind::Fold, plan, spec, seed)?;
                    let pred = p.predict(ds, scope, &fold.val, Partition::Val)?;
                    metric.score(&pred.actual, &pred.predicted)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, std) = mean_std(&fold_scores);
            Ok(CvRow { params, fold_scores, mean, std })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for i in 1..table.len() {
        let better = table[i].mean > table[best].mean
            || (table[i].mean == table[best].mean && specs[i].complexity() < specs[best].complexity());
        if better {
            best = i;
        }
    }
    let scope = FitScope::design(design, assignment)?;
    let pipeline = fit_pipeline(ds, &scope, ScopeKind::Design, plan, &specs[best], seed)?;
    Ok(GridResult { metric: grid.metric.clone(), table, best, best_spec: specs[best].clone(), pipeline })
}
