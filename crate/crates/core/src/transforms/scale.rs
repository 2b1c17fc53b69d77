use serde::{Deserialize, Serialize};

use super::FitScope;
use crate::dataset::{Column, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardParams {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxParams {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustParams {
    pub name: String,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl RobustParams {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Quantile by linear interpolation between order statistics at
/// `h = (n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn present(scope: &FitScope, ds: &Dataset, name: &str) -> Result<Vec<f64>> {
    let v = scope.values(ds, name)?;
    if v.is_empty() {
        return Err(Error::Fit(format!("column {name:?} has no values in the fit rows")));
    }
    Ok(v)
}

pub(super) fn fit_standard(ds: &Dataset, scope: &FitScope, columns: &[String]) -> Result<(Vec<StandardParams>, Vec<String>)> {
    let mut out = Vec::with_capacity(columns.len());
    let mut warnings = Vec::new();
    for name in columns {
        let v = present(scope, ds, name)?;
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std == 0.0 {
            warnings.push(format!("standard: {name} has zero variance and passes through"));
        }
        out.push(StandardParams { name: name.clone(), mean, std });
    }
    Ok((out, warnings))
}

pub(super) fn fit_minmax(ds: &Dataset, scope: &FitScope, columns: &[String]) -> Result<(Vec<MinMaxParams>, Vec<String>)> {
    let mut out = Vec::with_capacity(columns.len());
    let mut warnings = Vec::new();
    for name in columns {
        let v = present(scope, ds, name)?;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == min {
            warnings.push(format!("minmax: {name} is constant and maps to 0"));
        }
        out.push(MinMaxParams { name: name.clone(), min, max });
    }
    Ok((out, warnings))
}

pub(super) fn fit_robust(ds: &Dataset, scope: &FitScope, columns: &[String]) -> Result<(Vec<RobustParams>, Vec<String>)> {
    let mut out = Vec::with_capacity(columns.len());
    let mut warnings = Vec::new();
    for name in columns {
        let mut v = present(scope, ds, name)?;
        v.sort_by(f64::total_cmp);
        let p = RobustParams {
            name: name.clone(),
            q1: quantile_sorted(&v, 0.25),
            q2: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
        };
        if p.iqr() == 0.0 {
            warnings.push(format!("robust: {name} has zero IQR and passes through"));
        }
        out.push(p);
    }
    Ok((out, warnings))
}

fn map_column(ds: &mut Dataset, name: &str, f: impl Fn(f64) -> f64) -> Result<()> {
    let col = ds
        .column(name)
        .ok_or_else(|| Error::TransformMismatch(format!("column {name:?} was fitted but is absent")))?;
    let values = col
        .nums()
        .ok_or_else(|| Error::TransformMismatch(format!("column {name:?} is no longer numeric")))?
        .iter()
        .map(|&x| f(x))
        .collect();
    let replaced = Column { data: crate::dataset::ColumnData::Num(values), ..col.clone() };
    ds.set_column(replaced)
}

pub(super) fn apply_standard(ds: &Dataset, params: &[StandardParams]) -> Result<Dataset> {
    let mut out = ds.clone();
    for p in params {
        if p.std == 0.0 {
            map_column(&mut out, &p.name, |x| x)?;
        } else {
            map_column(&mut out, &p.name, |x| (x - p.mean) / p.std)?;
        }
    }
    Ok(out)
}

pub(super) fn apply_minmax(ds: &Dataset, params: &[MinMaxParams]) -> Result<Dataset> {
    let mut out = ds.clone();
    for p in params {
        let range = p.max - p.min;
        if range == 0.0 {
            map_column(&mut out, &p.name, |x| if x.is_nan() { x } else { 0.0 })?;
        } else {
            map_column(&mut out, &p.name, |x| (x - p.min) / range)?;
        }
    }
    Ok(out)
}

pub(super) fn apply_robust(ds: &Dataset, params: &[RobustParams]) -> Result<Dataset> {
    let mut out = ds.clone();
    for p in params {
        let iqr = p.iqr();
        if iqr == 0.0 {
            map_column(&mut out, &p.name, |x| x)?;
        } else {
            map_column(&mut out, &p.name, |x| (x - p.q2) / iqr)?;
        }
    }
    Ok(out)
}
