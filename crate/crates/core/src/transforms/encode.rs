use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ApplyReport, FitScope};
use crate::dataset::{Column, ColumnKind, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneHotColumn {
    pub name: String,
    /// Sorted distinct training values.
    pub vocabulary: Vec<String>,
}

impl OneHotColumn {
    pub fn output_names(&self) -> Vec<String> {
        self.vocabulary.iter().map(|v| format!("{}={v}", self.name)).collect()
    }

    /// Indicator vector for one value; `None` when the value is unseen.
    pub fn encode(&self, value: &str) -> Option<Vec<f64>> {
        let hit = self.vocabulary.binary_search_by(|v| v.as_str().cmp(value)).ok()?;
        let mut out = vec![0.0; self.vocabulary.len()];
        out[hit] = 1.0;
        Some(out)
    }
}

fn rendered(ds: &Dataset, name: &str) -> Option<Vec<String>> {
    let c = ds.column(name)?;
    Some((0..c.data.len()).map(|i| c.data.render(i)).collect())
}

pub(super) fn fit_onehot(ds: &Dataset, scope: &FitScope, columns: &[String]) -> Result<Vec<OneHotColumn>> {
    let mut out = Vec::with_capacity(columns.len());
    for name in columns {
        let values = rendered(ds, name).ok_or_else(|| Error::config("transforms", format!("missing column {name:?}")))?;
        let vocab: BTreeSet<&String> = scope.rows().iter().map(|&i| &values[i]).filter(|v| !v.is_empty()).collect();
        out.push(OneHotColumn { name: name.clone(), vocabulary: vocab.into_iter().cloned().collect() });
    }
    Ok(out)
}

pub(super) fn apply_onehot(ds: &Dataset, columns: &[OneHotColumn], report: &mut ApplyReport) -> Result<Dataset> {
    let mut out = ds.clone();
    for oh in columns {
        let values = rendered(&out, &oh.name)
            .ok_or_else(|| Error::TransformMismatch(format!("column {:?} was fitted but is absent", oh.name)))?;
        let width = oh.vocabulary.len();
        let mut cols = vec![Vec::with_capacity(values.len()); width];
        let mut unseen = 0;
        for v in &values {
            let enc = oh.encode(v).unwrap_or_else(|| {
                if !v.is_empty() {
                    unseen += 1;
                }
                vec![0.0; width]
            });
            for (c, x) in cols.iter_mut().zip(enc) {
                c.push(x);
            }
        }
        if unseen > 0 {
            *report.unseen.entry(oh.name.clone()).or_default() += unseen;
        }
        out.remove_column(&oh.name);
        for (name, values) in oh.output_names().into_iter().zip(cols) {
            out.push_column(Column::num(name, ColumnKind::Categorical, values))?;
        }
    }
    Ok(out)
}

/// IANA port ranges.
pub fn bin_port(port: f64) -> Result<&'static str> {
    if port.fract() != 0.0 || !(0.0..=65535.0).contains(&port) {
        return Err(Error::Value(format!("port {port} outside 0..=65535")));
    }
    Ok(match port as u32 {
        0..=1023 => "well_known",
        1024..=49151 => "registered",
        _ => "dynamic",
    })
}

pub fn bin_ports(values: &[f64]) -> Result<Vec<String>> {
    values.iter().map(|&p| bin_port(p).map(str::to_string)).collect()
}

/// Replaces a numeric port column with its categorical range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortBin {
    pub column: String,
    pub output: String,
}

impl PortBin {
    pub fn for_column(column: &str) -> Self {
        PortBin { column: column.to_string(), output: format!("{column}_bin") }
    }
}

pub(super) fn apply_portbin(ds: &Dataset, p: &PortBin) -> Result<Dataset> {
    let values = ds
        .column(&p.column)
        .and_then(|c| c.nums())
        .ok_or_else(|| Error::TransformMismatch(format!("port column {:?} is absent or not numeric", p.column)))?;
    let bins = bin_ports(values)?;
    let mut out = ds.clone();
    out.remove_column(&p.column);
    out.push_column(Column::text(p.output.clone(), ColumnKind::Categorical, bins))?;
    Ok(out)
}
