//! Column-typed flow tables with a CSV body and a JSON schema sidecar.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Timestamp;

pub const LABEL: &str = "label";
pub const UNKNOWN: &str = "UNKNOWN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    /// Carried along but never used as a model feature.
    Metadata,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    Num,
    Text,
    Time,
}

/// Cell storage. Missing numbers are NaN, missing text is empty.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Num(Vec<f64>),
    Text(Vec<String>),
    Time(Vec<Timestamp>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Num(v) => v.len(),
            ColumnData::Text(v) => v.len(),
            ColumnData::Time(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            ColumnData::Num(_) => DType::Num,
            ColumnData::Text(_) => DType::Text,
            ColumnData::Time(_) => DType::Time,
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Num(v) => ColumnData::Num(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Text(v) => ColumnData::Text(rows.iter().map(|&i| v[i].clone()).collect()),
            ColumnData::Time(v) => ColumnData::Time(rows.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn is_missing(&self, i: usize) -> bool {
        match self {
            ColumnData::Num(v) => v[i].is_nan(),
            ColumnData::Text(v) => v[i].is_empty(),
            ColumnData::Time(_) => false,
        }
    }

    /// Numeric view: numbers as-is, times as seconds.
    pub fn as_f64(&self, i: usize) -> Option<f64> {
        match self {
            ColumnData::Num(v) => Some(v[i]),
            ColumnData::Time(v) => Some(v[i].as_secs_f64()),
            ColumnData::Text(_) => None,
        }
    }

    pub fn render(&self, i: usize) -> String {
        match self {
            ColumnData::Num(v) => format_num(v[i]),
            ColumnData::Text(v) => v[i].clone(),
            ColumnData::Time(v) => v[i].to_string(),
        }
    }
}

pub fn format_num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    let s = s.trim();
    let (secs, frac) = s.split_once('.').unwrap_or((s, ""));
    let secs: u64 = secs.parse().ok()?;
    if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let nanos: u32 = if frac.is_empty() { 0 } else { format!("{frac:0<9}").parse().ok()? };
    Some(Timestamp::from_parts(secs, nanos))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Name of the 0/1 column telling whether this column's value is defined.
    pub validity: Option<String>,
    pub data: ColumnData,
}

impl Column {
    pub fn num(name: impl Into<String>, kind: ColumnKind, values: Vec<f64>) -> Self {
        Column { name: name.into(), kind, validity: None, data: ColumnData::Num(values) }
    }

    pub fn text(name: impl Into<String>, kind: ColumnKind, values: Vec<String>) -> Self {
        Column { name: name.into(), kind, validity: None, data: ColumnData::Text(values) }
    }

    pub fn time(name: impl Into<String>, values: Vec<Timestamp>) -> Self {
        Column { name: name.into(), kind: ColumnKind::Metadata, validity: None, data: ColumnData::Time(values) }
    }

    pub fn with_validity(mut self, flag: impl Into<String>) -> Self {
        self.validity = Some(flag.into());
        self
    }

    pub fn nums(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Num(v) => Some(v),
            _ => None,
        }
    }

    pub fn texts(&self) -> Option<&[String]> {
        match &self.data {
            ColumnData::Text(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    index: HashMap<String, usize>,
    pub provenance: Option<String>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_columns(columns: Vec<Column>) -> Result<Self> {
        let mut ds = Dataset::new();
        for c in columns {
            ds.push_column(c)?;
        }
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.data.len())
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.index.get(name).map(|&i| &self.columns[i])
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Column> {
        self.index.get(name).map(|&i| &mut self.columns[i])
    }

    pub fn require(&self, name: &str, module: &'static str) -> Result<&Column> {
        self.column(name).ok_or_else(|| Error::config(module, format!("missing column {name:?}")))
    }

    pub fn require_nums(&self, name: &str, module: &'static str) -> Result<&[f64]> {
        self.require(name, module)?
            .nums()
            .ok_or_else(|| Error::config(module, format!("column {name:?} is not numeric")))
    }

    pub fn push_column(&mut self, col: Column) -> Result<()> {
        if self.index.contains_key(&col.name) {
            return Err(Error::config("dataset", format!("duplicate column {:?}", col.name)));
        }
        if !self.columns.is_empty() && col.data.len() != self.n_rows() {
            return Err(Error::shape(
                "dataset",
                format!("column {:?} has {} rows, expected {}", col.name, col.data.len(), self.n_rows()),
            ));
        }
        self.index.insert(col.name.clone(), self.columns.len());
        self.columns.push(col);
        Ok(())
    }

    /// Replace a column in place, or append it.
    pub fn set_column(&mut self, col: Column) -> Result<()> {
        match self.index.get(&col.name) {
            Some(&i) => {
                if col.data.len() != self.n_rows() {
                    return Err(Error::shape("dataset", format!("column {:?} length mismatch", col.name)));
                }
                self.columns[i] = col;
                Ok(())
            }
            None => self.push_column(col),
        }
    }

    pub fn remove_column(&mut self, name: &str) -> Option<Column> {
        let i = self.index.remove(name)?;
        let col = self.columns.remove(i);
        self.reindex();
        Some(col)
    }

    fn reindex(&mut self) {
        self.index = self.columns.iter().enumerate().map(|(i, c)| (c.name.clone(), i)).collect();
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .map(|c| Column { data: c.data.select(rows), ..c.clone() })
                .collect(),
            index: self.index.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn names_of_kind(&self, kind: ColumnKind) -> Vec<String> {
        self.columns.iter().filter(|c| c.kind == kind).map(|c| c.name.clone()).collect()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.column(LABEL).and_then(|c| c.texts())
    }

    pub fn schema(&self) -> Schema {
        Schema {
            columns: self
                .columns
                .iter()
                .map(|c| ColumnSpec {
                    name: c.name.clone(),
                    kind: c.kind,
                    dtype: c.data.dtype(),
                    validity: c.validity.clone(),
                })
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Write the CSV body. `comments` become leading `# ` lines.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut out = out;
        for c in comments {
            writeln!(out, "# {c}").map_err(|e| Error::io("<csv>", e))?;
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        let mut row = Vec::with_capacity(self.columns.len());
        for i in 0..self.n_rows() {
            row.clear();
            row.extend(self.columns.iter().map(|c| c.data.render(i)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
        let csv_path = csv_path.as_ref();
        let f = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(BufWriter::new(f), comments)?;
        let schema_path = schema_path_for(csv_path);
        let f = File::create(&schema_path).map_err(|e| Error::io(&schema_path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &self.schema())?;
        Ok(())
    }

    pub fn load(csv_path: impl AsRef<Path>) -> Result<Self> {
        let csv_path = csv_path.as_ref();
        let schema_path = schema_path_for(csv_path);
        let schema = if schema_path.exists() {
            let f = File::open(&schema_path).map_err(|e| Error::io(&schema_path, e))?;
            Some(serde_json::from_reader::<_, Schema>(f)?)
        } else {
            None
        };
        let f = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        Dataset::read_csv(f, schema.as_ref(), &csv_path.display().to_string())
    }

    /// Parse a CSV body. Without a schema, columns that parse as numbers
    /// are numeric, `label` is the label, everything else categorical.
    pub fn read_csv<R: Read>(input: R, schema: Option<&Schema>, origin: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
        for rec in rdr.records() {
            let rec = rec?;
            for (j, v) in rec.iter().enumerate() {
                raw[j].push(v.to_string());
            }
        }
        let specs: Vec<ColumnSpec> = match schema {
            Some(s) => {
                let names: Vec<&str> = s.columns.iter().map(|c| c.name.as_str()).collect();
                if names != header {
                    return Err(Error::config("dataset", format!("{origin}: header does not match schema")));
                }
                s.columns.clone()
            }
            None => header
                .iter()
                .zip(&raw)
                .map(|(name, vals)| {
                    let numeric = vals.iter().all(|v| v.is_empty() || v.parse::<f64>().is_ok());
                    let (kind, dtype) = if name == LABEL {
                        (ColumnKind::Label, DType::Text)
                    } else if numeric {
                        (ColumnKind::Numeric, DType::Num)
                    } else {
                        (ColumnKind::Categorical, DType::Text)
                    };
                    ColumnSpec { name: name.clone(), kind, dtype, validity: None }
                })
                .collect(),
        };
        let mut ds = Dataset::new();
        for (spec, vals) in specs.into_iter().zip(raw) {
            let data = match spec.dtype {
                DType::Num => ColumnData::Num(
                    vals.iter()
                        .enumerate()
                        .map(|(i, v)| {
                            if v.is_empty() {
                                Ok(f64::NAN)
                            } else {
                                v.parse().map_err(|_| Error::Parse {
                                    path: origin.to_string(),
                                    line: i + 2,
                                    msg: format!("column {:?}: not a number: {v:?}", spec.name),
                                })
                            }
                        })
                        .collect::<Result<_>>()?,
                ),
                DType::Time => ColumnData::Time(
                    vals.iter()
                        .enumerate()
                        .map(|(i, v)| {
                            parse_timestamp(v).ok_or_else(|| Error::Parse {
                                path: origin.to_string(),
                                line: i + 2,
                                msg: format!("column {:?}: not a timestamp: {v:?}", spec.name),
                            })
                        })
                        .collect::<Result<_>>()?,
                ),
                DType::Text => ColumnData::Text(vals),
            };
            ds.push_column(Column { name: spec.name, kind: spec.kind, validity: spec.validity, data })?;
        }
        ds.provenance = schema.and_then(|s| s.provenance.clone());
        Ok(ds)
    }
}

pub fn schema_path_for(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("schema.json")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        Dataset::from_columns(vec![
            Column::time("flow_start", vec![Timestamp::from_parts(1, 500), Timestamp::from_parts(2, 0)]),
            Column::num("x", ColumnKind::Numeric, vec![0.5, f64::NAN]),
            Column::text("proto", ColumnKind::Categorical, vec!["6".into(), "17".into()]),
            Column::text(LABEL, ColumnKind::Label, vec!["A".into(), "B,C".into()]),
        ])
        .unwrap()
    }

    #[test]
    fn csv_round_trip_with_schema() {
        let ds = sample();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf, &["config_hash=abc".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# config_hash=abc\nflow_start,x,proto,label\n1.000000500,0.5,6,A\n"));
        let back = Dataset::read_csv(&buf[..], Some(&ds.schema()), "mem").unwrap();
        assert_eq!(back.column("flow_start"), ds.column("flow_start"));
        assert!(back.column("x").unwrap().nums().unwrap()[1].is_nan());
        assert_eq!(back.labels().unwrap()[1], "B,C");
    }

    #[test]
    fn inference_without_schema() {
        let ds = Dataset::read_csv("a,b,label\n1,x,L\n2,y,M\n".as_bytes(), None, "mem").unwrap();
        assert_eq!(ds.column("a").unwrap().kind, ColumnKind::Numeric);
        assert_eq!(ds.column("b").unwrap().kind, ColumnKind::Categorical);
        assert_eq!(ds.column(LABEL).unwrap().kind, ColumnKind::Label);
    }

    #[test]
    fn bad_number_reports_line() {
        let schema = Schema {
            columns: vec![ColumnSpec { name: "a".into(), kind: ColumnKind::Numeric, dtype: DType::Num, validity: None }],
            provenance: None,
        };
        let err = Dataset::read_csv("a\n1\nzz\n".as_bytes(), Some(&schema), "f.csv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn column_length_is_checked() {
        let mut ds = sample();
        assert!(ds.push_column(Column::num("y", ColumnKind::Numeric, vec![1.0])).is_err());
        assert!(ds.push_column(Column::num("x", ColumnKind::Numeric, vec![1.0, 2.0])).is_err());
        ds.remove_column("x").unwrap();
        assert_eq!(ds.column_names(), vec!["flow_start", "proto", LABEL]);
        assert_eq!(ds.column("proto").unwrap().texts().unwrap()[0], "6");
    }

    #[test]
    fn timestamps_parse() {
        assert_eq!(parse_timestamp("1.5"), Some(Timestamp::from_parts(1, 500_000_000)));
        assert_eq!(parse_timestamp("3"), Some(Timestamp::from_parts(3, 0)));
        assert_eq!(parse_timestamp("1.0000000001"), None);
        assert_eq!(parse_timestamp("-1"), None);
    }
}
