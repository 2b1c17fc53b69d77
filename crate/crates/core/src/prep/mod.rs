//! Quality diagnosis, universal cleaning rules and feature engineering.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{Column, ColumnData, ColumnKind, Dataset, LABEL};
use crate::error::{Error, Result};
use crate::ingest::PROTO_TCP;

pub const RULE_NEGATIVE_DURATION: &str = "negative_duration";
pub const RULE_ZERO_PACKETS_BYTES: &str = "zero_packets_nonzero_bytes";
pub const RULE_SIZE_LIMIT: &str = "size_over_65535";
pub const RULE_END_BEFORE_START: &str = "end_before_start";

const PLAUSIBILITY_RULES: [&str; 4] =
    [RULE_NEGATIVE_DURATION, RULE_ZERO_PACKETS_BYTES, RULE_SIZE_LIMIT, RULE_END_BEFORE_START];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnQuality {
    pub name: String,
    pub kind: ColumnKind,
    pub missing_fraction: f64,
    pub distinct: usize,
    /// Population variance of the present values; numeric columns only.
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub rows: usize,
    pub cols: usize,
    pub columns: Vec<ColumnQuality>,
    pub duplicate_rows: usize,
    pub violations: BTreeMap<String, usize>,
}

impl QualityReport {
    pub fn column(&self, name: &str) -> Option<&ColumnQuality> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn total_violations(&self) -> usize {
        self.violations.values().sum()
    }
}

fn population_variance(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    for x in values {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    (n > 0.0).then(|| m2 / n)
}

fn column_quality(col: &Column) -> ColumnQuality {
    let n = col.data.len();
    let missing = (0..n).filter(|&i| col.data.is_missing(i)).count();
    let distinct = match &col.data {
        ColumnData::Num(v) => v.iter().filter(|x| !x.is_nan()).map(|x| (x + 0.0).to_bits()).collect::<HashSet<_>>().len(),
        ColumnData::Text(v) => v.iter().filter(|s| !s.is_empty()).collect::<HashSet<_>>().len(),
        ColumnData::Time(v) => v.iter().collect::<HashSet<_>>().len(),
    };
    let variance = match (&col.data, col.kind) {
        (ColumnData::Num(v), ColumnKind::Numeric) => population_variance(v.iter().copied().filter(|x| !x.is_nan())),
        _ => None,
    };
    ColumnQuality {
        name: col.name.clone(),
        kind: col.kind,
        missing_fraction: if n == 0 { 0.0 } else { missing as f64 / n as f64 },
        distinct,
        variance,
    }
}

/// Rows that repeat an earlier row on every non-metadata column.
fn duplicate_rows(ds: &Dataset) -> Vec<usize> {
    let cols: Vec<&Column> = ds.columns().iter().filter(|c| c.kind != ColumnKind::Metadata).collect();
    let mut seen = HashSet::with_capacity(ds.n_rows());
    let mut dups = Vec::new();
    for i in 0..ds.n_rows() {
        let key: Vec<String> = cols
            .iter()
            .map(|c| match &c.data {
                ColumnData::Num(v) => format!("{:x}", if v[i].is_nan() { f64::NAN.to_bits() } else { (v[i] + 0.0).to_bits() }),
                other => other.render(i),
            })
            .collect();
        if !seen.insert(key) {
            dups.push(i);
        }
    }
    dups
}

fn num(ds: &Dataset, name: &str) -> Option<Vec<f64>> {
    let c = ds.column(name)?;
    Some(match &c.data {
        ColumnData::Text(v) => v.iter().map(|s| s.parse().unwrap_or(f64::NAN)).collect(),
        d => (0..d.len()).map(|i| d.as_f64(i).unwrap_or(f64::NAN)).collect(),
    })
}

fn is_size_column(name: &str) -> bool {
    name.starts_with("splt_size_")
        || ["_size_mean", "_size_min", "_size_max"].iter().any(|s| name.ends_with(s))
}

/// Per-row violation flags for one plausibility rule. Missing values never
/// violate.
fn plausibility(ds: &Dataset, rule: &str) -> Vec<bool> {
    let n = ds.n_rows();
    let mut bad = vec![false; n];
    let mut mark = |vals: &[f64], pred: &dyn Fn(f64) -> bool| {
        for (b, &x) in bad.iter_mut().zip(vals) {
            *b |= !x.is_nan() && pred(x);
        }
    };
    match rule {
        RULE_NEGATIVE_DURATION => {
            for c in ds.columns() {
                if c.kind == ColumnKind::Numeric && c.name.ends_with("duration") {
                    if let Some(v) = c.nums() {
                        mark(v, &|x| x < 0.0);
                    }
                }
            }
        }
        RULE_SIZE_LIMIT => {
            for c in ds.columns() {
                if c.kind == ColumnKind::Numeric && is_size_column(&c.name) {
                    if let Some(v) = c.nums() {
                        mark(v, &|x| x > 65535.0);
                    }
                }
            }
        }
        RULE_ZERO_PACKETS_BYTES => {
            for d in ["fwd", "bwd", "total"] {
                if let (Some(p), Some(b)) = (num(ds, &format!("{d}_packet_count")), num(ds, &format!("{d}_byte_count"))) {
                    for i in 0..n {
                        bad[i] |= p[i] == 0.0 && b[i] > 0.0;
                    }
                }
            }
        }
        RULE_END_BEFORE_START => {
            if let (Some(Column { data: ColumnData::Time(s), .. }), Some(Column { data: ColumnData::Time(e), .. })) =
                (ds.column("flow_start"), ds.column("flow_end"))
            {
                for i in 0..n {
                    bad[i] |= e[i] < s[i];
                }
            } else if let (Some(s), Some(e)) = (num(ds, "flow_start"), num(ds, "flow_end")) {
                for i in 0..n {
                    bad[i] |= e[i] < s[i];
                }
            }
        }
        _ => unreachable!("unknown plausibility rule {rule}"),
    }
    bad
}

/// Quality report; never mutates the dataset.
pub fn diagnose(ds: &Dataset) -> QualityReport {
    QualityReport {
        rows: ds.n_rows(),
        cols: ds.n_cols(),
        columns: ds.columns().iter().map(column_quality).collect(),
        duplicate_rows: duplicate_rows(ds).len(),
        violations: PLAUSIBILITY_RULES
            .iter()
            .map(|r| (r.to_string(), plausibility(ds, r).iter().filter(|&&b| b).count()))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    /// Leaky or out-of-domain columns dropped up front.
    pub drop_columns: Vec<String>,
    pub missing_drop: f64,
    pub variance_epsilon: f64,
    pub min_tcp_packets: u64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig { drop_columns: Vec::new(), missing_drop: 0.95, variance_epsilon: 1e-12, min_tcp_packets: 3 }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.missing_drop) {
            return Err(Error::config("dataset-prep", format!("missing_drop {} outside [0, 1]", self.missing_drop)));
        }
        if !(self.variance_epsilon >= 0.0) {
            return Err(Error::config("dataset-prep", "variance_epsilon must be non-negative"));
        }
        if self.drop_columns.iter().any(|c| c == LABEL) {
            return Err(Error::config("dataset-prep", "refusing to drop the label column"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub pass: usize,
    pub rule: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<String>,
    pub rows_dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn rows_dropped(&self) -> usize {
        self.entries.iter().map(|e| e.rows_dropped).sum()
    }

    pub fn columns_dropped(&self) -> usize {
        self.entries.iter().map(|e| e.columns.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n").map_err(|e| Error::io("<audit>", e))?;
        }
        Ok(())
    }
}

fn drop_columns(ds: &mut Dataset, names: &[String]) -> Result<()> {
    if names.iter().any(|n| n == LABEL) {
        return Err(Error::config("dataset-prep", "cleaning would drop the label column"));
    }
    for n in names {
        ds.remove_column(n);
    }
    let gone: HashSet<&String> = names.iter().collect();
    for name in ds.column_names().into_iter().map(String::from).collect::<Vec<_>>() {
        let col = ds.column_mut(&name).expect("present");
        if col.validity.as_ref().is_some_and(|v| gone.contains(v)) {
            col.validity = None;
        }
    }
    Ok(())
}

fn keep_rows(ds: &mut Dataset, drop: &[bool]) -> usize {
    let keep: Vec<usize> = (0..ds.n_rows()).filter(|&i| !drop[i]).collect();
    let dropped = ds.n_rows() - keep.len();
    if dropped > 0 {
        *ds = ds.select_rows(&keep);
    }
    dropped
}

fn short_tcp_handshakes(ds: &Dataset, min_packets: u64) -> Vec<bool> {
    let n = ds.n_rows();
    let (Some(proto), Some(total)) = (num(ds, "proto"), num(ds, "total_packet_count")) else {
        return vec![false; n];
    };
    let fwd = num(ds, "fwd_syn_count");
    let bwd = num(ds, "bwd_syn_count");
    if fwd.is_none() && bwd.is_none() {
        return vec![false; n];
    }
    (0..n)
        .map(|i| {
            let syn = fwd.as_ref().map_or(0.0, |v| v[i]) + bwd.as_ref().map_or(0.0, |v| v[i]);
            proto[i] == PROTO_TCP as f64 && syn >= 1.0 && total[i] < min_packets as f64
        })
        .collect()
}

/// Apply the cleaning rules in their fixed order, repeating until nothing
/// more is dropped.
pub fn clean(ds: &Dataset, cfg: &CleaningConfig) -> Result<(Dataset, AuditLog)> {
    cfg.validate()?;
    let mut out = ds.clone();
    let mut log = AuditLog::default();
    for pass in 1.. {
        let before = log.entries.len();
        let mut record = |rule: &str, columns: Vec<String>, rows: usize| {
            if !columns.is_empty() || rows > 0 {
                log.entries.push(AuditEntry { pass, rule: rule.to_string(), columns, rows_dropped: rows });
            }
        };

        let listed: Vec<String> = cfg.drop_columns.iter().filter(|c| out.has(c)).cloned().collect();
        drop_columns(&mut out, &listed)?;
        record("listed_column", listed, 0);

        let report = diagnose(&out);
        let missing: Vec<String> = report
            .columns
            .iter()
            .filter(|c| c.missing_fraction > cfg.missing_drop)
            .map(|c| c.name.clone())
            .collect();
        drop_columns(&mut out, &missing)?;
        record("missing_fraction", missing, 0);

        let report = diagnose(&out);
        let constant: Vec<String> = report
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Numeric && c.variance.is_none_or(|v| v <= cfg.variance_epsilon))
            .map(|c| c.name.clone())
            .collect();
        drop_columns(&mut out, &constant)?;
        record("near_zero_variance", constant, 0);

        let mut dup = vec![false; out.n_rows()];
        for i in duplicate_rows(&out) {
            dup[i] = true;
        }
        let n = keep_rows(&mut out, &dup);
        record("duplicate_row", Vec::new(), n);

        for rule in PLAUSIBILITY_RULES {
            let bad = plausibility(&out, rule);
            let n = keep_rows(&mut out, &bad);
            record(rule, Vec::new(), n);
        }

        let bad = short_tcp_handshakes(&out, cfg.min_tcp_packets);
        let n = keep_rows(&mut out, &bad);
        record("tcp_incomplete_handshake", Vec::new(), n);

        if log.entries.len() == before {
            break;
        }
    }
    Ok((out, log))
}

pub const STATELESS_SOURCES: [&str; 5] =
    ["fwd_packet_count", "bwd_packet_count", "fwd_byte_count", "bwd_byte_count", "flow_duration"];

/// Add directional ratios and totals when absent. Existing columns are left
/// untouched.
pub fn engineer_stateless(ds: &Dataset) -> Result<Dataset> {
    let mut src = Vec::with_capacity(STATELESS_SOURCES.len());
    for name in STATELESS_SOURCES {
        src.push(ds.require_nums(name, "dataset-prep")?);
    }
    let (fp, bp, fb, bb, dur) = (src[0], src[1], src[2], src[3], src[4]);
    let n = ds.n_rows();
    let tp: Vec<f64> = (0..n).map(|i| fp[i] + bp[i]).collect();
    let tb: Vec<f64> = (0..n).map(|i| fb[i] + bb[i]).collect();
    let derived: Vec<(&str, Vec<f64>)> = vec![
        ("total_packet_count", tp.clone()),
        ("total_byte_count", tb.clone()),
        ("packet_ratio", (0..n).map(|i| fp[i] / bp[i].max(1.0)).collect()),
        ("byte_ratio", (0..n).map(|i| fb[i] / bb[i].max(1.0)).collect()),
        ("bytes_per_packet", (0..n).map(|i| if tp[i] > 0.0 { tb[i] / tp[i] } else { 0.0 }).collect()),
        ("packets_per_second", (0..n).map(|i| if dur[i] > 0.0 { tp[i] / dur[i] } else { 0.0 }).collect()),
    ];
    let mut out = ds.clone();
    for (name, values) in derived {
        if !out.has(name) {
            out.push_column(Column::num(name, ColumnKind::Numeric, values))?;
        }
    }
    Ok(out)
}

/// Entity whose recent history the windowed features summarize.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostKey {
    /// Keyed by `src_ip`; counts distinct destination ports.
    #[default]
    Source,
    /// Keyed by `(dst_ip, dst_port)`; counts distinct source addresses.
    Service,
}

impl HostKey {
    pub fn feature_names(self) -> [&'static str; 3] {
        match self {
            HostKey::Source => ["src_active_flows", "src_new_flow_rate", "src_distinct_dst_ports"],
            HostKey::Service => ["svc_active_flows", "svc_new_flow_rate", "svc_distinct_src_ips"],
        }
    }
}

fn start_times(ds: &Dataset) -> Result<Vec<i128>> {
    let col = ds.require("flow_start", "dataset-prep")?;
    match &col.data {
        ColumnData::Time(v) => Ok(v.iter().map(|t| t.0 as i128).collect()),
        ColumnData::Num(v) if v.iter().all(|x| x.is_finite()) => Ok(v.iter().map(|x| (x * 1e9).round() as i128).collect()),
        _ => Err(Error::config("dataset-prep", "flow_start must be a timestamp column without gaps")),
    }
}

fn rendered(ds: &Dataset, name: &str) -> Result<Vec<String>> {
    let col = ds.require(name, "dataset-prep")?;
    Ok((0..col.data.len()).map(|i| col.data.render(i)).collect())
}

/// Windowed per-host features counted over rows of the same key whose
/// `flow_start` lies in `[t - window, t)`. Rows sharing `t` never see each
/// other. Output keeps the input row order.
pub fn engineer_stateful(ds: &Dataset, window_secs: f64, key: HostKey) -> Result<Dataset> {
    if !(window_secs > 0.0 && window_secs.is_finite()) {
        return Err(Error::config("dataset-prep", format!("window must be positive, got {window_secs}")));
    }
    let t = start_times(ds)?;
    let (keys, counted): (Vec<String>, Vec<String>) = match key {
        HostKey::Source => (rendered(ds, "src_ip")?, rendered(ds, "dst_port")?),
        HostKey::Service => {
            let ip = rendered(ds, "dst_ip")?;
            let port = rendered(ds, "dst_port")?;
            (ip.into_iter().zip(port).map(|(a, b)| format!("{a}|{b}")).collect(), rendered(ds, "src_ip")?)
        }
    };
    let w = (window_secs * 1e9).round() as i128;
    let n = ds.n_rows();

    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(k.as_str()).or_default().push(i);
    }
    let mut active = vec![0.0; n];
    let mut distinct = vec![0.0; n];
    for rows in groups.values_mut() {
        rows.sort_by_key(|&i| (t[i], i));
        let (mut lo, mut hi) = (0usize, 0usize);
        let mut live: HashMap<&str, usize> = HashMap::new();
        for &i in rows.iter() {
            while hi < rows.len() && t[rows[hi]] < t[i] {
                *live.entry(counted[rows[hi]].as_str()).or_default() += 1;
                hi += 1;
            }
            while lo < hi && t[rows[lo]] < t[i] - w {
                let v = counted[rows[lo]].as_str();
                let c = live.get_mut(v).expect("entered before leaving");
                *c -= 1;
                if *c == 0 {
                    live.remove(v);
                }
                lo += 1;
            }
            active[i] = (hi - lo) as f64;
            distinct[i] = live.len() as f64;
        }
    }
    let rate: Vec<f64> = active.iter().map(|a| a / window_secs).collect();
    let [a, r, d] = key.feature_names();
    let mut out = ds.clone();
    out.set_column(Column::num(a, ColumnKind::Numeric, active))?;
    out.set_column(Column::num(r, ColumnKind::Numeric, rate))?;
    out.set_column(Column::num(d, ColumnKind::Numeric, distinct))?;
    Ok(out)
}
