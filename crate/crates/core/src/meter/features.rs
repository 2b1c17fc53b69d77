//! Flattening exported flow records into named feature columns.

use super::key::FlowKey;
use super::record::FlowRecord;
use super::stats::{DirStats, StreamingMoments};
use crate::dataset::{Column, ColumnData, ColumnKind, Dataset};
use crate::error::Result;
use crate::ingest::{TcpFlags, Timestamp};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDef {
    pub name: String,
    pub kind: ColumnKind,
    pub validity: Option<String>,
}

/// One flat feature row with its column definitions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureRow {
    pub defs: Vec<FeatureDef>,
    pub values: Vec<f64>,
}

impl FeatureRow {
    fn push(&mut self, name: impl Into<String>, value: f64) {
        self.push_def(name.into(), ColumnKind::Numeric, None, value);
    }

    fn push_def(&mut self, name: String, kind: ColumnKind, validity: Option<String>, value: f64) {
        self.defs.push(FeatureDef { name, kind, validity });
        self.values.push(value);
    }

    fn push_checked(&mut self, name: String, value: Option<f64>, flag: &str) {
        self.push_def(name, ColumnKind::Numeric, Some(flag.to_string()), value.unwrap_or(0.0));
    }

    fn push_flag(&mut self, name: &str, valid: bool) {
        self.push(name, if valid { 1.0 } else { 0.0 });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.defs.iter().position(|d| d.name == name).map(|i| self.values[i])
    }

    fn moments(&mut self, prefix: &str, m: &StreamingMoments) {
        let valid = format!("{prefix}_valid");
        self.push_checked(format!("{prefix}_mean"), m.mean(), &valid);
        self.push_checked(format!("{prefix}_min"), m.min(), &valid);
        self.push_checked(format!("{prefix}_max"), m.max(), &valid);
        self.push_flag(&valid, m.mean().is_some());
        let var_valid = format!("{prefix}_var_valid");
        self.push_checked(format!("{prefix}_var"), m.variance(), &var_valid);
        self.push_flag(&var_valid, m.variance().is_some());
        let shape_valid = format!("{prefix}_shape_valid");
        self.push_checked(format!("{prefix}_skew"), m.skewness(), &shape_valid);
        self.push_checked(format!("{prefix}_kurt"), m.kurtosis(), &shape_valid);
        self.push_flag(&shape_valid, m.skewness().is_some());
    }

    fn direction(&mut self, d: &str, s: &DirStats) {
        self.push(format!("{d}_packet_count"), s.pkt_count as f64);
        self.push(format!("{d}_byte_count"), s.byte_count as f64);
        self.push(format!("{d}_payload_bytes"), s.payload_bytes as f64);
        let dur_valid = format!("{d}_duration_valid");
        self.push_checked(
            format!("{d}_duration"),
            (s.pkt_count >= 2).then(|| s.duration_ns() as f64 * 1e-9),
            &dur_valid,
        );
        self.push_flag(&dur_valid, s.pkt_count >= 2);
        self.moments(&format!("{d}_size"), &s.size);
        self.moments(&format!("{d}_piat"), &s.piat);
        for (i, (_, flag)) in TcpFlags::ALL.iter().enumerate() {
            self.push(format!("{d}_{flag}_count"), s.tcp_flag_counts[i] as f64);
        }
    }
}

/// Compute the feature row of an exported record.
pub fn finalize_features(rec: &FlowRecord, splt_n: usize) -> FeatureRow {
    let mut row = FeatureRow::default();
    row.push_def("proto".into(), ColumnKind::Categorical, None, rec.initiator.proto as f64);
    row.push("dst_port", rec.initiator.dst_port as f64);
    row.direction("fwd", &rec.fwd);
    row.direction("bwd", &rec.bwd);

    let fwd_pkts = rec.fwd.pkt_count as f64;
    let bwd_pkts = rec.bwd.pkt_count as f64;
    let total_pkts = fwd_pkts + bwd_pkts;
    let total_bytes = rec.total_bytes() as f64;
    let duration = rec.flow_duration_ns() as f64 * 1e-9;
    row.push("total_packet_count", total_pkts);
    row.push("total_byte_count", total_bytes);
    row.push("total_payload_bytes", (rec.fwd.payload_bytes + rec.bwd.payload_bytes) as f64);
    row.push("flow_duration", duration);
    row.push("packet_ratio", fwd_pkts / bwd_pkts.max(1.0));
    row.push("byte_ratio", rec.fwd.byte_count as f64 / (rec.bwd.byte_count as f64).max(1.0));
    row.push("bytes_per_packet", if total_pkts > 0.0 { total_bytes / total_pkts } else { 0.0 });
    row.push("packets_per_second", if duration > 0.0 { total_pkts / duration } else { 0.0 });

    row.push("splt_len", rec.splt.len().min(splt_n) as f64);
    for i in 0..splt_n {
        let e = rec.splt.get(i);
        row.push(format!("splt_dir_{i}"), e.map_or(0.0, |e| e.dir as f64));
        row.push(format!("splt_size_{i}"), e.map_or(0.0, |e| e.ip_len as f64));
        row.push(format!("splt_gap_{i}"), e.map_or(0.0, |e| e.gap_ns as f64 * 1e-9));
    }
    row
}

fn placeholder_key() -> FlowKey {
    let any = std::net::IpAddr::V4(std::net::Ipv4Addr::UNSPECIFIED);
    FlowKey { src_ip: any, dst_ip: any, src_port: 0, dst_port: 0, proto: 0 }
}

/// Metadata columns that precede the features in flow tables.
pub const METADATA_COLUMNS: [&str; 7] =
    ["src_ip", "dst_ip", "src_port", "flow_start", "flow_end", "export_reason", "segment_index"];

/// Build the flow table: metadata columns followed by the features, one
/// row per record in the given order.
pub fn records_to_dataset(records: &[FlowRecord], splt_n: usize) -> Result<Dataset> {
    let mut src_ip = Vec::with_capacity(records.len());
    let mut dst_ip = Vec::with_capacity(records.len());
    let mut src_port = Vec::with_capacity(records.len());
    let mut start: Vec<Timestamp> = Vec::with_capacity(records.len());
    let mut end: Vec<Timestamp> = Vec::with_capacity(records.len());
    let mut reason = Vec::with_capacity(records.len());
    let mut segment = Vec::with_capacity(records.len());
    let template = finalize_features(&FlowRecord::new(placeholder_key(), 0), splt_n);
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(records.len()); template.defs.len()];
    for rec in records {
        src_ip.push(rec.initiator.src_ip.to_string());
        dst_ip.push(rec.initiator.dst_ip.to_string());
        src_port.push(rec.initiator.src_port as f64);
        start.push(rec.flow_start());
        end.push(rec.flow_end());
        reason.push(rec.export_reason.as_str().to_string());
        segment.push(rec.segment_index as f64);
        let row = finalize_features(rec, splt_n);
        for (col, v) in values.iter_mut().zip(row.values) {
            col.push(v);
        }
    }
    let mut cols = vec![
        Column::text("src_ip", ColumnKind::Metadata, src_ip),
        Column::text("dst_ip", ColumnKind::Metadata, dst_ip),
        Column::num("src_port", ColumnKind::Metadata, src_port),
        Column::time("flow_start", start),
        Column::time("flow_end", end),
        Column::text("export_reason", ColumnKind::Metadata, reason),
        Column::num("segment_index", ColumnKind::Metadata, segment),
    ];
    for (def, vals) in template.defs.into_iter().zip(values) {
        let data = if def.kind == ColumnKind::Categorical {
            ColumnData::Text(vals.iter().map(|v| format!("{}", *v as u64)).collect())
        } else {
            ColumnData::Num(vals)
        };
        cols.push(Column { name: def.name, kind: def.kind, validity: def.validity, data });
    }
    Dataset::from_columns(cols)
}
