use std::fmt;

use serde::{Deserialize, Serialize};

use super::key::{canonicalize, CanonicalKey, Direction, FlowKey};
use super::stats::DirStats;
use crate::ingest::{Packet, Timestamp};
use crate::net::truncate_v4_24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportReason {
    Idle,
    Active,
    FinRst,
    Pressure,
    EndOfInput,
}

impl ExportReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExportReason::Idle => "idle",
            ExportReason::Active => "active",
            ExportReason::FinRst => "fin_rst",
            ExportReason::Pressure => "pressure",
            ExportReason::EndOfInput => "end_of_input",
        }
    }
}

impl fmt::Display for ExportReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One entry of the packet-length/time sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpltEntry {
    /// +1 forward, -1 backward.
    pub dir: i8,
    pub ip_len: u32,
    /// Nanoseconds since the previous packet of the flow (0 for the first).
    pub gap_ns: u64,
}

/// A bidirectional flow record. The forward direction is the orientation
/// of the first packet observed for this segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub key: CanonicalKey,
    pub initiator: FlowKey,
    pub fwd: DirStats,
    pub bwd: DirStats,
    pub splt: Vec<SpltEntry>,
    pub export_reason: ExportReason,
    pub segment_index: u32,
    last_seen: Timestamp,
}

impl FlowRecord {
    pub(crate) fn new(initiator: FlowKey, segment_index: u32) -> Self {
        FlowRecord {
            key: canonicalize(&initiator).0,
            initiator,
            fwd: DirStats::default(),
            bwd: DirStats::default(),
            splt: Vec::new(),
            export_reason: ExportReason::EndOfInput,
            segment_index,
            last_seen: Timestamp(0),
        }
    }

    pub(crate) fn update(&mut self, p: &Packet, dir: Direction, splt_n: usize) {
        if self.splt.len() < splt_n {
            let gap_ns = if self.total_packets() == 0 { 0 } else { p.ts.since(self.last_seen) };
            self.splt.push(SpltEntry { dir: dir.sign(), ip_len: p.ip_len, gap_ns });
        }
        self.last_seen = if self.total_packets() == 0 { p.ts } else { self.last_seen.max(p.ts) };
        match dir {
            Direction::Forward => self.fwd.update(p),
            Direction::Backward => self.bwd.update(p),
        }
    }

    pub fn total_packets(&self) -> u64 {
        self.fwd.pkt_count + self.bwd.pkt_count
    }

    pub fn total_bytes(&self) -> u64 {
        self.fwd.byte_count + self.bwd.byte_count
    }

    pub fn flow_start(&self) -> Timestamp {
        match (self.fwd.pkt_count, self.bwd.pkt_count) {
            (0, 0) => Timestamp(0),
            (0, _) => self.bwd.first_ts,
            (_, 0) => self.fwd.first_ts,
            _ => self.fwd.first_ts.min(self.bwd.first_ts),
        }
    }

    pub fn flow_end(&self) -> Timestamp {
        self.fwd.last_ts.max(self.bwd.last_ts)
    }

    pub fn flow_duration_ns(&self) -> u64 {
        self.flow_end().since(self.flow_start())
    }

    /// Replace IPv4 addresses by their /24 network.
    pub fn anonymize_v4_24(&mut self) {
        self.initiator.src_ip = truncate_v4_24(self.initiator.src_ip);
        self.initiator.dst_ip = truncate_v4_24(self.initiator.dst_ip);
        self.key = canonicalize(&self.initiator).0;
    }
}
