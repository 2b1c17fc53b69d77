//! The flow cache: lookup, lifecycle and export.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::key::{canonicalize, dual_hash, flow_hash, CanonicalKey, Direction, FlowKey};
use super::record::{ExportReason, FlowRecord};
use crate::error::{Error, Result};
use crate::ingest::{Packet, TcpFlags, Timestamp, PROTO_TCP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookupStrategy {
    /// One lookup on the direction-free key.
    #[default]
    Canonical,
    /// Two lookups keyed by the forward and reverse hashes.
    DualHash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anonymize {
    #[default]
    None,
    TruncateV4_24,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeterConfig {
    /// Seconds.
    pub idle_timeout: f64,
    /// Seconds.
    pub active_timeout: f64,
    pub max_flows: usize,
    pub lookup: LookupStrategy,
    pub splt_n: usize,
    pub honor_fin_rst: bool,
    pub anonymize: Anonymize,
    /// Seconds a packet may lag the newest timestamp before it counts as late.
    pub reorder_slack: f64,
    /// Full idle/active scan every this many packets (0 disables).
    pub scan_interval: u64,
}

impl Default for MeterConfig {
    fn default() -> Self {
        MeterConfig {
            idle_timeout: 30.0,
            active_timeout: 300.0,
            max_flows: 1 << 20,
            lookup: LookupStrategy::Canonical,
            splt_n: 20,
            honor_fin_rst: true,
            anonymize: Anonymize::None,
            reorder_slack: 1.0,
            scan_interval: 1024,
        }
    }
}

impl MeterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.idle_timeout > 0.0 && self.idle_timeout < self.active_timeout) {
            return Err(Error::invalid(
                "flow-meter",
                format!("need 0 < idle_timeout ({}) < active_timeout ({})", self.idle_timeout, self.active_timeout),
            ));
        }
        if self.max_flows == 0 {
            return Err(Error::invalid("flow-meter", "max_flows must be >= 1"));
        }
        if !(self.reorder_slack >= 0.0) {
            return Err(Error::invalid("flow-meter", "reorder_slack must be >= 0"));
        }
        Ok(())
    }
}

fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterStats {
    pub packets: u64,
    pub late_packets: u64,
    pub dropped_late: u64,
    pub exported: u64,
    pub by_reason: BTreeMap<String, u64>,
    pub peak_flows: usize,
}

struct Entry {
    record: FlowRecord,
    lru_seq: u64,
}

enum Index {
    Canonical(HashMap<CanonicalKey, usize>),
    DualHash(HashMap<u64, Vec<usize>>),
}

/// Hash-based bidirectional flow cache driven by packet timestamps.
pub struct FlowMeter {
    cfg: MeterConfig,
    idle_ns: u64,
    active_ns: u64,
    slack_ns: u64,
    index: Index,
    slots: Vec<Option<Entry>>,
    free: Vec<usize>,
    lru: BTreeMap<u64, usize>,
    seq: u64,
    segments: HashMap<CanonicalKey, u32>,
    watermark: Option<Timestamp>,
    stats: MeterStats,
}

impl FlowMeter {
    pub fn new(cfg: MeterConfig) -> Result<Self> {
        cfg.validate()?;
        let index = match cfg.lookup {
            LookupStrategy::Canonical => Index::Canonical(HashMap::new()),
            LookupStrategy::DualHash => Index::DualHash(HashMap::new()),
        };
        Ok(FlowMeter {
            idle_ns: secs_to_ns(cfg.idle_timeout),
            active_ns: secs_to_ns(cfg.active_timeout),
            slack_ns: secs_to_ns(cfg.reorder_slack),
            cfg,
            index,
            slots: Vec::new(),
            free: Vec::new(),
            lru: BTreeMap::new(),
            seq: 0,
            segments: HashMap::new(),
            watermark: None,
            stats: MeterStats::default(),
        })
    }

    pub fn config(&self) -> &MeterConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &MeterStats {
        &self.stats
    }

    pub fn live_flows(&self) -> usize {
        self.lru.len()
    }

    fn lookup(&self, key: &FlowKey) -> Option<(usize, Direction)> {
        match &self.index {
            Index::Canonical(map) => {
                let (canon, _) = canonicalize(key);
                let slot = *map.get(&canon)?;
                let rec = &self.slots[slot].as_ref().unwrap().record;
                let dir = if rec.initiator == *key { Direction::Forward } else { Direction::Backward };
                Some((slot, dir))
            }
            Index::DualHash(map) => {
                let (fwd_id, rev_id) = dual_hash(key);
                let find = |id: u64, want: FlowKey| {
                    map.get(&id)?
                        .iter()
                        .copied()
                        .find(|&s| self.slots[s].as_ref().unwrap().record.initiator == want)
                };
                if let Some(s) = find(fwd_id, *key) {
                    return Some((s, Direction::Forward));
                }
                find(rev_id, key.reverse()).map(|s| (s, Direction::Backward))
            }
        }
    }

    fn insert(&mut self, record: FlowRecord) -> usize {
        self.seq += 1;
        let initiator = record.initiator;
        let canon = record.key;
        let entry = Entry { record, lru_seq: self.seq };
        let slot = match self.free.pop() {
            Some(s) => {
                self.slots[s] = Some(entry);
                s
            }
            None => {
                self.slots.push(Some(entry));
                self.slots.len() - 1
            }
        };
        self.lru.insert(self.seq, slot);
        match &mut self.index {
            Index::Canonical(map) => {
                map.insert(canon, slot);
            }
            Index::DualHash(map) => map.entry(flow_hash(&initiator)).or_default().push(slot),
        }
        self.stats.peak_flows = self.stats.peak_flows.max(self.lru.len());
        slot
    }

    fn remove(&mut self, slot: usize, reason: ExportReason) -> FlowRecord {
        let entry = self.slots[slot].take().expect("live slot");
        self.free.push(slot);
        self.lru.remove(&entry.lru_seq);
        match &mut self.index {
            Index::Canonical(map) => {
                map.remove(&entry.record.key);
            }
            Index::DualHash(map) => {
                let id = flow_hash(&entry.record.initiator);
                if let Some(bucket) = map.get_mut(&id) {
                    bucket.retain(|&s| s != slot);
                    if bucket.is_empty() {
                        map.remove(&id);
                    }
                }
            }
        }
        let mut rec = entry.record;
        rec.export_reason = reason;
        self.segments.insert(rec.key, rec.segment_index + 1);
        self.stats.exported += 1;
        *self.stats.by_reason.entry(reason.as_str().to_string()).or_default() += 1;
        if self.cfg.anonymize == Anonymize::TruncateV4_24 {
            rec.anonymize_v4_24();
        }
        rec
    }

    fn touch(&mut self, slot: usize) {
        self.seq += 1;
        let entry = self.slots[slot].as_mut().unwrap();
        self.lru.remove(&entry.lru_seq);
        entry.lru_seq = self.seq;
        self.lru.insert(self.seq, slot);
    }

    fn expiry(&self, rec: &FlowRecord, now: Timestamp) -> Option<ExportReason> {
        if now.since(rec.flow_end()) > self.idle_ns {
            Some(ExportReason::Idle)
        } else if now.since(rec.flow_start()) >= self.active_ns {
            Some(ExportReason::Active)
        } else {
            None
        }
    }

    /// Feed one packet; returns the records exported as a consequence.
    pub fn process_packet(&mut self, pkt: &Packet) -> Vec<FlowRecord> {
        let mut out = Vec::new();
        self.stats.packets += 1;
        let late = matches!(self.watermark, Some(w) if pkt.ts.0 + self.slack_ns < w.0);
        let now = self.watermark.map_or(pkt.ts, |w| w.max(pkt.ts));
        self.watermark = Some(now);
        if late {
            self.stats.late_packets += 1;
        }

        let key = FlowKey::of(pkt);
        let mut hit = self.lookup(&key);
        if let Some((slot, _)) = hit {
            let rec = &self.slots[slot].as_ref().unwrap().record;
            if let Some(reason) = self.expiry(rec, pkt.ts) {
                out.push(self.remove(slot, reason));
                hit = None;
            }
        }
        let (slot, dir) = match hit {
            Some((slot, dir)) => {
                self.touch(slot);
                (slot, dir)
            }
            None if late => {
                self.stats.dropped_late += 1;
                self.periodic_scan(&mut out);
                return out;
            }
            None => {
                if self.lru.len() >= self.cfg.max_flows {
                    let (_, &victim) = self.lru.iter().next().unwrap();
                    out.push(self.remove(victim, ExportReason::Pressure));
                }
                let (canon, _) = canonicalize(&key);
                let segment = self.segments.get(&canon).copied().unwrap_or(0);
                (self.insert(FlowRecord::new(key, segment)), Direction::Forward)
            }
        };
        let splt_n = self.cfg.splt_n;
        self.slots[slot].as_mut().unwrap().record.update(pkt, dir, splt_n);
        if self.cfg.honor_fin_rst
            && pkt.proto == PROTO_TCP
            && pkt.tcp_flags.intersects(TcpFlags::FIN | TcpFlags::RST)
        {
            out.push(self.remove(slot, ExportReason::FinRst));
        }
        self.periodic_scan(&mut out);
        out
    }

    fn periodic_scan(&mut self, out: &mut Vec<FlowRecord>) {
        let interval = self.cfg.scan_interval;
        if interval > 0 && self.stats.packets % interval == 0 {
            if let Some(now) = self.watermark {
                out.extend(self.expire_until(now));
            }
        }
    }

    /// Export every flow that is idle or over-age at `now`, ordered by
    /// flow start.
    pub fn expire_until(&mut self, now: Timestamp) -> Vec<FlowRecord> {
        let mut due: Vec<(Timestamp, CanonicalKey, usize, ExportReason)> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                let rec = &e.as_ref()?.record;
                self.expiry(rec, now).map(|r| (rec.flow_start(), rec.key, i, r))
            })
            .collect();
        due.sort_by_key(|&(t, k, _, _)| (t, k));
        due.into_iter().map(|(_, _, slot, reason)| self.remove(slot, reason)).collect()
    }

    /// Drain the cache at end of input, ordered by flow start.
    pub fn flush(&mut self) -> Vec<FlowRecord> {
        let mut live: Vec<(Timestamp, CanonicalKey, usize)> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|e| (e.record.flow_start(), e.record.key, i)))
            .collect();
        live.sort_by_key(|&(t, k, _)| (t, k));
        live.into_iter().map(|(_, _, slot)| self.remove(slot, ExportReason::EndOfInput)).collect()
    }
}

/// Meter a whole packet sequence, returning records in export order.
pub fn meter_packets<'a>(packets: impl IntoIterator<Item = &'a Packet>, cfg: &MeterConfig) -> Result<(Vec<FlowRecord>, MeterStats)> {
    let mut meter = FlowMeter::new(cfg.clone())?;
    let mut records = Vec::new();
    for p in packets {
        records.extend(meter.process_packet(p));
    }
    records.extend(meter.flush());
    Ok((records, meter.stats().clone()))
}
