//! Packet capture ingestion: PCAP parsing, frame decoding, and optional
//! deterministic packet selection.

mod decode;
mod packet;
mod pcap;

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use decode::{decode_frame, decode_frame_snapped, Frame, LinkType, LINKTYPE_ETHERNET, LINKTYPE_RAW};
pub use packet::{Packet, TcpFlags, Timestamp, PROTO_TCP, PROTO_UDP};
pub use pcap::{build_frame, CaptureHeader, CaptureReader, CaptureWriter, Record, MAGIC_MICROS, MAGIC_NANOS};

use crate::error::{Error, Result};
use crate::net::IpPrefix;

/// What to do with packets whose IP length exceeds the MTU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OversizePolicy {
    /// Pass through without the super-packet flag.
    Keep,
    /// Pass through with `super_packet = true`.
    #[default]
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub sample_n: u32,
    pub filter: FilterSpec,
    pub mtu: u32,
    pub snap_policy: OversizePolicy,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { sample_n: 1, filter: FilterSpec::default(), mtu: 1500, snap_policy: OversizePolicy::Flag }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_n < 1 {
            return Err(Error::invalid("ingest", "sample_n must be >= 1"));
        }
        if self.mtu < 68 {
            return Err(Error::invalid("ingest", format!("mtu {} is below 68", self.mtu)));
        }
        Ok(())
    }
}

/// Conjunctive packet predicate. An empty clause matches everything.
/// Ports and prefixes match if either endpoint matches.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub protocols: BTreeSet<u8>,
    pub ports: BTreeSet<u16>,
    pub prefixes: Vec<IpPrefix>,
}

impl FilterSpec {
    pub fn new<S: AsRef<str>>(
        protocols: impl IntoIterator<Item = u8>,
        ports: impl IntoIterator<Item = u16>,
        prefixes: &[S],
    ) -> Result<Self> {
        let prefixes = prefixes
            .iter()
            .map(|s| s.as_ref().parse::<IpPrefix>().map_err(|e| Error::invalid("ingest", e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(FilterSpec { protocols: protocols.into_iter().collect(), ports: ports.into_iter().collect(), prefixes })
    }

    pub fn is_empty(&self) -> bool {
        self.protocols.is_empty() && self.ports.is_empty() && self.prefixes.is_empty()
    }

    pub fn matches(&self, p: &Packet) -> bool {
        (self.protocols.is_empty() || self.protocols.contains(&p.proto))
            && (self.ports.is_empty() || self.ports.contains(&p.src_port) || self.ports.contains(&p.dst_port))
            && (self.prefixes.is_empty()
                || self.prefixes.iter().any(|pre| pre.contains(&p.src_ip) || pre.contains(&p.dst_ip)))
    }
}

/// Systematic 1-in-n sampling: keeps positions 0, n, 2n, ...
pub fn sample_stream<I: IntoIterator<Item = Packet>>(stream: I, n: u32) -> Result<impl Iterator<Item = Packet>> {
    if n == 0 {
        return Err(Error::invalid("ingest", "sampling interval must be >= 1"));
    }
    Ok(stream.into_iter().step_by(n as usize))
}

pub fn filter_stream<'a, I: IntoIterator<Item = Packet> + 'a>(
    stream: I,
    spec: &'a FilterSpec,
) -> impl Iterator<Item = Packet> + 'a {
    stream.into_iter().filter(move |p| spec.matches(p))
}

/// Per-file ingest counters. `decoded + skipped() + truncated == frames`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub frames: u64,
    pub decoded: u64,
    pub non_ip: u64,
    pub fragments: u64,
    pub malformed: u64,
    pub truncated: u64,
    pub filtered_out: u64,
    pub sampled_out: u64,
    pub emitted: u64,
    pub super_packets: u64,
    pub sample_n: u32,
}

impl IngestSummary {
    pub fn skipped(&self) -> u64 {
        self.non_ip + self.fragments + self.malformed
    }
}

/// Streaming decoder over a capture: decodes, filters, then samples.
pub struct PacketStream<R> {
    reader: CaptureReader<R>,
    cfg: IngestConfig,
    summary: IngestSummary,
    selected: u64,
    failed: bool,
}

impl<R: Read> PacketStream<R> {
    pub fn new(reader: CaptureReader<R>, cfg: IngestConfig) -> Result<Self> {
        cfg.validate()?;
        let summary = IngestSummary { sample_n: cfg.sample_n, ..Default::default() };
        Ok(PacketStream { reader, cfg, summary, selected: 0, failed: false })
    }

    pub fn summary(&self) -> &IngestSummary {
        &self.summary
    }

    fn step(&mut self) -> Result<Option<Packet>> {
        let linktype = self.reader.header().linktype;
        while let Some(rec) = self.reader.next_record()? {
            self.summary.frames += 1;
            let snapped = (rec.data.len() as u64) < rec.orig_len as u64;
            let mut pkt = match decode_frame_snapped(&rec.data, linktype, self.cfg.mtu, snapped) {
                Ok(Frame::Ip(p)) => p,
                Ok(Frame::NonIp) => {
                    self.summary.non_ip += 1;
                    continue;
                }
                Ok(Frame::Fragment) => {
                    self.summary.fragments += 1;
                    continue;
                }
                Err(Error::TruncatedFrame { .. }) => {
                    self.summary.truncated += 1;
                    continue;
                }
                Err(_) => {
                    self.summary.malformed += 1;
                    continue;
                }
            };
            self.summary.decoded += 1;
            pkt.ts = rec.ts;
            if self.cfg.snap_policy == OversizePolicy::Keep {
                pkt.super_packet = false;
            }
            if !self.cfg.filter.matches(&pkt) {
                self.summary.filtered_out += 1;
                continue;
            }
            let pos = self.selected;
            self.selected += 1;
            if pos % self.cfg.sample_n as u64 != 0 {
                self.summary.sampled_out += 1;
                continue;
            }
            if pkt.super_packet {
                self.summary.super_packets += 1;
            }
            self.summary.emitted += 1;
            return Ok(Some(pkt));
        }
        Ok(None)
    }
}

impl<R: Read> Iterator for PacketStream<R> {
    type Item = Result<Packet>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let r = self.step();
        if r.is_err() {
            self.failed = true;
        }
        r.transpose()
    }
}

/// A fully decoded capture.
#[derive(Debug, Clone)]
pub struct Capture {
    pub packets: Vec<Packet>,
    pub summary: IngestSummary,
}

pub fn parse_capture(path: impl AsRef<Path>, cfg: &IngestConfig) -> Result<Capture> {
    let mut stream = PacketStream::new(CaptureReader::open(path)?, cfg.clone())?;
    let packets = stream.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(Capture { packets, summary: stream.summary.clone() })
}

pub fn parse_capture_from<R: Read>(reader: R, cfg: &IngestConfig) -> Result<Capture> {
    let mut stream = PacketStream::new(CaptureReader::new(reader)?, cfg.clone())?;
    let packets = stream.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(Capture { packets, summary: stream.summary.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;
    use proptest::strategy::Strategy as _;
    use std::net::Ipv4Addr;

    fn pkt(i: u64, src: &str, proto: u8, dport: u16) -> Packet {
        Packet::v4(
            Timestamp(i * 1000),
            (src.parse().unwrap(), 40000),
            ("172.16.0.1".parse().unwrap(), dport),
            proto,
            10,
            TcpFlags::ACK,
        )
    }

    #[test]
    fn sampling_positions() {
        let s: Vec<_> = (0..10).map(|i| pkt(i, "10.0.0.1", 6, 80)).collect();
        let out: Vec<_> = sample_stream(s.clone(), 3).unwrap().map(|p| p.ts.0 / 1000).collect();
        assert_eq!(out, vec![0, 3, 6, 9]);
        assert_eq!(sample_stream(s.clone(), 1).unwrap().collect::<Vec<_>>(), s);
        assert!(sample_stream(s, 0).is_err());
    }

    #[test]
    fn filters() {
        let s = vec![
            pkt(0, "10.1.2.3", 6, 443),
            pkt(1, "192.168.0.1", 6, 443),
            pkt(2, "10.1.2.3", 17, 443),
            pkt(3, "10.1.2.3", 6, 80),
        ];
        assert_eq!(filter_stream(s.clone(), &FilterSpec::default()).count(), 4);
        let tls = FilterSpec::new([6], [443], &[] as &[&str]).unwrap();
        let got: Vec<_> = filter_stream(s.clone(), &tls).map(|p| p.ts.0).collect();
        assert_eq!(got, vec![0, 1000]);
        let net = FilterSpec::new([], [], &["10.0.0.0/8"]).unwrap();
        let only_first = vec![s[0].clone(), s[1].clone()];
        let got: Vec<_> = filter_stream(only_first, &net).collect();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].src_ip, "10.1.2.3".parse::<std::net::IpAddr>().unwrap());
        assert!(FilterSpec::new([], [], &["10.0.0.0/99"]).is_err());
    }

    #[test]
    fn nanosecond_capture_timestamp() {
        let mut w = CaptureWriter::new(Vec::new(), LinkType::Ethernet, true, false).unwrap();
        let mut p = pkt(0, "10.0.0.1", PROTO_UDP, 53);
        p.ts = Timestamp::from_parts(1, 500);
        w.write_packet(&p).unwrap();
        let cap = parse_capture_from(Cursor::new(w.finish().unwrap()), &IngestConfig::default()).unwrap();
        assert_eq!(cap.packets.len(), 1);
        assert_eq!(cap.packets[0].ts.to_string(), "1.000000500");
    }

    #[test]
    fn empty_capture() {
        let w = CaptureWriter::new(Vec::new(), LinkType::Ethernet, false, false).unwrap();
        let cap = parse_capture_from(Cursor::new(w.finish().unwrap()), &IngestConfig::default()).unwrap();
        assert!(cap.packets.is_empty());
        assert_eq!(cap.summary.frames, 0);
        assert_eq!(cap.summary.skipped(), 0);
        assert_eq!(cap.summary.truncated, 0);
    }

    #[test]
    fn tcp_and_arp_mix() {
        let mut w = CaptureWriter::new(Vec::new(), LinkType::Ethernet, false, false).unwrap();
        let mut arp = vec![0u8; 42];
        arp[12] = 0x08;
        arp[13] = 0x06;
        for i in 0..100u64 {
            w.write_packet(&pkt(i, "10.0.0.1", PROTO_TCP, 443)).unwrap();
            if i % 20 == 0 {
                w.write_raw(Timestamp(i * 1000), &arp).unwrap();
            }
        }
        let cap = parse_capture_from(Cursor::new(w.finish().unwrap()), &IngestConfig::default()).unwrap();
        assert_eq!(cap.packets.len(), 100);
        assert_eq!(cap.summary.skipped(), 5);
        assert_eq!(cap.summary.frames, 105);
    }

    #[test]
    fn oversize_policy_keep_clears_flag() {
        let mut w = CaptureWriter::new(Vec::new(), LinkType::Ethernet, false, false).unwrap();
        w.write_packet(&Packet::v4(
            Timestamp(0),
            (Ipv4Addr::new(1, 1, 1, 1), 1),
            (Ipv4Addr::new(2, 2, 2, 2), 2),
            PROTO_UDP,
            8000,
            TcpFlags::empty(),
        ))
        .unwrap();
        let bytes = w.finish().unwrap();
        let flagged = parse_capture_from(Cursor::new(bytes.clone()), &IngestConfig::default()).unwrap();
        assert!(flagged.packets[0].super_packet);
        assert_eq!(flagged.summary.super_packets, 1);
        let cfg = IngestConfig { snap_policy: OversizePolicy::Keep, ..Default::default() };
        let kept = parse_capture_from(Cursor::new(bytes), &cfg).unwrap();
        assert!(!kept.packets[0].super_packet);
    }

    fn arb_packet(nanos: bool) -> impl proptest::strategy::Strategy<Value = Packet> {
        use proptest::prelude::*;
        (any::<[u8; 16]>(), any::<(u16, u16)>(), 0u8..3, 0u32..1400, 0u8..0x40, any::<bool>(), 0u64..u32::MAX as u64, 0u32..1_000_000_000)
            .prop_map(move |(addr, (sp, dp), proto, payload, flags, v6, secs, sub)| {
                let proto = [PROTO_TCP, PROTO_UDP, 1][proto as usize];
                let sub = if nanos { sub } else { sub / 1000 * 1000 };
                let a = |o: usize| Ipv4Addr::new(addr[o], addr[o + 1], addr[o + 2], addr[o + 3]);
                let mut p = Packet::v4(Timestamp::from_parts(secs, sub), (a(0), sp), (a(4), dp), proto, payload, TcpFlags(flags));
                if v6 {
                    p.src_ip = std::net::Ipv6Addr::from(u128::from_be_bytes(addr)).into();
                    p.dst_ip = std::net::Ipv6Addr::from(u128::from_be_bytes(addr).rotate_left(64)).into();
                    p.ip_len += 20;
                }
                p
            })
    }

    proptest::proptest! {
        #[test]
        fn capture_round_trip(
            (nanos, pkts) in proptest::prelude::any::<bool>().prop_flat_map(|n| (proptest::strategy::Just(n), proptest::collection::vec(arb_packet(n), 0..40))),
            big_endian: bool,
            vlan: bool,
        ) {
            let mut w = CaptureWriter::new(Vec::new(), LinkType::Ethernet, nanos, big_endian).unwrap().with_vlan(vlan);
            for p in &pkts {
                w.write_packet(p).unwrap();
            }
            let cap = parse_capture_from(Cursor::new(w.finish().unwrap()), &IngestConfig::default()).unwrap();
            proptest::prop_assert_eq!(cap.packets, pkts);
        }

        #[test]
        fn frames_are_accounted(kinds in proptest::collection::vec(0u8..4, 0..60)) {
            let mut w = CaptureWriter::new(Vec::new(), LinkType::Ethernet, false, false).unwrap();
            let ok = pkt(0, "10.0.0.1", PROTO_TCP, 443);
            let frame = build_frame(&ok, LinkType::Ethernet, false).unwrap();
            for (i, k) in kinds.iter().enumerate() {
                let ts = Timestamp(i as u64 * 1000);
                match k {
                    0 | 1 => w.write_raw(ts, &frame).unwrap(),
                    2 => w.write_raw(ts, &frame[..20]).unwrap(),
                    _ => {
                        let mut arp = vec![0u8; 42];
                        arp[12] = 0x08;
                        arp[13] = 0x06;
                        w.write_raw(ts, &arp).unwrap();
                    }
                }
            }
            let cap = parse_capture_from(Cursor::new(w.finish().unwrap()), &IngestConfig::default()).unwrap();
            let s = &cap.summary;
            proptest::prop_assert_eq!(s.frames, kinds.len() as u64);
            proptest::prop_assert_eq!(s.decoded + s.skipped() + s.truncated, s.frames);
            proptest::prop_assert_eq!(cap.packets.len(), kinds.iter().filter(|&&k| k < 2).count());
        }

        #[test]
        fn sampling_keeps_one_in_n(len in 0usize..200, n in 1u32..20) {
            let s: Vec<_> = (0..len as u64).map(|i| pkt(i, "10.0.0.1", PROTO_UDP, 53)).collect();
            let out: Vec<_> = sample_stream(s.clone(), n).unwrap().collect();
            proptest::prop_assert_eq!(out.len(), len.div_ceil(n as usize));
            let again: Vec<_> = sample_stream(s, n).unwrap().collect();
            proptest::prop_assert_eq!(out, again);
        }
    }

    #[test]
    fn config_validation() {
        assert!(IngestConfig { sample_n: 0, ..Default::default() }.validate().is_err());
        assert!(IngestConfig { mtu: 67, ..Default::default() }.validate().is_err());
        assert!(IngestConfig::default().validate().is_ok());
    }
}
