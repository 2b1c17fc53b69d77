//! Ground-truth labels from port rules and endpoint maps.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Column, ColumnKind, Dataset, LABEL, UNKNOWN};
use crate::error::{Error, Result};
use crate::ingest::{PROTO_TCP, PROTO_UDP};
use crate::net::IpPrefix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Low,
    High,
}

impl FromStr for Confidence {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "low" => Ok(Confidence::Low),
            "high" => Ok(Confidence::High),
            other => Err(format!("confidence must be low or high, got {other:?}")),
        }
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Confidence::Low => "low",
            Confidence::High => "high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Port,
    Map,
    None,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Port => "port",
            LabelSource::Map => "map",
            LabelSource::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    PortProto { port: u16, proto: u8 },
    Prefix(IpPrefix),
    Exact(IpAddr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRule {
    pub matcher: Matcher,
    pub label: String,
    pub confidence: Confidence,
    /// Lower value wins.
    pub priority: i64,
}

/// The fields of a flow row that labeling looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowEndpoints {
    pub dst_ip: IpAddr,
    pub dst_port: u16,
    pub proto: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelOutcome {
    Unknown,
    Known { label: String, source: LabelSource, confidence: Confidence },
}

impl LabelOutcome {
    fn rank(&self) -> u8 {
        match self {
            LabelOutcome::Unknown => 0,
            LabelOutcome::Known { source, confidence, .. } => match (source, confidence) {
                (LabelSource::Map, Confidence::High) => 4,
                (LabelSource::Port, Confidence::High) => 3,
                (LabelSource::Map, Confidence::Low) => 2,
                (LabelSource::Port, Confidence::Low) => 1,
                (LabelSource::None, _) => 0,
            },
        }
    }
}

/// Validated rule set, sorted by priority.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    rules: Vec<LabelRule>,
}

impl RuleSet {
    pub fn new(mut rules: Vec<LabelRule>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rules {
            if !seen.insert(r.priority) {
                return Err(Error::config("labeling", format!("duplicate rule priority {}", r.priority)));
            }
        }
        rules.sort_by_key(|r| r.priority);
        Ok(RuleSet { rules })
    }

    pub fn rules(&self) -> &[LabelRule] {
        &self.rules
    }

    /// Legacy well-known ports, all low confidence.
    pub fn default_ports() -> Self {
        let table: [(u16, u8, &str); 13] = [
            (22, PROTO_TCP, "SSH"),
            (25, PROTO_TCP, "SMTP"),
            (53, PROTO_UDP, "DNS"),
            (53, PROTO_TCP, "DNS"),
            (80, PROTO_TCP, "HTTP"),
            (443, PROTO_TCP, "HTTPS"),
            (443, PROTO_UDP, "QUIC"),
            (21, PROTO_TCP, "FTP"),
            (23, PROTO_TCP, "TELNET"),
            (110, PROTO_TCP, "POP3"),
            (143, PROTO_TCP, "IMAP"),
            (123, PROTO_UDP, "NTP"),
            (3389, PROTO_TCP, "RDP"),
        ];
        let rules = table
            .iter()
            .enumerate()
            .map(|(i, &(port, proto, label))| LabelRule {
                matcher: Matcher::PortProto { port, proto },
                label: label.to_string(),
                confidence: Confidence::Low,
                priority: i as i64 + 1,
            })
            .collect();
        RuleSet::new(rules).expect("unique priorities")
    }

    /// Parse `matcher_type,matcher_value,label,confidence,priority` lines.
    /// Matcher types: `port` (value `443/tcp`, `53/udp` or `53/17`),
    /// `prefix` (CIDR) and `ip` (exact address). A header line is optional.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("matcher_type") {
                continue;
            }
            let err = |msg: String| Error::Parse { path: origin.to_string(), line: lineno + 1, msg };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(err(format!("expected 5 fields, got {}", f.len())));
            }
            let matcher = match f[0] {
                "port" => {
                    let (port, proto) = f[1].split_once('/').ok_or_else(|| err("port matcher needs port/proto".into()))?;
                    let port: u16 = port.parse().map_err(|_| err(format!("bad port {port:?}")))?;
                    let proto = match proto.to_ascii_lowercase().as_str() {
                        "tcp" => PROTO_TCP,
                        "udp" => PROTO_UDP,
                        n => n.parse().map_err(|_| err(format!("bad protocol {n:?}")))?,
                    };
                    Matcher::PortProto { port, proto }
                }
                "prefix" => Matcher::Prefix(f[1].parse().map_err(|e| err(format!("{e}")))?),
                "ip" => Matcher::Exact(f[1].parse().map_err(|_| err(format!("bad address {:?}", f[1])))?),
                other => return Err(err(format!("unknown matcher type {other:?}"))),
            };
            if f[2].is_empty() || f[2] == UNKNOWN {
                return Err(err("empty or reserved label".into()));
            }
            let confidence = f[3].parse().map_err(err)?;
            let priority = f[4].parse().map_err(|_| err(format!("bad priority {:?}", f[4])))?;
            rules.push(LabelRule { matcher, label: f[2].to_string(), confidence, priority });
        }
        RuleSet::new(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RuleSet::parse(&text, &path.display().to_string())
    }
}

/// Highest-priority matching rule; port rules compare destination port and
/// protocol, address rules compare the destination address.
pub fn label_by_port(row: &FlowEndpoints, rules: &RuleSet) -> LabelOutcome {
    rules
        .rules
        .iter()
        .find(|r| match &r.matcher {
            Matcher::PortProto { port, proto } => *port == row.dst_port && *proto == row.proto,
            Matcher::Prefix(p) => p.contains(&row.dst_ip),
            Matcher::Exact(ip) => *ip == row.dst_ip,
        })
        .map_or(LabelOutcome::Unknown, |r| LabelOutcome::Known {
            label: r.label.clone(),
            source: LabelSource::Port,
            confidence: r.confidence,
        })
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct MapEntry {
    prefix: IpPrefix,
    label: String,
    confidence: Confidence,
}

/// Endpoint to label table with exact-then-longest-prefix lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EndpointMap {
    entries: Vec<MapEntry>,
}

impl EndpointMap {
    /// Parse `ip_or_prefix,label,confidence` lines (header optional).
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("ip_or_prefix") {
                continue;
            }
            let err = |msg: String| Error::Parse { path: origin.to_string(), line: lineno + 1, msg };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(err(format!("expected 3 fields, got {}", f.len())));
            }
            let prefix: IpPrefix = f[0].parse().map_err(|e| err(format!("{e}")))?;
            if f[1].is_empty() || f[1] == UNKNOWN {
                return Err(err("empty or reserved label".into()));
            }
            let confidence = f[2].parse().map_err(err)?;
            entries.push(MapEntry { prefix, label: f[1].to_string(), confidence });
        }
        // Longest prefix first; file order breaks ties.
        entries.sort_by_key(|e| std::cmp::Reverse(e.prefix.len()));
        Ok(EndpointMap { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EndpointMap::parse(&text, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn label_by_map(row: &FlowEndpoints, map: &EndpointMap) -> LabelOutcome {
    map.entries
        .iter()
        .find(|e| e.prefix.contains(&row.dst_ip))
        .map_or(LabelOutcome::Unknown, |e| LabelOutcome::Known {
            label: e.label.clone(),
            source: LabelSource::Map,
            confidence: e.confidence,
        })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRow {
    pub label: String,
    pub source: LabelSource,
    pub confidence: Option<Confidence>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub labeled: u64,
    pub unknown: u64,
    pub conflicts: u64,
}

/// Combine outcomes by strict precedence: high map > high port > low map >
/// low port. Disagreement at the winning level yields UNKNOWN and counts a
/// conflict.
pub fn resolve(outcomes: &[LabelOutcome], stats: &mut LabelStats) -> LabeledRow {
    let best = outcomes.iter().map(LabelOutcome::rank).max().unwrap_or(0);
    let unknown = LabeledRow { label: UNKNOWN.to_string(), source: LabelSource::None, confidence: None };
    if best == 0 {
        stats.unknown += 1;
        return unknown;
    }
    let top: Vec<&LabelOutcome> = outcomes.iter().filter(|o| o.rank() == best).collect();
    let LabelOutcome::Known { label, source, confidence } = top[0] else { unreachable!() };
    let agree = top.iter().all(|o| matches!(o, LabelOutcome::Known { label: l, .. } if l == label));
    if !agree {
        stats.conflicts += 1;
        stats.unknown += 1;
        return unknown;
    }
    stats.labeled += 1;
    LabeledRow { label: label.clone(), source: *source, confidence: Some(*confidence) }
}

/// Label every row of a flow table from its `dst_ip`, `dst_port` and
/// `proto` columns. Adds `label` plus `label_source`/`label_confidence`
/// metadata.
pub fn label_dataset(ds: &mut Dataset, rules: Option<&RuleSet>, map: Option<&EndpointMap>) -> Result<LabelStats> {
    let dst_ip = ds
        .require("dst_ip", "labeling")?
        .texts()
        .ok_or_else(|| Error::config("labeling", "dst_ip must be text"))?;
    let dst_port = ds.require_nums("dst_port", "labeling")?;
    let proto_col = ds.require("proto", "labeling")?;
    let protos: Vec<u8> = match (&proto_col.data, proto_col.nums(), proto_col.texts()) {
        (_, Some(v), _) => v.iter().map(|&x| x as u8).collect(),
        (_, _, Some(v)) => v.iter().map(|s| s.parse().unwrap_or(0)).collect(),
        _ => return Err(Error::config("labeling", "proto must be numeric or text")),
    };
    let mut stats = LabelStats::default();
    let mut labels = Vec::with_capacity(ds.n_rows());
    let mut sources = Vec::with_capacity(ds.n_rows());
    let mut confs = Vec::with_capacity(ds.n_rows());
    for i in 0..ds.n_rows() {
        let ip: IpAddr = dst_ip[i]
            .parse()
            .map_err(|_| Error::config("labeling", format!("row {i}: bad dst_ip {:?}", dst_ip[i])))?;
        let row = FlowEndpoints { dst_ip: ip, dst_port: dst_port[i] as u16, proto: protos[i] };
        let mut outcomes = Vec::with_capacity(2);
        if let Some(m) = map {
            outcomes.push(label_by_map(&row, m));
        }
        if let Some(r) = rules {
            outcomes.push(label_by_port(&row, r));
        }
        let out = resolve(&outcomes, &mut stats);
        labels.push(out.label);
        sources.push(out.source.as_str().to_string());
        confs.push(out.confidence.map_or(String::new(), |c| c.to_string()));
    }
    ds.set_column(Column::text(LABEL, ColumnKind::Label, labels))?;
    ds.set_column(Column::text("label_source", ColumnKind::Metadata, sources))?;
    ds.set_column(Column::text("label_confidence", ColumnKind::Metadata, confs))?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ip: &str, port: u16, proto: u8) -> FlowEndpoints {
        FlowEndpoints { dst_ip: ip.parse().unwrap(), dst_port: port, proto }
    }

    fn known(label: &str, source: LabelSource, confidence: Confidence) -> LabelOutcome {
        LabelOutcome::Known { label: label.into(), source, confidence }
    }

    #[test]
    fn default_port_rules() {
        let rules = RuleSet::default_ports();
        assert_eq!(
            label_by_port(&row("10.0.0.1", 22, 6), &rules),
            known("SSH", LabelSource::Port, Confidence::Low)
        );
        assert_eq!(label_by_port(&row("10.0.0.1", 50000, 6), &rules), LabelOutcome::Unknown);
        assert!(rules.rules().len() >= 10);
    }

    #[test]
    fn priority_order() {
        let rules = RuleSet::parse(
            "matcher_type,matcher_value,label,confidence,priority\nport,443/tcp,B,low,2\nport,443/tcp,A,high,1\n",
            "rules.csv",
        )
        .unwrap();
        assert_eq!(label_by_port(&row("1.1.1.1", 443, 6), &rules), known("A", LabelSource::Port, Confidence::High));
        assert!(RuleSet::parse("port,1/tcp,A,low,1\nport,2/tcp,B,low,1\n", "r").is_err());
        let err = RuleSet::parse("port,1/tcp,A,low,1\nport,x/tcp,B,low,2\n", "r").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn map_lookup() {
        let map = EndpointMap::parse(
            "ip_or_prefix,label,confidence\n10.0.0.0/8,corp,low\n10.1.0.0/16,lab,high\n10.1.2.3,server,high\n",
            "map.csv",
        )
        .unwrap();
        assert_eq!(label_by_map(&row("10.1.2.3", 1, 6), &map), known("server", LabelSource::Map, Confidence::High));
        assert_eq!(label_by_map(&row("10.1.9.9", 1, 6), &map), known("lab", LabelSource::Map, Confidence::High));
        assert_eq!(label_by_map(&row("10.9.9.9", 1, 6), &map), known("corp", LabelSource::Map, Confidence::Low));
        assert_eq!(label_by_map(&row("8.8.8.8", 1, 6), &map), LabelOutcome::Unknown);
        let err = EndpointMap::parse("10.0.0.0/8,a,low\nbogus,b,low\n", "m").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(EndpointMap::parse("10.0.0.0/8,a,medium\n", "m").is_err());
    }

    #[test]
    fn precedence_and_conflicts() {
        let mut st = LabelStats::default();
        let r = resolve(
            &[known("HTTPS", LabelSource::Port, Confidence::Low), known("streaming", LabelSource::Map, Confidence::High)],
            &mut st,
        );
        assert_eq!(r.label, "streaming");
        assert_eq!(r.source, LabelSource::Map);

        let r = resolve(
            &[known("a", LabelSource::Map, Confidence::High), known("b", LabelSource::Map, Confidence::High)],
            &mut st,
        );
        assert_eq!((r.label.as_str(), r.source), (UNKNOWN, LabelSource::None));
        assert_eq!(st.conflicts, 1);

        let r = resolve(&[LabelOutcome::Unknown, LabelOutcome::Unknown], &mut st);
        assert_eq!((r.label.as_str(), r.source), (UNKNOWN, LabelSource::None));
        assert_eq!(st.labeled + st.unknown, 3);
    }

    #[test]
    fn labels_a_table_deterministically() {
        let mk = || {
            Dataset::from_columns(vec![
                Column::text("dst_ip", ColumnKind::Metadata, vec!["10.0.0.1".into(), "10.0.0.2".into(), "10.0.0.3".into()]),
                Column::num("dst_port", ColumnKind::Numeric, vec![22.0, 443.0, 6000.0]),
                Column::text("proto", ColumnKind::Categorical, vec!["6".into(), "6".into(), "6".into()]),
            ])
            .unwrap()
        };
        let map = EndpointMap::parse("10.0.0.2,video,high\n", "m").unwrap();
        let mut a = mk();
        let st = label_dataset(&mut a, Some(&RuleSet::default_ports()), Some(&map)).unwrap();
        assert_eq!(a.labels().unwrap(), &["SSH", "video", UNKNOWN]);
        assert_eq!(st, LabelStats { labeled: 2, unknown: 1, conflicts: 0 });
        assert_eq!(a.column("label_source").unwrap().texts().unwrap(), &["port", "map", "none"]);
        let mut b = mk();
        label_dataset(&mut b, Some(&RuleSet::default_ports()), Some(&map)).unwrap();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #[test]
        fn label_accounting(
            rows in proptest::collection::vec((0u8..6, proptest::sample::select(vec![22u16, 53, 80, 443, 6000]), proptest::sample::select(vec![6u8, 17])), 0..60),
            entries in proptest::collection::vec((0u8..6, proptest::sample::select(vec!["a", "b", "c"]), proptest::bool::ANY), 0..6),
        ) {
            let map_text: String = entries
                .iter()
                .enumerate()
                .map(|(i, (h, l, hi))| {
                    let target = if i % 2 == 0 { format!("10.0.0.{h}") } else { format!("10.0.{h}.0/24") };
                    format!("{target},{l},{}\n", if *hi { "high" } else { "low" })
                })
                .collect();
            let map = EndpointMap::parse(&map_text, "m").unwrap();
            let rules = RuleSet::default_ports();
            let mk = || {
                Dataset::from_columns(vec![
                    Column::text("dst_ip", ColumnKind::Metadata, rows.iter().map(|r| format!("10.0.{}.{}", r.0 % 2, r.0)).collect()),
                    Column::num("dst_port", ColumnKind::Numeric, rows.iter().map(|r| r.1 as f64).collect()),
                    Column::num("proto", ColumnKind::Categorical, rows.iter().map(|r| r.2 as f64).collect()),
                ])
                .unwrap()
            };
            let mut ds = mk();
            let st = label_dataset(&mut ds, Some(&rules), Some(&map)).unwrap();
            proptest::prop_assert_eq!(st.labeled + st.unknown, rows.len() as u64);
            proptest::prop_assert!(st.conflicts <= st.unknown);
            let labels = ds.labels().unwrap().to_vec();
            for (r, label) in rows.iter().zip(&labels) {
                if label == UNKNOWN {
                    continue;
                }
                // a label must come from some matching source
                let ep = row(&format!("10.0.{}.{}", r.0 % 2, r.0), r.1, r.2);
                let from = [label_by_map(&ep, &map), label_by_port(&ep, &rules)];
                let sourced = from.iter().any(|o| matches!(o, LabelOutcome::Known { label: l, .. } if l == label));
                proptest::prop_assert!(sourced, "row {:?} got unsourced label {}", r, label);
            }
            let mut again = mk();
            label_dataset(&mut again, Some(&rules), Some(&map)).unwrap();
            proptest::prop_assert_eq!(ds, again);
        }
    }
}
