use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::ingest::Packet;

/// Directed 5-tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl FlowKey {
    pub fn of(p: &Packet) -> Self {
        FlowKey { src_ip: p.src_ip, dst_ip: p.dst_ip, src_port: p.src_port, dst_port: p.dst_port, proto: p.proto }
    }

    pub fn reverse(&self) -> Self {
        FlowKey {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }

    pub fn src(&self) -> Endpoint {
        Endpoint { ip: self.src_ip, port: self.src_port }
    }

    pub fn dst(&self) -> Endpoint {
        Endpoint { ip: self.dst_ip, port: self.dst_port }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {} proto {}", self.src(), self.dst(), self.proto)
    }
}

/// Address and port. Ordered by address (IPv4 before IPv6, then bytes),
/// then port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: IpAddr,
    pub port: u16,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ip {
            IpAddr::V4(a) => write!(f, "{a}:{}", self.port),
            IpAddr::V6(a) => write!(f, "[{a}]:{}", self.port),
        }
    }
}

/// Direction-free flow identity: `lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanonicalKey {
    pub lo: Endpoint,
    pub hi: Endpoint,
    pub proto: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> i8 {
        match self {
            Direction::Forward => 1,
            Direction::Backward => -1,
        }
    }
}

/// Returns the canonical key and the orientation of `key` relative to the
/// lower endpoint (`Forward` when the source is the lower endpoint).
pub fn canonicalize(key: &FlowKey) -> (CanonicalKey, Direction) {
    let (s, d) = (key.src(), key.dst());
    if s <= d {
        (CanonicalKey { lo: s, hi: d, proto: key.proto }, Direction::Forward)
    } else {
        (CanonicalKey { lo: d, hi: s, proto: key.proto }, Direction::Backward)
    }
}

const HASH_SEED: u64 = 0x5bd1_e995_9e37_79b9;

/// Fixed-seed 64-bit hash of a directed key: FNV-1a over the key bytes,
/// finished with a splitmix64 avalanche.
pub fn flow_hash(key: &FlowKey) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ HASH_SEED;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for ip in [key.src_ip, key.dst_ip] {
        match ip {
            IpAddr::V4(a) => {
                eat(&[4]);
                eat(&a.octets());
            }
            IpAddr::V6(a) => {
                eat(&[6]);
                eat(&a.octets());
            }
        }
    }
    eat(&key.src_port.to_be_bytes());
    eat(&key.dst_port.to_be_bytes());
    eat(&[key.proto]);
    splitmix64(h)
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `(H(key), H(reverse(key)))`.
pub fn dual_hash(key: &FlowKey) -> (u64, u64) {
    (flow_hash(key), flow_hash(&key.reverse()))
}
