use std::fmt;
use std::net::{IpAddr, Ipv4Addr};
use std::ops::{BitOr, Sub};

use serde::{Deserialize, Serialize};

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// Nanoseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const NANOS_PER_SEC: u64 = 1_000_000_000;

    pub fn from_parts(secs: u64, nanos: u32) -> Self {
        Timestamp(secs * Self::NANOS_PER_SEC + nanos as u64)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * Self::NANOS_PER_SEC as f64).round() as u64)
    }

    pub fn nanos(self) -> u64 {
        self.0
    }

    pub fn secs(self) -> u64 {
        self.0 / Self::NANOS_PER_SEC
    }

    pub fn subsec_nanos(self) -> u32 {
        (self.0 % Self::NANOS_PER_SEC) as u32
    }

    pub fn as_secs_f64(self) -> f64 {
        self.secs() as f64 + self.subsec_nanos() as f64 * 1e-9
    }

    /// Saturating difference in nanoseconds.
    pub fn since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl Sub for Timestamp {
    type Output = i128;

    fn sub(self, rhs: Timestamp) -> i128 {
        self.0 as i128 - rhs.0 as i128
    }
}

/// Decimal seconds with nine fractional digits.
impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.secs(), self.subsec_nanos())
    }
}

/// Observable TCP control bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const URG: TcpFlags = TcpFlags(0x20);

    /// Flags in the order they appear in feature columns.
    pub const ALL: [(TcpFlags, &'static str); 6] = [
        (Self::SYN, "syn"),
        (Self::FIN, "fin"),
        (Self::RST, "rst"),
        (Self::ACK, "ack"),
        (Self::PSH, "psh"),
        (Self::URG, "urg"),
    ];

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    pub fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0 && other.0 != 0
    }

    pub fn intersects(self, other: TcpFlags) -> bool {
        self.0 & other.0 != 0
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

impl BitOr for TcpFlags {
    type Output = TcpFlags;

    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

/// One decoded IP packet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub ts: Timestamp,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
    /// IP-layer length (header included).
    pub ip_len: u32,
    /// Transport payload bytes.
    pub payload_len: u32,
    pub tcp_flags: TcpFlags,
    /// Set when `ip_len` exceeds the configured MTU (receive-offload merge).
    pub super_packet: bool,
}

impl Packet {
    pub fn has_ports(proto: u8) -> bool {
        proto == PROTO_TCP || proto == PROTO_UDP
    }

    /// Convenience constructor used heavily by tests and the synthetic
    /// generator: an IPv4 packet with minimal headers and `payload` bytes.
    pub fn v4(
        ts: Timestamp,
        src: (Ipv4Addr, u16),
        dst: (Ipv4Addr, u16),
        proto: u8,
        payload: u32,
        flags: TcpFlags,
    ) -> Self {
        let l4 = match proto {
            PROTO_TCP => 20,
            PROTO_UDP => 8,
            _ => 0,
        };
        let (sp, dp) = if Packet::has_ports(proto) { (src.1, dst.1) } else { (0, 0) };
        Packet {
            ts,
            src_ip: IpAddr::V4(src.0),
            dst_ip: IpAddr::V4(dst.0),
            src_port: sp,
            dst_port: dp,
            proto,
            ip_len: 20 + l4 + payload,
            payload_len: payload,
            tcp_flags: if proto == PROTO_TCP { flags } else { TcpFlags::empty() },
            super_packet: false,
        }
    }
}
