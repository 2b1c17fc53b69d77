//! Deterministic synthetic traffic for demos and end-to-end tests.

use std::net::Ipv4Addr;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{CaptureWriter, LinkType, Packet, TcpFlags, Timestamp, PROTO_TCP, PROTO_UDP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub flows: usize,
    pub seed: u64,
    /// Seconds over which flow starts are spread.
    pub span: f64,
    pub clients: u8,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { flows: 600, seed: 7, span: 900.0, clients: 24 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Service {
    Https,
    Ssh,
    Dns,
    Ntp,
    Quic,
    /// No port rule matches; ends up unlabelled.
    Other,
}

const SERVICES: [(Service, u32); 6] = [
    (Service::Https, 30),
    (Service::Ssh, 12),
    (Service::Dns, 25),
    (Service::Ntp, 8),
    (Service::Quic, 20),
    (Service::Other, 5),
];

fn pick(rng: &mut ChaCha8Rng) -> Service {
    let total: u32 = SERVICES.iter().map(|s| s.1).sum();
    let mut r = rng.gen_range(0..total);
    for &(s, w) in &SERVICES {
        if r < w {
            return s;
        }
        r -= w;
    }
    unreachable!()
}

/// Microsecond resolution so a round trip through a classic capture is exact.
fn ts(secs: f64) -> Timestamp {
    Timestamp((secs * 1e6).round() as u64 * 1000)
}

struct Flow<'a> {
    out: &'a mut Vec<Packet>,
    client: (Ipv4Addr, u16),
    server: (Ipv4Addr, u16),
    proto: u8,
    t: f64,
}

impl Flow<'_> {
    fn send(&mut self, fwd: bool, payload: u32, flags: TcpFlags, gap: f64) {
        self.t += gap;
        let (a, b) = if fwd { (self.client, self.server) } else { (self.server, self.client) };
        self.out.push(Packet::v4(ts(self.t), a, b, self.proto, payload, flags));
    }

    fn handshake(&mut self, rtt: f64) {
        self.send(true, 0, TcpFlags::SYN, 0.0);
        self.send(false, 0, TcpFlags::SYN | TcpFlags::ACK, rtt);
        self.send(true, 0, TcpFlags::ACK, rtt / 10.0);
    }

    /// One FIN ends the record; the peer's reply would open a new one.
    fn close(&mut self, rtt: f64) {
        self.send(true, 0, TcpFlags::FIN | TcpFlags::ACK, rtt);
    }
}

fn flow(out: &mut Vec<Packet>, rng: &mut ChaCha8Rng, service: Service, client: Ipv4Addr, start: f64) {
    let sport = rng.gen_range(32768..61000);
    let server_host = rng.gen_range(1..=6u8);
    let rtt = rng.gen_range(0.005..0.06);
    let (proto, port, net) = match service {
        Service::Https => (PROTO_TCP, 443, 1),
        Service::Ssh => (PROTO_TCP, 22, 2),
        Service::Dns => (PROTO_UDP, 53, 3),
        Service::Ntp => (PROTO_UDP, 123, 4),
        Service::Quic => (PROTO_UDP, 443, 1),
        Service::Other => (PROTO_TCP, 9000 + rng.gen_range(0..50), 5),
    };
    let server = Ipv4Addr::new(192, 168, net, server_host);
    let mut f = Flow { out, client: (client, sport), server: (server, port), proto, t: start };
    let psh = TcpFlags::PSH | TcpFlags::ACK;
    match service {
        Service::Https => {
            f.handshake(rtt);
            f.send(true, rng.gen_range(200..520), psh, 0.001);
            f.send(false, rng.gen_range(1200..1460), psh, rtt);
            for _ in 0..rng.gen_range(2..12) {
                f.send(false, rng.gen_range(900..1460), psh, rng.gen_range(0.0005..0.01));
                if rng.gen_bool(0.4) {
                    f.send(true, 0, TcpFlags::ACK, rng.gen_range(0.0005..0.004));
                }
            }
            f.close(rtt);
        }
        Service::Ssh => {
            f.handshake(rtt);
            f.send(false, rng.gen_range(20..40), psh, rtt);
            f.send(true, rng.gen_range(20..40), psh, 0.002);
            for _ in 0..rng.gen_range(8..40) {
                f.send(true, rng.gen_range(36..100), psh, rng.gen_range(0.05..1.2));
                f.send(false, rng.gen_range(36..160), psh, rtt);
            }
            f.close(rtt);
        }
        Service::Dns => {
            f.send(true, rng.gen_range(28..60), TcpFlags::empty(), 0.0);
            f.send(false, rng.gen_range(60..300), TcpFlags::empty(), rtt);
        }
        Service::Ntp => {
            f.send(true, 48, TcpFlags::empty(), 0.0);
            f.send(false, 48, TcpFlags::empty(), rtt);
        }
        Service::Quic => {
            f.send(true, 1200, TcpFlags::empty(), 0.0);
            f.send(false, 1200, TcpFlags::empty(), rtt);
            for _ in 0..rng.gen_range(3..16) {
                let fwd = rng.gen_bool(0.25);
                let size = if fwd { rng.gen_range(30..80) } else { rng.gen_range(1000..1350) };
                f.send(fwd, size, TcpFlags::empty(), rng.gen_range(0.0005..0.02));
            }
            if rng.gen_bool(0.3) {
                // a pause past the idle timeout splits the flow
                f.send(true, 40, TcpFlags::empty(), rng.gen_range(35.0..60.0));
                f.send(false, 900, TcpFlags::empty(), rtt);
            }
        }
        Service::Other => {
            f.handshake(rtt);
            for _ in 0..rng.gen_range(2..8) {
                f.send(rng.gen_bool(0.5), rng.gen_range(10..700), psh, rng.gen_range(0.01..0.3));
            }
            f.close(rtt);
        }
    }
}

/// Packets of `cfg.flows` flows, ordered by timestamp.
pub fn generate(cfg: &SynthConfig) -> Vec<Packet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for _ in 0..cfg.flows {
        let service = pick(&mut rng);
        let client = Ipv4Addr::new(10, 0, 0, rng.gen_range(1..=cfg.clients.max(1)));
        let start = rng.gen_range(0.0..cfg.span);
        flow(&mut out, &mut rng, service, client, 1_700_000_000.0 + start);
    }
    // stable: packets of one flow keep their order on equal timestamps
    out.sort_by_key(|p| p.ts);
    out
}

pub fn write_capture(path: impl AsRef<Path>, cfg: &SynthConfig) -> Result<usize> {
    let packets = generate(cfg);
    // headers only; payload bytes are zeros anyway
    let mut w = CaptureWriter::create(path, LinkType::Ethernet, false)?.with_snaplen(96);
    for p in &packets {
        w.write_packet(p)?;
    }
    w.finish()?;
    Ok(packets.len())
}
