//! Streaming central moments and per-direction flow counters.

use serde::{Deserialize, Serialize};

use crate::ingest::{Packet, TcpFlags, Timestamp};

/// Single-pass accumulator for mean and the second to fourth central
/// moment sums, plus min/max.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamingMoments {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
    min: f64,
    max: f64,
}

impl StreamingMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2 - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
        if self.n == 1 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n >= 1).then_some(self.mean)
    }

    pub fn min(&self) -> Option<f64> {
        (self.n >= 1).then_some(self.min)
    }

    pub fn max(&self) -> Option<f64> {
        (self.n >= 1).then_some(self.max)
    }

    /// Population variance (divides by n).
    pub fn variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.m2 / self.n as f64)
    }

    /// g1 = (M3/n) / (M2/n)^(3/2). Undefined when M2 = 0.
    pub fn skewness(&self) -> Option<f64> {
        if self.n < 2 || self.m2 <= 0.0 {
            return None;
        }
        let n = self.n as f64;
        Some(n.sqrt() * self.m3 / self.m2.powf(1.5))
    }

    /// Excess kurtosis g2 = (M4/n) / (M2/n)^2 - 3. Undefined when M2 = 0.
    pub fn kurtosis(&self) -> Option<f64> {
        if self.n < 2 || self.m2 <= 0.0 {
            return None;
        }
        let n = self.n as f64;
        Some(n * self.m4 / (self.m2 * self.m2) - 3.0)
    }
}

/// Counters for one direction of a bidirectional flow.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DirStats {
    pub pkt_count: u64,
    /// Sum of IP lengths.
    pub byte_count: u64,
    pub payload_bytes: u64,
    pub first_ts: Timestamp,
    pub last_ts: Timestamp,
    /// Over IP lengths.
    pub size: StreamingMoments,
    /// Over gaps between successive packets of this direction, in seconds.
    pub piat: StreamingMoments,
    /// Indexed like [`TcpFlags::ALL`].
    pub tcp_flag_counts: [u64; 6],
}

impl DirStats {
    pub fn update(&mut self, p: &Packet) {
        if self.pkt_count == 0 {
            self.first_ts = p.ts;
            self.last_ts = p.ts;
        } else {
            // Reordered packets contribute a zero gap.
            let gap = p.ts.since(self.last_ts);
            self.piat.push(gap as f64 * 1e-9);
            self.first_ts = self.first_ts.min(p.ts);
            self.last_ts = self.last_ts.max(p.ts);
        }
        self.pkt_count += 1;
        self.byte_count += p.ip_len as u64;
        self.payload_bytes += p.payload_len as u64;
        self.size.push(p.ip_len as f64);
        for (i, (flag, _)) in TcpFlags::ALL.iter().enumerate() {
            if p.tcp_flags.contains(*flag) {
                self.tcp_flag_counts[i] += 1;
            }
        }
    }

    /// last_ts - first_ts in nanoseconds; zero for fewer than two packets.
    pub fn duration_ns(&self) -> u64 {
        if self.pkt_count < 2 { 0 } else { self.last_ts.since(self.first_ts) }
    }
}
