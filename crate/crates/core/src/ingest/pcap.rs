//! Classic libpcap capture files: a reader for both timestamp precisions
//! and byte orders, and a reference writer used for fixtures and round-trip
//! tests.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::IpAddr;
use std::path::Path;

use super::decode::LinkType;
use super::packet::{Packet, Timestamp, PROTO_TCP, PROTO_UDP};
use crate::error::{Error, Result};

pub const MAGIC_MICROS: u32 = 0xA1B2_C3D4;
pub const MAGIC_NANOS: u32 = 0xA1B2_3C4D;

const GLOBAL_HEADER: usize = 24;
const RECORD_HEADER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptureHeader {
    pub big_endian: bool,
    pub nanos: bool,
    pub snaplen: u32,
    pub linktype: LinkType,
}

/// One captured record, before decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub ts: Timestamp,
    pub orig_len: u32,
    pub data: Vec<u8>,
    /// Byte offset of the record header within the file.
    pub offset: u64,
}

pub struct CaptureReader<R> {
    inner: R,
    header: CaptureHeader,
    offset: u64,
}

impl CaptureReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        CaptureReader::new(BufReader::new(f))
    }
}

impl<R: Read> CaptureReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut buf = [0u8; GLOBAL_HEADER];
        let got = read_full(&mut inner, &mut buf).map_err(|e| Error::io("<capture>", e))?;
        if got < 4 {
            return Err(Error::TruncatedCapture { offset: got as u64 });
        }
        let le = u32::from_le_bytes(buf[0..4].try_into().unwrap());
        let be = u32::from_be_bytes(buf[0..4].try_into().unwrap());
        let (big_endian, nanos) = match (le, be) {
            (MAGIC_MICROS, _) => (false, false),
            (MAGIC_NANOS, _) => (false, true),
            (_, MAGIC_MICROS) => (true, false),
            (_, MAGIC_NANOS) => (true, true),
            _ => return Err(Error::UnsupportedFormat { magic: be }),
        };
        if got < GLOBAL_HEADER {
            return Err(Error::TruncatedCapture { offset: got as u64 });
        }
        let rd = |at: usize| {
            let b: [u8; 4] = buf[at..at + 4].try_into().unwrap();
            if big_endian { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) }
        };
        let header = CaptureHeader {
            big_endian,
            nanos,
            snaplen: rd(16),
            linktype: LinkType::from_code(rd(20))?,
        };
        Ok(CaptureReader { inner, header, offset: GLOBAL_HEADER as u64 })
    }

    pub fn header(&self) -> CaptureHeader {
        self.header
    }

    fn u32_at(&self, b: &[u8], at: usize) -> u32 {
        let b: [u8; 4] = b[at..at + 4].try_into().unwrap();
        if self.header.big_endian { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) }
    }

    pub fn next_record(&mut self) -> Result<Option<Record>> {
        let start = self.offset;
        let mut hdr = [0u8; RECORD_HEADER];
        let got = read_full(&mut self.inner, &mut hdr).map_err(|e| Error::io("<capture>", e))?;
        if got == 0 {
            return Ok(None);
        }
        if got < RECORD_HEADER {
            return Err(Error::TruncatedCapture { offset: start });
        }
        let secs = self.u32_at(&hdr, 0) as u64;
        let sub = self.u32_at(&hdr, 4);
        let incl = self.u32_at(&hdr, 8) as usize;
        let orig_len = self.u32_at(&hdr, 12);
        let nanos = if self.header.nanos { sub } else { sub.saturating_mul(1000) };
        let mut data = vec![0u8; incl];
        let got = read_full(&mut self.inner, &mut data).map_err(|e| Error::io("<capture>", e))?;
        if got < incl {
            return Err(Error::TruncatedCapture { offset: start });
        }
        self.offset += (RECORD_HEADER + incl) as u64;
        Ok(Some(Record { ts: Timestamp::from_parts(secs, nanos), orig_len, data, offset: start }))
    }
}

impl<R: Read> Iterator for CaptureReader<R> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

/// Reference capture writer. Packets are rendered as minimal, well-formed
/// frames with zero-filled payloads so that decoding reproduces every
/// [`Packet`] field exactly.
pub struct CaptureWriter<W: Write> {
    out: W,
    big_endian: bool,
    nanos: bool,
    linktype: LinkType,
    vlan: bool,
    snaplen: u32,
}

impl CaptureWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, linktype: LinkType, nanos: bool) -> Result<Self> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        CaptureWriter::new(BufWriter::new(f), linktype, nanos, false)
    }
}

impl<W: Write> CaptureWriter<W> {
    pub fn new(out: W, linktype: LinkType, nanos: bool, big_endian: bool) -> Result<Self> {
        let mut w = CaptureWriter { out, big_endian, nanos, linktype, vlan: false, snaplen: u32::MAX };
        let magic = if nanos { MAGIC_NANOS } else { MAGIC_MICROS };
        let mut hdr = Vec::with_capacity(GLOBAL_HEADER);
        w.put32(&mut hdr, magic);
        w.put16(&mut hdr, 2);
        w.put16(&mut hdr, 4);
        w.put32(&mut hdr, 0);
        w.put32(&mut hdr, 0);
        w.put32(&mut hdr, 262_144);
        w.put32(&mut hdr, linktype.code());
        w.out.write_all(&hdr).map_err(|e| Error::io("<capture>", e))?;
        Ok(w)
    }

    /// Wrap every subsequent Ethernet frame in a single 802.1Q tag.
    pub fn with_vlan(mut self, vlan: bool) -> Self {
        self.vlan = vlan;
        self
    }

    /// Store at most `snaplen` bytes of each frame; the original length is
    /// still recorded. Must be set before the first packet.
    pub fn with_snaplen(mut self, snaplen: u32) -> Self {
        self.snaplen = snaplen.max(1);
        self
    }

    fn put32(&self, v: &mut Vec<u8>, x: u32) {
        v.extend_from_slice(&if self.big_endian { x.to_be_bytes() } else { x.to_le_bytes() });
    }

    fn put16(&self, v: &mut Vec<u8>, x: u16) {
        v.extend_from_slice(&if self.big_endian { x.to_be_bytes() } else { x.to_le_bytes() });
    }

    pub fn write_packet(&mut self, p: &Packet) -> Result<()> {
        let frame = build_frame(p, self.linktype, self.vlan)?;
        self.write_raw(p.ts, &frame)
    }

    pub fn write_raw(&mut self, ts: Timestamp, frame: &[u8]) -> Result<()> {
        let sub = if self.nanos { ts.subsec_nanos() } else { ts.subsec_nanos() / 1000 };
        let mut hdr = Vec::with_capacity(RECORD_HEADER);
        self.put32(&mut hdr, ts.secs() as u32);
        self.put32(&mut hdr, sub);
        let incl = frame.len().min(self.snaplen as usize);
        self.put32(&mut hdr, incl as u32);
        self.put32(&mut hdr, frame.len() as u32);
        self.out.write_all(&hdr).map_err(|e| Error::io("<capture>", e))?;
        self.out.write_all(&frame[..incl]).map_err(|e| Error::io("<capture>", e))
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush().map_err(|e| Error::io("<capture>", e))?;
        Ok(self.out)
    }
}

/// Render a packet as a frame for the given link type.
pub fn build_frame(p: &Packet, linktype: LinkType, vlan: bool) -> Result<Vec<u8>> {
    let bad = |msg: &str| Error::invalid("ingest", format!("cannot encode packet: {msg}"));
    let l4_hdr: u32 = match p.proto {
        PROTO_TCP => 20,
        PROTO_UDP => 8,
        _ => 0,
    };
    let mut out = Vec::with_capacity(p.ip_len as usize + 18);
    let v6 = match (p.src_ip, p.dst_ip) {
        (IpAddr::V4(_), IpAddr::V4(_)) => false,
        (IpAddr::V6(_), IpAddr::V6(_)) => true,
        _ => return Err(bad("mixed address families")),
    };
    if linktype == LinkType::Ethernet {
        out.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01]);
        if vlan {
            out.extend_from_slice(&[0x81, 0x00, 0x00, 0x64]);
        }
        out.extend_from_slice(if v6 { &[0x86, 0xDD] } else { &[0x08, 0x00] });
    }
    let ip_hdr: u32 = if v6 { 40 } else { 20 };
    if p.ip_len < ip_hdr + l4_hdr || p.payload_len != p.ip_len - ip_hdr - l4_hdr {
        return Err(bad("ip_len and payload_len are inconsistent with minimal headers"));
    }
    match (p.src_ip, p.dst_ip) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            if p.ip_len > u16::MAX as u32 {
                return Err(bad("IPv4 length exceeds 65535"));
            }
            let start = out.len();
            out.push(0x45);
            out.push(0);
            out.extend_from_slice(&(p.ip_len as u16).to_be_bytes());
            out.extend_from_slice(&[0, 0, 0x40, 0]);
            out.push(64);
            out.push(p.proto);
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&s.octets());
            out.extend_from_slice(&d.octets());
            let sum = checksum(&out[start..start + 20]);
            out[start + 10..start + 12].copy_from_slice(&sum.to_be_bytes());
        }
        (IpAddr::V6(s), IpAddr::V6(d)) => {
            let payload = p.ip_len - 40;
            if payload > u16::MAX as u32 {
                return Err(bad("IPv6 payload exceeds 65535"));
            }
            out.extend_from_slice(&[0x60, 0, 0, 0]);
            out.extend_from_slice(&(payload as u16).to_be_bytes());
            out.push(p.proto);
            out.push(64);
            out.extend_from_slice(&s.octets());
            out.extend_from_slice(&d.octets());
        }
        _ => unreachable!(),
    }
    match p.proto {
        PROTO_TCP => {
            out.extend_from_slice(&p.src_port.to_be_bytes());
            out.extend_from_slice(&p.dst_port.to_be_bytes());
            out.extend_from_slice(&[0; 8]);
            out.push(0x50);
            out.push(p.tcp_flags.bits());
            out.extend_from_slice(&[0xff, 0xff, 0, 0, 0, 0]);
        }
        PROTO_UDP => {
            out.extend_from_slice(&p.src_port.to_be_bytes());
            out.extend_from_slice(&p.dst_port.to_be_bytes());
            let udp_len = (p.ip_len - ip_hdr).min(u16::MAX as u32) as u16;
            out.extend_from_slice(&udp_len.to_be_bytes());
            out.extend_from_slice(&[0, 0]);
        }
        _ => {}
    }
    out.resize(out.len() + p.payload_len as usize, 0);
    Ok(out)
}

fn checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32).sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}
