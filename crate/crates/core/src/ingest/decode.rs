//! Link, network and transport header decoding.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};

use super::packet::{Packet, TcpFlags, Timestamp, PROTO_TCP, PROTO_UDP};
use crate::error::{Error, Result};

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;

const ETH_HEADER: usize = 14;
const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86DD;
const ETHERTYPE_VLAN: u16 = 0x8100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkType {
    Ethernet,
    RawIp,
}

impl LinkType {
    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            LINKTYPE_ETHERNET => Ok(LinkType::Ethernet),
            LINKTYPE_RAW => Ok(LinkType::RawIp),
            other => Err(Error::UnsupportedLinkType(other)),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            LinkType::Ethernet => LINKTYPE_ETHERNET,
            LinkType::RawIp => LINKTYPE_RAW,
        }
    }
}

/// Outcome of decoding one captured frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Ip(Packet),
    /// ARP, QinQ, MPLS and anything else that is not plain IP.
    NonIp,
    /// IPv4/IPv6 fragment other than the first; not reassembled.
    Fragment,
}

/// Decode a frame whose captured bytes are the complete wire frame. The
/// returned packet carries a zero timestamp; the capture reader fills it.
pub fn decode_frame(bytes: &[u8], linktype: LinkType, mtu: u32) -> Result<Frame> {
    decode_frame_snapped(bytes, linktype, mtu, false)
}

/// Like [`decode_frame`], but `snapped` tells the decoder that the capture
/// cut the frame short (incl_len < orig_len): headers must be intact, the
/// payload may be missing.
pub fn decode_frame_snapped(bytes: &[u8], linktype: LinkType, mtu: u32, snapped: bool) -> Result<Frame> {
    let (l3, offset) = match linktype {
        LinkType::Ethernet => {
            need(bytes, ETH_HEADER)?;
            let mut ethertype = be16(bytes, 12);
            let mut off = ETH_HEADER;
            if ethertype == ETHERTYPE_VLAN {
                need(bytes, off + 4)?;
                ethertype = be16(bytes, off + 2);
                off += 4;
            }
            match ethertype {
                ETHERTYPE_IPV4 | ETHERTYPE_IPV6 => (&bytes[off..], off),
                _ => return Ok(Frame::NonIp),
            }
        }
        LinkType::RawIp => (bytes, 0),
    };
    need(l3, 1)?;
    let frame = match l3[0] >> 4 {
        4 => decode_ipv4(l3, offset, snapped)?,
        6 => decode_ipv6(l3, offset, snapped)?,
        v => {
            return Err(Error::Decode { offset, reason: format!("IP version {v}") });
        }
    };
    Ok(match frame {
        Frame::Ip(mut p) => {
            p.super_packet = p.ip_len > mtu;
            Frame::Ip(p)
        }
        other => other,
    })
}

fn need(bytes: &[u8], n: usize) -> Result<()> {
    if bytes.len() < n {
        Err(Error::TruncatedFrame { have: bytes.len(), need: n })
    } else {
        Ok(())
    }
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn decode_ipv4(ip: &[u8], offset: usize, snapped: bool) -> Result<Frame> {
    need(ip, 20)?;
    let ihl = (ip[0] & 0x0f) as usize * 4;
    if ihl < 20 {
        return Err(Error::Decode { offset, reason: format!("IPv4 header length {ihl}") });
    }
    need(ip, ihl)?;
    let total = be16(ip, 2) as usize;
    if total < ihl {
        return Err(Error::Decode { offset, reason: format!("IPv4 total length {total} < header {ihl}") });
    }
    if !snapped {
        need(ip, total)?;
    }
    let frag = be16(ip, 6);
    if frag & 0x1fff != 0 {
        return Ok(Frame::Fragment);
    }
    let proto = ip[9];
    let src = IpAddr::V4(Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]));
    let dst = IpAddr::V4(Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]));
    transport(&ip[ihl..], offset + ihl, proto, src, dst, total as u32, ihl as u32)
}

fn decode_ipv6(ip: &[u8], offset: usize, snapped: bool) -> Result<Frame> {
    need(ip, 40)?;
    let payload = be16(ip, 4) as usize;
    let total = 40 + payload;
    if !snapped {
        need(ip, total)?;
    }
    let mut next = ip[6];
    let src: [u8; 16] = ip[8..24].try_into().unwrap();
    let dst: [u8; 16] = ip[24..40].try_into().unwrap();
    let mut hdr = 40usize;
    // Walk the common extension headers.
    loop {
        match next {
            0 | 43 | 60 => {
                need(ip, hdr + 8)?;
                next = ip[hdr];
                hdr += (ip[hdr + 1] as usize + 1) * 8;
            }
            44 => {
                need(ip, hdr + 8)?;
                if be16(ip, hdr + 2) & 0xfff8 != 0 {
                    return Ok(Frame::Fragment);
                }
                next = ip[hdr];
                hdr += 8;
            }
            51 => {
                need(ip, hdr + 8)?;
                next = ip[hdr];
                hdr += (ip[hdr + 1] as usize + 2) * 4;
            }
            _ => break,
        }
    }
    if hdr > total {
        return Err(Error::Decode { offset, reason: "IPv6 extension headers exceed payload".into() });
    }
    need(ip, hdr)?;
    transport(
        &ip[hdr..],
        offset + hdr,
        next,
        IpAddr::V6(Ipv6Addr::from(src)),
        IpAddr::V6(Ipv6Addr::from(dst)),
        total as u32,
        hdr as u32,
    )
}

fn transport(l4: &[u8], offset: usize, proto: u8, src: IpAddr, dst: IpAddr, ip_len: u32, ip_hdr: u32) -> Result<Frame> {
    let mut pkt = Packet {
        ts: Timestamp(0),
        src_ip: src,
        dst_ip: dst,
        src_port: 0,
        dst_port: 0,
        proto,
        ip_len,
        payload_len: ip_len - ip_hdr,
        tcp_flags: TcpFlags::empty(),
        super_packet: false,
    };
    let l4_hdr = match proto {
        PROTO_TCP => {
            need(l4, 20)?;
            let data_off = (l4[12] >> 4) as u32 * 4;
            if data_off < 20 {
                return Err(Error::Decode { offset, reason: format!("TCP data offset {data_off}") });
            }
            pkt.tcp_flags = TcpFlags(l4[13] & 0x3f);
            data_off
        }
        PROTO_UDP => {
            need(l4, 8)?;
            8
        }
        _ => 0,
    };
    if l4_hdr > 0 {
        pkt.src_port = be16(l4, 0);
        pkt.dst_port = be16(l4, 2);
        if ip_hdr + l4_hdr > ip_len {
            return Err(Error::Decode { offset, reason: "transport header exceeds IP length".into() });
        }
        pkt.payload_len = ip_len - ip_hdr - l4_hdr;
    }
    Ok(Frame::Ip(pkt))
}
