//! Address helpers shared by packet filtering and label maps.

use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An IPv4 or IPv6 network prefix such as `10.0.0.0/8`. A bare address
/// parses as a host prefix (/32 or /128).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IpPrefix {
    addr: IpAddr,
    len: u8,
}

impl IpPrefix {
    pub fn new(addr: IpAddr, len: u8) -> Option<Self> {
        let max = max_len(&addr);
        if len > max {
            return None;
        }
        Some(IpPrefix { addr: mask(addr, len), len })
    }

    pub fn addr(&self) -> IpAddr {
        self.addr
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_host(&self) -> bool {
        self.len == max_len(&self.addr)
    }

    pub fn contains(&self, ip: &IpAddr) -> bool {
        match (self.addr, ip) {
            (IpAddr::V4(_), IpAddr::V4(_)) | (IpAddr::V6(_), IpAddr::V6(_)) => {
                mask(*ip, self.len) == self.addr
            }
            _ => false,
        }
    }
}

fn max_len(addr: &IpAddr) -> u8 {
    match addr {
        IpAddr::V4(_) => 32,
        IpAddr::V6(_) => 128,
    }
}

fn mask(addr: IpAddr, len: u8) -> IpAddr {
    match addr {
        IpAddr::V4(a) => {
            let bits = u32::from(a);
            let m = if len == 0 { 0 } else { u32::MAX << (32 - len as u32) };
            IpAddr::V4((bits & m).into())
        }
        IpAddr::V6(a) => {
            let bits = u128::from(a);
            let m = if len == 0 { 0 } else { u128::MAX << (128 - len as u32) };
            IpAddr::V6((bits & m).into())
        }
    }
}

/// Zero the host byte of an IPv4 address; IPv6 is returned unchanged.
pub fn truncate_v4_24(ip: IpAddr) -> IpAddr {
    match ip {
        IpAddr::V4(_) => mask(ip, 24),
        v6 => v6,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixParseError(pub String);

impl fmt::Display for PrefixParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid IP prefix {:?}", self.0)
    }
}

impl std::error::Error for PrefixParseError {}

impl FromStr for IpPrefix {
    type Err = PrefixParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PrefixParseError(s.to_string());
        let s = s.trim();
        let (addr, len) = match s.split_once('/') {
            Some((a, l)) => {
                let addr: IpAddr = a.parse().map_err(|_| err())?;
                let len: u8 = l.parse().map_err(|_| err())?;
                (addr, len)
            }
            None => {
                let addr: IpAddr = s.parse().map_err(|_| err())?;
                (addr, max_len(&addr))
            }
        };
        IpPrefix::new(addr, len).ok_or_else(err)
    }
}

impl fmt::Display for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.len)
    }
}

impl Serialize for IpPrefix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IpPrefix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_contains() {
        let p: IpPrefix = "10.0.0.0/8".parse().unwrap();
        assert!(p.contains(&"10.1.2.3".parse().unwrap()));
        assert!(!p.contains(&"192.168.0.1".parse().unwrap()));
        assert!(!p.contains(&"::1".parse().unwrap()));
        let host: IpPrefix = "10.1.2.3".parse().unwrap();
        assert!(host.is_host());
        assert_eq!(host.len(), 32);
    }

    #[test]
    fn host_bits_are_masked() {
        let p: IpPrefix = "10.1.2.3/16".parse().unwrap();
        assert_eq!(p.to_string(), "10.1.0.0/16");
    }

    #[test]
    fn rejects_garbage() {
        assert!("10.0.0.0/33".parse::<IpPrefix>().is_err());
        assert!("nope".parse::<IpPrefix>().is_err());
        assert!("10.0.0.0/x".parse::<IpPrefix>().is_err());
    }

    #[test]
    fn v6_prefix() {
        let p: IpPrefix = "2001:db8::/32".parse().unwrap();
        assert!(p.contains(&"2001:db8::1".parse().unwrap()));
        assert!(!p.contains(&"2001:db9::1".parse().unwrap()));
    }

    #[test]
    fn anonymize_v4() {
        assert_eq!(truncate_v4_24("1.2.3.4".parse().unwrap()), "1.2.3.0".parse::<IpAddr>().unwrap());
        assert_eq!(truncate_v4_24("::1".parse().unwrap()), "::1".parse::<IpAddr>().unwrap());
    }
}
