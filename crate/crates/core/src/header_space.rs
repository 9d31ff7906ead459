//! Exact set algebra over the seven-field match space.
//!
//! A [`MatchSet`] denotes the Cartesian product of its subfield sets:
//! source/destination MAC, source/destination IPv4 prefix, source/destination
//! port and protocol. Every subfield family is closed under intersection, so
//! intersecting two match sets is either another match set or empty, which is
//! returned as `None` rather than as a constructible value.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Error produced when a textual field value cannot be parsed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldParseError {
    #[error("invalid IPv4/CIDR '{0}'")]
    Ip(String),
    #[error("invalid MAC address '{0}'")]
    Mac(String),
    #[error("invalid port '{0}'")]
    Port(String),
    #[error("unknown protocol '{0}'")]
    Proto(String),
    #[error("invalid match: {0}")]
    Match(String),
}

/// A subfield that either matches everything or exactly one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Field<T> {
    #[default]
    Any,
    Exact(T),
}

impl<T: Copy + Eq> Field<T> {
    pub fn intersect(self, other: Self) -> Option<Self> {
        match (self, other) {
            (Field::Any, x) | (x, Field::Any) => Some(x),
            (Field::Exact(a), Field::Exact(b)) if a == b => Some(Field::Exact(a)),
            _ => None,
        }
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        match (self, other) {
            (_, Field::Any) => true,
            (Field::Any, Field::Exact(_)) => false,
            (Field::Exact(a), Field::Exact(b)) => a == b,
        }
    }

    pub fn contains(self, value: T) -> bool {
        match self {
            Field::Any => true,
            Field::Exact(v) => v == value,
        }
    }

    pub fn is_any(self) -> bool {
        matches!(self, Field::Any)
    }
}

impl<T: fmt::Display> fmt::Display for Field<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Any => f.write_str("*"),
            Field::Exact(v) => v.fmt(f),
        }
    }
}

impl<T: FromStr> FromStr for Field<T> {
    type Err = T::Err;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "*" {
            Ok(Field::Any)
        } else {
            s.parse().map(Field::Exact)
        }
    }
}

/// 48-bit Ethernet address. Rendered lowercase, colon separated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const ZERO: MacAddr = MacAddr([0; 6]);
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = FieldParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || FieldParseError::Mac(s.to_string());
        let mut out = [0u8; 6];
        let mut parts = s.split([':', '-']);
        for byte in out.iter_mut() {
            let part = parts.next().ok_or_else(err)?;
            if part.is_empty() || part.len() > 2 {
                return Err(err());
            }
            *byte = u8::from_str_radix(part, 16).map_err(|_| err())?;
        }
        if parts.next().is_some() {
            return Err(err());
        }
        Ok(MacAddr(out))
    }
}

/// Transport protocol. The domain is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Tcp, Protocol::Udp, Protocol::Icmp];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
            Protocol::Icmp => "icmp",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = FieldParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" => Ok(Protocol::Tcp),
            "udp" => Ok(Protocol::Udp),
            "icmp" => Ok(Protocol::Icmp),
            _ => Err(FieldParseError::Proto(s.to_string())),
        }
    }
}

/// An IPv4 CIDR prefix with all host bits cleared. Length 0 is the wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Ipv4Prefix {
    addr: u32,
    len: u8,
}

impl Ipv4Prefix {
    pub const ANY: Ipv4Prefix = Ipv4Prefix { addr: 0, len: 0 };

    /// Builds a prefix, clearing any host bits. Returns `None` if `len > 32`.
    pub fn new(addr: Ipv4Addr, len: u8) -> Option<Self> {
        if len > 32 {
            return None;
        }
        Some(Ipv4Prefix {
            addr: u32::from(addr) & Self::mask(len),
            len,
        })
    }

    /// Builds a prefix, rejecting addresses with host bits set.
    pub fn new_strict(addr: Ipv4Addr, len: u8) -> Option<Self> {
        let p = Self::new(addr, len)?;
        (p.addr == u32::from(addr)).then_some(p)
    }

    pub fn host(addr: Ipv4Addr) -> Self {
        Ipv4Prefix {
            addr: addr.into(),
            len: 32,
        }
    }

    fn mask(len: u8) -> u32 {
        if len == 0 {
            0
        } else {
            u32::MAX << (32 - u32::from(len))
        }
    }

    pub fn network(self) -> Ipv4Addr {
        Ipv4Addr::from(self.addr)
    }

    pub fn prefix_len(self) -> u8 {
        self.len
    }

    pub fn is_any(self) -> bool {
        self.len == 0
    }

    pub fn contains_addr(self, addr: Ipv4Addr) -> bool {
        u32::from(addr) & Self::mask(self.len) == self.addr
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(self, other: Self) -> bool {
        self.len >= other.len && self.addr & Self::mask(other.len) == other.addr
    }

    /// Two prefixes are either nested or disjoint, so the intersection is the
    /// longer one or empty.
    pub fn intersect(self, other: Self) -> Option<Self> {
        if self.is_subset_of(other) {
            Some(self)
        } else if other.is_subset_of(self) {
            Some(other)
        } else {
            None
        }
    }
}

impl fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_any() {
            f.write_str("*")
        } else {
            write!(f, "{}/{}", self.network(), self.len)
        }
    }
}

impl FromStr for Ipv4Prefix {
    type Err = FieldParseError;

    /// Accepts `*`, a bare address (host prefix) or `a.b.c.d/len`. Host bits
    /// below the prefix length are rejected.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || FieldParseError::Ip(s.to_string());
        if s == "*" {
            return Ok(Ipv4Prefix::ANY);
        }
        let (addr, len) = match s.split_once('/') {
            Some((a, l)) => {
                if l.is_empty() || !l.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(err());
                }
                (a, l.parse::<u8>().map_err(|_| err())?)
            }
            None => (s, 32),
        };
        let addr: Ipv4Addr = addr.parse().map_err(|_| err())?;
        Ipv4Prefix::new_strict(addr, len).ok_or_else(err)
    }
}

pub type MacField = Field<MacAddr>;
pub type IpField = Ipv4Prefix;
pub type PortField = Field<u16>;
pub type ProtoField = Field<Protocol>;

/// The seven-field packet header predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MatchSet {
    pub proto: ProtoField,
    pub l2s: MacField,
    pub l2d: MacField,
    pub l3s: IpField,
    pub l3d: IpField,
    pub l4s: PortField,
    pub l4d: PortField,
}

impl MatchSet {
    /// The all-wildcard match.
    pub fn any() -> Self {
        Self::default()
    }

    /// Subfield-wise intersection; `None` when any subfield is disjoint.
    pub fn intersect(&self, other: &MatchSet) -> Option<MatchSet> {
        Some(MatchSet {
            proto: self.proto.intersect(other.proto)?,
            l2s: self.l2s.intersect(other.l2s)?,
            l2d: self.l2d.intersect(other.l2d)?,
            l3s: self.l3s.intersect(other.l3s)?,
            l3d: self.l3d.intersect(other.l3d)?,
            l4s: self.l4s.intersect(other.l4s)?,
            l4d: self.l4d.intersect(other.l4d)?,
        })
    }

    pub fn overlaps(&self, other: &MatchSet) -> bool {
        self.intersect(other).is_some()
    }

    pub fn is_subset_of(&self, other: &MatchSet) -> bool {
        self.proto.is_subset_of(other.proto)
            && self.l2s.is_subset_of(other.l2s)
            && self.l2d.is_subset_of(other.l2d)
            && self.l3s.is_subset_of(other.l3s)
            && self.l3d.is_subset_of(other.l3d)
            && self.l4s.is_subset_of(other.l4s)
            && self.l4d.is_subset_of(other.l4d)
    }

    /// Swaps source and destination at every layer. Protocol is untouched.
    pub fn reverse(&self) -> MatchSet {
        MatchSet {
            proto: self.proto,
            l2s: self.l2d,
            l2d: self.l2s,
            l3s: self.l3d,
            l3d: self.l3s,
            l4s: self.l4d,
            l4d: self.l4s,
        }
    }

    pub fn contains(&self, h: &PacketHeader) -> bool {
        self.proto.contains(h.proto)
            && self.l2s.contains(h.src_mac)
            && self.l2d.contains(h.dst_mac)
            && self.l3s.contains_addr(h.src_ip)
            && self.l3d.contains_addr(h.dst_ip)
            && self.l4s.contains(h.src_port)
            && self.l4d.contains(h.dst_port)
    }

    /// The minimum header in the set: lowest address and port in every
    /// field, and TCP for a wildcard protocol.
    pub fn witness(&self) -> PacketHeader {
        fn low<T: Copy>(f: Field<T>, min: T) -> T {
            match f {
                Field::Any => min,
                Field::Exact(v) => v,
            }
        }
        PacketHeader {
            src_mac: low(self.l2s, MacAddr::ZERO),
            dst_mac: low(self.l2d, MacAddr::ZERO),
            src_ip: self.l3s.network(),
            dst_ip: self.l3d.network(),
            src_port: low(self.l4s, 0),
            dst_port: low(self.l4d, 0),
            proto: low(self.proto, Protocol::Tcp),
        }
    }
}

pub fn match_intersect(a: &MatchSet, b: &MatchSet) -> Option<MatchSet> {
    a.intersect(b)
}

pub fn match_subset(a: &MatchSet, b: &MatchSet) -> bool {
    a.is_subset_of(b)
}

pub fn match_reverse(m: &MatchSet) -> MatchSet {
    m.reverse()
}

pub fn contains_header(m: &MatchSet, h: &PacketHeader) -> bool {
    m.contains(h)
}

pub fn pick_witness(m: &MatchSet) -> PacketHeader {
    m.witness()
}

impl fmt::Display for MatchSet {
    /// `proto=tcp l2s=* l2d=* l3s=192.168.1.0/24 l3d=192.168.2.20/32 l4s=* l4d=*`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "proto={} l2s={} l2d={} l3s={} l3d={} l4s={} l4d={}",
            self.proto, self.l2s, self.l2d, self.l3s, self.l3d, self.l4s, self.l4d
        )
    }
}

impl FromStr for MatchSet {
    type Err = FieldParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut m = MatchSet::any();
        let mut seen = [false; 7];
        for tok in s.split_whitespace() {
            let (key, value) = tok.split_once('=').ok_or_else(|| {
                FieldParseError::Match(format!("expected key=value, got '{tok}'"))
            })?;
            let slot = match key {
                "proto" => 0,
                "l2s" => 1,
                "l2d" => 2,
                "l3s" => 3,
                "l3d" => 4,
                "l4s" => 5,
                "l4d" => 6,
                _ => return Err(FieldParseError::Match(format!("unknown field '{key}'"))),
            };
            if std::mem::replace(&mut seen[slot], true) {
                return Err(FieldParseError::Match(format!("duplicate field '{key}'")));
            }
            match slot {
                0 => m.proto = value.parse()?,
                1 => m.l2s = value.parse()?,
                2 => m.l2d = value.parse()?,
                3 => m.l3s = value.parse()?,
                4 => m.l3d = value.parse()?,
                5 => m.l4s = parse_port_field(value)?,
                _ => m.l4d = parse_port_field(value)?,
            }
        }
        Ok(m)
    }
}

fn parse_port_field(s: &str) -> Result<PortField, FieldParseError> {
    s.parse::<PortField>()
        .map_err(|_| FieldParseError::Port(s.to_string()))
}

/// Field-keyed string form used in JSON documents.
#[derive(Serialize, Deserialize)]
struct MatchJson {
    proto: String,
    l2s: String,
    l2d: String,
    l3s: String,
    l3d: String,
    l4s: String,
    l4d: String,
}

impl Serialize for MatchSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        MatchJson {
            proto: self.proto.to_string(),
            l2s: self.l2s.to_string(),
            l2d: self.l2d.to_string(),
            l3s: self.l3s.to_string(),
            l3d: self.l3d.to_string(),
            l4s: self.l4s.to_string(),
            l4d: self.l4d.to_string(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MatchSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let j = MatchJson::deserialize(deserializer)?;
        Ok(MatchSet {
            proto: j.proto.parse().map_err(D::Error::custom)?,
            l2s: j.l2s.parse().map_err(D::Error::custom)?,
            l2d: j.l2d.parse().map_err(D::Error::custom)?,
            l3s: j.l3s.parse().map_err(D::Error::custom)?,
            l3d: j.l3d.parse().map_err(D::Error::custom)?,
            l4s: parse_port_field(&j.l4s).map_err(D::Error::custom)?,
            l4d: parse_port_field(&j.l4d).map_err(D::Error::custom)?,
        })
    }
}

/// A fully concrete packet header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PacketHeader {
    #[serde(with = "display_fromstr")]
    pub src_mac: MacAddr,
    #[serde(with = "display_fromstr")]
    pub dst_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    #[serde(with = "display_fromstr")]
    pub proto: Protocol,
}

impl PacketHeader {
    /// The same packet travelling the other way.
    pub fn reverse(&self) -> PacketHeader {
        PacketHeader {
            src_mac: self.dst_mac,
            dst_mac: self.src_mac,
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }
}

mod display_fromstr {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}
