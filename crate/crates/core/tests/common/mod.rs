//! Test-only helpers: an enumeration-based conflict oracle, toy-domain
//! generators and the nine-rule scenario fixture.
//!
//! The oracle never calls the library's set operations. Each match field is
//! turned into an explicit membership vector over a finite list of
//! representative values, and conflicts are classified by looping over
//! pairs and triples directly. The representatives must cover every exact
//! value that occurs (plus at least one value outside them), which
//! `Universe::bits` asserts.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supc_core::compose::{compose, FlowTable};
use supc_core::conflict::{ConflictKind, ConflictReport};
use supc_core::header_space::{Field, Ipv4Prefix, MacAddr, MatchSet, PacketHeader, Protocol};
use supc_core::ingest::{parse_firewall_file, Action, Origin, SfKind, SfRule};

pub const SCENARIO: &str = include_str!("../data/sfc_scenario.rules");

pub fn scenario_table() -> FlowTable {
    let parsed = parse_firewall_file(SCENARIO.as_bytes(), "sfc_scenario.rules").unwrap();
    assert!(parsed.diagnostics.is_empty());
    compose(&parsed.rules).unwrap()
}

/// Finite stand-in for the header domain.
#[derive(Debug, Clone)]
pub struct Universe {
    pub ips: Vec<Ipv4Addr>,
    pub ports: Vec<u16>,
    pub macs: Vec<MacAddr>,
    pub protos: Vec<Protocol>,
}

pub const TOY_BASE: [u8; 4] = [10, 0, 0, 0];

pub fn toy_mac(i: u8) -> MacAddr {
    MacAddr([2, 0, 0, 0, 0, i])
}

impl Universe {
    /// 4-bit IP space (10.0.0.0/28) plus one outside address, ports 0..=2
    /// plus 9, three MACs, all protocols.
    pub fn toy() -> Self {
        let mut ips: Vec<Ipv4Addr> = (0..16u8)
            .map(|i| Ipv4Addr::new(TOY_BASE[0], TOY_BASE[1], TOY_BASE[2], i))
            .collect();
        ips.push(Ipv4Addr::new(11, 0, 0, 0));
        Universe {
            ips,
            ports: vec![0, 1, 2, 9],
            macs: (0..3).map(toy_mac).collect(),
            protos: Protocol::ALL.to_vec(),
        }
    }

    /// Every address of 192.168.{1,2,3}.0/24 plus one outside address.
    pub fn scenario() -> Self {
        let mut ips = vec![Ipv4Addr::new(10, 0, 0, 1)];
        for c in 1..=3u8 {
            ips.extend((0..=255u8).map(|d| Ipv4Addr::new(192, 168, c, d)));
        }
        Universe {
            ips,
            ports: vec![0, 80, 443, 1000],
            macs: vec![MacAddr::ZERO],
            protos: Protocol::ALL.to_vec(),
        }
    }

    pub fn header_count(&self) -> usize {
        self.macs.len().pow(2) * self.ips.len().pow(2) * self.ports.len().pow(2) * self.protos.len()
    }

    /// Every header of the universe.
    pub fn headers(&self) -> impl Iterator<Item = PacketHeader> + '_ {
        self.protos.iter().flat_map(move |&proto| {
            self.macs.iter().flat_map(move |&src_mac| {
                self.macs.iter().flat_map(move |&dst_mac| {
                    self.ips.iter().flat_map(move |&src_ip| {
                        self.ips.iter().flat_map(move |&dst_ip| {
                            self.ports.iter().flat_map(move |&src_port| {
                                self.ports.iter().map(move |&dst_port| PacketHeader {
                                    src_mac,
                                    dst_mac,
                                    src_ip,
                                    dst_ip,
                                    src_port,
                                    dst_port,
                                    proto,
                                })
                            })
                        })
                    })
                })
            })
        })
    }

    fn field_bits<T: Copy + PartialEq>(reps: &[T], f: Field<T>) -> Vec<bool> {
        match f {
            Field::Any => vec![true; reps.len()],
            Field::Exact(v) => {
                let bits: Vec<bool> = reps.iter().map(|&r| r == v).collect();
                assert!(bits.contains(&true), "exact value missing from universe");
                bits
            }
        }
    }

    fn ip_bits(&self, p: Ipv4Prefix) -> Vec<bool> {
        let net = u32::from(p.network());
        let shift = 32 - u32::from(p.prefix_len());
        let bits: Vec<bool> = self
            .ips
            .iter()
            .map(|&a| (u64::from(u32::from(a) ^ net) >> shift) == 0)
            .collect();
        assert!(bits.contains(&true), "prefix {p} has no representative");
        assert!(!p.is_any() || bits.iter().all(|&b| b));
        bits
    }

    pub fn bits(&self, m: &MatchSet) -> OSet {
        OSet([
            Self::field_bits(&self.protos, m.proto),
            Self::field_bits(&self.macs, m.l2s),
            Self::field_bits(&self.macs, m.l2d),
            self.ip_bits(m.l3s),
            self.ip_bits(m.l3d),
            Self::field_bits(&self.ports, m.l4s),
            Self::field_bits(&self.ports, m.l4d),
        ])
    }
}

/// A match as seven membership vectors, in order proto, l2s, l2d, l3s, l3d,
/// l4s, l4d.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OSet(pub [Vec<bool>; 7]);

fn and(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| *x && *y).collect()
}

fn meets(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).any(|(x, y)| *x && *y)
}

fn within(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).all(|(x, y)| !*x || *y)
}

impl OSet {
    pub fn meets(&self, other: &OSet) -> bool {
        (0..7).all(|f| meets(&self.0[f], &other.0[f]))
    }

    pub fn within(&self, other: &OSet) -> bool {
        (0..7).all(|f| within(&self.0[f], &other.0[f]))
    }

    pub fn reversed(&self) -> OSet {
        let [p, l2s, l2d, l3s, l3d, l4s, l4d] = self.0.clone();
        OSet([p, l2d, l2s, l3d, l3s, l4d, l4s])
    }
}

pub type Key = (ConflictKind, Vec<u32>);

#[derive(Debug, Default)]
pub struct OracleOutput {
    pub keys: BTreeSet<Key>,
    pub actions_differ: BTreeMap<Key, bool>,
    pub inferred: BTreeMap<Key, OSet>,
}

/// Brute-force classification straight from the conflict definitions.
pub fn oracle(universe: &Universe, table: &FlowTable) -> OracleOutput {
    let rules = table.rules();
    let sets: Vec<OSet> = rules.iter().map(|r| universe.bits(&r.matches)).collect();
    let n = rules.len();
    let allow = |i: usize| rules[i].action == Action::Allow;
    let id = |i: usize| rules[i].id;
    let mut out = OracleOutput::default();
    let add = |out: &mut OracleOutput, key: Key, differ: bool| {
        assert!(out.keys.insert(key.clone()), "duplicate {key:?}");
        out.actions_differ.insert(key, differ);
    };

    for i in 0..n {
        for j in i + 1..n {
            if !sets[i].meets(&sets[j]) {
                continue;
            }
            let kind = if sets[i].within(&sets[j]) || sets[j].within(&sets[i]) {
                ConflictKind::Subsumption
            } else {
                ConflictKind::Intersection
            };
            add(
                &mut out,
                (kind, vec![id(i), id(j)]),
                rules[i].action != rules[j].action,
            );
        }
    }

    for i in 0..n {
        for j in 0..n {
            if i == j || !allow(i) || !allow(j) {
                continue;
            }
            let (a, b) = (&sets[i].0, &sets[j].0);
            if !meets(&a[0], &b[0]) || !meets(&a[4], &b[3]) {
                continue;
            }
            let inferred = OSet([
                and(&a[0], &b[0]),
                a[1].clone(),
                b[2].clone(),
                a[3].clone(),
                b[4].clone(),
                a[5].clone(),
                b[6].clone(),
            ]);
            for m in 0..n {
                if m == i || m == j || allow(m) || !inferred.meets(&sets[m]) {
                    continue;
                }
                let key = (ConflictKind::Transitivity, vec![id(i), id(j), id(m)]);
                out.inferred.insert(key.clone(), inferred.clone());
                add(&mut out, key, true);
            }
        }
    }

    for i in 0..n {
        for j in i + 1..n {
            if !allow(i) || !allow(j) || !sets[i].reversed().meets(&sets[j]) {
                continue;
            }
            for m in 0..n {
                if rules[m].action == rules[j].action || !sets[m].meets(&sets[j]) {
                    continue;
                }
                add(
                    &mut out,
                    (ConflictKind::Symmetry, vec![id(i), id(j), id(m)]),
                    true,
                );
            }
        }
    }
    out
}

pub fn report_keys(report: &ConflictReport) -> BTreeSet<Key> {
    report
        .conflicts
        .iter()
        .map(|c| (c.kind, c.participants.clone()))
        .collect()
}

/// Compares a report with the oracle: keys, action flags and inferred rules.
pub fn agrees(
    universe: &Universe,
    table: &FlowTable,
    report: &ConflictReport,
) -> Result<(), String> {
    let expected = oracle(universe, table);
    let got = report_keys(report);
    if got != expected.keys {
        let missing: Vec<_> = expected.keys.difference(&got).collect();
        let extra: Vec<_> = got.difference(&expected.keys).collect();
        return Err(format!("missing {missing:?}, extra {extra:?}"));
    }
    if got.len() != report.conflicts.len() {
        return Err("duplicate conflicts in report".into());
    }
    for c in &report.conflicts {
        let key = (c.kind, c.participants.clone());
        if expected.actions_differ[&key] != c.actions_differ {
            return Err(format!("actions_differ mismatch for {key:?}"));
        }
        match (c.inferred_match, expected.inferred.get(&key)) {
            (Some(m), Some(o)) if universe.bits(&m) == *o => {}
            (None, None) => {}
            _ => return Err(format!("inferred match mismatch for {key:?}")),
        }
    }
    Ok(())
}

pub fn toy_prefix(rng: &mut ChaCha8Rng) -> Ipv4Prefix {
    if rng.gen_bool(0.15) {
        return Ipv4Prefix::ANY;
    }
    let len = rng.gen_range(29..=32u8);
    let low = rng.gen_range(0..16u8);
    Ipv4Prefix::new(
        Ipv4Addr::new(TOY_BASE[0], TOY_BASE[1], TOY_BASE[2], low),
        len,
    )
    .unwrap()
}

fn toy_field<T>(
    rng: &mut ChaCha8Rng,
    any_p: f64,
    pick: impl FnOnce(&mut ChaCha8Rng) -> T,
) -> Field<T> {
    if rng.gen_bool(any_p) {
        Field::Any
    } else {
        Field::Exact(pick(rng))
    }
}

/// A random match over the toy universe.
pub fn toy_match(rng: &mut ChaCha8Rng, with_macs: bool) -> MatchSet {
    let mac_any = if with_macs { 0.7 } else { 1.0 };
    MatchSet {
        proto: toy_field(rng, 0.25, |r| Protocol::ALL[r.gen_range(0..3)]),
        l2s: toy_field(rng, mac_any, |r| toy_mac(r.gen_range(0..2))),
        l2d: toy_field(rng, mac_any, |r| toy_mac(r.gen_range(0..2))),
        l3s: toy_prefix(rng),
        l3d: toy_prefix(rng),
        l4s: toy_field(rng, 0.7, |r| r.gen_range(0..3)),
        l4d: toy_field(rng, 0.6, |r| r.gen_range(0..3)),
    }
}

/// Random service-function rules over the toy universe.
pub fn toy_rules(rng: &mut ChaCha8Rng, count: usize) -> Vec<SfRule> {
    (0..count)
        .map(|i| {
            let kind = if rng.gen_bool(0.5) {
                SfKind::Firewall
            } else {
                SfKind::Ids
            };
            let action = match rng.gen_range(0..5) {
                0 | 1 => Action::Allow,
                2 | 3 => Action::Deny,
                _ => Action::Inspect,
            };
            SfRule {
                kind,
                matches: toy_match(rng, kind == SfKind::Firewall),
                action,
                origin: Origin {
                    file: "toy".into(),
                    line: i + 1,
                    raw: String::new(),
                },
            }
        })
        .collect()
}

pub fn toy_table(seed: u64, max_rules: usize) -> FlowTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(0..=max_rules);
    compose(&toy_rules(&mut rng, count)).unwrap()
}
