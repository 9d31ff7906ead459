//! Flow composition: one-to-one mapping of service-function rules onto flow
//! rules, deduplication on `(match, action)`, and banded priorities.
//!
//! Higher priority is matched first. Firewall-derived rules occupy the upper
//! band and IDS-derived rules the lower band, so any firewall rule is applied
//! before any IDS rule whose match overlaps it. Within a band, earlier input
//! rules get higher priorities.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::header_space::MatchSet;
use crate::ingest::{Action, SfKind, SfRule};

pub const MAX_PRIORITY: u16 = 65535;
pub const DEFAULT_BAND_SPLIT: u16 = 32768;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OriginRef {
    pub file: String,
    pub line: usize,
    pub kind: SfKind,
}

impl From<&SfRule> for OriginRef {
    fn from(r: &SfRule) -> Self {
        OriginRef {
            file: r.origin.file.clone(),
            line: r.origin.line,
            kind: r.kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRule {
    pub id: u32,
    pub priority: u16,
    #[serde(rename = "match")]
    pub matches: MatchSet,
    pub action: Action,
    pub origins: Vec<OriginRef>,
}

impl FlowRule {
    /// The priority band a rule belongs to. A rule composed from at least one
    /// firewall rule sits in the firewall band.
    pub fn band(&self) -> SfKind {
        if self.origins.iter().any(|o| o.kind == SfKind::Firewall) {
            SfKind::Firewall
        } else {
            SfKind::Ids
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComposeConfig {
    /// Lowest firewall priority. IDS rules get `[1, band_split - 1]`,
    /// firewall rules `[band_split, 65535]`.
    pub band_split: u16,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        ComposeConfig {
            band_split: DEFAULT_BAND_SPLIT,
        }
    }
}

impl ComposeConfig {
    fn capacity(&self, band: SfKind) -> usize {
        match band {
            SfKind::Firewall => usize::from(MAX_PRIORITY - self.band_split) + 1,
            SfKind::Ids => usize::from(self.band_split) - 1,
        }
    }

    fn top(&self, band: SfKind) -> u16 {
        match band {
            SfKind::Firewall => MAX_PRIORITY,
            SfKind::Ids => self.band_split - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComposeError {
    #[error("{band:?} priority band exhausted: {needed} distinct rules, capacity {capacity}")]
    BandExhausted {
        band: SfKind,
        needed: usize,
        capacity: usize,
    },
    #[error("band split {0} leaves an empty band")]
    InvalidBandSplit(u16),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("malformed table JSON: {0}")]
    Json(String),
    #[error("rule ids are not dense 1..n in table order (position {position} has id {id})")]
    NonDenseIds { position: usize, id: u32 },
    #[error("rule {0} has priority 0")]
    ZeroPriority(u32),
    #[error("rule {0} has no origins")]
    NoOrigins(u32),
    #[error("rules {0} and {1} share match and action")]
    Duplicate(u32, u32),
    #[error("rules are not sorted by descending priority at rule {0}")]
    Unsorted(u32),
    #[error("IDS rule {ids} (priority {ids_priority}) is not below firewall rule {fw} (priority {fw_priority})")]
    BandOverlap {
        fw: u32,
        fw_priority: u16,
        ids: u32,
        ids_priority: u16,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowTable {
    rules: Vec<FlowRule>,
    fw_priority_floor: Option<u16>,
}

impl FlowTable {
    /// Validates a rule list against the table invariants.
    pub fn from_rules(rules: Vec<FlowRule>) -> Result<Self, TableError> {
        let mut seen: HashMap<(MatchSet, Action), u32> = HashMap::with_capacity(rules.len());
        let mut lowest_fw: Option<&FlowRule> = None;
        let mut highest_ids: Option<&FlowRule> = None;
        for (pos, r) in rules.iter().enumerate() {
            if r.id as usize != pos + 1 {
                return Err(TableError::NonDenseIds {
                    position: pos,
                    id: r.id,
                });
            }
            if r.priority == 0 {
                return Err(TableError::ZeroPriority(r.id));
            }
            if r.origins.is_empty() {
                return Err(TableError::NoOrigins(r.id));
            }
            if pos > 0 && rules[pos - 1].priority <= r.priority {
                return Err(TableError::Unsorted(r.id));
            }
            if let Some(prev) = seen.insert((r.matches, r.action), r.id) {
                return Err(TableError::Duplicate(prev, r.id));
            }
            match r.band() {
                SfKind::Firewall => lowest_fw = Some(r),
                SfKind::Ids => {
                    highest_ids.get_or_insert(r);
                }
            }
        }
        if let (Some(fw), Some(ids)) = (lowest_fw, highest_ids) {
            if fw.priority <= ids.priority {
                return Err(TableError::BandOverlap {
                    fw: fw.id,
                    fw_priority: fw.priority,
                    ids: ids.id,
                    ids_priority: ids.priority,
                });
            }
        }
        let fw_priority_floor = lowest_fw.map(|r| r.priority);
        Ok(FlowTable {
            rules,
            fw_priority_floor,
        })
    }

    pub fn empty() -> Self {
        FlowTable {
            rules: Vec::new(),
            fw_priority_floor: None,
        }
    }

    /// Rules in table order: descending priority, ids 1..n.
    pub fn rules(&self) -> &[FlowRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Lowest priority held by a firewall-band rule.
    pub fn fw_priority_floor(&self) -> Option<u16> {
        self.fw_priority_floor
    }

    pub fn get(&self, id: u32) -> Option<&FlowRule> {
        self.rules.get((id as usize).checked_sub(1)?)
    }

    /// Pretty JSON array with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.rules).expect("flow table serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, TableError> {
        let rules: Vec<FlowRule> =
            serde_json::from_str(text).map_err(|e| TableError::Json(e.to_string()))?;
        Self::from_rules(rules)
    }
}

struct Composed {
    matches: MatchSet,
    action: Action,
    origins: Vec<OriginRef>,
}

pub fn compose(rules: &[SfRule]) -> Result<FlowTable, ComposeError> {
    compose_with(rules, ComposeConfig::default())
}

pub fn compose_with(rules: &[SfRule], config: ComposeConfig) -> Result<FlowTable, ComposeError> {
    if config.band_split < 2 {
        return Err(ComposeError::InvalidBandSplit(config.band_split));
    }
    let mut index: HashMap<(MatchSet, Action), usize> = HashMap::new();
    let mut composed: Vec<Composed> = Vec::new();
    for r in rules {
        match index.entry((r.matches, r.action)) {
            Entry::Occupied(e) => composed[*e.get()].origins.push(r.into()),
            Entry::Vacant(e) => {
                e.insert(composed.len());
                composed.push(Composed {
                    matches: r.matches,
                    action: r.action,
                    origins: vec![r.into()],
                });
            }
        }
    }

    let (fw, ids): (Vec<Composed>, Vec<Composed>) = composed
        .into_iter()
        .partition(|c| c.origins.iter().any(|o| o.kind == SfKind::Firewall));
    for (band, members) in [(SfKind::Firewall, &fw), (SfKind::Ids, &ids)] {
        let capacity = config.capacity(band);
        if members.len() > capacity {
            return Err(ComposeError::BandExhausted {
                band,
                needed: members.len(),
                capacity,
            });
        }
    }

    let mut out = Vec::with_capacity(fw.len() + ids.len());
    for (band, members) in [(SfKind::Firewall, fw), (SfKind::Ids, ids)] {
        let top = config.top(band);
        for (offset, c) in members.into_iter().enumerate() {
            out.push(FlowRule {
                id: out.len() as u32 + 1,
                priority: top - offset as u16,
                matches: c.matches,
                action: c.action,
                origins: c.origins,
            });
        }
    }
    let fw_priority_floor = out
        .iter()
        .filter(|r| r.band() == SfKind::Firewall)
        .map(|r| r.priority)
        .min();
    Ok(FlowTable {
        rules: out,
        fw_priority_floor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("dedup ratio undefined for zero input rules")]
pub struct EmptyInput;

/// Composed rule count over raw rule count.
pub fn dedup_ratio(input_count: usize, table: &FlowTable) -> Result<f64, EmptyInput> {
    if input_count == 0 {
        return Err(EmptyInput);
    }
    Ok(table.len() as f64 / input_count as f64)
}

/// Number of distinct `(match, action)` pairs in `rules`.
pub fn distinct_patterns(rules: &[SfRule]) -> usize {
    rules
        .iter()
        .map(|r| (r.matches, r.action))
        .collect::<HashSet<_>>()
        .len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_firewall_file, parse_ids_file};

    fn fw(text: &str) -> Vec<SfRule> {
        parse_firewall_file(text.as_bytes(), "fw").unwrap().rules
    }

    fn ids(text: &str) -> Vec<SfRule> {
        parse_ids_file(text.as_bytes(), "ids").unwrap().rules
    }

    #[test]
    fn dedup_and_band_order() {
        let mut input = fw("-p tcp -s 10.0.0.0/8 -j ACCEPT\n-p tcp -s 10.0.0.0/8 -j ACCEPT");
        input.extend(ids("alert tcp any any -> any 80 ()"));
        let t = compose(&input).unwrap();
        assert_eq!(t.len(), 2);
        let a = &t.rules()[0];
        let b = &t.rules()[1];
        assert_eq!(a.origins.len(), 2);
        assert!(a.priority > b.priority);
        assert_eq!((a.priority, b.priority), (65535, 32767));
        assert_eq!(t.fw_priority_floor(), Some(65535));
    }

    #[test]
    fn firewall_outranks_wider_ids_rule() {
        // IDS listed first, firewall rule's match is a subset of it.
        let mut input = ids("alert tcp 192.168.0.0/16 any -> 10.0.0.0/8 any ()");
        input.extend(fw("-p tcp -s 192.168.1.0/24 -d 10.1.0.0/16 -j DROP"));
        let t = compose(&input).unwrap();
        let fw_rule = t
            .rules()
            .iter()
            .find(|r| r.band() == SfKind::Firewall)
            .unwrap();
        let ids_rule = t.rules().iter().find(|r| r.band() == SfKind::Ids).unwrap();
        assert!(fw_rule.matches.is_subset_of(&ids_rule.matches));
        assert!(fw_rule.priority > ids_rule.priority);
        assert_eq!(fw_rule.id, 1);
    }

    #[test]
    fn equal_match_different_action_kept() {
        let input = fw("-p tcp -d 10.0.0.1 -j ACCEPT\n-p tcp -d 10.0.0.1 -j DROP");
        let t = compose(&input).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.rules()[0].action, Action::Allow);
        assert_eq!(t.rules()[0].priority, 65535);
        assert_eq!(t.rules()[1].priority, 65534);
    }

    #[test]
    fn mixed_origin_rule_sits_in_firewall_band() {
        let mut input = ids("pass tcp 10.0.0.0/8 any -> any any ()");
        input.extend(fw("-p tcp -s 10.0.0.0/8 -j ACCEPT"));
        let t = compose(&input).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.rules()[0].band(), SfKind::Firewall);
        assert_eq!(t.rules()[0].origins.len(), 2);
    }

    #[test]
    fn band_exhaustion() {
        let input: Vec<SfRule> = (0..5u32)
            .map(|i| fw(&format!("-p tcp --dport {i} -j ACCEPT")).remove(0))
            .collect();
        let cfg = ComposeConfig { band_split: 65532 };
        let err = compose_with(&input, cfg).unwrap_err();
        assert_eq!(
            err,
            ComposeError::BandExhausted {
                band: SfKind::Firewall,
                needed: 5,
                capacity: 4
            }
        );
        assert!(err.to_string().contains("Firewall"));
        assert!(compose_with(&input, ComposeConfig { band_split: 1 }).is_err());
    }

    #[test]
    fn ratios() {
        let input = fw("-p tcp -j ACCEPT\n-p tcp -j ACCEPT\n-p udp -j ACCEPT");
        let t = compose(&input).unwrap();
        assert!((dedup_ratio(3, &t).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(dedup_ratio(2, &t).unwrap(), 1.0);
        assert_eq!(dedup_ratio(0, &t), Err(EmptyInput));
        assert!((dedup_ratio(2056, &table_of(54)).unwrap() - 0.0263).abs() < 5e-5);
        assert!((dedup_ratio(13472, &table_of(201)).unwrap() - 0.0149).abs() < 5e-5);
    }

    fn table_of(n: u16) -> FlowTable {
        let input: Vec<SfRule> = (0..n)
            .map(|i| fw(&format!("-p tcp --dport {i} -j ACCEPT")).remove(0))
            .collect();
        compose(&input).unwrap()
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut input = fw("-p tcp -s 10.0.0.0/8 -j ACCEPT\n-p tcp -s 10.0.0.0/8 -j ACCEPT");
        input.extend(ids("alert udp any any -> any 53 ()"));
        let t = compose(&input).unwrap();
        let json = t.to_json();
        assert!(json.ends_with("]\n"));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v[0]["id"], 1);
        assert_eq!(v[0]["action"], "ALLOW");
        assert_eq!(v[0]["match"]["l3s"], "10.0.0.0/8");
        assert_eq!(v[0]["match"]["l2s"], "*");
        assert_eq!(v[0]["origins"][1]["line"], 2);
        assert_eq!(v[0]["origins"][0]["kind"], "FIREWALL");
        assert_eq!(v[1]["action"], "INSPECT");
        assert_eq!(FlowTable::from_json(&json).unwrap(), t);

        let mut rules = t.rules().to_vec();
        rules[1].priority = 65535;
        assert!(FlowTable::from_rules(rules.clone()).is_err());
        rules[1] = t.rules()[1].clone();
        let mut swapped = rules.clone();
        swapped[0]
            .origins
            .iter_mut()
            .for_each(|o| o.kind = SfKind::Ids);
        swapped[1].origins[0].kind = SfKind::Firewall;
        assert!(matches!(
            FlowTable::from_rules(swapped),
            Err(TableError::BandOverlap { .. })
        ));
        rules[1].id = 3;
        assert!(matches!(
            FlowTable::from_rules(rules),
            Err(TableError::NonDenseIds { .. })
        ));
        assert!(FlowTable::from_json("{}").is_err());
    }
}
