//! Conflict classification over a composed flow table.
//!
//! Four classes are detected:
//!
//! * **Intersection**: two rules overlap and neither contains the other.
//! * **Subsumption**: one rule's match contains the other's (equal matches
//!   included). Checked before intersection, so a pair gets at most one of
//!   the two.
//! * **Transitivity**: two ALLOW rules chain end to end (destination of the
//!   first overlaps the source of the second at L3, protocols compatible),
//!   and the inferred end-to-end rule overlaps a third rule whose action is
//!   not ALLOW.
//! * **Symmetry**: two ALLOW rules form a bidirectional pair (one reversed
//!   overlaps the other) and a third rule with a different action overlaps
//!   the return leg.
//!
//! Priorities play no part in classification. Every conflict carries a
//! concrete witness header drawn from the conflicting overlap.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compose::{FlowRule, FlowTable};
use crate::header_space::{MatchSet, PacketHeader};
use crate::ingest::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConflictKind {
    Intersection,
    Subsumption,
    Transitivity,
    Symmetry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub kind: ConflictKind,
    /// Two ids (ascending) for pairwise kinds. Three for transitivity
    /// (first link, second link, contradicting rule) and symmetry (forward
    /// leg, return leg, contradicting rule).
    pub participants: Vec<u32>,
    /// The end-to-end rule inferred by a transitive chain.
    pub inferred_match: Option<MatchSet>,
    pub witness: PacketHeader,
    pub actions_differ: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictCounts {
    pub intersection: usize,
    pub subsumption: usize,
    pub transitivity: usize,
    pub symmetry: usize,
}

impl ConflictCounts {
    pub fn from_conflicts(conflicts: &[Conflict]) -> Self {
        let mut c = ConflictCounts::default();
        for x in conflicts {
            match x.kind {
                ConflictKind::Intersection => c.intersection += 1,
                ConflictKind::Subsumption => c.subsumption += 1,
                ConflictKind::Transitivity => c.transitivity += 1,
                ConflictKind::Symmetry => c.symmetry += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.intersection + self.subsumption + self.transitivity + self.symmetry
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReport {
    /// SHA-256 of the table's canonical JSON.
    pub table_hash: String,
    pub counts: ConflictCounts,
    pub conflicts: Vec<Conflict>,
}

impl ConflictReport {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn table_hash(table: &FlowTable) -> String {
    hex::encode(Sha256::digest(table.to_json().as_bytes()))
}

/// Runs `per_row` for every row index on `workers` threads and concatenates
/// the results. Row order of the output is unspecified; callers sort.
fn by_rows<F>(n: usize, workers: usize, per_row: F) -> Vec<Conflict>
where
    F: Fn(usize) -> Vec<Conflict> + Sync + Send,
{
    if workers <= 1 || n < 2 {
        return (0..n).flat_map(per_row).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().flat_map_iter(&per_row).collect()),
        Err(_) => (0..n).flat_map(per_row).collect(),
    }
}

fn pairwise_row(rules: &[FlowRule], i: usize) -> Vec<Conflict> {
    let a = &rules[i];
    let mut out = Vec::new();
    for b in &rules[i + 1..] {
        let Some(overlap) = a.matches.intersect(&b.matches) else {
            continue;
        };
        let kind = if a.matches.is_subset_of(&b.matches) || b.matches.is_subset_of(&a.matches) {
            ConflictKind::Subsumption
        } else {
            ConflictKind::Intersection
        };
        out.push(Conflict {
            kind,
            participants: vec![a.id, b.id],
            inferred_match: None,
            witness: overlap.witness(),
            actions_differ: a.action != b.action,
        });
    }
    out
}

/// The end-to-end rule implied by chaining `first` into `second`, if the two
/// chain: destination of `first` overlaps source of `second` and protocols
/// are compatible.
pub fn chain(first: &MatchSet, second: &MatchSet) -> Option<MatchSet> {
    let proto = first.proto.intersect(second.proto)?;
    first.l3d.intersect(second.l3s)?;
    Some(MatchSet {
        proto,
        l2s: first.l2s,
        l2d: second.l2d,
        l3s: first.l3s,
        l3d: second.l3d,
        l4s: first.l4s,
        l4d: second.l4d,
    })
}

fn transitivity_row(rules: &[FlowRule], i: usize) -> Vec<Conflict> {
    let first = &rules[i];
    let mut out = Vec::new();
    if first.action != Action::Allow {
        return out;
    }
    for (j, second) in rules.iter().enumerate() {
        if j == i || second.action != Action::Allow {
            continue;
        }
        let Some(inferred) = chain(&first.matches, &second.matches) else {
            continue;
        };
        for (m, third) in rules.iter().enumerate() {
            if m == i || m == j || third.action == Action::Allow {
                continue;
            }
            if let Some(overlap) = inferred.intersect(&third.matches) {
                out.push(Conflict {
                    kind: ConflictKind::Transitivity,
                    participants: vec![first.id, second.id, third.id],
                    inferred_match: Some(inferred),
                    witness: overlap.witness(),
                    actions_differ: true,
                });
            }
        }
    }
    out
}

fn symmetry_row(rules: &[FlowRule], i: usize) -> Vec<Conflict> {
    let forward = &rules[i];
    let mut out = Vec::new();
    if forward.action != Action::Allow {
        return out;
    }
    let reversed = forward.matches.reverse();
    for ret in &rules[i + 1..] {
        if ret.action != Action::Allow || !reversed.overlaps(&ret.matches) {
            continue;
        }
        for third in rules {
            if third.action == ret.action {
                continue;
            }
            if let Some(overlap) = third.matches.intersect(&ret.matches) {
                out.push(Conflict {
                    kind: ConflictKind::Symmetry,
                    participants: vec![forward.id, ret.id, third.id],
                    inferred_match: None,
                    witness: overlap.witness(),
                    actions_differ: true,
                });
            }
        }
    }
    out
}

fn sorted(mut conflicts: Vec<Conflict>) -> Vec<Conflict> {
    conflicts.sort_by(|a, b| (a.kind, &a.participants).cmp(&(b.kind, &b.participants)));
    conflicts
}

pub fn detect_pairwise(table: &FlowTable) -> Vec<Conflict> {
    detect_pairwise_with(table, 1)
}

pub fn detect_pairwise_with(table: &FlowTable, workers: usize) -> Vec<Conflict> {
    let rules = table.rules();
    sorted(by_rows(rules.len(), workers, |i| pairwise_row(rules, i)))
}

pub fn detect_transitivity(table: &FlowTable) -> Vec<Conflict> {
    detect_transitivity_with(table, 1)
}

pub fn detect_transitivity_with(table: &FlowTable, workers: usize) -> Vec<Conflict> {
    let rules = table.rules();
    sorted(by_rows(rules.len(), workers, |i| {
        transitivity_row(rules, i)
    }))
}

pub fn detect_symmetry(table: &FlowTable) -> Vec<Conflict> {
    detect_symmetry_with(table, 1)
}

pub fn detect_symmetry_with(table: &FlowTable, workers: usize) -> Vec<Conflict> {
    let rules = table.rules();
    sorted(by_rows(rules.len(), workers, |i| symmetry_row(rules, i)))
}

pub fn check_all(table: &FlowTable) -> ConflictReport {
    check_all_with(table, 1)
}

/// All detectors, with the row space split over `workers` threads. Output
/// is independent of the worker count.
pub fn check_all_with(table: &FlowTable, workers: usize) -> ConflictReport {
    let rules = table.rules();
    let conflicts = sorted(by_rows(rules.len(), workers, |i| {
        let mut v = pairwise_row(rules, i);
        v.extend(transitivity_row(rules, i));
        v.extend(symmetry_row(rules, i));
        v
    }));
    ConflictReport {
        table_hash: table_hash(table),
        counts: ConflictCounts::from_conflicts(&conflicts),
        conflicts,
    }
}
