//! Synthetic rule corpora and the compose/check timing harness.

use std::collections::HashSet;
use std::net::Ipv4Addr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::{compose, ComposeError};
use crate::conflict::{check_all_with, ConflictCounts};
use crate::header_space::{Field, Ipv4Prefix, MacAddr, MatchSet, Protocol};
use crate::ingest::{Action, Origin, SfKind, SfRule};

pub const GEN_FW_FILE: &str = "fw.rules";
pub const GEN_IDS_FILE: &str = "ids.rules";

/// Each pattern owns a distinct source /24 under 10.0.0.0/8.
pub const MAX_DISTINCT: usize = 1 << 16;

const DST_PORTS: [u16; 8] = [22, 25, 53, 80, 123, 443, 3306, 8080];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub total_rules: usize,
    pub distinct_patterns: usize,
    /// Fraction of patterns that are firewall rules; the rest are IDS rules.
    pub fw_fraction: f64,
    pub seed: u64,
    /// Probability that a pattern is derived from an earlier one (nested
    /// prefix, host inside its network, chained or reversed direction),
    /// which gives the conflict checker something to find.
    pub overlap: f64,
}

impl GenSpec {
    pub fn new(total_rules: usize, distinct_patterns: usize, fw_fraction: f64, seed: u64) -> Self {
        GenSpec {
            total_rules,
            distinct_patterns,
            fw_fraction,
            seed,
            overlap: 0.0,
        }
    }

    pub fn with_overlap(self, overlap: f64) -> Self {
        GenSpec { overlap, ..self }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.distinct_patterns == 0 {
            return Err(GenError::NoPatterns);
        }
        if self.distinct_patterns > self.total_rules {
            return Err(GenError::Infeasible {
                distinct: self.distinct_patterns,
                total: self.total_rules,
            });
        }
        if self.distinct_patterns > MAX_DISTINCT {
            return Err(GenError::TooManyPatterns(self.distinct_patterns));
        }
        for (name, v) in [("fw_fraction", self.fw_fraction), ("overlap", self.overlap)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(GenError::Fraction { name, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("distinct pattern count must be positive")]
    NoPatterns,
    #[error("cannot draw {distinct} distinct patterns from {total} rules")]
    Infeasible { distinct: usize, total: usize },
    #[error("at most {MAX_DISTINCT} distinct patterns supported, got {0}")]
    TooManyPatterns(usize),
    #[error("{name} must lie in [0, 1], got {value}")]
    Fraction { name: &'static str, value: f64 },
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
}

fn own_network(p: usize) -> Ipv4Prefix {
    Ipv4Prefix::new(Ipv4Addr::new(10, (p >> 8) as u8, p as u8, 0), 24).expect("/24")
}

fn random_dst(rng: &mut ChaCha8Rng) -> Ipv4Prefix {
    let net = rng.gen_range(0..=255u8);
    if rng.gen_bool(0.5) {
        Ipv4Prefix::new(Ipv4Addr::new(192, 168, net, 0), 24).expect("/24")
    } else {
        Ipv4Prefix::host(Ipv4Addr::new(192, 168, net, rng.gen_range(1..=254)))
    }
}

fn base_pattern(p: usize, kind: SfKind, rng: &mut ChaCha8Rng) -> MatchSet {
    let proto = match rng.gen_range(0..10) {
        0..=5 => Protocol::Tcp,
        6..=8 => Protocol::Udp,
        _ => Protocol::Icmp,
    };
    let mut m = MatchSet {
        proto: Field::Exact(proto),
        l3s: own_network(p),
        l3d: random_dst(rng),
        ..MatchSet::any()
    };
    if proto != Protocol::Icmp {
        if rng.gen_bool(0.7) {
            m.l4d = Field::Exact(*DST_PORTS.choose(rng).expect("nonempty"));
        }
        if rng.gen_bool(0.1) {
            m.l4s = Field::Exact(rng.gen_range(1024..=65535));
        }
    }
    if kind == SfKind::Firewall && rng.gen_bool(0.1) {
        let mut mac = [0u8; 6];
        rng.fill(&mut mac[..]);
        mac[0] &= 0xfe;
        m.l2s = Field::Exact(MacAddr(mac));
    }
    m
}

fn derived_pattern(base: MatchSet, earlier: &MatchSet, rng: &mut ChaCha8Rng) -> MatchSet {
    let mut m = base;
    match rng.gen_range(0..4) {
        0 => {
            // supernet of an earlier source network
            let net = earlier.l3s.network();
            m.l3s = Ipv4Prefix::new(net, earlier.l3s.prefix_len().min(16)).expect("valid");
            m.l3d = earlier.l3d;
        }
        1 => {
            // host inside an earlier source network
            let net = u32::from(earlier.l3s.network());
            let host_bits = 32 - u32::from(earlier.l3s.prefix_len());
            let offset = if host_bits == 0 {
                0
            } else {
                rng.gen_range(0..(1u64 << host_bits)) as u32
            };
            m.l3s = Ipv4Prefix::host(Ipv4Addr::from(net | offset));
            m.l3d = earlier.l3d;
        }
        2 => {
            // continues where an earlier rule's traffic leaves off
            m.l3s = earlier.l3d;
            m.l3d = random_dst(rng);
        }
        _ => {
            // return direction of an earlier rule
            m = earlier.reverse();
            m.l2s = Field::Any;
            m.l2d = Field::Any;
        }
    }
    m
}

/// Builds a shuffled corpus of `total_rules` rules over exactly
/// `distinct_patterns` distinct `(match, action)` pairs. Deterministic in
/// the seed.
pub fn generate(spec: &GenSpec) -> Result<Vec<SfRule>, GenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.distinct_patterns;

    let fw_count = (spec.fw_fraction * k as f64).round() as usize;
    let mut kinds: Vec<SfKind> = (0..k)
        .map(|i| {
            if i < fw_count {
                SfKind::Firewall
            } else {
                SfKind::Ids
            }
        })
        .collect();
    kinds.shuffle(&mut rng);

    let mut seen: HashSet<(MatchSet, Action)> = HashSet::with_capacity(k);
    let mut patterns: Vec<(SfKind, MatchSet, Action)> = Vec::with_capacity(k);
    for (p, &kind) in kinds.iter().enumerate() {
        let action = match (kind, rng.gen_range(0..10)) {
            (SfKind::Firewall, 0..=5) | (SfKind::Ids, 0..=3) => Action::Allow,
            (SfKind::Firewall, _) | (SfKind::Ids, 4..=6) => Action::Deny,
            (SfKind::Ids, _) => Action::Inspect,
        };
        let base = base_pattern(p, kind, &mut rng);
        let mut m = base;
        if p > 0 && rng.gen_bool(spec.overlap) {
            let earlier = patterns[rng.gen_range(0..p)].1;
            m = derived_pattern(base, &earlier, &mut rng);
            if kind == SfKind::Ids {
                m.l2s = Field::Any;
                m.l2d = Field::Any;
            }
        }
        if !seen.insert((m, action)) {
            // the base pattern's source network is unique to this index
            m = base;
            seen.insert((m, action));
        }
        patterns.push((kind, m, action));
    }

    let mut picks: Vec<usize> = (0..k).collect();
    picks.extend((k..spec.total_rules).map(|_| rng.gen_range(0..k)));
    picks.shuffle(&mut rng);

    let (mut fw_line, mut ids_line) = (0usize, 0usize);
    let rules = picks
        .into_iter()
        .map(|p| {
            let (kind, matches, action) = patterns[p];
            let (file, line) = match kind {
                SfKind::Firewall => {
                    fw_line += 1;
                    (GEN_FW_FILE, fw_line)
                }
                SfKind::Ids => {
                    ids_line += 1;
                    (GEN_IDS_FILE, ids_line)
                }
            };
            let mut rule = SfRule {
                kind,
                matches,
                action,
                origin: Origin {
                    file: file.to_string(),
                    line,
                    raw: String::new(),
                },
            };
            rule.origin.raw = rule.to_line();
            rule
        })
        .collect();
    Ok(rules)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub input_rule_count: usize,
    pub composed_rule_count: usize,
    pub compose_duration_ms: f64,
    pub check_duration_ms: f64,
    pub counts: ConflictCounts,
}

/// generate, then compose and check with wall-clock timing around the two
/// pipeline calls.
pub fn run_bench(spec: &GenSpec, workers: usize) -> Result<BenchResult, BenchError> {
    let rules = generate(spec)?;
    let t0 = Instant::now();
    let table = compose(&rules)?;
    let compose_duration_ms = t0.elapsed().as_secs_f64() * 1e3;
    let t1 = Instant::now();
    let report = check_all_with(&table, workers);
    let check_duration_ms = t1.elapsed().as_secs_f64() * 1e3;
    Ok(BenchResult {
        input_rule_count: rules.len(),
        composed_rule_count: table.len(),
        compose_duration_ms,
        check_duration_ms,
        counts: report.counts,
    })
}

/// Least-squares fit of `duration = a + c * n * ln(n)`. The intercept
/// absorbs fixed per-call cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NLogNFit {
    pub intercept: f64,
    pub c: f64,
    /// max over points of |measured - fitted| / fitted
    pub max_relative_residual: f64,
}

impl NLogNFit {
    pub fn predict(&self, n: usize) -> f64 {
        self.intercept + self.c * n_log_n(n)
    }
}

fn n_log_n(n: usize) -> f64 {
    n as f64 * (n as f64).ln()
}

pub fn fit_n_log_n(points: &[(usize, f64)]) -> Option<NLogNFit> {
    if points.len() < 2 {
        return None;
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(n, _)| n_log_n(n)).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs
        .iter()
        .zip(points)
        .map(|(x, p)| (x - mx) * (p.1 - my))
        .sum();
    let c = sxy / sxx;
    let mut fit = NLogNFit {
        intercept: my - c * mx,
        c,
        max_relative_residual: 0.0,
    };
    fit.max_relative_residual = points
        .iter()
        .map(|&(n, y)| ((y - fit.predict(n)) / fit.predict(n)).abs())
        .fold(0.0, f64::max);
    Some(fit)
}

/// Least-squares slope of `ln(duration)` against `ln(n)`: 1 for linear
/// growth, 2 for quadratic.
pub fn growth_exponent(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(n, y)| n == 0 || y <= 0.0) {
        return None;
    }
    let k = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points
        .iter()
        .map(|&(n, y)| ((n as f64).ln(), y.ln()))
        .unzip();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}
