//! Composition of firewall and IDS rules into a single deduplicated flow
//! table, and conflict analysis over the result.
//!
//! The pipeline is [`ingest`] → [`compose`] → [`conflict`]:
//!
//! ```
//! use supc_core::{compose::compose, conflict::check_all, ingest::parse_firewall_file};
//!
//! let rules = "-p tcp -s 192.168.1.0/24 -d 192.168.2.20 -j ACCEPT\n\
//!              -p tcp -s 192.168.1.18 -d 192.168.2.0/24 -j DROP\n";
//! let parsed = parse_firewall_file(rules.as_bytes(), "fw.rules").unwrap();
//! let table = compose(&parsed.rules).unwrap();
//! let report = check_all(&table);
//! assert_eq!(report.counts.intersection, 1);
//! ```

pub mod bench;
pub mod compose;
pub mod conflict;
pub mod header_space;
pub mod ingest;

pub use compose::{FlowRule, FlowTable};
pub use conflict::{Conflict, ConflictKind, ConflictReport};
pub use header_space::{MatchSet, PacketHeader};
pub use ingest::{Action, SfKind, SfRule};
