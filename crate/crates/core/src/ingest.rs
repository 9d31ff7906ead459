//! Parsers for firewall (iptables-style) and IDS (Snort-style) rule files.
//!
//! Firewall lines use a small flag grammar:
//!
//! ```text
//! -p tcp -s 192.168.1.0/24 -d 192.168.2.20 --sport 1024 --dport 443 \
//!     --mac-source aa:bb:cc:dd:ee:ff --mac-dest 00:11:22:33:44:55 -j ACCEPT
//! ```
//!
//! IDS lines use the Snort rule header:
//!
//! ```text
//! alert tcp 192.168.1.0/24 any -> 192.168.2.0/28 443 (msg:"x"; sid:1;)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. A malformed line
//! yields a [`ParseDiagnostic`] and is skipped; only stream read failures
//! are fatal.

use std::fmt;
use std::io::{self, BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::header_space::{
    Field, FieldParseError, Ipv4Prefix, MacAddr, MatchSet, PortField, ProtoField,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SfKind {
    Firewall,
    Ids,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Allow,
    Deny,
    Inspect,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Allow => "ALLOW",
            Action::Deny => "DENY",
            Action::Inspect => "INSPECT",
        })
    }
}

/// Where a service-function rule came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Origin {
    pub file: String,
    /// 1-based.
    pub line: usize,
    pub raw: String,
}

/// A parsed, source-attributed service-function rule.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SfRule {
    pub kind: SfKind,
    pub matches: MatchSet,
    pub action: Action,
    pub origin: Origin,
}

impl SfRule {
    /// Renders the rule in the grammar of its kind. IDS rules drop any MAC
    /// fields, which that grammar cannot express.
    pub fn to_line(&self) -> String {
        match self.kind {
            SfKind::Firewall => firewall_line(&self.matches, self.action),
            SfKind::Ids => ids_line(&self.matches, self.action),
        }
    }
}

/// Renders a match/action pair as a firewall rule line.
pub fn firewall_line(m: &MatchSet, action: Action) -> String {
    let mut parts: Vec<String> = Vec::new();
    if let Field::Exact(p) = m.proto {
        parts.push(format!("-p {p}"));
    }
    if !m.l3s.is_any() {
        parts.push(format!("-s {}", m.l3s));
    }
    if !m.l3d.is_any() {
        parts.push(format!("-d {}", m.l3d));
    }
    if let Field::Exact(p) = m.l4s {
        parts.push(format!("--sport {p}"));
    }
    if let Field::Exact(p) = m.l4d {
        parts.push(format!("--dport {p}"));
    }
    if let Field::Exact(mac) = m.l2s {
        parts.push(format!("--mac-source {mac}"));
    }
    if let Field::Exact(mac) = m.l2d {
        parts.push(format!("--mac-dest {mac}"));
    }
    let target = match action {
        Action::Allow => "ACCEPT",
        // INSPECT has no firewall target; DROP is the closest.
        Action::Deny | Action::Inspect => "DROP",
    };
    parts.push(format!("-j {target}"));
    parts.join(" ")
}

/// Renders a match/action pair as an IDS rule header with an empty option
/// block.
pub fn ids_line(m: &MatchSet, action: Action) -> String {
    fn any_or<T: fmt::Display>(v: Option<T>) -> String {
        v.map_or_else(|| "any".to_string(), |v| v.to_string())
    }
    let action = match action {
        Action::Allow => "pass",
        Action::Deny => "drop",
        Action::Inspect => "alert",
    };
    let proto = match m.proto {
        Field::Any => "ip".to_string(),
        Field::Exact(p) => p.to_string(),
    };
    let ip = |p: Ipv4Prefix| any_or((!p.is_any()).then_some(p));
    let port = |p: PortField| match p {
        Field::Any => "any".to_string(),
        Field::Exact(v) => v.to_string(),
    };
    format!(
        "{action} {proto} {} {} -> {} {} ()",
        ip(m.l3s),
        port(m.l4s),
        ip(m.l3d),
        port(m.l4d)
    )
}

/// A non-fatal problem with one input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    pub file: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutput {
    pub rules: Vec<SfRule>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

#[derive(Debug, Error, PartialEq, Eq)]
enum LineError {
    #[error(transparent)]
    Field(#[from] FieldParseError),
    #[error("{0}")]
    Syntax(String),
}

fn syntax(msg: impl Into<String>) -> LineError {
    LineError::Syntax(msg.into())
}

pub fn parse_firewall_file<R: Read>(input: R, name: &str) -> Result<ParseOutput, IngestError> {
    parse_lines(input, name, SfKind::Firewall, parse_firewall_line)
}

pub fn parse_ids_file<R: Read>(input: R, name: &str) -> Result<ParseOutput, IngestError> {
    parse_lines(input, name, SfKind::Ids, parse_ids_line)
}

fn parse_lines<R: Read>(
    input: R,
    name: &str,
    kind: SfKind,
    parse_line: fn(&str) -> Result<(MatchSet, Action), LineError>,
) -> Result<ParseOutput, IngestError> {
    let mut out = ParseOutput::default();
    let reader = BufReader::new(input);
    for (idx, bytes) in reader.split(b'\n').enumerate() {
        let line_no = idx + 1;
        let bytes = bytes.map_err(|source| IngestError::Io {
            file: name.to_string(),
            source,
        })?;
        let diag = |message: String| ParseDiagnostic {
            file: name.to_string(),
            line: line_no,
            message,
        };
        let text = match std::str::from_utf8(&bytes) {
            Ok(t) => t.strip_suffix('\r').unwrap_or(t),
            Err(_) => {
                out.diagnostics.push(diag("line is not valid UTF-8".into()));
                continue;
            }
        };
        let trimmed = text.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_line(trimmed) {
            Ok((matches, action)) => out.rules.push(SfRule {
                kind,
                matches,
                action,
                origin: Origin {
                    file: name.to_string(),
                    line: line_no,
                    raw: text.to_string(),
                },
            }),
            Err(e) => out.diagnostics.push(diag(e.to_string())),
        }
    }
    Ok(out)
}

fn parse_port(s: &str) -> Result<u16, LineError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(FieldParseError::Port(s.to_string()).into());
    }
    s.parse()
        .map_err(|_| FieldParseError::Port(s.to_string()).into())
}

fn parse_firewall_line(line: &str) -> Result<(MatchSet, Action), LineError> {
    let mut m = MatchSet::any();
    let mut action = None;
    let mut seen: Vec<&str> = Vec::new();
    let mut tokens = line.split_whitespace();
    while let Some(flag) = tokens.next() {
        let value = tokens
            .next()
            .ok_or_else(|| syntax(format!("missing value for '{flag}'")))?;
        if seen.contains(&flag) {
            return Err(syntax(format!("duplicate option '{flag}'")));
        }
        seen.push(flag);
        match flag {
            "-p" => m.proto = ProtoField::Exact(value.parse()?),
            "-s" => m.l3s = value.parse()?,
            "-d" => m.l3d = value.parse()?,
            "--sport" => m.l4s = Field::Exact(parse_port(value)?),
            "--dport" => m.l4d = Field::Exact(parse_port(value)?),
            "--mac-source" => m.l2s = Field::Exact(value.parse::<MacAddr>()?),
            "--mac-dest" => m.l2d = Field::Exact(value.parse::<MacAddr>()?),
            "-j" => {
                action = Some(match value {
                    "ACCEPT" => Action::Allow,
                    "DROP" => Action::Deny,
                    _ => return Err(syntax(format!("unsupported target '{value}'"))),
                })
            }
            _ => return Err(syntax(format!("unknown option '{flag}'"))),
        }
    }
    let action = action.ok_or_else(|| syntax("missing '-j ACCEPT|DROP'"))?;
    Ok((m, action))
}

fn parse_ids_line(line: &str) -> Result<(MatchSet, Action), LineError> {
    let (header, options) = match line.find('(') {
        Some(i) => (&line[..i], Some(line[i..].trim_end())),
        None => (line, None),
    };
    if let Some(opts) = options {
        if !opts.ends_with(')') {
            return Err(syntax("unterminated rule options"));
        }
    }
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 7 {
        return Err(syntax(format!(
            "expected '<action> <proto> <src> <sport> -> <dst> <dport>', got {} fields",
            fields.len()
        )));
    }
    let action = match fields[0] {
        "alert" => Action::Inspect,
        "drop" => Action::Deny,
        "pass" => Action::Allow,
        other => return Err(syntax(format!("unsupported action '{other}'"))),
    };
    let proto = match fields[1] {
        "ip" => Field::Any,
        p => Field::Exact(p.parse()?),
    };
    match fields[4] {
        "->" => {}
        "<>" => return Err(syntax("bidirectional operator '<>' is not supported")),
        other => return Err(syntax(format!("expected '->', got '{other}'"))),
    }
    let addr = |s: &str| -> Result<Ipv4Prefix, LineError> {
        if s == "any" {
            Ok(Ipv4Prefix::ANY)
        } else {
            Ok(s.parse()?)
        }
    };
    let port = |s: &str| -> Result<PortField, LineError> {
        if s == "any" {
            Ok(Field::Any)
        } else {
            Ok(Field::Exact(parse_port(s)?))
        }
    };
    let m = MatchSet {
        proto,
        l3s: addr(fields[2])?,
        l4s: port(fields[3])?,
        l3d: addr(fields[5])?,
        l4d: port(fields[6])?,
        ..MatchSet::any()
    };
    Ok((m, action))
}
