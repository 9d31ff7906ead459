use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use supc_core::bench::{generate, run_bench, BenchResult, GenSpec};
use supc_core::compose::compose;
use supc_core::conflict::check_all_with;
use supc_core::ingest::{parse_firewall_file, parse_ids_file, ParseOutput};
use supc_core::{FlowTable, SfKind, SfRule};

const WORKERS_ENV: &str = "SUPC_WORKERS";

#[derive(Parser)]
#[command(
    name = "supc",
    version,
    about = "Compose firewall and IDS rules into one flow table and check it for conflicts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse rule files and write the composed flow table as JSON.
    Compose(ComposeArgs),
    /// Run conflict detection over a flow table.
    Check(CheckArgs),
    /// Write a synthetic firewall/IDS corpus.
    Gen(GenArgs),
    /// Generate, compose and check in memory, reporting timings.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ComposeArgs {
    /// Firewall rule files.
    #[arg(long = "fw", num_args = 1.., value_name = "FILE")]
    fw: Vec<PathBuf>,
    /// IDS rule files.
    #[arg(long = "ids", num_args = 1.., value_name = "FILE")]
    ids: Vec<PathBuf>,
    #[arg(short = 'o', value_name = "TABLE_JSON")]
    output: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    table: PathBuf,
    #[arg(short = 'o', value_name = "REPORT_JSON")]
    output: PathBuf,
    /// Worker threads; SUPC_WORKERS takes precedence when set.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    total: usize,
    #[arg(long)]
    distinct: usize,
    #[arg(long = "fw-fraction", default_value_t = 0.5)]
    fw_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    /// Firewall rules output.
    #[arg(short = 'o', value_name = "FW_RULES")]
    fw_out: PathBuf,
    /// IDS rules output (also spelled -o-ids).
    #[arg(long = "o-ids", alias = "ids-out", value_name = "IDS_RULES")]
    ids_out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    total: usize,
    #[arg(long)]
    distinct: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "fw-fraction", default_value_t = 0.5)]
    fw_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    json: bool,
}

/// `-o-ids` is not expressible as a clap flag; rewrite it to `--o-ids`.
fn normalize_args(args: impl IntoIterator<Item = String>) -> Vec<String> {
    args.into_iter()
        .map(|a| match a.strip_prefix("-o-ids") {
            Some(rest) if rest.is_empty() || rest.starts_with('=') => format!("--o-ids{rest}"),
            _ => a,
        })
        .collect()
}

fn workers(flag: Option<usize>) -> Result<usize> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{WORKERS_ENV}: expected a positive integer, got '{v}'"))?,
        Err(std::env::VarError::NotPresent) => match flag {
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
        Err(e) => bail!("{WORKERS_ENV}: {e}"),
    };
    if n == 0 {
        bail!("worker count must be at least 1");
    }
    Ok(n)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn parse_inputs(paths: &[PathBuf], kind: SfKind, rules: &mut Vec<SfRule>) -> Result<()> {
    for path in paths {
        let name = path.display().to_string();
        let file = File::open(path).with_context(|| format!("opening {name}"))?;
        let ParseOutput {
            rules: parsed,
            diagnostics,
        } = match kind {
            SfKind::Firewall => parse_firewall_file(file, &name)?,
            SfKind::Ids => parse_ids_file(file, &name)?,
        };
        for d in &diagnostics {
            eprintln!("{d}");
        }
        rules.extend(parsed);
    }
    Ok(())
}

fn run_compose(args: ComposeArgs) -> Result<ExitCode> {
    if args.fw.is_empty() && args.ids.is_empty() {
        bail!("no input files (use --fw and/or --ids)");
    }
    let mut rules = Vec::new();
    parse_inputs(&args.fw, SfKind::Firewall, &mut rules)?;
    parse_inputs(&args.ids, SfKind::Ids, &mut rules)?;
    let table = compose(&rules)?;
    write_file(&args.output, &table.to_json())?;
    eprintln!(
        "composed {} rules into {} flow rules",
        rules.len(),
        table.len()
    );
    if table.is_empty() {
        eprintln!("warning: no rules composed");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_check(args: CheckArgs) -> Result<ExitCode> {
    let n = workers(args.workers)?;
    let text = fs::read_to_string(&args.table)
        .with_context(|| format!("reading {}", args.table.display()))?;
    let table = FlowTable::from_json(&text)
        .with_context(|| format!("{}: invalid flow table", args.table.display()))?;
    let report = check_all_with(&table, n);
    write_file(&args.output, &report.to_json())?;
    let c = &report.counts;
    eprintln!(
        "{} conflicts (intersection {}, subsumption {}, transitivity {}, symmetry {})",
        c.total(),
        c.intersection,
        c.subsumption,
        c.transitivity,
        c.symmetry
    );
    Ok(if c.total() == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn write_rules<'a>(path: &Path, rules: impl Iterator<Item = &'a SfRule>) -> Result<usize> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for r in rules {
        writeln!(out, "{}", r.to_line())?;
        n += 1;
    }
    out.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(n)
}

fn run_gen(args: GenArgs) -> Result<ExitCode> {
    let spec = GenSpec::new(args.total, args.distinct, args.fw_fraction, args.seed)
        .with_overlap(args.overlap);
    let rules = generate(&spec)?;
    let fw = write_rules(
        &args.fw_out,
        rules.iter().filter(|r| r.kind == SfKind::Firewall),
    )?;
    let ids = write_rules(
        &args.ids_out,
        rules.iter().filter(|r| r.kind == SfKind::Ids),
    )?;
    eprintln!("wrote {fw} firewall and {ids} IDS rules");
    Ok(ExitCode::SUCCESS)
}

fn print_table(r: &BenchResult) -> io::Result<()> {
    let mut out = io::stdout().lock();
    let rows: [(&str, String); 9] = [
        ("input rules", r.input_rule_count.to_string()),
        ("composed rules", r.composed_rule_count.to_string()),
        ("compose ms", format!("{:.3}", r.compose_duration_ms)),
        ("check ms", format!("{:.3}", r.check_duration_ms)),
        ("intersection", r.counts.intersection.to_string()),
        ("subsumption", r.counts.subsumption.to_string()),
        ("transitivity", r.counts.transitivity.to_string()),
        ("symmetry", r.counts.symmetry.to_string()),
        ("total conflicts", r.counts.total().to_string()),
    ];
    for (k, v) in rows {
        writeln!(out, "{k:<16} {v:>12}")?;
    }
    Ok(())
}

fn run_bench_cmd(args: BenchArgs) -> Result<ExitCode> {
    let n = workers(args.workers)?;
    let spec = GenSpec::new(args.total, args.distinct, args.fw_fraction, args.seed)
        .with_overlap(args.overlap);
    let result = run_bench(&spec, n)?;
    if args.json {
        let mut text = serde_json::to_string_pretty(&result)?;
        text.push('\n');
        io::stdout().lock().write_all(text.as_bytes())?;
    } else {
        print_table(&result)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(normalize_args(std::env::args()));
    let result = match cli.command {
        Command::Compose(a) => run_compose(a),
        Command::Check(a) => run_check(a),
        Command::Gen(a) => run_gen(a),
        Command::Bench(a) => run_bench_cmd(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("supc: {e:#}");
        ExitCode::from(2)
    })
}
