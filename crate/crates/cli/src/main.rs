//! Command-line front end: closed-form costs, trace analysis, simulation,
//! window sweeps and policy evaluation, with table, CSV and JSON output.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_traits::Signed;

use modesim::auth_state::AccountId;
use modesim::chain_sim::{EveryBlocks, Simulation};
use modesim::gas_model::{cost, CostReport, GasSchedule, Mode};
use modesim::policy::{evaluate_policy, sweep, Policy};
use modesim::rational::{format_fixed, parse_decimal, rat, ratio, Rat};
use modesim::workload::{
    classify, discover_institutional, ingest_trace, window_stats, ClassifiedWorkload,
};

#[derive(Parser)]
#[command(
    name = "modesim",
    version,
    about = "Gas-cost models and a block-level simulator for batched and off-chain Ether transfers"
)]
struct Cli {
    /// Named gas schedule preset.
    #[arg(
        long,
        global = true,
        default_value = "istanbul",
        conflicts_with = "schedule_file"
    )]
    preset: String,
    /// Load the gas schedule from a `key = value` file instead.
    #[arg(long, global = true)]
    schedule_file: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write output to a file instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form gas cost of a workload shape under one mode.
    Cost(CostArgs),
    /// Rank the heaviest senders of a trace.
    Discover(DiscoverArgs),
    /// Classify a trace around an institution and summarize it.
    Classify(TraceArgs),
    /// Per-window funding/spend statistics of a classified trace.
    Stats(StatsArgs),
    /// Execute a classified trace block by block with an itemized meter.
    Simulate(SimulateArgs),
    /// Closed-form amortized costs as the upload window widens.
    Sweep(SweepArgs),
    /// Evaluate dynamic upload policies over a classified trace.
    #[command(name = "policy")]
    PolicyCmd(PolicyArgs),
}

#[derive(Args)]
struct CostArgs {
    /// Funding transfers in the span (decimal).
    #[arg(long)]
    nw: String,
    /// Spend transfers in the span (decimal).
    #[arg(long)]
    nr: String,
    /// Span length in blocks.
    #[arg(long, default_value_t = 1)]
    l: u64,
    /// Digest upload interval in blocks.
    #[arg(long, default_value_t = 1)]
    k: u64,
    /// Execution mode: m1, m2 or m3.
    #[arg(long)]
    mode: String,
}

#[derive(Args)]
struct DiscoverArgs {
    /// Trace CSV path.
    #[arg(long)]
    trace: PathBuf,
    /// Number of senders to list.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct TraceArgs {
    /// Trace CSV path.
    #[arg(long)]
    trace: PathBuf,
    /// Comma-separated institution addresses.
    #[arg(long)]
    institution: Option<String>,
    /// File with one institution address per line (`addr[,label]`).
    #[arg(long)]
    institution_file: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    trace: TraceArgs,
    /// Window size in blocks.
    #[arg(long, default_value_t = 1)]
    window: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    trace: TraceArgs,
    /// Execution mode: m1, m2 or m3.
    #[arg(long)]
    mode: String,
    /// Upload interval in blocks.
    #[arg(long, default_value_t = 1)]
    k: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    trace: TraceArgs,
    /// First window size.
    #[arg(long, default_value_t = 1)]
    k_from: u64,
    /// Last window size, inclusive.
    #[arg(long, default_value_t = 10)]
    k_to: u64,
}

#[derive(Args)]
struct PolicyArgs {
    #[command(flatten)]
    trace: TraceArgs,
    /// Comma-separated policy names: optimize_cost, max_K, every_K.
    #[arg(long)]
    policies: String,
}

/// Usage problems exit with 2, runtime failures with 1.
enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> CliError {
        CliError::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(rendered) => {
            if let Some(path) = &cli.output {
                if let Err(e) = fs::write(path, rendered.as_bytes()) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            } else {
                print!("{rendered}");
            }
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<String, CliError> {
    let (schedule, preset_name) = load_schedule(cli)?;
    match &cli.command {
        Command::Cost(args) => cmd_cost(cli, args, &schedule, &preset_name),
        Command::Discover(args) => cmd_discover(cli, args),
        Command::Classify(args) => cmd_classify(cli, args),
        Command::Stats(args) => cmd_stats(cli, args),
        Command::Simulate(args) => cmd_simulate(cli, args, &schedule),
        Command::Sweep(args) => cmd_sweep(cli, args, &schedule),
        Command::PolicyCmd(args) => cmd_policy(cli, args, &schedule, &preset_name),
    }
}

fn load_schedule(cli: &Cli) -> Result<(GasSchedule, String), CliError> {
    if let Some(path) = &cli.schedule_file {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read schedule file {}", path.display()))?;
        let schedule = GasSchedule::from_config_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".to_string());
        Ok((schedule, name))
    } else {
        let schedule =
            GasSchedule::preset(&cli.preset).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok((schedule, cli.preset.to_ascii_lowercase()))
    }
}

fn parse_mode(s: &str) -> Result<Mode, CliError> {
    Mode::parse(s)
        .ok_or_else(|| CliError::Usage(format!("unknown mode {s:?} (expected m1, m2 or m3)")))
}

fn parse_shape_arg(name: &str, s: &str) -> Result<Rat, CliError> {
    let value = parse_decimal(s).map_err(|e| CliError::Usage(format!("--{name}: {e}")))?;
    if value < rat(0) {
        return Err(CliError::Usage(format!("--{name} must be non-negative")));
    }
    Ok(value)
}

fn cmd_cost(
    cli: &Cli,
    args: &CostArgs,
    schedule: &GasSchedule,
    preset: &str,
) -> Result<String, CliError> {
    let mode = parse_mode(&args.mode)?;
    let shape = modesim::gas_model::WorkloadShape::new(
        parse_shape_arg("nw", &args.nw)?,
        parse_shape_arg("nr", &args.nr)?,
        args.l,
        args.k,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let report = cost(&shape, schedule, mode).map_err(|e| CliError::Usage(e.to_string()))?;
    let table = Table {
        headers: vec![
            "mode",
            "preset",
            "total",
            "amortized",
            "normalized",
            "vs_baseline",
        ],
        rows: vec![vec![
            mode.label().to_string(),
            preset.to_string(),
            report.total_gas().to_string(),
            report.amortized_gas().to_string(),
            format_fixed(&report.normalized, 4),
            baseline_delta(&report, schedule),
        ]],
    };
    Ok(table.render(cli.format))
}

/// Comparison against the per-transfer base fee: "saves X%" below it,
/// otherwise "costs X% more".
fn baseline_delta(report: &CostReport, schedule: &GasSchedule) -> String {
    let pct = (rat(1) - report.amortized / rat(schedule.base_fee as i128)) * rat(100);
    if pct.is_negative() {
        format!("costs {}% more", format_fixed(&pct.abs(), 2))
    } else {
        format!("saves {}%", format_fixed(&pct, 2))
    }
}

fn read_trace(path: &PathBuf) -> Result<modesim::workload::Trace, CliError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read trace {}", path.display()))?;
    ingest_trace(&text).map_err(|e| {
        let mut msg = format!("{}: {e}", path.display());
        for row in e.rows().iter().take(10).skip(1) {
            msg.push_str(&format!("\n  {row}"));
        }
        CliError::Runtime(anyhow!(msg))
    })
}

fn parse_institution(args: &TraceArgs) -> Result<BTreeSet<AccountId>, CliError> {
    let mut set = BTreeSet::new();
    if let Some(list) = &args.institution {
        for part in list.split(',').filter(|p| !p.trim().is_empty()) {
            set.insert(
                AccountId::from_hex(part.trim()).map_err(|e| CliError::Usage(e.to_string()))?,
            );
        }
    }
    if let Some(path) = &args.institution_file {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read institution file {}", path.display()))?;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let addr = line.split(',').next().unwrap_or("").trim();
            set.insert(AccountId::from_hex(addr).map_err(|e| CliError::Usage(e.to_string()))?);
        }
    }
    if set.is_empty() {
        return Err(CliError::Usage(
            "provide --institution or --institution-file".to_string(),
        ));
    }
    Ok(set)
}

fn load_workload(args: &TraceArgs) -> Result<ClassifiedWorkload, CliError> {
    let trace = read_trace(&args.trace)?;
    let institution = parse_institution(args)?;
    Ok(classify(&trace, &institution))
}

fn cmd_discover(cli: &Cli, args: &DiscoverArgs) -> Result<String, CliError> {
    let trace = read_trace(&args.trace)?;
    let ranking = discover_institutional(&trace, args.top);
    let wei_per_eth = rat(1_000_000_000_000_000_000);
    let rows = ranking
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            vec![
                (i + 1).to_string(),
                e.sender.to_hex(),
                e.tx_count.to_string(),
                format_fixed(&e.amount_pct, 2),
                format_fixed(&(rat(e.total_value_wei as i128) / wei_per_eth), 2),
                format_fixed(&e.value_pct, 2),
            ]
        })
        .collect();
    let table = Table {
        headers: vec![
            "rank",
            "sender",
            "tx_count",
            "amount_pct",
            "value_eth",
            "value_pct",
        ],
        rows,
    };
    Ok(table.render(cli.format))
}

fn cmd_classify(cli: &Cli, args: &TraceArgs) -> Result<String, CliError> {
    let w = load_workload(args)?;
    let (first, last) = w.span().unwrap_or((0, 0));
    let (nw, nr) = window_stats(&w, 1);
    let table = Table {
        headers: vec![
            "institution_addresses",
            "funding",
            "spends",
            "receivers",
            "first_block",
            "last_block",
            "nw_per_block",
            "nr_per_block",
        ],
        rows: vec![vec![
            w.institution().len().to_string(),
            w.funding_count().to_string(),
            w.spend_count().to_string(),
            w.receivers().len().to_string(),
            first.to_string(),
            last.to_string(),
            format_fixed(&nw, 4),
            format_fixed(&nr, 4),
        ]],
    };
    Ok(table.render(cli.format))
}

fn cmd_stats(cli: &Cli, args: &StatsArgs) -> Result<String, CliError> {
    if args.window == 0 {
        return Err(CliError::Usage("--window must be at least 1".to_string()));
    }
    let w = load_workload(&args.trace)?;
    let (nw, nr) = window_stats(&w, args.window);
    let table = Table {
        headers: vec!["window", "nw", "nr"],
        rows: vec![vec![
            args.window.to_string(),
            format_fixed(&nw, 4),
            format_fixed(&nr, 4),
        ]],
    };
    Ok(table.render(cli.format))
}

fn cmd_simulate(
    cli: &Cli,
    args: &SimulateArgs,
    schedule: &GasSchedule,
) -> Result<String, CliError> {
    if args.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".to_string()));
    }
    let mode = parse_mode(&args.mode)?;
    let w = load_workload(&args.trace)?;
    let report = Simulation::new(schedule)
        .run(w.requests(), mode, &mut EveryBlocks::new(args.k))
        .map_err(|e| CliError::Runtime(anyhow!(e.to_string())))?;
    if cli.format == Format::Json {
        return Ok(report.to_json() + "\n");
    }
    let amortized = if report.transfer_count == 0 {
        rat(0)
    } else {
        ratio(report.total_gas as i128, report.transfer_count as i128)
    };
    let table = Table {
        headers: vec![
            "mode",
            "k",
            "transfers",
            "total_gas",
            "amortized",
            "normalized",
            "mean_spend_delay",
            "max_spend_delay",
            "base_fee",
            "calldata",
            "internal_transfer",
            "hash",
            "digest_update",
            "sig_verify",
            "proof_bytes",
        ],
        rows: vec![vec![
            mode.label().to_string(),
            args.k.to_string(),
            report.transfer_count.to_string(),
            report.total_gas.to_string(),
            amortized.floor().to_integer().to_string(),
            format_fixed(&report.normalized_cost(schedule), 4),
            format_fixed(&report.mean_spend_delay(), 2),
            report.max_spend_delay().to_string(),
            report.totals.base_fee.to_string(),
            report.totals.calldata.to_string(),
            report.totals.internal_transfer.to_string(),
            report.totals.hash.to_string(),
            report.totals.digest_update.to_string(),
            report.totals.sig_verify.to_string(),
            report.totals.proof_bytes.to_string(),
        ]],
    };
    Ok(table.render(cli.format))
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs, schedule: &GasSchedule) -> Result<String, CliError> {
    if args.k_from == 0 || args.k_to < args.k_from {
        return Err(CliError::Usage(
            "--k-from must be >= 1 and --k-to >= --k-from".to_string(),
        ));
    }
    let w = load_workload(&args.trace)?;
    let rows = sweep(&w, args.k_from..=args.k_to, schedule)
        .map_err(|e| CliError::Runtime(anyhow!(e.to_string())))?;
    let table = Table {
        headers: vec!["k", "m2_amortized", "m3_amortized"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.window.to_string(),
                    r.batched_amortized.to_string(),
                    r.off_chain_amortized.to_string(),
                ]
            })
            .collect(),
    };
    Ok(table.render(cli.format))
}

fn cmd_policy(
    cli: &Cli,
    args: &PolicyArgs,
    schedule: &GasSchedule,
    preset: &str,
) -> Result<String, CliError> {
    let mut policies = Vec::new();
    for name in args.policies.split(',').filter(|p| !p.trim().is_empty()) {
        policies.push(Policy::parse(name).map_err(|e| CliError::Usage(e.to_string()))?);
    }
    if policies.is_empty() {
        return Err(CliError::Usage(
            "--policies must name at least one policy".to_string(),
        ));
    }
    let w = load_workload(&args.trace)?;
    let mut rows = Vec::new();
    for policy in policies {
        let out = evaluate_policy(&w, policy, schedule)
            .map_err(|e| CliError::Runtime(anyhow!(e.to_string())))?;
        rows.push(vec![
            policy.name(),
            preset.to_string(),
            format_fixed(&out.normalized_cost, 4),
            format_fixed(&out.average_delay, 2),
            out.max_delay.to_string(),
            format_fixed(&out.write_intensive_fraction, 4),
        ]);
    }
    let table = Table {
        headers: vec![
            "policy",
            "preset",
            "normalized_cost",
            "average_delay",
            "max_delay",
            "write_intensive_fraction",
        ],
        rows,
    };
    Ok(table.render(cli.format))
}

/// Tabular output rendered as aligned text, CSV, or a JSON array of
/// objects. Key names are the column headers and stay stable.
struct Table {
    headers: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn render(&self, format: Format) -> String {
        match format {
            Format::Table => self.render_text(),
            Format::Csv => self.render_csv(),
            Format::Json => self.render_json(),
        }
    }

    fn render_text(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.len()).collect();
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.len());
            }
        }
        let last = self.headers.len().saturating_sub(1);
        let mut out = String::new();
        let mut line = |cells: &mut dyn Iterator<Item = &str>| {
            for (i, cell) in cells.enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                if i == last {
                    out.push_str(cell);
                } else {
                    out.push_str(&format!("{cell:<w$}", w = widths[i]));
                }
            }
            out.push('\n');
        };
        line(&mut self.headers.iter().copied());
        for row in &self.rows {
            line(&mut row.iter().map(String::as_str));
        }
        out
    }

    fn render_csv(&self) -> String {
        let mut out = self.headers.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    fn render_json(&self) -> String {
        let items: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let map: serde_json::Map<String, serde_json::Value> = self
                    .headers
                    .iter()
                    .zip(row)
                    .map(|(h, cell)| (h.to_string(), serde_json::Value::String(cell.clone())))
                    .collect();
                serde_json::Value::Object(map)
            })
            .collect();
        let mut out = serde_json::to_string_pretty(&items).expect("table serializes");
        out.push('\n');
        out
    }
}
