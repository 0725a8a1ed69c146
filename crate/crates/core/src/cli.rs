//! Command-line pipeline: synthesize → standardize → select → allocate →
//! evaluate, plus the one-shot compare. Every run is seeded and every output
//! file is written atomically (temp file + rename), so identical flags and
//! inputs reproduce identical bytes.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or numeric error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::allocator::{allocate, AllocatorConfig};
use crate::dataset::{load_csv, standardize, synthesize, CovariateTable, SynthSpec};
use crate::design::{fisher_information, parameter_mses, Allocation};
use crate::error::{Error, Result};
use crate::evaluation::compare;
use crate::linalg::SymMatrix;
use crate::selector::{select_sample, Selection, SelectorConfig};

#[derive(Parser)]
#[command(
    name = "dsd",
    version,
    about = "D-optimal subsampling and covariate-balanced allocation for controlled trials"
)]
struct Cli {
    /// Cap the worker thread count (default: machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic covariate CSV with prescribed marginal moments.
    Synth(SynthArgs),
    /// Standardize covariates to zero mean and unit sample SD.
    Standardize(StandardizeArgs),
    /// Select the subsample maximizing the covariance log-determinant.
    Select(SelectArgs),
    /// Split a selection into balanced control and treatment groups.
    Allocate(AllocateArgs),
    /// Report per-parameter estimation MSEs for an allocation.
    Evaluate(EvaluateArgs),
    /// Benchmark the designed sample against random sampling.
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 11_080)]
    rows: usize,
    /// Comma-separated per-covariate means.
    #[arg(long, default_value = "58,30.19,77.6,117.23")]
    means: String,
    /// Comma-separated per-covariate standard deviations.
    #[arg(long, default_value = "13.5,7.45,11.76,71.43")]
    std_devs: String,
    /// Optional k×k correlation matrix as headerless CSV; identity if omitted.
    #[arg(long)]
    correlation: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StandardizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Where to write the per-column mean/SD JSON (default: <output>.params.json).
    #[arg(long)]
    params_output: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Number of rows to keep (the trial's 2n).
    #[arg(long)]
    sample_size: usize,
    /// Removals between from-scratch numeric refreshes.
    #[arg(long, default_value_t = 128)]
    refresh_interval: usize,
    /// Write a JSON sidecar with the scatter log-determinant and removal trace.
    #[arg(long)]
    trace_output: Option<PathBuf>,
}

#[derive(Args)]
struct AllocateArgs {
    /// Covariate table the selection refers to.
    #[arg(long)]
    input: PathBuf,
    /// Selection CSV produced by `select`.
    #[arg(long)]
    selection: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 10_000)]
    max_exchanges: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Allocation CSV produced by `allocate`.
    #[arg(long)]
    allocation: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    /// MSE report JSON path; stdout if omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    sample_size: usize,
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    #[arg(long, default_value_t = 10_000)]
    replicates: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    refresh_interval: usize,
    #[arg(long, default_value_t = 10_000)]
    max_exchanges: usize,
    /// Average the designed arm over every allocator restart.
    #[arg(long)]
    average_restarts: bool,
    /// Comparison report JSON path; the text table always goes to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Parses the argument list and runs the requested subcommand, translating
/// failures into the documented exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Some(threads) = cli.threads {
        // Ignored if a pool already exists (repeat in-process calls); results
        // never depend on the worker count.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Standardize(args) => cmd_standardize(args),
        Command::Select(args) => cmd_select(args),
        Command::Allocate(args) => cmd_allocate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

fn parse_float_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad numeric list entry {s:?}")))
        })
        .collect()
}

fn read_correlation(path: &Path) -> Result<SymMatrix> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_float_list)
        .collect::<Result<_>>()?;
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidConfig(
            "correlation file must be a square numeric matrix".into(),
        ));
    }
    for i in 0..k {
        for j in 0..i {
            if (rows[i][j] - rows[j][i]).abs() > 1e-12 {
                return Err(Error::InvalidConfig(
                    "correlation file must be symmetric".into(),
                ));
            }
        }
    }
    Ok(SymMatrix::from_fn(k, |i, j| rows[i][j]))
}

/// Loads a covariate CSV and standardizes it, the preprocessing step every
/// downstream stage assumes. Already-standardized values pass through
/// unchanged up to float noise.
fn load_standardized(path: &Path) -> Result<CovariateTable> {
    let loaded = load_csv(BufReader::new(File::open(path)?))?;
    if loaded.excluded_rows > 0 {
        eprintln!(
            "note: excluded {} row(s) with missing or malformed covariate data",
            loaded.excluded_rows
        );
    }
    Ok(standardize(&loaded.table)?.0)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let means = parse_float_list(&args.means)?;
    let std_devs = parse_float_list(&args.std_devs)?;
    let correlation = match &args.correlation {
        Some(path) => read_correlation(path)?,
        None => SymMatrix::identity(means.len().max(1)),
    };
    let table = synthesize(&SynthSpec {
        n_rows: args.rows,
        means,
        std_devs,
        correlation,
        seed: args.seed,
    })?;
    write_atomic(&args.output, table.to_csv_string().as_bytes())
}

fn cmd_standardize(args: StandardizeArgs) -> Result<()> {
    let loaded = load_csv(BufReader::new(File::open(&args.input)?))?;
    if loaded.excluded_rows > 0 {
        eprintln!(
            "note: excluded {} row(s) with missing or malformed covariate data",
            loaded.excluded_rows
        );
    }
    let (table, params) = standardize(&loaded.table)?;
    write_atomic(&args.output, table.to_csv_string().as_bytes())?;
    let params_path = args
        .params_output
        .unwrap_or_else(|| args.output.with_extension("params.json"));
    write_atomic(&params_path, serde_json::to_string_pretty(&params)?.as_bytes())
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    let table = load_standardized(&args.input)?;
    let mut config = SelectorConfig::new(args.sample_size);
    config.refresh_interval = args.refresh_interval;
    config.record_trace = args.trace_output.is_some();
    let selection = select_sample(&table, &config)?;
    let mut csv = Vec::new();
    selection.write_csv(&mut csv)?;
    write_atomic(&args.output, &csv)?;
    if let Some(trace_path) = &args.trace_output {
        write_atomic(trace_path, selection.summary_json().as_bytes())?;
    }
    Ok(())
}

fn cmd_allocate(args: AllocateArgs) -> Result<()> {
    let table = load_standardized(&args.input)?;
    let selection = Selection::read_csv(BufReader::new(File::open(&args.selection)?), &table)?;
    let mut config = AllocatorConfig::new(args.seed);
    config.restarts = args.restarts;
    config.max_exchanges = args.max_exchanges;
    let outcome = allocate(&selection, &table, &config)?;
    let mut csv = Vec::new();
    outcome.allocation.write_csv(&mut csv)?;
    write_atomic(&args.output, &csv)?;

    #[derive(Serialize)]
    struct Sidecar {
        criterion: f64,
        restart: usize,
        exchanges: usize,
    }
    let sidecar = serde_json::to_string_pretty(&Sidecar {
        criterion: outcome.criterion,
        restart: outcome.restart,
        exchanges: outcome.exchanges,
    })?;
    write_atomic(&args.output.with_extension("json"), sidecar.as_bytes())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let table = load_standardized(&args.input)?;
    let allocation = Allocation::read_csv(BufReader::new(File::open(&args.allocation)?))?;
    let info = fisher_information(&allocation, &table, args.sigma)?;
    let report = parameter_mses(&info);
    let json = serde_json::to_string_pretty(&report)?;
    match &args.output {
        Some(path) => write_atomic(path, json.as_bytes()),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let table = load_standardized(&args.input)?;
    let mut selector_cfg = SelectorConfig::new(args.sample_size);
    selector_cfg.refresh_interval = args.refresh_interval;
    let mut allocator_cfg = AllocatorConfig::new(args.seed);
    allocator_cfg.restarts = args.restarts;
    allocator_cfg.max_exchanges = args.max_exchanges;
    let report = compare(
        &table,
        args.sample_size,
        args.sigma,
        args.replicates,
        &selector_cfg,
        &allocator_cfg,
        args.seed,
        args.average_restarts,
    )?;
    print!("{}", report.render_text());
    if let Some(path) = &args.output {
        write_atomic(path, report.to_json().as_bytes())?;
    }
    Ok(())
}
