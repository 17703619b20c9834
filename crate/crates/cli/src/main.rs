use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mtdlag::empirics::{load_sequence, parse_symbol_table, CsvColumn, SequenceFormat};
use mtdlag::estimate::estimate_kernel;
use mtdlag::experiment::{
    self, resolve_model, run_experiment, run_method, ExperimentConfig, Method, ModelSource,
    VerifyOptions, DEFAULT_BURN_IN, DEFAULT_C,
};
use mtdlag::oracle::DEFAULT_BUDGET;
use mtdlag::{Error, LagSet, Selection, SymbolSequence, ThresholdParams};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mtdlag",
    version,
    about = "Lag selection for sparse high-order MTD Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a model and write one symbol per line.
    Simulate(SimulateArgs),
    /// Select the relevant lags of a sequence.
    Select(SelectArgs),
    /// Estimate transition probabilities on a lag set.
    Estimate(EstimateArgs),
    /// Run a replicated selection experiment.
    Experiment(ExperimentArgs),
    /// Run the exact-oracle verification battery on a small model.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset (`experiment1:i,j,d`, `experiment2:i,j,d`, `iid:d`) or JSON model file.
    #[arg(long)]
    model: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    /// Sequence file: whitespace-separated tokens, or CSV with `--column`.
    #[arg(long)]
    input: PathBuf,
    /// Symbol table such as `0,1` or `dry=0,wet=1`; inferred when omitted.
    #[arg(long)]
    symbols: Option<String>,
    /// Read this CSV column (header name or 0-based index).
    #[arg(long)]
    column: Option<String>,
    /// The CSV file has no header row.
    #[arg(long)]
    no_header: bool,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    /// `C` in `alpha = C log n`.
    #[arg(long, default_value_t = DEFAULT_C)]
    alpha_c: f64,
}

#[derive(Args)]
struct MethodArgs {
    /// `pcp`, `fsc:L`, `fs:L`, `alg2:TAU` or `naive`; `fsc` and `fs` take `--ell`.
    #[arg(long)]
    method: String,
    /// Maximal order.
    #[arg(long)]
    d: usize,
    #[arg(long)]
    ell: Option<usize>,
    /// FSC split point (number of symbols in the first part); defaults to n / 2.
    #[arg(long)]
    split: Option<usize>,
    /// PCP candidate set, e.g. `-1,-3,-8`; defaults to all lags `-d..-1`.
    #[arg(long, allow_hyphen_values = true)]
    lags: Option<String>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Lag set to estimate on; when absent `--method` selects it first.
    #[arg(long, allow_hyphen_values = true)]
    lags: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long)]
    split: Option<usize>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated methods, e.g. `fsc:3,fs:2`.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Fixed `C`; grid-searched at the grid sample size when absent.
    #[arg(long)]
    alpha_c: Option<f64>,
    /// FSC split as a fraction of n.
    #[arg(long)]
    split: Option<f64>,
    /// Also report the spread of the all-zero-context estimate.
    #[arg(long)]
    estimate_zero: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    model: String,
    /// Largest number of chain states enumerated.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// Largest conditioning-set size; all subsets when omitted.
    #[arg(long)]
    max_set_size: Option<usize>,
    /// Replications of the threshold coverage test.
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Debug: add this amount to every influence value before checking.
    #[arg(long, default_value_t = 0.0, hide = true)]
    perturb_nu_bar: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Lib(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let res = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Select(a) => select(a),
        Command::Estimate(a) => estimate(a),
        Command::Experiment(a) => experiment(a),
        Command::Verify(a) => verify(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Contract(_) => ExitCode::from(EXIT_USAGE),
                _ => ExitCode::from(EXIT_DATA),
            }
        }
        Err(Failure::Verify(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}

fn sink(out: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CmdResult {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let model = resolve_model(&a.model)?;
    let data = model.simulate(a.n, a.seed, a.burn_in)?;
    let seq = SymbolSequence::new(data, model.alphabet().clone())?;
    let mut w = sink(a.out.as_deref())?;
    seq.write_lines(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_input(a: &InputArgs) -> Result<SymbolSequence, Failure> {
    let format = match &a.column {
        None => SequenceFormat::Whitespace,
        Some(c) => SequenceFormat::Csv {
            column: match c.parse::<usize>() {
                Ok(i) => CsvColumn::Index(i),
                Err(_) => CsvColumn::Name(c.clone()),
            },
            header: !a.no_header,
        },
    };
    let symbols = a.symbols.as_deref().map(parse_symbol_table).transpose()?;
    Ok(load_sequence(&a.input, &format, symbols.as_ref())?)
}

/// `fsc` and `fs` without an explicit budget take it from `--ell`.
fn parse_method(s: &str, ell: Option<usize>) -> Result<Method, Failure> {
    let spec = match (s, ell) {
        ("fsc" | "fs", Some(l)) => format!("{s}:{l}"),
        ("fsc" | "fs", None) => return Err(Failure::Usage(format!("method {s} needs --ell"))),
        _ => s.to_string(),
    };
    spec.parse()
        .map_err(|e: Error| Failure::Usage(e.to_string()))
}

fn params_for(t: &ThresholdArgs, n: usize) -> Result<ThresholdParams, Failure> {
    if !(t.alpha_c > 0.0) {
        return Err(Failure::Usage(format!(
            "--alpha-c must be > 0, got {}",
            t.alpha_c
        )));
    }
    Ok(ThresholdParams::new(
        t.epsilon,
        t.alpha_c * (n as f64).ln(),
        t.mu,
    )?)
}

#[derive(Serialize)]
struct SelectOutput {
    method: String,
    params: SelectParams,
    selected: LagSet,
    trace: mtdlag::SelectionTrace,
}

#[derive(Serialize)]
struct SelectParams {
    n: usize,
    d: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<ThresholdParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
}

fn run_selection(
    seq: &SymbolSequence,
    m: &MethodArgs,
    t: &ThresholdArgs,
) -> Result<(Method, ThresholdParams, Selection), Failure> {
    let method = parse_method(&m.method, m.ell)?;
    if m.lags.is_some() && !matches!(method, Method::Pcp) {
        return Err(Failure::Usage("--lags applies to pcp only".into()));
    }
    let params = params_for(t, seq.len())?;
    let set = m
        .lags
        .as_deref()
        .map(|s| LagSet::parse(m.d, s))
        .transpose()?;
    let sel = run_method(seq, method, m.d, &params, m.split, set.as_ref())?;
    Ok((method, params, sel))
}

fn select(a: SelectArgs) -> CmdResult {
    let seq = read_input(&a.input)?;
    let (method, params, sel) = run_selection(&seq, &a.method, &a.thresholds)?;
    let uses = method.uses_thresholds();
    let out = SelectOutput {
        method: method.to_string(),
        params: SelectParams {
            n: seq.len(),
            d: a.method.d,
            thresholds: uses.then_some(params),
            c: uses.then_some(a.thresholds.alpha_c),
        },
        selected: sel.selected,
        trace: sel.trace,
    };
    write_json(&out, a.out.as_deref())
}

fn estimate(a: EstimateArgs) -> CmdResult {
    let seq = read_input(&a.input)?;
    let lag_set = match (&a.lags, &a.method) {
        (Some(l), None) => {
            let d = a.d.unwrap_or_else(|| {
                l.split(',')
                    .filter_map(|t| t.trim().parse::<i64>().ok())
                    .map(|x| x.unsigned_abs() as usize)
                    .max()
                    .unwrap_or(1)
            });
            LagSet::parse(d, l)?
        }
        (None, Some(m)) => {
            let d =
                a.d.ok_or_else(|| Failure::Usage("--method needs --d".into()))?;
            let margs = MethodArgs {
                method: m.clone(),
                d,
                ell: a.ell,
                split: a.split,
                lags: None,
            };
            run_selection(&seq, &margs, &a.thresholds)?.2.selected
        }
        _ => {
            return Err(Failure::Usage(
                "give exactly one of --lags or --method".into(),
            ))
        }
    };
    if lag_set.is_empty() {
        return Err(
            Error::Degenerate("selected lag set is empty, nothing to estimate".into()).into(),
        );
    }
    let params = params_for(&a.thresholds, seq.len())?;
    let kernel = estimate_kernel(&seq, &lag_set, &params)?;
    match a.format {
        Format::Json => write_json(&kernel, a.out.as_deref()),
        Format::Csv => {
            let mut w = sink(a.out.as_deref())?;
            kernel.write_csv(seq.alphabet(), &mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn split_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Failure::Usage(format!("bad {what} {t:?}")))
        })
        .collect()
}

/// Flags override the fields of `--config`.
fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let (Some(model), Some(methods), Some(ns)) = (&a.model, &a.method, &a.n) else {
                return Err(Failure::Usage(
                    "give --config, or --model, --method and --n".into(),
                ));
            };
            ExperimentConfig::new(
                ModelSource::Named(model.clone()),
                split_list(methods, "method")?,
                split_list(ns, "sample size")?,
                100,
                0,
            )
        }
    };
    if a.config.is_some() {
        if let Some(m) = &a.model {
            cfg.model = ModelSource::Named(m.clone());
        }
        if let Some(m) = &a.method {
            cfg.methods = split_list(m, "method")?;
        }
        if let Some(n) = &a.n {
            cfg.sample_sizes = split_list(n, "sample size")?;
        }
    }
    if let Some(r) = a.reps {
        cfg.replications = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    if let Some(m) = a.mu {
        cfg.mu = m;
    }
    if a.alpha_c.is_some() {
        cfg.alpha_c = a.alpha_c;
    }
    if let Some(s) = a.split {
        cfg.split_fraction = s;
    }
    cfg.estimate_zero |= a.estimate_zero;
    Ok(cfg)
}

fn experiment(a: ExperimentArgs) -> CmdResult {
    let cfg = experiment_config(&a)?;
    let results = run_experiment(&cfg)?;
    match a.format {
        Format::Json => write_json(&results, a.out.as_deref()),
        Format::Csv => {
            let mut w = sink(a.out.as_deref())?;
            experiment::write_rows_csv(&results.rows, &mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn verify(a: VerifyArgs) -> CmdResult {
    let model = resolve_model(&a.model)?;
    let opts = VerifyOptions {
        budget: a.budget,
        max_set_size: a.max_set_size,
        coverage_replications: a.reps,
        coverage_n: a.n,
        seed: a.seed,
        nu_bar_perturbation: a.perturb_nu_bar,
    };
    let outcome = experiment::verify_model(&model, &opts)?;
    if let Some(msg) = &outcome.skipped {
        eprintln!("warning: exact oracle skipped ({msg}); only the model-free checks ran");
    }
    write_json(&outcome, a.out.as_deref())?;
    for c in &outcome.checks {
        eprintln!(
            "{} {} (value {:e}, limit {:e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.limit
        );
    }
    if outcome.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = outcome
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        Err(Failure::Verify(failed.join(", ")))
    }
}
