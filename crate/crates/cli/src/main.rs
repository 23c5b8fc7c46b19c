//! Command-line front end.
//!
//! Subcommands: `compile` (lower a target-spec file to a sentence file plus
//! a report), `eval` (measure a sentence against a target on a grid),
//! `words` (enumerate the vocabulary), `check` (run the oracle-coherence
//! suite). All randomness is derived from `--seed`; identical invocations
//! produce byte-identical output files.
//!
//! Exit codes: 0 success, 2 usage/parse/dimension errors, 3 resource caps,
//! 4 validation failure.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;
use vocabflow::compile::{
    compile_flow_sequence, compile_neural_ode, CompilationReport, CompileOptions,
};
use vocabflow::harness::{lp_error, pointwise_error_dump, sup_error, BoxDomain, GridSpec};
use vocabflow::kron::KronMode;
use vocabflow::target::{parse_target, CompileInput};
use vocabflow::vocab::{format_sentence, parse_sentence, vocabulary};
use vocabflow::Error;

#[derive(Parser)]
#[command(name = "vocabflow", version, about = "Compile flow maps into word sentences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a target-spec file into a sentence file and a report.
    Compile(CompileArgs),
    /// Measure a sentence file against a target on a grid.
    Eval(EvalArgs),
    /// Print the vocabulary for a given dimension.
    Words(WordsArgs),
    /// Run the oracle-coherence self checks.
    Check(CheckArgs),
}

#[derive(Args)]
struct DomainArgs {
    /// Uniform box bounds `lo,hi` applied to every axis.
    #[arg(long, value_name = "LO,HI", allow_hyphen_values = true)]
    domain: Option<String>,
    /// Per-axis bounds file: one `lo hi` pair per line.
    #[arg(long, value_name = "FILE")]
    domain_file: Option<PathBuf>,
}

impl DomainArgs {
    fn resolve(&self, dim: usize) -> Result<BoxDomain<f64>, Error> {
        if let Some(path) = &self.domain_file {
            let text = std::fs::read_to_string(path)?;
            let mut lower = Vec::new();
            let mut upper = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut it = line.split_whitespace();
                let lo: f64 = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::parse(i + 1, 1, "expected `lo hi`"))?;
                let hi: f64 = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::parse(i + 1, 1, "expected `lo hi`"))?;
                lower.push(lo);
                upper.push(hi);
            }
            return BoxDomain::new(lower, upper);
        }
        let spec = self
            .domain
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("missing --domain or --domain-file".into()))?;
        let (lo, hi) = spec
            .split_once(',')
            .ok_or_else(|| Error::InvalidInput(format!("--domain expects `lo,hi`, got {spec:?}")))?;
        let lo: f64 = lo
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("invalid lower bound {lo:?}")))?;
        let hi: f64 = hi
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("invalid upper bound {hi:?}")))?;
        BoxDomain::uniform(dim, lo, hi)
    }
}

#[derive(Args)]
struct CompileArgs {
    /// Target-spec file (TOML).
    #[arg(long, value_name = "FILE")]
    target: PathBuf,
    /// Requested sup-norm error budget.
    #[arg(long)]
    eps: f64,
    #[command(flatten)]
    domain: DomainArgs,
    /// Output sentence file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Output report CSV.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Worker threads (also via VOCABFLOW_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Require strictly positive p and q in every time expansion.
    #[arg(long, conflicts_with = "signed_kronecker")]
    strict_kronecker: bool,
    /// Allow mirrored combinations `q√2 − p`, shortening some expansions.
    #[arg(long)]
    signed_kronecker: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Sentence file to measure.
    #[arg(long, value_name = "FILE")]
    sentence: PathBuf,
    /// Target-spec file (TOML).
    #[arg(long, value_name = "FILE")]
    target: PathBuf,
    #[command(flatten)]
    domain: DomainArgs,
    /// Lattice resolution per axis.
    #[arg(long, default_value_t = 33)]
    grid: usize,
    /// Number of random grid points.
    #[arg(long, default_value_t = 512)]
    grid_random: usize,
    /// Order of the L^p error reported alongside the sup error.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Output report CSV (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Append per-point `x...,err` rows to the report.
    #[arg(long)]
    dump: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct WordsArgs {
    /// Ambient dimension.
    #[arg(long)]
    dim: usize,
}

#[derive(Args)]
struct CheckArgs {
    /// Random draws per check.
    #[arg(long, default_value_t = 200)]
    samples: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output summary CSV (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::ResourceExhausted(_) => 3,
        Error::ValidationFailed { .. } => 4,
        _ => 2,
    }
}

fn init_threads(threads: Option<usize>) {
    let n = threads.or_else(|| {
        std::env::var("VOCABFLOW_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn cmd_compile(args: &CompileArgs) -> Result<(), Error> {
    if args.eps.is_nan() || args.eps <= 0.0 || !args.eps.is_finite() {
        return Err(Error::InvalidInput(format!("--eps must be positive, got {}", args.eps)));
    }
    let start = Instant::now();
    let spec = parse_target(&std::fs::read_to_string(&args.target)?)?;
    let omega = args.domain.resolve(spec.dim())?;
    if omega.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), found: omega.dim() });
    }
    let kron = if args.strict_kronecker {
        KronMode::Strict
    } else if args.signed_kronecker {
        KronMode::Signed
    } else {
        KronMode::Standard
    };
    let opts = CompileOptions { seed: args.seed, kron };

    let (sentence, mut report): (_, CompilationReport) = match spec.to_compile_input()? {
        CompileInput::Flows(flows) => compile_flow_sequence(&flows, args.eps, &omega, &opts, None)?,
        CompileInput::Node(field) => compile_neural_ode(&field, args.eps, &omega, &opts)?,
    };
    report.wall_seconds = start.elapsed().as_secs_f64();

    let mut text = format_sentence(&sentence);
    text.push('\n');
    std::fs::write(&args.out, text)?;
    if let Some(path) = &args.report {
        std::fs::write(path, report.to_csv())?;
    }
    eprintln!(
        "compiled {} words, measured sup error {:.3e} (requested {:.3e}) in {:.2}s",
        report.sentence_len, report.measured_sup_error, report.requested_epsilon, report.wall_seconds
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let sentence = parse_sentence(&std::fs::read_to_string(&args.sentence)?)?;
    let spec = parse_target(&std::fs::read_to_string(&args.target)?)?;
    let target = spec.to_target_map()?;
    let omega = args.domain.resolve(spec.dim())?;
    let grid = GridSpec { lattice_per_axis: args.grid, random: args.grid_random, seed: args.seed };

    let mut report = sup_error(&target, &sentence, &omega, &grid)?;
    report.lp_error = Some(lp_error(&target, &sentence, &omega, args.p, &grid)?);
    report.lp_p = Some(args.p);

    let dump = if args.dump {
        Some(pointwise_error_dump(&target, &sentence, &omega, &grid)?)
    } else {
        None
    };
    let csv = report.to_csv(dump.as_deref());
    match &args.report {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    eprintln!("sup error {:.6e} over {} words", report.sup_error, report.sentence_len);
    Ok(())
}

fn cmd_words(args: &WordsArgs) -> Result<(), Error> {
    if args.dim == 0 {
        return Err(Error::InvalidInput("--dim must be positive".into()));
    }
    let words = vocabulary(args.dim);
    let d = args.dim;
    let mut out = format!("#count {} (4*{d}^2+12*{d})\n", words.len());
    for w in words {
        out.push_str(&w.token());
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn cmd_check(args: &CheckArgs) -> Result<(), Error> {
    if args.samples == 0 {
        return Err(Error::InvalidInput("--samples must be positive".into()));
    }
    let outcomes = vocabflow::check::run_self_checks(args.samples, args.seed);
    let mut csv = String::from("check,samples,max_error,tolerance,pass\n");
    for o in &outcomes {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            o.name, o.samples, o.max_error, o.tolerance, o.pass
        ));
    }
    match &args.report {
        Some(path) => std::fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    if outcomes.iter().all(|o| o.pass) {
        Ok(())
    } else {
        Err(Error::ValidationFailed {
            measured: outcomes.iter().map(|o| o.max_error / o.tolerance).fold(0.0, f64::max),
            requested: 1.0,
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Compile(args) => {
            init_threads(args.threads);
            cmd_compile(args)
        }
        Command::Eval(args) => {
            init_threads(args.threads);
            cmd_eval(args)
        }
        Command::Words(args) => cmd_words(args),
        Command::Check(args) => {
            init_threads(args.threads);
            cmd_check(args)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
