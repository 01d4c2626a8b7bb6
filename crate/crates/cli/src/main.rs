//! `hashtrick`: bounds, exact oracles, grid experiments and the verification
//! suite from one binary.
//!
//! Exit codes: 0 on success, 1 when verification fails or a run hits an I/O
//! or budget error, 2 on usage errors and invalid parameters.

mod parse;
mod verify;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hashtrick::bounds::{nu_theoretical, TradeoffQuery, DEFAULT_C, DEFAULT_D, DEFAULT_SCALE};
use hashtrick::experiment::{
    border_analysis, in_window, nu_estimates, ratio_analysis, read_results_path, run_grid_to_csv,
    write_border_csv, write_nu_csv, write_ratio_branches_csv, write_ratio_csv, GridSpec, GridStats,
    DEFAULT_SEED,
};
use hashtrick::oracle::{
    count_eulerian_graphs, exact_delta, exact_moment_bruteforce, exact_moment_sequences, to_f64,
    ExactVector,
};
use hashtrick::Error;
use num_rational::BigRational;
use serde::Serialize;
use serde_json::json;

const RESULTS_FILE: &str = "results.csv";
const NU_FILE: &str = "nu.csv";
const RATIO_FILE: &str = "ratios.csv";
const RATIO_BRANCH_FILE: &str = "ratio_branches.csv";
const BORDER_FILE: &str = "border.csv";

#[derive(Parser)]
#[command(
    name = "hashtrick",
    version,
    about = "Feature hashing norm-preservation bounds and experiments"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the tradeoff nu(m, eps, delta) and print it as JSON.
    Bounds(BoundsArgs),
    /// Run an exact enumeration oracle and print the rational result as JSON.
    Exact(ExactArgs),
    /// Run the Monte-Carlo grid and write results.csv.
    Experiment(ExperimentArgs),
    /// Derive nu, ratio and border tables from results.csv.
    Analyze(AnalyzeArgs),
    /// Run the oracle cross-checks and statistical checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Constants {
    #[arg(long = "C", default_value_t = DEFAULT_C)]
    c: f64,
    #[arg(long = "D", default_value_t = DEFAULT_D)]
    d: f64,
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    scale: f64,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    m: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    #[command(flatten)]
    constants: Constants,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Delta,
    MomentBf,
    MomentSeq,
    EulerCount,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long)]
    m: Option<usize>,
    /// Support size of the flat unit vector.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    r: Option<u32>,
    #[arg(long)]
    alpha: Option<u32>,
    #[arg(long)]
    beta: Option<u32>,
    /// Maximum enumeration size; decimal or `2^N`.
    #[arg(long, value_parser = parse::budget, default_value = "2^26")]
    budget: u128,
}

#[derive(Args)]
struct SeedArg {
    /// Master seed, decimal or 0x-hex.
    #[arg(long, env = "HASHTRICK_SEED", value_parser = parse::seed)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    out: PathBuf,
    /// Target dimensions, e.g. `2^6..2^12` or `64,128`.
    #[arg(long, value_parser = parse::u64_list)]
    m: Option<parse::U64List>,
    #[arg(long, value_parser = parse::u64_list)]
    k: Option<parse::U64List>,
    #[arg(long, value_parser = parse::f64_list)]
    eps: Option<parse::F64List>,
    #[arg(long, value_parser = parse::f64_list)]
    delta: Option<parse::F64List>,
    #[arg(long, value_parser = parse::count)]
    trials: Option<u64>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Directory holding results.csv; tables are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Failure probabilities to evaluate; defaults to the grid recorded in
    /// the results file.
    #[arg(long, value_parser = parse::f64_list)]
    delta: Option<parse::F64List>,
    /// Lower edge constant of the analysis window.
    #[arg(long = "C", default_value_t = DEFAULT_C)]
    c: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_parser = parse::budget, default_value = "2^26")]
    budget: u128,
    /// Trials per Monte-Carlo cell.
    #[arg(long, value_parser = parse::count, default_value = "2^14")]
    trials: u64,
    #[command(flatten)]
    seed: SeedArg,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn print_json(value: &impl Serialize) -> hashtrick::Result<()> {
    println!(
        "{}",
        serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?
    );
    Ok(())
}

fn rational_json(q: &BigRational) -> serde_json::Value {
    json!({
        "numerator": q.numer().to_string(),
        "denominator": q.denom().to_string(),
        "approx": to_f64(q),
    })
}

/// Creates `dir` and proves a file can be written there.
fn ensure_writable(dir: &Path) -> hashtrick::Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".hashtrick-write-probe");
    File::create(&probe)?;
    fs::remove_file(probe)?;
    Ok(())
}

fn cmd_bounds(args: BoundsArgs) -> hashtrick::Result<ExitCode> {
    let q = TradeoffQuery::new(args.m, args.eps, args.delta).with_constants(
        args.constants.c,
        args.constants.d,
        args.constants.scale,
    );
    print_json(&nu_theoretical(&q)?)?;
    Ok(ExitCode::SUCCESS)
}

fn need<T>(v: Option<T>, flag: &str, mode: &str) -> hashtrick::Result<T> {
    v.ok_or_else(|| usage(format!("--mode {mode} requires --{flag}")))
}

fn cmd_exact(args: ExactArgs) -> hashtrick::Result<ExitCode> {
    let out = match args.mode {
        Mode::Delta => {
            let (m, k, eps) = (
                need(args.m, "m", "delta")?,
                need(args.k, "k", "delta")?,
                need(args.eps, "eps", "delta")?,
            );
            let q = exact_delta(m, k, eps, args.budget)?;
            json!({ "mode": "delta", "m": m, "k": k, "eps": eps, "value": rational_json(&q) })
        }
        Mode::MomentBf | Mode::MomentSeq => {
            let name = if matches!(args.mode, Mode::MomentBf) {
                "moment-bf"
            } else {
                "moment-seq"
            };
            let (m, k, r) = (
                need(args.m, "m", name)?,
                need(args.k, "k", name)?,
                need(args.r, "r", name)?,
            );
            let x = ExactVector::flat_unit(k);
            let q = match args.mode {
                Mode::MomentBf => exact_moment_bruteforce(m, &x, r, args.budget)?,
                _ => exact_moment_sequences(m, &x, r, args.budget)?,
            };
            json!({ "mode": name, "m": m, "k": k, "r": r, "value": rational_json(&q) })
        }
        Mode::EulerCount => {
            let (alpha, beta, r) = (
                need(args.alpha, "alpha", "euler-count")?,
                need(args.beta, "beta", "euler-count")?,
                need(args.r, "r", "euler-count")?,
            );
            let res = count_eulerian_graphs(alpha, beta, r, args.budget)?;
            let mut v = serde_json::to_value(&res).map_err(|e| Error::Io(e.into()))?;
            v["mode"] = json!("euler-count");
            if !res.log2_ratio_per_r.is_finite() {
                v["log2_ratio_per_r"] = json!("inf");
            }
            v
        }
    };
    print_json(&out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_experiment(args: ExperimentArgs) -> hashtrick::Result<ExitCode> {
    let mut spec = GridSpec::default();
    if let Some(v) = args.m {
        spec.m_values = v.0;
    }
    if let Some(v) = args.k {
        spec.k_values = v.0;
    }
    if let Some(v) = args.eps {
        spec.eps_values = v.0;
    }
    if let Some(v) = args.delta {
        spec.delta_values = v.0;
    }
    if let Some(t) = args.trials {
        spec.trials_per_cell = t;
    }
    spec.master_seed = args.seed.seed.unwrap_or(DEFAULT_SEED);
    spec.validate()?;
    ensure_writable(&args.out)?;
    let path = args.out.join(RESULTS_FILE);
    let cells = run_grid_to_csv(&spec, &path)?;
    print_json(&json!({
        "results": path.display().to_string(),
        "cells": cells.len(),
        "master_seed": format!("{:#018x}", spec.master_seed),
        "trials_per_cell": spec.trials_per_cell,
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(args: AnalyzeArgs) -> hashtrick::Result<ExitCode> {
    if !(args.c > 0.0 && args.c.is_finite()) {
        return Err(usage(format!("--C must be positive, got {}", args.c)));
    }
    ensure_writable(&args.out)?;
    let results = read_results_path(&args.out.join(RESULTS_FILE))?;
    let deltas = match args.delta {
        Some(d) => d.0,
        None => match results.config.iter().find(|(k, _)| k == "delta_values") {
            Some((_, v)) => parse::f64_list(v).map_err(usage)?.0,
            None => GridSpec::default().delta_values,
        },
    };
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
        return Err(usage(format!("delta values must lie in (0, 1], got {d}")));
    }
    let stats = GridStats::from_cells(results.cells)?;
    let estimates = nu_estimates(&stats, &deltas)?;
    let records = ratio_analysis(&estimates, args.c);
    let border = border_analysis(&stats);

    let mut config = results.config;
    config.push(("window_c".into(), args.c.to_string()));
    let create = |name: &str| -> hashtrick::Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(args.out.join(name))?))
    };
    write_nu_csv(create(NU_FILE)?, &config, &estimates)?;
    write_ratio_csv(create(RATIO_FILE)?, &config, &records)?;
    write_ratio_branches_csv(create(RATIO_BRANCH_FILE)?, &config, &records)?;
    write_border_csv(create(BORDER_FILE)?, &config, &border)?;

    let min_ratio = |pred: &dyn Fn(u64) -> bool| {
        records
            .iter()
            .filter(|r| pred(r.k_star))
            .map(|r| r.ratio)
            .min_by(f64::total_cmp)
    };
    let undefined_in_window = estimates
        .iter()
        .filter(|e| !e.defined() && in_window(e.m, e.eps, e.delta, args.c))
        .count();
    print_json(&json!({
        "ratio_records": records.len(),
        "min_ratio": min_ratio(&|_| true),
        "min_ratio_k_at_least_8": min_ratio(&|k| k >= 8),
        "undefined_in_window": undefined_in_window,
        "max_border_product": border.iter().map(|b| b.product).max_by(f64::total_cmp),
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> hashtrick::Result<ExitCode> {
    if let Some(out) = &args.out {
        if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_writable(dir)?;
        }
    }
    if args.trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    let report = verify::run(&verify::Settings {
        budget: args.budget,
        trials: args.trials,
        seed: args.seed.seed.unwrap_or(DEFAULT_SEED),
    });
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.into()))?;
    if let Some(out) = &args.out {
        fs::write(out, &text)?;
    }
    println!("{text}");
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("global thread pool is configured once");
    }
    let result = match cli.command {
        Command::Bounds(a) => cmd_bounds(a),
        Command::Exact(a) => cmd_exact(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidParameter(_) | Error::Parse { .. } | Error::MissingCells(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}
