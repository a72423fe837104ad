//! Command-line front end: `solve`, `simulate`, `check-equivalence` and `bench`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::equivalence::{compare_trials, EquivalenceSetup};
use crate::error::{Result, SpiceError};
use crate::harness::{
    bench, monotonicity_violations, run_sweep, synthesize, write_results, BenchSettings, Scenario,
};
use crate::io::{
    read_dictionary_csv, read_signal_csv, write_csv, write_estimate_csv, write_trace_csv,
};
use crate::model::{build_sinusoid_dictionary, compute_weights, Dictionary, Signal};
use crate::oracle::{powers_from_amplitudes, solve_penalized, PenalizedProblem};
use crate::solver::{solve, NoiseMode, SpiceConfig};
use crate::spectrum::{pick_peaks, DEFAULT_THRESHOLD};
use crate::{FORMAT_VERSION, VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

fn long_version() -> &'static str {
    Box::leak(format!("{VERSION} (file formats {FORMAT_VERSION})").into_boxed_str())
}

#[derive(Debug, Parser)]
#[command(name = "rq-spice", version = long_version(), about = "Sparse covariance-fitting estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a sparse amplitude vector for one observation.
    Solve(SolveArgs),
    /// Run a Monte-Carlo sweep described by a scenario file.
    Simulate(SimulateArgs),
    /// Compare the fixed-point solver with the penalized-regression oracle on random instances.
    CheckEquivalence(EquivalenceArgs),
    /// Time one solve on a large sinusoid grid.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    #[arg(long, default_value = "uniform")]
    pub noise_mode: NoiseMode,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
}

impl SolverArgs {
    fn config(&self) -> Result<SpiceConfig> {
        let config = SpiceConfig {
            r: self.r,
            q: self.q,
            noise_mode: self.noise_mode,
            rel_tolerance: self.tol,
            max_iterations: self.max_iter,
            ..SpiceConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Scenario JSON (one trial is synthesized) or signal CSV with columns `real,imag`.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Dictionary CSV (column-major `real,imag` rows) for CSV input.
    #[arg(long, conflicts_with = "grid")]
    pub dictionary: Option<PathBuf>,
    /// Sinusoid grid size for CSV input.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Trial index to synthesize from a scenario.
    #[arg(long, default_value_t = 0)]
    pub trial: usize,
    /// SNR for scenario input; defaults to the scenario's first level.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "estimate.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Writes the picked peaks in the estimate schema.
    #[arg(long)]
    pub peaks: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Caps trial-level parallelism; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EquivalenceArgs {
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "uniform")]
    pub noise_mode: NoiseMode,
    #[arg(long, default_value_t = 3)]
    pub sparsity: usize,
    #[arg(long, default_value_t = 15.0)]
    pub snr: f64,
    /// CSV destination; the table goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 10000)]
    pub m: usize,
    #[arg(long, default_value_t = 5.0)]
    pub q: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Number of unit-magnitude sinusoids.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 10.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "uniform")]
    pub noise_mode: NoiseMode,
}

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
    Failed,
}

/// Exit code for an error: bad input and parameters map to [`EXIT_INVALID`].
pub fn exit_code(err: &SpiceError) -> i32 {
    match err {
        SpiceError::InvalidParameter(_)
        | SpiceError::Dimension(_)
        | SpiceError::DegenerateInput(_)
        | SpiceError::Scenario(_)
        | SpiceError::Json(_)
        | SpiceError::Csv(_)
        | SpiceError::Io(_) => EXIT_INVALID,
        _ => EXIT_FAILURE,
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Solve(args) => run_solve(&args),
        Command::Simulate(args) => run_simulate(&args),
        Command::CheckEquivalence(args) => run_equivalence(&args),
        Command::Bench(args) => run_bench(&args),
    };
    match result {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::NotConverged) => EXIT_NOT_CONVERGED,
        Ok(Status::Failed) => EXIT_FAILURE,
        Err(e) => {
            eprintln!("rq-spice: {e}");
            exit_code(&e)
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(SpiceError::InvalidParameter(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn load_problem(args: &SolveArgs) -> Result<(Signal, Dictionary)> {
    require_file(&args.input)?;
    let is_json = args
        .input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let mut scenario = Scenario::load(&args.input)?;
        if let Some(seed) = args.seed {
            scenario.seed = seed;
        }
        let snr = args.snr.unwrap_or(scenario.snr_db[0]);
        let data = synthesize(&scenario, args.trial, snr)?;
        let dict = build_sinusoid_dictionary(scenario.n_samples, scenario.n_grid)?;
        return Ok((data.signal, dict));
    }
    let signal = read_signal_csv(&args.input)?;
    let dict = match (&args.dictionary, args.grid) {
        (Some(path), _) => {
            require_file(path)?;
            read_dictionary_csv(path, signal.len())?
        }
        (None, Some(m)) => build_sinusoid_dictionary(signal.len(), m)?,
        (None, None) => {
            return Err(SpiceError::InvalidParameter(
                "signal CSV input needs --dictionary or --grid".into(),
            ))
        }
    };
    Ok((signal, dict))
}

fn run_solve(args: &SolveArgs) -> Result<Status> {
    let config = args.solver.config()?;
    if !(args.threshold > 0.0 && args.threshold <= 1.0) {
        return Err(SpiceError::InvalidParameter(format!(
            "threshold must lie in (0, 1], got {}",
            args.threshold
        )));
    }
    if config.r != 1.0 && args.trace.is_some() {
        return Err(SpiceError::InvalidParameter(
            "--trace is only available for r = 1".into(),
        ));
    }
    let (signal, dict) = load_problem(args)?;

    let (x_hat, p, converged) = if config.r == 1.0 {
        let solution = solve(&signal, &dict, &config)?;
        if let Some(path) = &args.trace {
            write_trace_csv(path, &solution.trace)?;
        }
        log::info!(
            "{} iterations, converged = {}",
            solution.iterations,
            solution.converged
        );
        (solution.x_hat, solution.state.p, solution.converged)
    } else {
        let weights = compute_weights(&signal, &dict)?;
        let problem = PenalizedProblem::for_mode(config.noise_mode, &weights, config.r, config.q)?;
        let sol = solve_penalized(&problem, &signal, &dict)?;
        let p = powers_from_amplitudes(&sol.x, &weights.signal, config.r);
        (sol.x, p, sol.converged)
    };
    write_estimate_csv(&args.out, &x_hat, &p, &dict, None)?;
    if let Some(path) = &args.peaks {
        let grid: Vec<f64> = match dict.grid_frequencies() {
            Some(g) => g.to_vec(),
            None => (0..dict.n_atoms()).map(|k| k as f64).collect(),
        };
        let estimate = pick_peaks(&x_hat, &grid, args.threshold)?;
        write_estimate_csv(path, &x_hat, &p, &dict, Some(&estimate.support))?;
    }
    if converged {
        Ok(Status::Ok)
    } else {
        eprintln!("rq-spice: solver stopped at the iteration limit before converging");
        Ok(Status::NotConverged)
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<Status> {
    if args.threads == Some(0) {
        return Err(SpiceError::InvalidParameter(
            "--threads must be at least 1".into(),
        ));
    }
    require_file(&args.scenario)?;
    let mut scenario = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let rows = run_sweep(&scenario, args.threads)?;
    let paths = write_results(&rows, &args.out)?;
    for path in &paths {
        println!("wrote {}", path.display());
    }
    for (lo, hi) in monotonicity_violations(&rows) {
        println!(
            "note: {} q={} support probability drops from {:.3} at {} dB to {:.3} at {} dB",
            lo.noise_mode,
            lo.q,
            lo.support_probability,
            lo.snr_db,
            hi.support_probability,
            hi.snr_db
        );
    }
    Ok(Status::Ok)
}

fn run_equivalence(args: &EquivalenceArgs) -> Result<Status> {
    if args.r != 1.0 {
        return Err(SpiceError::InvalidParameter(format!(
            "the fixed-point solver needs r = 1, got {}",
            args.r
        )));
    }
    if args.trials == 0 || args.sparsity > args.m {
        return Err(SpiceError::InvalidParameter(
            "need trials >= 1 and sparsity <= m".into(),
        ));
    }
    SpiceConfig::new(args.q, args.noise_mode).validate()?;
    let setup = EquivalenceSetup {
        n_samples: args.n,
        n_atoms: args.m,
        sparsity: args.sparsity,
        snr_db: args.snr,
        q: args.q,
        r: args.r,
        noise_mode: args.noise_mode,
        seed: args.seed,
    };
    let rows = compare_trials(&setup, args.trials)?;
    match &args.out {
        Some(path) => write_csv(path, &rows)?,
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    eprintln!("{} of {} trials passed", rows.len() - failed, rows.len());
    Ok(if failed == 0 {
        Status::Ok
    } else {
        Status::Failed
    })
}

fn run_bench(args: &BenchArgs) -> Result<Status> {
    let config = SpiceConfig {
        r: args.r,
        q: args.q,
        noise_mode: args.noise_mode,
        ..SpiceConfig::default()
    };
    config.validate()?;
    let report = bench(&BenchSettings {
        n_samples: args.n,
        n_grid: args.m,
        components: args.k,
        snr_db: args.snr,
        seed: args.seed,
        config,
    })?;
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "N={} M={} q={} r={}: solve {:.3} s ({} iterations, converged = {}), setup {:.3} s, active set {}, support matched = {}",
        report.n_samples,
        report.n_grid,
        report.q,
        report.r,
        report.solve_seconds,
        report.iterations,
        report.converged,
        report.setup_seconds,
        report.active_set,
        report.support_matched
    )?;
    writeln!(out, "{}", serde_json::to_string(&report)?)?;
    Ok(if report.converged {
        Status::Ok
    } else {
        Status::NotConverged
    })
}
