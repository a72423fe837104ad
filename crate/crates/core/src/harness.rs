//! Seeded Monte-Carlo sweeps over noise level and solver settings for line-spectrum scenarios.
//!
//! A scenario is a JSON document:
//!
//! ```json
//! {
//!   "n_samples": 50,
//!   "n_grid": 1000,
//!   "components": [
//!     { "magnitude": 1.0 },
//!     { "frequency": 0.31, "magnitude": 1.0, "phase": { "fixed": 0.5 } }
//!   ],
//!   "min_separation": 0.01,
//!   "snr_db": [0.0, 10.0, 20.0],
//!   "trials": 200,
//!   "seed": 1,
//!   "solvers": [{ "q": 1.0 }, { "q": 2.0, "noise_mode": "uniform" }],
//!   "trim": 0
//! }
//! ```
//!
//! Missing component frequencies are drawn uniformly on `(0, 1]` per trial, phases default to
//! uniform on `(0, 2pi]`, `min_separation` defaults to `1 / (2 n_samples)` and each solver entry
//! takes the remaining fields from [`SpiceConfig::default`]. Frequencies, phases and noise for a
//! trial come from `trial_rng(seed, trial)`, so every solver and SNR level sees the same draws.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiceError};
use crate::io::{ensure_dir, write_csv};
use crate::model::{build_sinusoid_dictionary, Dictionary, Signal, C64};
use crate::rng::trial_rng;
use crate::solver::{solve, NoiseMode, SpiceConfig};
use crate::spectrum::{
    circular_distance, match_support, pick_peaks, rmse_frequencies, DEFAULT_GRID_TOLERANCE,
    DEFAULT_THRESHOLD,
};

/// Draws allowed when placing random frequencies with the required separation.
pub const MAX_SEPARATION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    #[default]
    Random,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    #[serde(default)]
    pub frequency: Option<f64>,
    #[serde(default = "unit")]
    pub magnitude: f64,
    #[serde(default)]
    pub phase: PhaseMode,
}

fn unit() -> f64 {
    1.0
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_grid_tolerance() -> usize {
    DEFAULT_GRID_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_samples: usize,
    pub n_grid: usize,
    pub components: Vec<Component>,
    #[serde(default)]
    pub min_separation: Option<f64>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub solvers: Vec<SpiceConfig>,
    /// Number of largest per-trial RMSE values dropped for the trimmed column.
    #[serde(default)]
    pub trim: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_grid_tolerance")]
    pub grid_tolerance: usize,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn separation(&self) -> f64 {
        self.min_separation
            .unwrap_or(1.0 / (2.0 * self.n_samples as f64))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SpiceError::Scenario(msg));
        if self.n_samples < 2 || self.n_grid < 1 {
            return fail(format!(
                "need n_samples >= 2 and n_grid >= 1, got {} and {}",
                self.n_samples, self.n_grid
            ));
        }
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if self.snr_db.is_empty() || self.solvers.is_empty() {
            return fail("snr_db and solvers must be non-empty".into());
        }
        if self.snr_db.iter().any(|s| s.is_nan()) {
            return fail("snr_db entries must be numbers".into());
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return fail(format!(
                "threshold must lie in (0, 1], got {}",
                self.threshold
            ));
        }
        let sep = self.separation();
        if !(0.0..1.0).contains(&sep) {
            return fail(format!("min_separation must lie in [0, 1), got {sep}"));
        }
        for c in &self.components {
            if !(c.magnitude.is_finite() && c.magnitude >= 0.0) {
                return fail(format!(
                    "component magnitude must be finite and >= 0, got {}",
                    c.magnitude
                ));
            }
            if let Some(f) = c.frequency {
                if !(f > 0.0 && f <= 1.0) {
                    return fail(format!("component frequency must lie in (0, 1], got {f}"));
                }
            }
        }
        let fixed: Vec<f64> = self.components.iter().filter_map(|c| c.frequency).collect();
        if !well_separated(&fixed, sep) {
            return fail(format!("fixed frequencies are closer than {sep}"));
        }
        for config in &self.solvers {
            config.validate()?;
        }
        Ok(())
    }
}

fn well_separated(freqs: &[f64], sep: f64) -> bool {
    freqs.iter().enumerate().all(|(i, &a)| {
        freqs[i + 1..]
            .iter()
            .all(|&b| circular_distance(a, b) >= sep)
    })
}

/// One synthesized observation and the frequencies that generated it.
#[derive(Debug, Clone)]
pub struct Synthesized {
    pub signal: Signal,
    pub clean: DVector<C64>,
    pub frequencies: Vec<f64>,
    pub noise_variance: f64,
}

/// Builds trial `trial` of the scenario at the given SNR.
///
/// Noise has per-sample variance `P_y 10^{-snr/10}` with `P_y = ||y_clean||^2 / N`; an infinite
/// SNR gives the clean signal.
pub fn synthesize(scenario: &Scenario, trial: usize, snr_db: f64) -> Result<Synthesized> {
    let mut rng = trial_rng(scenario.seed, trial as u64);
    let sep = scenario.separation();
    let fixed: Vec<f64> = scenario
        .components
        .iter()
        .filter_map(|c| c.frequency)
        .collect();
    let mut frequencies = Vec::new();
    let mut placed = false;
    for _ in 0..MAX_SEPARATION_ATTEMPTS {
        frequencies = scenario
            .components
            .iter()
            .map(|c| c.frequency.unwrap_or_else(|| 1.0 - rng.random::<f64>()))
            .collect();
        if frequencies.len() == fixed.len() || well_separated(&frequencies, sep) {
            placed = true;
            break;
        }
    }
    if !placed {
        return Err(SpiceError::Scenario(format!(
            "could not place {} frequencies {sep} apart in {MAX_SEPARATION_ATTEMPTS} attempts",
            frequencies.len()
        )));
    }
    let phases: Vec<f64> = scenario
        .components
        .iter()
        .map(|c| match c.phase {
            PhaseMode::Random => TAU * (1.0 - rng.random::<f64>()),
            PhaseMode::Fixed(phi) => phi,
        })
        .collect();

    let n = scenario.n_samples;
    let clean = DVector::from_fn(n, |t, _| {
        scenario
            .components
            .iter()
            .zip(&frequencies)
            .zip(&phases)
            .map(|((c, f), phi)| C64::from_polar(c.magnitude, TAU * f * t as f64 + phi))
            .sum::<C64>()
    });
    let power = clean.norm_squared() / n as f64;
    let noise_variance = power * 10f64.powf(-snr_db / 10.0);
    let amp = (noise_variance / 2.0).sqrt();
    let samples = DVector::from_fn(n, |t, _| {
        let g1: f64 = StandardNormal.sample(&mut rng);
        let g2: f64 = StandardNormal.sample(&mut rng);
        clean[t] + C64::new(g1, g2) * amp
    });
    Ok(Synthesized {
        signal: Signal::new(samples)?,
        clean,
        frequencies,
        noise_variance,
    })
}

/// Aggregated outcome for one (solver, SNR) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub q: f64,
    pub r: f64,
    pub snr_db: f64,
    pub support_probability: f64,
    /// Mean per-trial RMSE over included trials; absent when every trial was excluded.
    pub rmse: Option<f64>,
    pub excluded_trials: usize,
    /// Mean wall time of a solver run in seconds; the only non-deterministic column.
    pub mean_runtime: f64,
    pub trimmed_rmse: Option<f64>,
    pub noise_mode: NoiseMode,
    pub nonconverged_trials: usize,
}

#[derive(Debug, Clone)]
struct TrialOutcome {
    matched: bool,
    rmse: Option<f64>,
    converged: bool,
    runtime: f64,
}

fn run_trial(
    scenario: &Scenario,
    dict: &Dictionary,
    config: &SpiceConfig,
    trial: usize,
    snr_db: f64,
) -> Result<TrialOutcome> {
    let data = synthesize(scenario, trial, snr_db)?;
    let spacing = 1.0 / scenario.n_grid as f64;
    let start = Instant::now();
    let solved = solve(&data.signal, dict, config);
    let runtime = start.elapsed().as_secs_f64();
    let solution = match solved {
        Ok(s) => s,
        Err(e) => {
            log::warn!(
                "trial {trial} at {snr_db} dB, q = {}: solver failed: {e}",
                config.q
            );
            return Ok(TrialOutcome {
                matched: false,
                rmse: None,
                converged: false,
                runtime,
            });
        }
    };
    let grid = dict
        .grid_frequencies()
        .expect("sinusoid dictionary has a grid");
    let estimate = pick_peaks(&solution.x_hat, grid, scenario.threshold)?;
    let matched = solution.converged
        && match_support(
            &estimate,
            &data.frequencies,
            scenario.grid_tolerance,
            spacing,
        );
    Ok(TrialOutcome {
        matched,
        rmse: rmse_frequencies(&estimate, &data.frequencies),
        converged: solution.converged,
        runtime,
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn aggregate(
    config: &SpiceConfig,
    snr_db: f64,
    trim: usize,
    outcomes: &[TrialOutcome],
) -> ResultRow {
    let trials = outcomes.len();
    let matched = outcomes.iter().filter(|o| o.matched).count();
    let mut errors: Vec<f64> = outcomes.iter().filter_map(|o| o.rmse).collect();
    let rmse = mean(&errors);
    errors.sort_by(f64::total_cmp);
    let kept = errors.len().saturating_sub(trim);
    ResultRow {
        q: config.q,
        r: config.r,
        snr_db,
        support_probability: matched as f64 / trials as f64,
        rmse,
        excluded_trials: trials - outcomes.iter().filter(|o| o.rmse.is_some()).count(),
        mean_runtime: outcomes.iter().map(|o| o.runtime).sum::<f64>() / trials as f64,
        trimmed_rmse: mean(&errors[..kept]),
        noise_mode: config.noise_mode,
        nonconverged_trials: outcomes.iter().filter(|o| !o.converged).count(),
    }
}

/// Runs every (solver, SNR) cell of the scenario. Rows come out in solver order, then SNR
/// order; trials run on the rayon pool (capped by `threads` when given) and are reduced in
/// trial order, so results do not depend on scheduling.
pub fn run_sweep(scenario: &Scenario, threads: Option<usize>) -> Result<Vec<ResultRow>> {
    scenario.validate()?;
    let dict = build_sinusoid_dictionary(scenario.n_samples, scenario.n_grid)?;
    let run = || -> Result<Vec<ResultRow>> {
        let mut rows = Vec::new();
        for config in &scenario.solvers {
            for &snr in &scenario.snr_db {
                let outcomes = (0..scenario.trials)
                    .into_par_iter()
                    .map(|t| run_trial(scenario, &dict, config, t, snr))
                    .collect::<Result<Vec<_>>>()?;
                let row = aggregate(config, snr, scenario.trim, &outcomes);
                log::info!(
                    "{} q={} r={} snr={} dB: P(support)={:.3} rmse={:?}",
                    row.noise_mode,
                    row.q,
                    row.r,
                    row.snr_db,
                    row.support_probability,
                    row.rmse
                );
                rows.push(row);
            }
        }
        Ok(rows)
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| SpiceError::InvalidParameter(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Cells where support probability drops as SNR rises, per curve. Sampling noise can cause
/// small drops, so callers report these rather than fail on them.
pub fn monotonicity_violations(rows: &[ResultRow]) -> Vec<(ResultRow, ResultRow)> {
    let mut out = Vec::new();
    for curve in curves(rows).values() {
        let mut sorted = curve.clone();
        sorted.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        for pair in sorted.windows(2) {
            if pair[1].support_probability < pair[0].support_probability {
                out.push((pair[0].clone(), pair[1].clone()));
            }
        }
    }
    out
}

fn curves(rows: &[ResultRow]) -> BTreeMap<String, Vec<ResultRow>> {
    let mut map: BTreeMap<String, Vec<ResultRow>> = BTreeMap::new();
    for row in rows {
        let key = format!("{}_r{}_q{}", row.noise_mode, row.r, row.q);
        map.entry(key).or_default().push(row.clone());
    }
    map
}

#[derive(Serialize)]
struct CurvePoint {
    snr_db: f64,
    support_probability: f64,
    rmse: Option<f64>,
    trimmed_rmse: Option<f64>,
    excluded_trials: usize,
}

/// Writes one CSV per curve, named `curve_<noise_mode>_r<r>_q<q>.csv`, holding support
/// probability and RMSE against SNR in ascending SNR order. Returns the written paths.
pub fn emit_plot_data(rows: &[ResultRow], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(SpiceError::InvalidParameter(
            "no result rows to write".into(),
        ));
    }
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for (key, mut curve) in curves(rows) {
        curve.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        let points: Vec<CurvePoint> = curve
            .iter()
            .map(|r| CurvePoint {
                snr_db: r.snr_db,
                support_probability: r.support_probability,
                rmse: r.rmse,
                trimmed_rmse: r.trimmed_rmse,
                excluded_trials: r.excluded_trials,
            })
            .collect();
        let path = dir.join(format!("curve_{key}.csv"));
        write_csv(&path, &points)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes all rows to `results.csv` in `dir` and the per-curve files next to it.
pub fn write_results(rows: &[ResultRow], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = emit_plot_data(rows, dir)?;
    let results = dir.join("results.csv");
    write_csv(&results, rows)?;
    paths.insert(0, results);
    Ok(paths)
}

/// Settings for a single timed solve on a sinusoid grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSettings {
    pub n_samples: usize,
    pub n_grid: usize,
    pub components: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub config: SpiceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub n_samples: usize,
    pub n_grid: usize,
    pub q: f64,
    pub r: f64,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub iterations: usize,
    pub converged: bool,
    pub active_set: usize,
    pub support_matched: bool,
}

/// Synthesizes one trial with unit-magnitude random-frequency components and times the solve.
pub fn bench(settings: &BenchSettings) -> Result<BenchReport> {
    let scenario = Scenario {
        n_samples: settings.n_samples,
        n_grid: settings.n_grid,
        components: vec![
            Component {
                frequency: None,
                magnitude: 1.0,
                phase: PhaseMode::Random,
            };
            settings.components
        ],
        min_separation: None,
        snr_db: vec![settings.snr_db],
        trials: 1,
        seed: settings.seed,
        solvers: vec![settings.config.clone()],
        trim: 0,
        threshold: DEFAULT_THRESHOLD,
        grid_tolerance: DEFAULT_GRID_TOLERANCE,
    };
    scenario.validate()?;
    let start = Instant::now();
    let dict = build_sinusoid_dictionary(settings.n_samples, settings.n_grid)?;
    let data = synthesize(&scenario, 0, settings.snr_db)?;
    let setup_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let solution = solve(&data.signal, &dict, &settings.config)?;
    let solve_seconds = start.elapsed().as_secs_f64();
    let grid = dict
        .grid_frequencies()
        .expect("sinusoid dictionary has a grid");
    let estimate = pick_peaks(&solution.x_hat, grid, DEFAULT_THRESHOLD)?;
    Ok(BenchReport {
        n_samples: settings.n_samples,
        n_grid: settings.n_grid,
        q: settings.config.q,
        r: settings.config.r,
        setup_seconds,
        solve_seconds,
        iterations: solution.iterations,
        converged: solution.converged,
        active_set: solution.support().len(),
        support_matched: match_support(
            &estimate,
            &data.frequencies,
            DEFAULT_GRID_TOLERANCE,
            1.0 / settings.n_grid as f64,
        ),
    })
}
