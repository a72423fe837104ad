//! Cross-checks between the fixed-point solver and the penalized-regression oracle on random
//! Gaussian instances.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::model::{compute_weights, Dictionary, Signal, C64};
use crate::oracle::{solve_penalized, PenalizedProblem};
use crate::rng::trial_rng;
use crate::solver::{solve, NoiseMode, SpiceConfig};

/// Support threshold relative to the largest amplitude.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;
pub const MAX_OBJECTIVE_GAP: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct EquivalenceSetup {
    pub n_samples: usize,
    pub n_atoms: usize,
    pub sparsity: usize,
    pub snr_db: f64,
    pub q: f64,
    pub r: f64,
    pub noise_mode: NoiseMode,
    pub seed: u64,
}

impl Default for EquivalenceSetup {
    fn default() -> Self {
        Self {
            n_samples: 16,
            n_atoms: 32,
            sparsity: 3,
            snr_db: 15.0,
            q: 2.0,
            r: 1.0,
            noise_mode: NoiseMode::Uniform,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceRow {
    pub trial: usize,
    pub q: f64,
    pub r: f64,
    pub noise_mode: String,
    pub objective_spice: f64,
    pub objective_oracle: f64,
    pub rel_gap: f64,
    pub support_spice: usize,
    pub support_oracle: usize,
    pub support_match: bool,
    pub spice_iterations: usize,
    pub pass: bool,
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    C64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
}

/// Complex Gaussian dictionary, `sparsity` unit-modulus random-phase amplitudes, and circular
/// Gaussian noise at the requested SNR.
pub fn random_instance(
    setup: &EquivalenceSetup,
    trial: usize,
) -> Result<(Signal, Dictionary, DVector<C64>)> {
    let mut rng = trial_rng(setup.seed, trial as u64);
    let (n, m) = (setup.n_samples, setup.n_atoms);
    let b = DMatrix::from_fn(n, m, |_, _| complex_normal(&mut rng));
    let mut x = DVector::from_element(m, C64::new(0.0, 0.0));
    for k in sample(&mut rng, m, setup.sparsity.min(m)).iter() {
        x[k] = C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
    }
    let clean = &b * &x;
    let power = clean.norm_squared() / n as f64;
    let sigma = (power * 10f64.powf(-setup.snr_db / 10.0)).sqrt();
    let y = DVector::from_fn(n, |i, _| clean[i] + complex_normal(&mut rng) * sigma);
    Ok((Signal::new(y)?, Dictionary::from_matrix(b)?, x))
}

pub fn support(x: &DVector<C64>, threshold: f64) -> Vec<usize> {
    let max = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    x.iter()
        .enumerate()
        .filter(|(_, v)| max > 0.0 && v.norm() >= threshold * max)
        .map(|(k, _)| k)
        .collect()
}

/// Solver configuration used for equivalence runs: tightest tolerance, generous cap, and a
/// support that has settled at [`SUPPORT_THRESHOLD`].
pub fn tight_config(q: f64, noise_mode: NoiseMode) -> SpiceConfig {
    SpiceConfig::new(q, noise_mode)
        .with_tolerance(1e-9)
        .with_max_iterations(200_000)
        .with_settle_support(SUPPORT_THRESHOLD)
}

pub fn compare_trial(setup: &EquivalenceSetup, trial: usize) -> Result<EquivalenceRow> {
    let (signal, dict, _) = random_instance(setup, trial)?;
    let weights = compute_weights(&signal, &dict)?;
    let problem = PenalizedProblem::for_mode(setup.noise_mode, &weights, setup.r, setup.q)?;
    let spice = solve(&signal, &dict, &tight_config(setup.q, setup.noise_mode))?;
    let oracle = solve_penalized(&problem, &signal, &dict)?;
    let objective_spice = problem.objective(&signal, &dict, &spice.x_hat);
    let objective_oracle = oracle.objective;
    let rel_gap = (objective_spice - objective_oracle).abs() / objective_oracle;
    let s_spice = support(&spice.x_hat, SUPPORT_THRESHOLD);
    let s_oracle = support(&oracle.x, SUPPORT_THRESHOLD);
    let support_match = s_spice == s_oracle;
    Ok(EquivalenceRow {
        trial,
        q: setup.q,
        r: setup.r,
        noise_mode: setup.noise_mode.to_string(),
        objective_spice,
        objective_oracle,
        rel_gap,
        support_spice: s_spice.len(),
        support_oracle: s_oracle.len(),
        support_match,
        spice_iterations: spice.iterations,
        pass: rel_gap <= MAX_OBJECTIVE_GAP && support_match,
    })
}

pub fn compare_trials(setup: &EquivalenceSetup, trials: usize) -> Result<Vec<EquivalenceRow>> {
    (0..trials).map(|t| compare_trial(setup, t)).collect()
}
