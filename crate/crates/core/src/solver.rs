//! Fixed-point solver for the `{r, q}` covariance-fitting problem
//!
//! ```text
//! minimize  y^H R^{-1} y + ||W p||_r + ||W_s sigma||_q   over p, sigma >= 0
//! ```
//!
//! with `r = 1`. Each iteration forms `z = R^{-1} y`, the reparametrized
//! coefficients `beta = diag(p, sigma) A^H z`, and then the closed-form
//! minimizer of `sum |beta_k|^2 / p_k` over the unit ball of the penalty.
//! Iterates are kept on that unit ball; the returned state is rescaled to the
//! optimal point along its ray, which is where the objective above is minimal.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiceError};
use crate::linalg::{self, InversePath};
use crate::model::{compute_weights, Dictionary, Signal, SpiceState, Weights, C64};

/// Relative slack allowed on the per-iteration objective before a run is failed.
pub const DESCENT_SLACK: f64 = 1e-9;

/// Noise terms are never allowed below `NOISE_FLOOR_FACTOR * ||y||^2 / N`.
pub const NOISE_FLOOR_FACTOR: f64 = 1e-12;

/// Atoms whose weighted power `w_k p_k` on the unit ball falls below this are pruned.
pub const POWER_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// One noise parameter per sample.
    Heteroscedastic,
    /// A single noise parameter shared by all samples.
    Uniform,
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseMode::Heteroscedastic => f.write_str("heteroscedastic"),
            NoiseMode::Uniform => f.write_str("uniform"),
        }
    }
}

impl FromStr for NoiseMode {
    type Err = SpiceError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "heteroscedastic" | "hetero" => Ok(NoiseMode::Heteroscedastic),
            "uniform" => Ok(NoiseMode::Uniform),
            other => Err(SpiceError::InvalidParameter(format!(
                "unknown noise mode '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpiceConfig {
    pub r: f64,
    pub q: f64,
    pub noise_mode: NoiseMode,
    pub rel_tolerance: f64,
    pub max_iterations: usize,
    pub prune_threshold: f64,
    /// When set to `s`, convergence also waits until every atom above `s * max(p)` has a
    /// per-atom relative change below `sqrt(rel_tolerance)`. Slowly decaying atoms then
    /// either settle or fall under the support threshold before the run stops.
    pub settle_support: Option<f64>,
}

impl Default for SpiceConfig {
    fn default() -> Self {
        Self {
            r: 1.0,
            q: 1.0,
            noise_mode: NoiseMode::Uniform,
            rel_tolerance: 1e-6,
            max_iterations: 5000,
            prune_threshold: 1e-12,
            settle_support: None,
        }
    }
}

impl SpiceConfig {
    pub fn new(q: f64, noise_mode: NoiseMode) -> Self {
        Self {
            q,
            noise_mode,
            ..Self::default()
        }
    }

    pub fn with_tolerance(mut self, rel_tolerance: f64) -> Self {
        self.rel_tolerance = rel_tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_settle_support(mut self, threshold: f64) -> Self {
        self.settle_support = Some(threshold);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 1.0) || !self.r.is_finite() {
            return Err(SpiceError::InvalidParameter(format!(
                "r must satisfy r >= 1, got {}",
                self.r
            )));
        }
        if !(self.q >= 1.0) || !self.q.is_finite() {
            return Err(SpiceError::InvalidParameter(format!(
                "q must satisfy q >= 1, got {}",
                self.q
            )));
        }
        if !(1e-9..=1e-3).contains(&self.rel_tolerance) {
            return Err(SpiceError::InvalidParameter(format!(
                "rel_tolerance must lie in [1e-9, 1e-3], got {}",
                self.rel_tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(SpiceError::InvalidParameter(
                "max_iterations must be positive".into(),
            ));
        }
        if !(self.prune_threshold >= 0.0) || self.prune_threshold >= 1.0 {
            return Err(SpiceError::InvalidParameter(format!(
                "prune_threshold must lie in [0, 1), got {}",
                self.prune_threshold
            )));
        }
        if let Some(s) = self.settle_support {
            if !(s > 0.0 && s < 1.0) {
                return Err(SpiceError::InvalidParameter(format!(
                    "settle_support must lie in (0, 1), got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// `beta = diag(p, sigma) A^H R^{-1} y`, split into the atom block and the noise block.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaVector {
    pub signal: Vec<C64>,
    pub noise: Vec<C64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective at the iterate, evaluated at the optimal scale along its ray.
    pub objective: f64,
    pub lambda: f64,
    pub active_set: usize,
    pub rel_change: f64,
    /// `||W p||_1 + ||W_s sigma||_q` of the iterate before renormalization.
    pub constraint: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
}

impl SolverTrace {
    pub fn objectives(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.initial_objective).chain(self.records.iter().map(|r| r.objective))
    }

    /// First iteration at which the objective rose by more than `slack` (relative).
    pub fn first_ascent(&self, slack: f64) -> Option<usize> {
        let objs: Vec<f64> = self.objectives().collect();
        objs.windows(2)
            .position(|w| w[1] > w[0] + slack * w[0].abs())
            .map(|i| i + 1)
    }
}

#[derive(Debug, Clone)]
pub struct SpiceSolution {
    /// Final `(p, sigma)`, scaled to minimize the objective along its ray.
    pub state: SpiceState,
    /// Final amplitudes `x = P B^H R^{-1} y`.
    pub x_hat: DVector<C64>,
    pub trace: SolverTrace,
    pub converged: bool,
    pub iterations: usize,
}

impl SpiceSolution {
    pub fn objective(&self) -> f64 {
        self.trace
            .records
            .last()
            .map(|r| r.objective)
            .unwrap_or(self.trace.initial_objective)
    }

    /// Atoms that survived pruning.
    pub fn support(&self) -> Vec<usize> {
        self.state.active_set()
    }
}

/// `||y||^2 / N` times [`NOISE_FLOOR_FACTOR`].
pub fn noise_floor(weights: &Weights) -> f64 {
    NOISE_FLOOR_FACTOR * weights.signal_energy() / weights.noise.len() as f64
}

/// Mean-removed sample standard deviation with the `1 / (N - 1)` normalization.
fn sample_std(y: &DVector<C64>) -> f64 {
    let n = y.len() as f64;
    let mean: C64 = y.iter().sum::<C64>() / n;
    (y.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Matched-filter powers `|b_k^H y|^2 / ||b_k||^4` and the initial noise terms.
pub fn initialize(signal: &Signal, dict: &Dictionary, config: &SpiceConfig) -> Result<SpiceState> {
    config.validate()?;
    let weights = compute_weights(signal, dict)?;
    let y = signal.samples();
    let corr = linalg::adjoint_all(dict, y);
    let p = corr
        .iter()
        .zip(dict.column_norm_sqr())
        .map(|(c, n)| c.norm_sqr() / (n * n))
        .collect();
    let floor = noise_floor(&weights);
    let sigma = match config.noise_mode {
        NoiseMode::Heteroscedastic => y.iter().map(|v| v.norm().max(floor)).collect(),
        NoiseMode::Uniform => vec![sample_std(y).max(floor); y.len()],
    };
    Ok(SpiceState { p, sigma })
}

/// `R^{-1} y`, using Woodbury when fewer than `N` atoms are active.
pub fn covariance_inverse_action(
    state: &SpiceState,
    dict: &Dictionary,
    signal: &Signal,
) -> Result<DVector<C64>> {
    covariance_inverse_action_with(state, dict, signal, InversePath::Auto)
}

/// `R^{-1} y` along an explicit route.
pub fn covariance_inverse_action_with(
    state: &SpiceState,
    dict: &Dictionary,
    signal: &Signal,
    path: InversePath,
) -> Result<DVector<C64>> {
    dict.check_signal(signal)?;
    state.check_dims(dict)?;
    state.validate()?;
    linalg::covariance_inverse_action(state, dict, signal.samples(), &state.active_set(), path)
}

fn beta_from_z(
    state: &SpiceState,
    dict: &Dictionary,
    z: &DVector<C64>,
    active: &[usize],
) -> BetaVector {
    let mut signal = vec![C64::new(0.0, 0.0); dict.n_atoms()];
    for (&k, g) in active.iter().zip(linalg::adjoint_products(dict, z, active)) {
        signal[k] = g * state.p[k];
    }
    let noise = state
        .sigma
        .iter()
        .zip(z.iter())
        .map(|(s, zv)| zv * *s)
        .collect();
    BetaVector { signal, noise }
}

/// One linear solve, then `beta_k = p_k b_k^H z` and `beta_{M+j} = sigma_j z_j`.
pub fn compute_beta(state: &SpiceState, dict: &Dictionary, signal: &Signal) -> Result<BetaVector> {
    let z = covariance_inverse_action(state, dict, signal)?;
    Ok(beta_from_z(state, dict, &z, &state.active_set()))
}

fn fit_exponent(q: f64) -> f64 {
    2.0 * q / (q + 1.0)
}

/// `||W_s^{1/2} beta_s||_{2q/(q+1)}`.
fn weighted_noise_norm(beta: &[C64], noise_weights: &[f64], q: f64) -> f64 {
    let s = fit_exponent(q);
    beta.iter()
        .zip(noise_weights)
        .map(|(b, w)| (w.sqrt() * b.norm()).powf(s))
        .sum::<f64>()
        .powf(1.0 / s)
}

fn l2(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Dual variable of the unit-ball constraint.
pub fn update_lambda(beta: &BetaVector, weights: &Weights, config: &SpiceConfig) -> f64 {
    let signal_part: f64 = beta
        .signal
        .iter()
        .zip(&weights.signal)
        .map(|(b, w)| w.sqrt() * b.norm())
        .sum();
    let noise_part = match config.noise_mode {
        NoiseMode::Heteroscedastic => weighted_noise_norm(&beta.noise, &weights.noise, config.q),
        NoiseMode::Uniform => {
            let n = beta.noise.len() as f64;
            n.powf(1.0 / (2.0 * config.q)) * weights.noise_weight().sqrt() * l2(&beta.noise)
        }
    };
    (signal_part + noise_part).powi(2)
}

/// `p_k = |beta_k| / (sqrt(w_k) sqrt(lambda))`.
pub fn update_powers(beta: &BetaVector, weights: &Weights, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(SpiceError::StalledIteration(lambda));
    }
    let root = lambda.sqrt();
    Ok(beta
        .signal
        .iter()
        .zip(&weights.signal)
        .map(|(b, w)| {
            if b.norm() == 0.0 {
                0.0
            } else {
                b.norm() / (w.sqrt() * root)
            }
        })
        .collect())
}

/// Closed-form noise update, floored at [`noise_floor`].
pub fn update_noise(
    beta: &BetaVector,
    weights: &Weights,
    lambda: f64,
    config: &SpiceConfig,
) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(SpiceError::StalledIteration(lambda));
    }
    let floor = noise_floor(weights);
    let root = lambda.sqrt();
    let q = config.q;
    let sigma = match config.noise_mode {
        NoiseMode::Heteroscedastic => {
            let norm = weighted_noise_norm(&beta.noise, &weights.noise, q);
            let common = norm.powf((q - 1.0) / (q + 1.0)) / root;
            beta.noise
                .iter()
                .zip(&weights.noise)
                .map(|(b, w)| w.powf(-q / (q + 1.0)) * b.norm().powf(2.0 / (q + 1.0)) * common)
                .map(|s| s.max(floor))
                .collect()
        }
        NoiseMode::Uniform => {
            let n = beta.noise.len() as f64;
            let s =
                l2(&beta.noise) / (n.powf(1.0 / (2.0 * q)) * weights.noise_weight().sqrt() * root);
            vec![s.max(floor); beta.noise.len()]
        }
    };
    Ok(sigma)
}

/// `||W p||_r + ||W_s sigma||_q`.
pub fn penalty(state: &SpiceState, weights: &Weights, config: &SpiceConfig) -> f64 {
    let r = config.r;
    let q = config.q;
    let signal: f64 = if r == 1.0 {
        state
            .p
            .iter()
            .zip(&weights.signal)
            .map(|(p, w)| w * p)
            .sum()
    } else {
        state
            .p
            .iter()
            .zip(&weights.signal)
            .map(|(p, w)| (w * p).powf(r))
            .sum::<f64>()
            .powf(1.0 / r)
    };
    let noise: f64 = if q == 1.0 {
        state
            .sigma
            .iter()
            .zip(&weights.noise)
            .map(|(s, w)| w * s)
            .sum()
    } else {
        state
            .sigma
            .iter()
            .zip(&weights.noise)
            .map(|(s, w)| (w * s).powf(q))
            .sum::<f64>()
            .powf(1.0 / q)
    };
    signal + noise
}

/// `y^H R^{-1} y + ||W p||_r + ||W_s sigma||_q` at the given state.
pub fn objective(
    state: &SpiceState,
    dict: &Dictionary,
    signal: &Signal,
    weights: &Weights,
    config: &SpiceConfig,
) -> Result<f64> {
    let z = covariance_inverse_action(state, dict, signal)?;
    Ok(quadratic_form(signal.samples(), &z) + penalty(state, weights, config))
}

fn quadratic_form(y: &DVector<C64>, z: &DVector<C64>) -> f64 {
    y.iter().zip(z.iter()).map(|(a, b)| (a.conj() * b).re).sum()
}

/// Rescales a state onto the unit ball of the penalty.
pub fn normalize_state(state: &SpiceState, weights: &Weights, config: &SpiceConfig) -> SpiceState {
    state.scaled(1.0 / penalty(state, weights, config))
}

/// Smallest objective along the ray `c * state`, `2 sqrt(g * pen)`, and the minimizing `c`.
fn ray_optimum(quad: f64, pen: f64) -> (f64, f64) {
    (2.0 * (quad * pen).sqrt(), (quad / pen).sqrt())
}

fn max_rel_change(old: &SpiceState, new: &SpiceState) -> f64 {
    let pairs = old
        .p
        .iter()
        .zip(&new.p)
        .chain(old.sigma.iter().zip(&new.sigma));
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (a, b) in pairs {
        num = num.max((a - b).abs());
        den = den.max(b.abs());
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Zeroes atoms below `threshold * max(p)` or with `w_k p_k` under [`POWER_FLOOR`] once
/// the powers are on the unit ball (`scale` maps `p` there).
fn prune(p: &mut [f64], weights: &[f64], threshold: f64, scale: f64) {
    let max = p.iter().cloned().fold(0.0, f64::max);
    let cut = threshold * max;
    for (v, w) in p.iter_mut().zip(weights) {
        if *v < cut || *v * w * scale < POWER_FLOOR {
            *v = 0.0;
        }
    }
}

/// Amplitudes scale like `sqrt(w_k) p_k` at a fixed point, so atoms are ranked by that, with
/// a tenfold margin below `threshold`.
fn support_settled(
    old: &SpiceState,
    new: &SpiceState,
    weights: &[f64],
    threshold: f64,
    tol: f64,
) -> bool {
    let size = |k: usize| weights[k].sqrt() * new.p[k];
    let max = (0..new.p.len()).map(size).fold(0.0, f64::max);
    (0..new.p.len())
        .all(|k| size(k) < 0.1 * threshold * max || (old.p[k] - new.p[k]).abs() <= tol * new.p[k])
}

/// Runs the fixed-point iteration with `r = 1`.
///
/// Stops when the largest change in `(p, sigma)` relative to the largest entry falls below
/// `rel_tolerance`; otherwise returns the last iterate flagged as not converged. Atoms whose
/// power drops below `prune_threshold * max(p)` are removed for the rest of the run. An
/// objective increase beyond [`DESCENT_SLACK`] aborts the run.
pub fn solve(signal: &Signal, dict: &Dictionary, config: &SpiceConfig) -> Result<SpiceSolution> {
    config.validate()?;
    if config.r != 1.0 {
        return Err(SpiceError::InvalidParameter(format!(
            "the fixed-point solver requires r = 1, got {}; use the penalized-regression oracle",
            config.r
        )));
    }
    dict.check_signal(signal)?;
    // The initial noise terms scale like |y| rather than |y|^2, so iterating on the unit-norm
    // signal keeps the whole path, not just the fixed point, equivariant in the data scale.
    let norm = signal.norm_sqr().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(SpiceError::DegenerateInput(format!(
            "signal norm is {norm}"
        )));
    }
    let unit = signal.scaled(1.0 / norm);
    let mut solution = solve_unit(&unit, dict, config)?;
    solution.state = solution.state.scaled(norm * norm);
    solution.x_hat *= C64::new(norm, 0.0);
    Ok(solution)
}

fn solve_unit(signal: &Signal, dict: &Dictionary, config: &SpiceConfig) -> Result<SpiceSolution> {
    let weights = compute_weights(signal, dict)?;
    let y = signal.samples();

    let mut state = normalize_state(&initialize(signal, dict, config)?, &weights, config);
    let mut active = state.active_set();
    let mut z = linalg::covariance_inverse_action(&state, dict, y, &active, InversePath::Auto)?;
    let mut quad = quadratic_form(y, &z);
    let mut trace = SolverTrace {
        initial_objective: ray_optimum(quad, penalty(&state, &weights, config)).0,
        records: Vec::new(),
    };
    let mut previous = trace.initial_objective;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let beta = beta_from_z(&state, dict, &z, &active);
        let lambda = update_lambda(&beta, &weights, config);
        if lambda == 0.0 {
            // beta vanishes only for y = 0, which weights already reject.
            return Err(SpiceError::StalledIteration(lambda));
        }
        let p = update_powers(&beta, &weights, lambda)?;
        let sigma = update_noise(&beta, &weights, lambda, config)?;
        let mut raw = SpiceState { p, sigma };
        let unpruned = penalty(&raw, &weights, config);
        prune(
            &mut raw.p,
            &weights.signal,
            config.prune_threshold,
            1.0 / unpruned,
        );
        let constraint = penalty(&raw, &weights, config);
        let next = raw.scaled(1.0 / constraint);

        let rel_change = max_rel_change(&state, &next);
        active = next.active_set();
        z = linalg::covariance_inverse_action(&next, dict, y, &active, InversePath::Auto)?;
        quad = quadratic_form(y, &z);
        let (obj, _) = ray_optimum(quad, penalty(&next, &weights, config));
        if obj > previous + DESCENT_SLACK * previous.abs() {
            return Err(SpiceError::DescentViolation {
                iteration: iterations,
                previous,
                current: obj,
            });
        }
        trace.records.push(IterationRecord {
            iteration: iterations,
            objective: obj,
            lambda,
            active_set: active.len(),
            rel_change,
            constraint,
        });
        previous = obj;
        let previous_state = std::mem::replace(&mut state, next);
        let settled = config.settle_support.is_none_or(|s| {
            support_settled(
                &previous_state,
                &state,
                &weights.signal,
                s,
                config.rel_tolerance.sqrt(),
            )
        });
        if rel_change < config.rel_tolerance && settled {
            converged = true;
            break;
        }
    }

    let x_hat = DVector::from_vec(beta_from_z(&state, dict, &z, &active).signal);
    let (_, scale) = ray_optimum(quad, penalty(&state, &weights, config));
    Ok(SpiceSolution {
        state: state.scaled(scale),
        x_hat,
        trace,
        converged,
        iterations,
    })
}

/// `mu = N^{-1/(2q)}`, the regularization level of the equivalent square-root LASSO.
pub fn mu_from_q(q: f64, n_samples: usize) -> f64 {
    (n_samples as f64).powf(-1.0 / (2.0 * q))
}

/// Inverse of [`mu_from_q`]: `q = -ln N / (2 ln mu)`.
pub fn q_from_mu(mu: f64, n_samples: usize) -> Result<f64> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(SpiceError::InvalidParameter(format!(
            "mu must lie in (0, 1), got {mu}"
        )));
    }
    if n_samples < 2 {
        return Err(SpiceError::Dimension("need at least 2 samples".into()));
    }
    Ok(-(n_samples as f64).ln() / (2.0 * mu.ln()))
}
