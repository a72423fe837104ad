//! Independent solvers for the penalized-regression forms of the estimator.
//!
//! With `s = 2q/(q+1)` and `t = 2r/(r+1)` the problems solved here are
//!
//! ```text
//! minimize  || D (y - B x) ||_s + mu || E x ||_t
//! ```
//!
//! where `D` and `E` are diagonal weights. The heteroscedastic form uses
//! `D = W_s^{1/2}`, `E = W^{1/2}` and `mu = 1`; the equal-noise form is the
//! weighted square-root LASSO with `s = 2`, the same `D` and `E`, and
//! `mu = N^{-1/(2q)}`.
//!
//! The solver is accelerated proximal gradient on a smoothed fit term. The
//! smoothing `sqrt(|v|^2 + eps^2)` is annealed down to `1e-10` of the data
//! scale, each stage warm-started from the previous one.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SpiceError};
use crate::model::{Dictionary, Signal, SpiceState, Weights, C64};
use crate::solver::{mu_from_q, NoiseMode};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Final smoothing level relative to the weighted data scale.
pub const FINAL_SMOOTHING: f64 = 1e-10;

/// Eigenvalues above `-PSD_CLAMP * max|eig|` are clamped to zero in [`covfit_objective`].
pub const PSD_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedProblem {
    pub fit_norm_exponent: f64,
    pub penalty_norm_exponent: f64,
    pub fit_weights: Vec<f64>,
    pub penalty_weights: Vec<f64>,
    pub mu: f64,
}

impl PenalizedProblem {
    /// Heteroscedastic form: `||W_s^{1/2}(y - Bx)||_{2q/(q+1)} + ||W^{1/2} x||_{2r/(r+1)}`.
    pub fn heteroscedastic(weights: &Weights, r: f64, q: f64) -> Result<Self> {
        check_norm_params(r, q)?;
        Ok(Self {
            fit_norm_exponent: 2.0 * q / (q + 1.0),
            penalty_norm_exponent: 2.0 * r / (r + 1.0),
            fit_weights: weights.noise.iter().map(|w| w.sqrt()).collect(),
            penalty_weights: weights.signal.iter().map(|w| w.sqrt()).collect(),
            mu: 1.0,
        })
    }

    /// Equal-noise form: `||W_s^{1/2}(y - Bx)||_2 + mu ||W^{1/2} x||_{2r/(r+1)}`, `mu = N^{-1/(2q)}`.
    pub fn uniform(weights: &Weights, r: f64, q: f64) -> Result<Self> {
        check_norm_params(r, q)?;
        Ok(Self {
            fit_norm_exponent: 2.0,
            penalty_norm_exponent: 2.0 * r / (r + 1.0),
            fit_weights: weights.noise.iter().map(|w| w.sqrt()).collect(),
            penalty_weights: weights.signal.iter().map(|w| w.sqrt()).collect(),
            mu: mu_from_q(q, weights.noise.len()),
        })
    }

    pub fn for_mode(mode: NoiseMode, weights: &Weights, r: f64, q: f64) -> Result<Self> {
        match mode {
            NoiseMode::Heteroscedastic => Self::heteroscedastic(weights, r, q),
            NoiseMode::Uniform => Self::uniform(weights, r, q),
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.fit_weights.len() != n || self.penalty_weights.len() != m {
            return Err(SpiceError::Dimension(format!(
                "problem weights are {} / {}, data is {n} x {m}",
                self.fit_weights.len(),
                self.penalty_weights.len()
            )));
        }
        if !(1.0..=2.0).contains(&self.fit_norm_exponent)
            || !(1.0..=2.0).contains(&self.penalty_norm_exponent)
        {
            return Err(SpiceError::InvalidParameter(
                "norm exponents must lie in [1, 2]".into(),
            ));
        }
        if !(self.mu > 0.0) {
            return Err(SpiceError::InvalidParameter(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if self
            .fit_weights
            .iter()
            .chain(&self.penalty_weights)
            .any(|w| !(*w > 0.0))
        {
            return Err(SpiceError::InvalidParameter(
                "weights must be positive".into(),
            ));
        }
        Ok(())
    }

    fn l1_penalty(&self) -> bool {
        self.penalty_norm_exponent == 1.0
    }

    /// Exact (unsmoothed) objective.
    pub fn objective(&self, signal: &Signal, dict: &Dictionary, x: &DVector<C64>) -> f64 {
        let res = signal.samples() - dict.columns() * x;
        weighted_norm(&res, &self.fit_weights, self.fit_norm_exponent)
            + self.mu * weighted_norm(x, &self.penalty_weights, self.penalty_norm_exponent)
    }
}

fn check_norm_params(r: f64, q: f64) -> Result<()> {
    if !(r >= 1.0) || !(q >= 1.0) {
        return Err(SpiceError::InvalidParameter(format!(
            "need r >= 1 and q >= 1, got r = {r}, q = {q}"
        )));
    }
    Ok(())
}

/// `(sum_k (d_k |v_k|)^s)^{1/s}`.
pub fn weighted_norm(v: &DVector<C64>, d: &[f64], s: f64) -> f64 {
    if s == 1.0 {
        return v.iter().zip(d).map(|(c, w)| w * c.norm()).sum();
    }
    if s == 2.0 {
        return v
            .iter()
            .zip(d)
            .map(|(c, w)| w * w * c.norm_sqr())
            .sum::<f64>()
            .sqrt();
    }
    v.iter()
        .zip(d)
        .map(|(c, w)| (w * c.norm()).powf(s))
        .sum::<f64>()
        .powf(1.0 / s)
}

/// Smoothed `(sum_k (d_k^2 |v_k|^2 + eps^2)^{s/2})^{1/s}` and its gradient with respect to `v`.
fn smoothed_norm_grad(v: &DVector<C64>, d: &[f64], s: f64, eps: f64) -> (f64, DVector<C64>) {
    let u: Vec<f64> = v
        .iter()
        .zip(d)
        .map(|(c, w)| (w * w * c.norm_sqr() + eps * eps).sqrt())
        .collect();
    let total = u.iter().map(|x| x.powf(s)).sum::<f64>().powf(1.0 / s);
    let grad = DVector::from_iterator(
        v.len(),
        v.iter()
            .zip(d)
            .zip(&u)
            .map(|((c, w), uk)| c * ((uk / total).powf(s - 1.0) * w * w / uk)),
    );
    (total, grad)
}

/// Stopping and annealing controls for [`solve_penalized_with`].
#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Stop a stage when `||x_k - x_{k-1}|| <= tol * max(||x_k||, tiny)`.
    pub tol: f64,
    pub max_iterations_per_stage: usize,
    pub initial_smoothing: f64,
    pub final_smoothing: f64,
    pub smoothing_decay: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iterations_per_stage: 50_000,
            initial_smoothing: 1e-2,
            final_smoothing: FINAL_SMOOTHING,
            smoothing_decay: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub x: DVector<C64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Solves the penalized problem with default options.
pub fn solve_penalized(
    problem: &PenalizedProblem,
    signal: &Signal,
    dict: &Dictionary,
) -> Result<PenalizedSolution> {
    solve_penalized_with(problem, signal, dict, &OracleOptions::default())
}

struct Smooth<'a> {
    problem: &'a PenalizedProblem,
    b: &'a DMatrix<C64>,
    y: &'a DVector<C64>,
    fit_eps: f64,
    pen_eps: f64,
}

impl Smooth<'_> {
    /// Smooth part of the objective and its gradient in `x`.
    fn eval(&self, x: &DVector<C64>) -> (f64, DVector<C64>) {
        let res = self.y - self.b * x;
        let (fit, g_res) = smoothed_norm_grad(
            &res,
            &self.problem.fit_weights,
            self.problem.fit_norm_exponent,
            self.fit_eps,
        );
        let mut grad = -(self.b.adjoint() * g_res);
        let mut value = fit;
        if !self.problem.l1_penalty() {
            let (pen, g_pen) = smoothed_norm_grad(
                x,
                &self.problem.penalty_weights,
                self.problem.penalty_norm_exponent,
                self.pen_eps,
            );
            value += self.problem.mu * pen;
            grad += g_pen * C64::new(self.problem.mu, 0.0);
        }
        (value, grad)
    }

    fn value(&self, x: &DVector<C64>) -> f64 {
        self.eval(x).0
    }

    /// Nonsmooth part (weighted l1 penalty when `r = 1`).
    fn nonsmooth(&self, x: &DVector<C64>) -> f64 {
        if self.problem.l1_penalty() {
            self.problem.mu * weighted_norm(x, &self.problem.penalty_weights, 1.0)
        } else {
            0.0
        }
    }

    fn prox(&self, v: DVector<C64>, step: f64) -> DVector<C64> {
        if !self.problem.l1_penalty() {
            return v;
        }
        let mu = self.problem.mu;
        DVector::from_iterator(
            v.len(),
            v.iter().zip(&self.problem.penalty_weights).map(|(c, w)| {
                let mag = c.norm();
                let thr = step * mu * w;
                if mag <= thr {
                    ZERO
                } else {
                    c * ((mag - thr) / mag)
                }
            }),
        )
    }
}

fn real_dot(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u.conj() * v).re).sum()
}

/// Accelerated proximal gradient with backtracking and function-value restarts, run over a
/// decreasing sequence of smoothing levels.
pub fn solve_penalized_with(
    problem: &PenalizedProblem,
    signal: &Signal,
    dict: &Dictionary,
    opts: &OracleOptions,
) -> Result<PenalizedSolution> {
    dict.check_signal(signal)?;
    problem.validate(dict.n_samples(), dict.n_atoms())?;
    let y = signal.samples();
    let b = dict.columns();
    let m = dict.n_atoms();

    let fit_scale = weighted_norm(y, &problem.fit_weights, 2.0) / (y.len() as f64).sqrt();
    let pen_scale = {
        // Rough amplitude scale: matched-filter magnitude weighted like the penalty.
        let mf = b.adjoint() * y;
        let s: f64 = mf
            .iter()
            .zip(dict.column_norm_sqr())
            .zip(&problem.penalty_weights)
            .map(|((c, n), w)| w * c.norm() / n)
            .fold(0.0, f64::max);
        s.max(f64::MIN_POSITIVE)
    };

    let mut x = DVector::from_element(m, ZERO);
    let mut lipschitz = 1.0f64;
    let mut total_iterations = 0;
    let mut eps_rel = opts.initial_smoothing.max(opts.final_smoothing);
    let converged = loop {
        let smooth = Smooth {
            problem,
            b,
            y,
            fit_eps: eps_rel * fit_scale,
            pen_eps: eps_rel * pen_scale,
        };
        let (stage_ok, iters) = accelerated_stage(&smooth, &mut x, &mut lipschitz, opts);
        total_iterations += iters;
        if eps_rel <= opts.final_smoothing {
            break stage_ok;
        }
        eps_rel = (eps_rel * opts.smoothing_decay).max(opts.final_smoothing);
    };

    let objective = problem.objective(signal, dict, &x);
    Ok(PenalizedSolution {
        x,
        objective,
        converged,
        iterations: total_iterations,
    })
}

fn accelerated_stage(
    smooth: &Smooth<'_>,
    x: &mut DVector<C64>,
    lipschitz: &mut f64,
    opts: &OracleOptions,
) -> (bool, usize) {
    let mut extrapolated = x.clone();
    let mut momentum = 1.0f64;
    let mut f_prev = smooth.value(x) + smooth.nonsmooth(x);
    for iter in 1..=opts.max_iterations_per_stage {
        let (f_y, g_y) = smooth.eval(&extrapolated);
        let mut next;
        loop {
            let step = 1.0 / *lipschitz;
            next = smooth.prox(&extrapolated - &g_y * C64::new(step, 0.0), step);
            let diff = &next - &extrapolated;
            let bound = f_y + real_dot(&g_y, &diff) + 0.5 * *lipschitz * diff.norm_squared();
            let f_next = smooth.value(&next);
            if f_next <= bound + 1e-15 * f_y.abs() {
                break;
            }
            *lipschitz *= 2.0;
            if !lipschitz.is_finite() {
                return (false, iter);
            }
        }
        let f_next = smooth.value(&next) + smooth.nonsmooth(&next);
        let step_norm = (&next - &*x).norm();
        let scale = next.norm().max(1e-300);

        if f_next > f_prev {
            if momentum == 1.0 {
                // A plain proximal step from x no longer decreases the objective.
                return (true, iter);
            }
            momentum = 1.0;
            extrapolated = x.clone();
            continue;
        }
        let momentum_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / momentum_next;
        extrapolated = &next + (&next - &*x) * C64::new(beta, 0.0);
        momentum = momentum_next;
        *x = next;
        f_prev = f_next;
        // Let the step size grow back slowly.
        *lipschitz *= 0.98;

        if step_norm <= opts.tol * scale {
            return (true, iter);
        }
    }
    (false, opts.max_iterations_per_stage)
}

/// `p_j = w_j^{-r/(r+1)} |x_j|^{2/(r+1)} ||W^{1/2} x||_{2r/(r+1)}^{(r-1)/(r+1)}`, the minimizer
/// over `p` of `sum_j |x_j|^2 / p_j + ||W p||_r`.
pub fn powers_from_amplitudes(x: &DVector<C64>, weights: &[f64], r: f64) -> Vec<f64> {
    closed_form_scale(x, weights, r)
}

/// `sigma_k = w_k^{-q/(q+1)} |res_k|^{2/(q+1)} ||W_s^{1/2} res||_{2q/(q+1)}^{(q-1)/(q+1)}`, the
/// minimizer over `sigma` of `sum_k |res_k|^2 / sigma_k + ||W_s sigma||_q`.
pub fn noise_from_residual(residual: &DVector<C64>, noise_weights: &[f64], q: f64) -> Vec<f64> {
    closed_form_scale(residual, noise_weights, q)
}

fn closed_form_scale(v: &DVector<C64>, weights: &[f64], order: f64) -> Vec<f64> {
    let s = 2.0 * order / (order + 1.0);
    let roots: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let norm = weighted_norm(v, &roots, s);
    let common = if order == 1.0 {
        1.0
    } else {
        norm.powf((order - 1.0) / (order + 1.0))
    };
    v.iter()
        .zip(weights)
        .map(|(c, w)| {
            if c.norm() == 0.0 {
                0.0
            } else {
                w.powf(-order / (order + 1.0)) * c.norm().powf(2.0 / (order + 1.0)) * common
            }
        })
        .collect()
}

/// `||R^{-1/2} (R - y y^H)||_F^2`, evaluated through the eigendecomposition of `R`.
///
/// Eigenvalues in `(-PSD_CLAMP * max|eig|, 0]` are treated as zero and their eigenvectors are
/// excluded from `R^{-1/2}` (pseudo-inverse); more negative eigenvalues are an error.
pub fn covfit_objective(state: &SpiceState, dict: &Dictionary, signal: &Signal) -> Result<f64> {
    let r = crate::model::form_covariance(state, dict)?;
    dict.check_signal(signal)?;
    let y = signal.samples();
    let eig = SymmetricEigen::new(r.clone());
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = PSD_CLAMP * max_abs;
    let mut clamped = 0;
    let mut inv_sqrt = Vec::with_capacity(eig.eigenvalues.len());
    for &l in eig.eigenvalues.iter() {
        if l < -cut {
            return Err(SpiceError::SingularCovariance(format!(
                "covariance has eigenvalue {l}"
            )));
        }
        if l <= cut {
            if l < 0.0 {
                clamped += 1;
            }
            inv_sqrt.push(0.0);
        } else {
            inv_sqrt.push(1.0 / l.sqrt());
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} slightly negative covariance eigenvalues to zero");
    }
    let diff = r - y * y.adjoint();
    let projected = eig.eigenvectors.adjoint() * diff;
    let mut total = 0.0;
    for (i, s) in inv_sqrt.iter().enumerate() {
        total += s * s * projected.row(i).iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compute_weights;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn r_one_powers_collapse() {
        let x = DVector::from_vec(vec![c(3.0, 4.0), c(0.0, 0.0), c(0.0, -2.0)]);
        let w = [0.25, 1.0, 4.0];
        let p = powers_from_amplitudes(&x, &w, 1.0);
        assert_relative_eq!(p[0], 10.0, max_relative = 1e-15);
        assert_eq!(p[1], 0.0);
        assert_relative_eq!(p[2], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn zero_inputs_give_zero_scales() {
        let x = DVector::from_element(4, ZERO);
        assert!(powers_from_amplitudes(&x, &[1.0; 4], 3.0)
            .iter()
            .all(|&v| v == 0.0));
        assert!(noise_from_residual(&x, &[1.0; 4], 2.0)
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn q_one_noise_collapse() {
        let res = DVector::from_vec(vec![c(1.0, 1.0), c(-2.0, 0.0)]);
        let s = noise_from_residual(&res, &[0.5, 2.0], 1.0);
        assert_relative_eq!(s[0], 2f64.sqrt() / 0.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(s[1], 2.0 / 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn identity_dictionary_over_regularized_is_zero() {
        let n = 4;
        let dict = Dictionary::from_matrix(DMatrix::<C64>::identity(n, n)).unwrap();
        let y =
            Signal::from_vec(vec![c(1.0, 0.0), c(0.0, -0.5), c(0.3, 0.3), c(-0.2, 0.0)]).unwrap();
        let w = compute_weights(&y, &dict).unwrap();
        let mut problem = PenalizedProblem::uniform(&w, 1.0, 1e6).unwrap();
        problem.mu = 10.0;
        let sol = solve_penalized(&problem, &y, &dict).unwrap();
        assert!(sol.x.iter().all(|v| *v == ZERO), "{:?}", sol.x);
    }

    #[test]
    fn perfect_fit_covfit_is_zero() {
        // Single atom equal to y with p = 1 and no noise: R = y y^H.
        let y = Signal::from_vec(vec![c(1.0, 0.5), c(-0.5, 2.0), c(0.0, 1.0)]).unwrap();
        let dict =
            Dictionary::from_matrix(DMatrix::from_column_slice(3, 1, y.samples().as_slice()))
                .unwrap();
        let state = SpiceState::new(vec![1.0], vec![0.0; 3]).unwrap();
        assert!(covfit_objective(&state, &dict, &y).unwrap().abs() < 1e-20);
    }

    #[test]
    fn covfit_two_by_two_diagonal() {
        // Identity dictionary, so R = diag(p1 + s1, p2 + s2).
        let dict = Dictionary::from_matrix(DMatrix::<C64>::identity(2, 2)).unwrap();
        let y = Signal::from_vec(vec![c(1.0, 1.0), c(0.0, -2.0)]).unwrap();
        let state = SpiceState::new(vec![0.5, 1.5], vec![0.25, 0.75]).unwrap();
        let (r1, r2) = (0.75, 2.25);
        let (a1, a2) = (2.0, 4.0);
        let expected = (r1 - a1) * (r1 - a1) / r1
            + (r2 - a2) * (r2 - a2) / r2
            + a1 * a2 * (1.0 / r1 + 1.0 / r2);
        assert_relative_eq!(
            covfit_objective(&state, &dict, &y).unwrap(),
            expected,
            max_relative = 1e-12
        );
    }
}
