//! Independent reference computations shared by the integration tests. Everything here uses
//! explicit dense matrices and textbook formulas, never the library's fast paths.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rq_spice::rng::trial_rng;
use rq_spice::{Dictionary, Signal, SpiceState, C64};

pub fn cn<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    C64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
}

/// Gaussian dictionary, sparse unit-modulus amplitudes and noise at `snr_db`.
pub fn gaussian_instance(
    n: usize,
    m: usize,
    k: usize,
    snr_db: f64,
    seed: u64,
) -> (Signal, Dictionary) {
    let mut rng = trial_rng(seed, 0);
    let b = DMatrix::from_fn(n, m, |_, _| cn(&mut rng));
    let mut x = DVector::from_element(m, C64::new(0.0, 0.0));
    for j in 0..k {
        x[(j * 7 + 3) % m] = C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
    }
    let clean = &b * &x;
    let sigma = (clean.norm_squared() / n as f64 * 10f64.powf(-snr_db / 10.0)).sqrt();
    let y = DVector::from_fn(n, |i, _| clean[i] + cn(&mut rng) * sigma);
    (Signal::new(y).unwrap(), Dictionary::from_matrix(b).unwrap())
}

pub fn random_state(m: usize, n: usize, active: usize, seed: u64) -> SpiceState {
    let mut rng = trial_rng(seed, 1);
    let p = (0..m)
        .map(|k| {
            if k < active {
                rng.random_range(0.1..2.0)
            } else {
                0.0
            }
        })
        .collect();
    let sigma = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    SpiceState::new(p, sigma).unwrap()
}

/// `R = sum_k p_k b_k b_k^H + diag(sigma)` built one outer product at a time.
pub fn dense_covariance(state: &SpiceState, b: &DMatrix<C64>) -> DMatrix<C64> {
    let n = b.nrows();
    let mut r = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        state.sigma.iter().map(|s| C64::new(*s, 0.0)),
    ));
    for (k, &p) in state.p.iter().enumerate() {
        if p > 0.0 {
            let col = b.column(k);
            r += col * col.adjoint() * C64::new(p, 0.0);
        }
    }
    r
}

pub fn dense_inverse_action(
    state: &SpiceState,
    b: &DMatrix<C64>,
    y: &DVector<C64>,
) -> DVector<C64> {
    dense_covariance(state, b)
        .try_inverse()
        .expect("invertible covariance")
        * y
}

pub fn rel_err(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// The original SPICE iteration over the stacked dictionary `[B, I]` with weights
/// `||a_k||^2 / ||y||^2`, run with explicit inverses until the powers stop moving.
/// Returns the amplitudes `p_k b_k^H R^{-1} y` of the signal atoms.
pub fn reference_spice(
    y: &DVector<C64>,
    b: &DMatrix<C64>,
    tol: f64,
    max_iter: usize,
) -> DVector<C64> {
    let (n, m) = b.shape();
    let a = DMatrix::from_fn(n, m + n, |i, j| {
        if j < m {
            b[(i, j)]
        } else if i == j - m {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let ynorm2 = y.norm_squared();
    let w: Vec<f64> = (0..m + n)
        .map(|k| a.column(k).norm_squared() / ynorm2)
        .collect();
    let mut p: Vec<f64> = (0..m + n)
        .map(|k| {
            let c = a.column(k);
            c.dotc(y).norm_sqr() / c.norm_squared().powi(2)
        })
        .collect();
    let covariance = |p: &[f64]| {
        let mut r = DMatrix::zeros(n, n);
        for (k, &pk) in p.iter().enumerate() {
            let c = a.column(k);
            r += c * c.adjoint() * C64::new(pk, 0.0);
        }
        r
    };
    for _ in 0..max_iter {
        let z = covariance(&p).try_inverse().unwrap() * y;
        let g: Vec<f64> = (0..m + n).map(|k| a.column(k).dotc(&z).norm()).collect();
        let rho: f64 = (0..m + n).map(|k| w[k].sqrt() * p[k] * g[k]).sum();
        let next: Vec<f64> = (0..m + n)
            .map(|k| p[k] * g[k] / (w[k].sqrt() * rho))
            .collect();
        let scale = next.iter().cloned().fold(0.0, f64::max);
        let change = p
            .iter()
            .zip(&next)
            .map(|(u, v)| (u / p.iter().cloned().fold(0.0, f64::max) - v / scale).abs())
            .fold(0.0, f64::max);
        p = next;
        if change < tol {
            break;
        }
    }
    let z = covariance(&p).try_inverse().unwrap() * y;
    DVector::from_fn(m, |k, _| b.column(k).dotc(&z) * p[k])
}
