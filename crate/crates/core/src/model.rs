//! Linear model, sinusoid dictionaries, SPICE weights and the power-to-amplitude map.
//!
//! The measurement model is `y = B x + e`. The covariance is parametrized as
//! `R = B diag(p) B^H + diag(sigma)`, i.e. `A diag(p, sigma) A^H` with the
//! augmented regressor matrix `A = [B I]`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SpiceError};
use crate::linalg;

pub type C64 = Complex64;

/// Tolerance used when checking that dictionary columns match their declared grid.
const GRID_CHECK_TOL: f64 = 1e-9;

/// A complex measurement vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: DVector<C64>,
}

impl Signal {
    pub fn new(samples: DVector<C64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(SpiceError::Dimension(format!(
                "signal needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples
            .iter()
            .any(|s| !s.re.is_finite() || !s.im.is_finite())
        {
            return Err(SpiceError::DegenerateInput(
                "signal contains non-finite samples".into(),
            ));
        }
        Ok(Self { samples })
    }

    pub fn from_vec(samples: Vec<C64>) -> Result<Self> {
        Self::new(DVector::from_vec(samples))
    }

    /// Embeds a real-valued signal with zero imaginary part.
    pub fn from_real(samples: &[f64]) -> Result<Self> {
        Self::from_vec(samples.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn samples(&self) -> &DVector<C64> {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            samples: self.samples.map(|s| s * c),
        }
    }
}

/// FFT plans for dictionaries sampled on the uniform grid `f_k = k / M`.
#[derive(Clone)]
pub(crate) struct GridTransforms {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
}

/// An `N x M` regressor matrix, optionally tagged with the frequency of each column.
#[derive(Clone)]
pub struct Dictionary {
    columns: DMatrix<C64>,
    grid: Option<Vec<f64>>,
    column_norm_sqr: Vec<f64>,
    transforms: Option<GridTransforms>,
}

impl fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dictionary")
            .field("n_samples", &self.n_samples())
            .field("n_atoms", &self.n_atoms())
            .field("has_grid", &self.grid.is_some())
            .field("uniform_grid", &self.transforms.is_some())
            .finish()
    }
}

impl Dictionary {
    /// Wraps an arbitrary regressor matrix. Every column must have positive norm.
    pub fn from_matrix(columns: DMatrix<C64>) -> Result<Self> {
        if columns.ncols() == 0 {
            return Err(SpiceError::Dimension(
                "dictionary needs at least one column".into(),
            ));
        }
        if columns.nrows() < 2 {
            return Err(SpiceError::Dimension(format!(
                "dictionary needs at least 2 rows, got {}",
                columns.nrows()
            )));
        }
        let column_norm_sqr: Vec<f64> = columns
            .column_iter()
            .map(|c| c.iter().map(|v| v.norm_sqr()).sum())
            .collect();
        if let Some(k) = column_norm_sqr
            .iter()
            .position(|&n| !(n > 0.0) || !n.is_finite())
        {
            return Err(SpiceError::DegenerateInput(format!(
                "dictionary column {k} has zero or non-finite norm"
            )));
        }
        Ok(Self {
            columns,
            grid: None,
            column_norm_sqr,
            transforms: None,
        })
    }

    /// Wraps a matrix whose column `k` must equal `exp(i 2 pi f_k n)`, `n = 0..N-1`.
    pub fn with_grid(columns: DMatrix<C64>, grid: Vec<f64>) -> Result<Self> {
        if grid.len() != columns.ncols() {
            return Err(SpiceError::Dimension(format!(
                "grid has {} frequencies but dictionary has {} columns",
                grid.len(),
                columns.ncols()
            )));
        }
        for (k, (&f, col)) in grid.iter().zip(columns.column_iter()).enumerate() {
            for (n, v) in col.iter().enumerate() {
                let expected = C64::from_polar(1.0, 2.0 * PI * f * n as f64);
                if (v - expected).norm() > GRID_CHECK_TOL {
                    return Err(SpiceError::DegenerateInput(format!(
                        "column {k} does not match the sinusoid at frequency {f}"
                    )));
                }
            }
        }
        let mut dict = Self::from_matrix(columns)?;
        let m = grid.len();
        let uniform = grid
            .iter()
            .enumerate()
            .all(|(k, &f)| (f - (k + 1) as f64 / m as f64).abs() <= 1e-12);
        if uniform {
            let mut planner = FftPlanner::new();
            dict.transforms = Some(GridTransforms {
                forward: planner.plan_fft_forward(m),
                inverse: planner.plan_fft_inverse(m),
            });
        }
        dict.grid = Some(grid);
        Ok(dict)
    }

    pub fn columns(&self) -> &DMatrix<C64> {
        &self.columns
    }

    pub fn n_samples(&self) -> usize {
        self.columns.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.columns.ncols()
    }

    pub fn column_norm_sqr(&self) -> &[f64] {
        &self.column_norm_sqr
    }

    pub fn grid_frequencies(&self) -> Option<&[f64]> {
        self.grid.as_deref()
    }

    /// Spacing of a uniform grid, `1 / M`.
    pub fn grid_spacing(&self) -> Option<f64> {
        self.transforms
            .as_ref()
            .map(|_| 1.0 / self.n_atoms() as f64)
    }

    /// True when the columns are the sinusoids at `k / M`, `k = 1..M`.
    pub fn is_uniform_grid(&self) -> bool {
        self.transforms.is_some()
    }

    pub(crate) fn transforms(&self) -> Option<&GridTransforms> {
        self.transforms.as_ref()
    }

    pub fn check_signal(&self, signal: &Signal) -> Result<()> {
        if signal.len() != self.n_samples() {
            return Err(SpiceError::Dimension(format!(
                "signal has {} samples but dictionary has {} rows",
                signal.len(),
                self.n_samples()
            )));
        }
        Ok(())
    }
}

/// Builds the `N x M` dictionary of complex sinusoids on the grid `f_k = k / M`, `k = 1..M`.
pub fn build_sinusoid_dictionary(n_samples: usize, n_grid: usize) -> Result<Dictionary> {
    if n_samples < 2 || n_grid < 1 {
        return Err(SpiceError::Dimension(format!(
            "sinusoid dictionary needs n_samples >= 2 and n_grid >= 1, got {n_samples} x {n_grid}"
        )));
    }
    let grid: Vec<f64> = (1..=n_grid).map(|k| k as f64 / n_grid as f64).collect();
    let columns = DMatrix::from_fn(n_samples, n_grid, |n, k| {
        // Reduce k*n modulo M first so large grids keep full phase accuracy.
        let idx = ((k + 1) * n) % n_grid;
        C64::from_polar(1.0, 2.0 * PI * idx as f64 / n_grid as f64)
    });
    Dictionary::with_grid(columns, grid)
}

/// Diagonal SPICE weights for the signal atoms and the noise atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
}

impl Weights {
    /// Per-sample noise weight (all noise weights are equal).
    pub fn noise_weight(&self) -> f64 {
        self.noise[0]
    }

    /// `||y||^2`, recovered from the noise weights.
    pub fn signal_energy(&self) -> f64 {
        1.0 / self.noise[0]
    }
}

/// `w_k = ||a_k||^2 / ||y||^2` for every column of `A = [B I]`.
pub fn compute_weights(signal: &Signal, dict: &Dictionary) -> Result<Weights> {
    dict.check_signal(signal)?;
    let energy = signal.norm_sqr();
    if !(energy > 0.0) {
        return Err(SpiceError::DegenerateInput("signal has zero norm".into()));
    }
    Ok(Weights {
        signal: dict.column_norm_sqr().iter().map(|n| n / energy).collect(),
        noise: vec![1.0 / energy; signal.len()],
    })
}

/// Covariance parameters: signal powers `p` and per-sample noise parameters `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiceState {
    pub p: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl SpiceState {
    pub fn new(p: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let state = Self { p, sigma };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .p
            .iter()
            .chain(self.sigma.iter())
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(SpiceError::InvalidParameter(
                "powers and noise parameters must be finite and non-negative".into(),
            ));
        }
        if self.p.iter().chain(self.sigma.iter()).all(|&v| v == 0.0) {
            return Err(SpiceError::SingularCovariance(
                "all covariance parameters are zero".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_dims(&self, dict: &Dictionary) -> Result<()> {
        if self.p.len() != dict.n_atoms() || self.sigma.len() != dict.n_samples() {
            return Err(SpiceError::Dimension(format!(
                "state has {} powers and {} noise terms; dictionary is {} x {}",
                self.p.len(),
                self.sigma.len(),
                dict.n_samples(),
                dict.n_atoms()
            )));
        }
        Ok(())
    }

    /// Indices with strictly positive power.
    pub fn active_set(&self) -> Vec<usize> {
        self.p
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            p: self.p.iter().map(|v| v * c).collect(),
            sigma: self.sigma.iter().map(|v| v * c).collect(),
        }
    }
}

/// Assembles `R = sum_k p_k b_k b_k^H + diag(sigma)`.
pub fn form_covariance(state: &SpiceState, dict: &Dictionary) -> Result<DMatrix<C64>> {
    state.check_dims(dict)?;
    state.validate()?;
    Ok(linalg::assemble_covariance(
        state,
        dict,
        &state.active_set(),
    ))
}

/// `x_k = p_k b_k^H R^{-1} y`, the minimizer of the weighted ridge problem
/// `(y - Bx)^H Sigma^{-1} (y - Bx) + sum_k |x_k|^2 / p_k`.
pub fn amplitudes_from_powers(
    state: &SpiceState,
    dict: &Dictionary,
    signal: &Signal,
) -> Result<DVector<C64>> {
    dict.check_signal(signal)?;
    state.check_dims(dict)?;
    state.validate()?;
    let active = state.active_set();
    let z = linalg::covariance_inverse_action(
        state,
        dict,
        signal.samples(),
        &active,
        linalg::InversePath::Auto,
    )?;
    let products = linalg::adjoint_products(dict, &z, &active);
    let mut x = DVector::from_element(dict.n_atoms(), C64::new(0.0, 0.0));
    for (&k, g) in active.iter().zip(products) {
        x[k] = g * state.p[k];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn sinusoid_grid_endpoints() {
        let d = build_sinusoid_dictionary(50, 1000).unwrap();
        assert_eq!(d.columns().shape(), (50, 1000));
        let g = d.grid_frequencies().unwrap();
        assert_relative_eq!(g[0], 0.001);
        assert_relative_eq!(g[999], 1.0);
        assert!(d.is_uniform_grid());
        for n in d.column_norm_sqr() {
            assert_relative_eq!(*n, 50.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn integer_frequency_column_is_constant() {
        let d = build_sinusoid_dictionary(4, 4).unwrap();
        for n in 0..4 {
            assert!((d.columns()[(n, 3)] - c(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn half_band_column_alternates() {
        let d = build_sinusoid_dictionary(4, 8).unwrap();
        let expected = [1.0, -1.0, 1.0, -1.0];
        for (n, e) in expected.iter().enumerate() {
            assert!((d.columns()[(n, 3)] - c(*e, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn invalid_dictionary_sizes() {
        assert!(matches!(
            build_sinusoid_dictionary(1, 10),
            Err(SpiceError::Dimension(_))
        ));
        assert!(matches!(
            build_sinusoid_dictionary(4, 0),
            Err(SpiceError::Dimension(_))
        ));
    }

    #[test]
    fn zero_column_rejected() {
        let m =
            DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(
            Dictionary::from_matrix(m),
            Err(SpiceError::DegenerateInput(_))
        ));
    }

    #[test]
    fn mismatched_grid_rejected() {
        let d = build_sinusoid_dictionary(4, 8).unwrap();
        let mut grid = d.grid_frequencies().unwrap().to_vec();
        grid[2] += 0.01;
        assert!(Dictionary::with_grid(d.columns().clone(), grid).is_err());
    }

    #[test]
    fn weights_direct_ratio() {
        let y = Signal::from_real(&[2.0, 0.0]).unwrap();
        let b = Dictionary::from_matrix(DMatrix::from_element(2, 1, c(1.0, 0.0))).unwrap();
        let w = compute_weights(&y, &b).unwrap();
        assert_relative_eq!(w.signal[0], 0.5);
        assert!(w.noise.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn weights_for_sinusoids() {
        let d = build_sinusoid_dictionary(5, 12).unwrap();
        // ||y||^2 = 25
        let y = Signal::from_real(&[3.0, 4.0, 0.0, 0.0, 0.0]).unwrap();
        let w = compute_weights(&y, &d).unwrap();
        for v in &w.signal {
            assert_relative_eq!(*v, 5.0 / 25.0, epsilon = 1e-12);
        }
        assert!(w.noise.iter().all(|&v| v == 1.0 / 25.0));
    }

    #[test]
    fn zero_signal_has_no_weights() {
        let d = build_sinusoid_dictionary(3, 4).unwrap();
        let y = Signal::from_real(&[0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            compute_weights(&y, &d),
            Err(SpiceError::DegenerateInput(_))
        ));
    }

    #[test]
    fn noise_only_covariance_is_scaled_identity() {
        let d = build_sinusoid_dictionary(4, 6).unwrap();
        let s = SpiceState::new(vec![0.0; 6], vec![0.7; 4]).unwrap();
        let r = form_covariance(&s, &d).unwrap();
        assert!((r - DMatrix::<C64>::identity(4, 4) * c(0.7, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn rank_one_covariance() {
        let b = Dictionary::from_matrix(DMatrix::from_element(2, 1, c(1.0, 0.0))).unwrap();
        let s = SpiceState::new(vec![1.0], vec![0.0, 0.0]).unwrap();
        let r = form_covariance(&s, &b).unwrap();
        assert!((r - DMatrix::from_element(2, 2, c(1.0, 0.0))).norm() < 1e-14);
    }

    #[test]
    fn all_zero_state_is_singular() {
        let d = build_sinusoid_dictionary(3, 3).unwrap();
        let s = SpiceState {
            p: vec![0.0; 3],
            sigma: vec![0.0; 3],
        };
        assert!(matches!(
            form_covariance(&s, &d),
            Err(SpiceError::SingularCovariance(_))
        ));
    }

    #[test]
    fn zero_powers_give_zero_amplitudes() {
        let d = build_sinusoid_dictionary(4, 8).unwrap();
        let y = Signal::from_real(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        let s = SpiceState::new(vec![0.0; 8], vec![1.0; 4]).unwrap();
        let x = amplitudes_from_powers(&s, &d, &y).unwrap();
        assert!(x.iter().all(|v| *v == c(0.0, 0.0)));
    }

    #[test]
    fn unitary_dictionary_amplitudes_shrink_matched_filter() {
        // Normalized DFT matrix: B B^H = I, so R = (p + s) I.
        let n = 4;
        let d = build_sinusoid_dictionary(n, n).unwrap();
        let b = d.columns() / c((n as f64).sqrt(), 0.0);
        let dict = Dictionary::from_matrix(b.clone()).unwrap();
        let y =
            Signal::from_vec(vec![c(1.0, 0.5), c(-0.3, 2.0), c(0.0, -1.0), c(0.7, 0.7)]).unwrap();
        let (p, s) = (0.8, 0.3);
        let state = SpiceState::new(vec![p; n], vec![s; n]).unwrap();
        let x = amplitudes_from_powers(&state, &dict, &y).unwrap();
        let expected = b.adjoint() * y.samples() * c(p / (p + s), 0.0);
        assert!((x - expected).norm() < 1e-12);
    }
}
