//! Peak picking, support matching and frequency error for line-spectrum estimates.

use nalgebra::{DMatrix, DVector, SVD};
use serde::Serialize;

use crate::error::{Result, SpiceError};
use crate::model::{Dictionary, Signal, C64};

/// Fraction of the largest magnitude a peak must reach.
pub const DEFAULT_THRESHOLD: f64 = 0.2;
/// Allowed distance, in grid steps, between a matched estimate and its true frequency.
pub const DEFAULT_GRID_TOLERANCE: usize = 2;

/// Relative singular-value cutoff for the least-squares refit.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Peak {
    pub index: usize,
    pub frequency: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub x_hat: DVector<C64>,
    pub peaks: Vec<Peak>,
    pub support: Vec<usize>,
    pub model_order: usize,
}

impl SpectralEstimate {
    pub fn frequencies(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.frequency).collect()
    }
}

/// Distance between two normalized frequencies on the unit circle.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Indices with `|x_k| >= threshold_fraction * max |x|`, in increasing order.
pub fn threshold_elements(x_hat: &DVector<C64>, threshold_fraction: f64) -> Result<Vec<usize>> {
    check_threshold(threshold_fraction)?;
    let max = x_hat.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(Vec::new());
    }
    let cut = threshold_fraction * max;
    Ok(x_hat
        .iter()
        .enumerate()
        .filter(|(_, v)| v.norm() >= cut)
        .map(|(k, _)| k)
        .collect())
}

fn check_threshold(threshold_fraction: f64) -> Result<()> {
    if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
        return Err(SpiceError::InvalidParameter(format!(
            "threshold fraction must lie in (0, 1], got {threshold_fraction}"
        )));
    }
    Ok(())
}

/// Thresholds `x_hat`, then merges each run of adjacent retained bins into one peak at the
/// run's largest magnitude. Adjacency wraps from the last grid bin to the first.
pub fn pick_peaks(
    x_hat: &DVector<C64>,
    grid: &[f64],
    threshold_fraction: f64,
) -> Result<SpectralEstimate> {
    if grid.len() != x_hat.len() {
        return Err(SpiceError::Dimension(format!(
            "grid has {} points, estimate has {}",
            grid.len(),
            x_hat.len()
        )));
    }
    let kept = threshold_elements(x_hat, threshold_fraction)?;
    let m = x_hat.len();
    let mut retained = vec![false; m];
    for &k in &kept {
        retained[k] = true;
    }
    let mag = |k: usize| x_hat[k].norm();

    let mut peak_indices = Vec::new();
    if kept.len() == m {
        peak_indices.push(argmax_first(0..m, mag));
    } else if !kept.is_empty() {
        // Start scanning right after a gap so no run is split by the wrap-around.
        let start = (0..m).find(|&k| !retained[k]).unwrap();
        let mut run: Vec<usize> = Vec::new();
        for step in 1..=m {
            let k = (start + step) % m;
            if retained[k] {
                run.push(k);
            } else if !run.is_empty() {
                peak_indices.push(argmax_first(run.drain(..), mag));
            }
        }
        if !run.is_empty() {
            peak_indices.push(argmax_first(run.drain(..), mag));
        }
    }
    peak_indices.sort_unstable();
    let peaks: Vec<Peak> = peak_indices
        .iter()
        .map(|&k| Peak {
            index: k,
            frequency: grid[k],
            magnitude: mag(k),
        })
        .collect();
    Ok(SpectralEstimate {
        x_hat: x_hat.clone(),
        model_order: peaks.len(),
        support: peak_indices,
        peaks,
    })
}

/// Largest magnitude; ties go to the smallest index.
fn argmax_first(indices: impl Iterator<Item = usize>, mag: impl Fn(usize) -> f64) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for k in indices {
        let v = mag(k);
        match best {
            Some((bk, bv)) if v < bv || (v == bv && k > bk) => {}
            _ => best = Some((k, v)),
        }
    }
    best.expect("non-empty run").0
}

/// Greedy one-to-one assignment: repeatedly pair the closest unused (estimate, truth) pair.
/// Returns `(estimate index, truth index, distance)` triples.
pub fn greedy_assignment(estimated: &[f64], truth: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(f64, usize, usize)> = estimated
        .iter()
        .enumerate()
        .flat_map(|(i, &e)| {
            truth
                .iter()
                .enumerate()
                .map(move |(j, &t)| (circular_distance(e, t), i, j))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_e = vec![false; estimated.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for (d, i, j) in pairs {
        if !used_e[i] && !used_t[j] {
            used_e[i] = true;
            used_t[j] = true;
            out.push((i, j, d));
        }
    }
    out
}

/// True when the model order is right and every greedy pair lies within
/// `grid_tolerance * grid_spacing` (circular distance).
pub fn match_support(
    estimate: &SpectralEstimate,
    true_frequencies: &[f64],
    grid_tolerance: usize,
    grid_spacing: f64,
) -> bool {
    if estimate.model_order != true_frequencies.len() {
        return false;
    }
    // Relative slack absorbs rounding in differences of grid frequencies.
    let limit = grid_tolerance as f64 * grid_spacing * (1.0 + 1e-9);
    greedy_assignment(&estimate.frequencies(), true_frequencies)
        .iter()
        .all(|&(_, _, d)| d <= limit)
}

/// Frequency RMSE over the `P` largest peaks, `P` being the number of true components.
/// Returns `None` (trial excluded) when fewer than `P` peaks were found.
pub fn rmse_frequencies(estimate: &SpectralEstimate, true_frequencies: &[f64]) -> Option<f64> {
    let p = true_frequencies.len();
    if p == 0 || estimate.peaks.len() < p {
        return None;
    }
    let mut peaks: Vec<&Peak> = estimate.peaks.iter().collect();
    peaks.sort_by(|a, b| {
        b.magnitude
            .total_cmp(&a.magnitude)
            .then(a.index.cmp(&b.index))
    });
    let selected: Vec<f64> = peaks[..p].iter().map(|pk| pk.frequency).collect();
    let sum: f64 = greedy_assignment(&selected, true_frequencies)
        .iter()
        .map(|&(_, _, d)| d * d)
        .sum();
    Some((sum / p as f64).sqrt())
}

/// Least-squares amplitudes on the support columns.
pub fn refit_amplitudes(
    signal: &Signal,
    dict: &Dictionary,
    support: &[usize],
) -> Result<DVector<C64>> {
    dict.check_signal(signal)?;
    if support.is_empty() {
        return Ok(DVector::zeros(0));
    }
    if support.len() > dict.n_samples() {
        return Err(SpiceError::RankDeficient(format!(
            "support of size {} exceeds {} samples",
            support.len(),
            dict.n_samples()
        )));
    }
    if let Some(&k) = support.iter().find(|&&k| k >= dict.n_atoms()) {
        return Err(SpiceError::Dimension(format!(
            "support index {k} out of range"
        )));
    }
    let b = dict.columns();
    let sub = DMatrix::from_fn(dict.n_samples(), support.len(), |i, j| b[(i, support[j])]);
    let svd = SVD::new(sub, true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > RANK_TOL * smax) {
        return Err(SpiceError::RankDeficient(format!(
            "support columns have condition {:.3e}",
            smax / smin
        )));
    }
    svd.solve(signal.samples(), 0.0)
        .map_err(|e| SpiceError::LinearSolve(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_sinusoid_dictionary;

    fn mags(v: &[f64]) -> DVector<C64> {
        DVector::from_iterator(v.len(), v.iter().map(|&m| C64::new(m, 0.0)))
    }

    fn grid(m: usize) -> Vec<f64> {
        (1..=m).map(|k| k as f64 / m as f64).collect()
    }

    #[test]
    fn single_element_single_peak() {
        let est = pick_peaks(&mags(&[0.0, 0.0, 3.0, 0.0]), &grid(4), 0.2).unwrap();
        assert_eq!(est.support, vec![2]);
        assert_eq!(est.model_order, 1);
    }

    #[test]
    fn threshold_keeps_elements_at_or_above_fraction() {
        assert_eq!(
            threshold_elements(&mags(&[1.0, 0.25, 0.1]), 0.2).unwrap(),
            vec![0, 1]
        );
        // Separated bins are distinct peaks.
        let est = pick_peaks(&mags(&[1.0, 0.0, 0.25, 0.0, 0.1, 0.0]), &grid(6), 0.2).unwrap();
        assert_eq!(est.support, vec![0, 2]);
    }

    #[test]
    fn adjacent_bins_merge_at_larger() {
        let est = pick_peaks(&mags(&[0.0, 0.9, 1.0, 0.0, 0.0]), &grid(5), 0.2).unwrap();
        assert_eq!(est.support, vec![2]);
        assert_eq!(est.peaks[0].magnitude, 1.0);
    }

    #[test]
    fn runs_merge_across_wrap() {
        let est = pick_peaks(&mags(&[0.8, 0.0, 0.0, 0.0, 1.0]), &grid(5), 0.2).unwrap();
        assert_eq!(est.support, vec![4]);
    }

    #[test]
    fn zero_estimate_is_empty() {
        let est = pick_peaks(&mags(&[0.0; 4]), &grid(4), 0.2).unwrap();
        assert_eq!(est.model_order, 0);
        assert!(pick_peaks(&mags(&[1.0; 4]), &grid(4), 0.0).is_err());
    }

    #[test]
    fn support_matching_rules() {
        let g = grid(1000);
        let mut x = mags(&[0.0; 1000]);
        x[99] = C64::new(1.0, 0.0); // 0.100
        let est = pick_peaks(&x, &g, 0.2).unwrap();
        assert!(match_support(&est, &[0.100], 2, 0.001));
        assert!(!match_support(&est, &[0.103], 2, 0.001));
        assert!(!match_support(&est, &[0.100, 0.5], 2, 0.001));

        let mut wrap = mags(&[0.0; 1000]);
        wrap[998] = C64::new(1.0, 0.0); // 0.999
        let est = pick_peaks(&wrap, &g, 0.2).unwrap();
        assert!(match_support(&est, &[0.001], 2, 0.001));
    }

    #[test]
    fn rmse_uses_largest_peaks() {
        let g = grid(1000);
        let mut x = mags(&[0.0; 1000]);
        x[99] = C64::new(1.0, 0.0);
        let est = pick_peaks(&x, &g, 0.2).unwrap();
        assert_eq!(rmse_frequencies(&est, &[0.100]), Some(0.0));
        let e = rmse_frequencies(&est, &[0.102]).unwrap();
        assert!((e - 0.002).abs() < 1e-12);
        assert_eq!(rmse_frequencies(&est, &[0.1, 0.3]), None);

        // Five peaks against four truths: the four largest are scored.
        let mut y = mags(&[0.0; 1000]);
        for (k, m) in [(99, 1.0), (199, 0.9), (299, 0.8), (399, 0.7), (599, 0.3)] {
            y[k] = C64::new(m, 0.0);
        }
        let est = pick_peaks(&y, &g, 0.2).unwrap();
        assert_eq!(est.model_order, 5);
        let e = rmse_frequencies(&est, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(e < 1e-12);
    }

    #[test]
    fn refit_recovers_exact_amplitude() {
        let d = build_sinusoid_dictionary(16, 64).unwrap();
        let y = Signal::new(d.columns().column(10) * C64::new(2.0, 0.0)).unwrap();
        let a = refit_amplitudes(&y, &d, &[10]).unwrap();
        assert!((a[0] - C64::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn refit_orthogonal_atoms_are_projections() {
        // On-grid Fourier atoms with M = N are orthogonal.
        let d = build_sinusoid_dictionary(8, 8).unwrap();
        let y =
            Signal::from_vec((0..8).map(|n| C64::new(n as f64, 1.0 - n as f64)).collect()).unwrap();
        let a = refit_amplitudes(&y, &d, &[1, 5]).unwrap();
        for (j, &k) in [1usize, 5].iter().enumerate() {
            let col = d.columns().column(k);
            let proj = col.dotc(y.samples()) / C64::new(8.0, 0.0);
            assert!((a[j] - proj).norm() < 1e-12);
        }
    }

    #[test]
    fn refit_rejects_duplicate_columns() {
        let d = build_sinusoid_dictionary(4, 8).unwrap();
        let y = Signal::from_real(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(
            refit_amplitudes(&y, &d, &[2, 2]),
            Err(SpiceError::RankDeficient(_))
        ));
    }
}
