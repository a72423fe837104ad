//! File formats: signal and dictionary CSVs in, estimate and trace CSVs out.
//!
//! Every writer goes through [`write_atomic`], so a failed run never leaves a
//! truncated file behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use tempfile::NamedTempFile;

use crate::error::{Result, SpiceError};
use crate::model::{Dictionary, Signal, C64};
use crate::solver::SolverTrace;

/// Writes `contents` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| SpiceError::Io(e.error))?;
    Ok(())
}

/// Serializes rows with a header through the csv crate and writes them atomically.
pub fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| SpiceError::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

#[derive(Deserialize)]
struct ComplexRecord {
    real: f64,
    imag: f64,
}

fn read_complex_csv(path: &Path) -> Result<Vec<C64>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize::<ComplexRecord>()
        .map(|r| {
            r.map(|c| C64::new(c.real, c.imag))
                .map_err(SpiceError::from)
        })
        .collect()
}

/// Reads a signal from a CSV with columns `real,imag`, one sample per row.
pub fn read_signal_csv(path: &Path) -> Result<Signal> {
    Signal::from_vec(read_complex_csv(path)?)
}

/// Reads an `n_samples x n_atoms` dictionary stored column-major as `real,imag` rows.
pub fn read_dictionary_csv(path: &Path, n_samples: usize) -> Result<Dictionary> {
    let values = read_complex_csv(path)?;
    if n_samples == 0 || values.is_empty() || values.len() % n_samples != 0 {
        return Err(SpiceError::Dimension(format!(
            "dictionary file holds {} entries, not a multiple of {n_samples} samples",
            values.len()
        )));
    }
    let n_atoms = values.len() / n_samples;
    Dictionary::from_matrix(DMatrix::from_column_slice(n_samples, n_atoms, &values))
}

#[derive(serde::Serialize)]
struct EstimateRow {
    index: usize,
    frequency: Option<f64>,
    p: f64,
    abs_x: f64,
    arg_x: f64,
}

/// One row per listed atom: grid index, frequency (when the dictionary has a grid), power and
/// amplitude. `indices = None` writes every atom.
pub fn write_estimate_csv(
    path: &Path,
    x_hat: &DVector<C64>,
    p: &[f64],
    dict: &Dictionary,
    indices: Option<&[usize]>,
) -> Result<()> {
    if x_hat.len() != dict.n_atoms() || p.len() != dict.n_atoms() {
        return Err(SpiceError::Dimension(format!(
            "estimate has {} amplitudes and {} powers for {} atoms",
            x_hat.len(),
            p.len(),
            dict.n_atoms()
        )));
    }
    let grid = dict.grid_frequencies();
    let all: Vec<usize>;
    let indices = match indices {
        Some(i) => i,
        None => {
            all = (0..x_hat.len()).collect();
            &all
        }
    };
    let rows: Vec<EstimateRow> = indices
        .iter()
        .map(|&k| EstimateRow {
            index: k,
            frequency: grid.map(|g| g[k]),
            p: p[k],
            abs_x: x_hat[k].norm(),
            arg_x: x_hat[k].arg(),
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(serde::Serialize)]
struct TraceRow {
    iter: usize,
    objective: f64,
    lambda: Option<f64>,
    active_set: usize,
    rel_change: Option<f64>,
}

/// Per-iteration trace; row 0 carries the objective of the initial state and leaves the
/// per-step columns empty.
pub fn write_trace_csv(path: &Path, trace: &SolverTrace) -> Result<()> {
    let mut rows = vec![TraceRow {
        iter: 0,
        objective: trace.initial_objective,
        lambda: None,
        active_set: trace.records.first().map_or(0, |r| r.active_set),
        rel_change: None,
    }];
    rows.extend(trace.records.iter().map(|r| TraceRow {
        iter: r.iteration,
        objective: r.objective,
        lambda: Some(r.lambda),
        active_set: r.active_set,
        rel_change: Some(r.rel_change),
    }));
    write_csv(path, &rows)
}

/// Creates `dir` (and parents) if it does not exist yet.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}
