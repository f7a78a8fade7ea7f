//! Feature baselines for the predictor: common spatial patterns and the
//! dynamic-mode-decomposition spectrum.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::signal::Epoch;
use crate::spectral::{self, FeatureSeries};
use crate::{Error, Result};

type C64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct CspFilters {
    /// One unit-norm spatial filter per row.
    pub filters: DMatrix<f64>,
    /// Variance-ratio eigenvalues, descending.
    pub eigvals: Vec<f64>,
}

fn normalized_covariance(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = linalg::covariance(&linalg::center_rows(x, &linalg::row_means(x)));
    let tr = c.trace();
    if !(tr > 0.0) {
        return Err(Error::Degenerate("CSP segment has zero variance".into()));
    }
    Ok(c / tr)
}

fn mean_covariance(class: &[DMatrix<f64>], what: &str) -> Result<DMatrix<f64>> {
    if class.len() < 2 {
        return Err(Error::invalid(format!("CSP needs at least 2 {what} segments, got {}", class.len())));
    }
    let m = class[0].nrows();
    let mut acc = DMatrix::zeros(m, m);
    for x in class {
        if x.nrows() != m {
            return Err(Error::DimensionMismatch {
                context: "CSP segment channels",
                expected: m,
                actual: x.nrows(),
            });
        }
        acc += normalized_covariance(x)?;
    }
    Ok(acc / class.len() as f64)
}

fn check_rank(c: &DMatrix<f64>) -> Result<()> {
    let (vals, _) = linalg::sym_eigen_desc(c);
    let tol = vals[0].abs() * 1e-10;
    let rank = vals.iter().filter(|v| **v > tol).count();
    if rank < c.nrows() {
        return Err(Error::RankDeficient { rank, dim: c.nrows() });
    }
    Ok(())
}

/// Filters `w` solving `Ca·w = λ·Cb·w` for the `min(3, channels)` largest λ,
/// from the averages of trace-normalized segment covariances.
pub fn csp_fit(class_a: &[DMatrix<f64>], class_b: &[DMatrix<f64>]) -> Result<CspFilters> {
    let ca = mean_covariance(class_a, "class A")?;
    let cb = mean_covariance(class_b, "class B")?;
    if ca.nrows() != cb.nrows() {
        return Err(Error::DimensionMismatch {
            context: "CSP class channels",
            expected: ca.nrows(),
            actual: cb.nrows(),
        });
    }
    check_rank(&ca)?;
    check_rank(&cb)?;
    let (bvals, bvecs) = linalg::sym_eigen_desc(&cb);
    let inv_sqrt = &bvecs * DMatrix::from_diagonal(&bvals.map(|v| 1.0 / v.sqrt())) * bvecs.transpose();
    let (vals, vecs) = linalg::sym_eigen_desc(&(&inv_sqrt * &ca * &inv_sqrt));
    let k = 3.min(ca.nrows());
    let mut filters = DMatrix::zeros(k, ca.nrows());
    for i in 0..k {
        let mut w = &inv_sqrt * vecs.column(i);
        w /= w.norm();
        let pivot = w.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
        if pivot < 0.0 {
            w.neg_mut();
        }
        filters.set_row(i, &w.transpose());
    }
    Ok(CspFilters {
        filters,
        eigvals: vals.iter().take(k).copied().collect(),
    })
}

/// Non-braking `[0, t0 − 500 ms)` and braking `[t0, t0 + 500 ms)` segments of
/// each epoch.
pub fn csp_class_segments(epochs: &[Epoch]) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let mut rest = Vec::new();
    let mut brake = Vec::new();
    for e in epochs {
        let half = (0.5 * e.fs()).round() as usize;
        let t0 = e.t0_index();
        if t0 <= half + 1 || t0 + half > e.n_samples() {
            return Err(Error::invalid("epoch too short for 500 ms CSP class windows"));
        }
        rest.push(e.eeg().columns(0, t0 - half).into_owned());
        brake.push(e.eeg().columns(t0, half).into_owned());
    }
    Ok((rest, brake))
}

/// Sliding band power of each filter's projection.
pub fn csp_feature_series(
    filters: &CspFilters,
    data: &DMatrix<f64>,
    fs: f64,
    window_ms: f64,
    step_ms: f64,
    band: (f64, f64),
) -> Result<Vec<FeatureSeries>> {
    if filters.filters.ncols() != data.nrows() {
        return Err(Error::DimensionMismatch {
            context: "CSP filter width vs data channels",
            expected: filters.filters.ncols(),
            actual: data.nrows(),
        });
    }
    let projected = &filters.filters * data;
    projected
        .row_iter()
        .map(|row| {
            let x: Vec<f64> = row.iter().copied().collect();
            spectral::sliding_band_power(&x, fs, window_ms, step_ms, band)
        })
        .collect()
}

/// Column `t` stacks `x(t), x(t+1), …, x(t+d−1)`; row block `k` is the data
/// shifted by `k` samples.
pub fn hankel_embed(data: &DMatrix<f64>, delays: usize) -> Result<DMatrix<f64>> {
    let (m, n) = data.shape();
    if delays == 0 || delays >= n {
        return Err(Error::invalid(format!("delay depth {delays} needs 1 ≤ d < {n} samples")));
    }
    let cols = n - delays + 1;
    Ok(DMatrix::from_fn(m * delays, cols, |r, t| data[(r % m, t + r / m)]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmdResult {
    /// Unit-norm modes, one per column.
    pub modes: DMatrix<C64>,
    pub eigenvalues: Vec<C64>,
    /// Least-squares weights of the modes on the first snapshot.
    pub amplitudes: Vec<C64>,
    pub hankel_delays: usize,
}

impl DmdResult {
    /// (frequency in Hz, |amplitude|²) per mode.
    pub fn spectrum(&self, fs: f64) -> Vec<(f64, f64)> {
        self.eigenvalues
            .iter()
            .zip(&self.amplitudes)
            .map(|(l, b)| (l.arg().abs() * fs / (2.0 * PI), b.norm_sqr()))
            .collect()
    }
}

fn complexify(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

/// Right singular vector of `a − λI` with the smallest singular value.
fn null_vector(a: &DMatrix<C64>, lambda: C64) -> DVector<C64> {
    let n = a.nrows();
    let shifted = a - DMatrix::<C64>::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    // singular values are sorted descending
    vt.row(n - 1).adjoint()
}

/// Exact DMD of the snapshot matrix with a rank-truncated SVD.
pub fn dmd_fit(embedded: &DMatrix<f64>, rank: usize, hankel_delays: usize) -> Result<DmdResult> {
    let (rows, cols) = embedded.shape();
    if cols < 2 || rows == 0 {
        return Err(Error::invalid("DMD needs at least two snapshots"));
    }
    if rank == 0 {
        return Err(Error::invalid("DMD rank must be at least 1"));
    }
    let x1 = embedded.columns(0, cols - 1).into_owned();
    let x2 = embedded.columns(1, cols - 1).into_owned();
    let svd = x1.clone().svd(true, true);
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    if !(smax > 0.0) {
        return Err(Error::Degenerate("DMD snapshots are all zero".into()));
    }
    let r = sigma.iter().take(rank).filter(|s| **s > smax * 1e-10).count();
    let u = svd.u.as_ref().unwrap().columns(0, r).into_owned();
    let v = svd.v_t.as_ref().unwrap().rows(0, r).transpose();
    let sinv = DMatrix::from_diagonal(&DVector::from_iterator(r, sigma.iter().take(r).map(|s| 1.0 / s)));
    let lift = &x2 * &v * &sinv;
    let atilde = u.transpose() * &lift;
    let eigenvalues: Vec<C64> = atilde.complex_eigenvalues().iter().copied().collect();
    if eigenvalues.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
        return Err(Error::Degenerate("DMD operator has non-finite eigenvalues".into()));
    }
    let at_c = complexify(&atilde);
    let lift_c = complexify(&lift);
    let u_c = complexify(&u);
    let mut modes = DMatrix::<C64>::zeros(rows, r);
    for (k, &lambda) in eigenvalues.iter().enumerate() {
        let w = null_vector(&at_c, lambda);
        let mut phi = &lift_c * &w;
        if phi.norm() <= 1e-12 * w.norm() {
            // λ ≈ 0: the exact mode vanishes; use the projected one
            phi = &u_c * &w;
        }
        let norm = phi.norm();
        modes.set_column(k, &(phi / C64::new(norm, 0.0)));
    }
    let first = complexify(&x1.columns(0, 1).into_owned());
    let b = modes
        .clone()
        .svd(true, true)
        .solve(&first, 1e-12)
        .map_err(|e| Error::Degenerate(format!("DMD amplitude solve failed: {e}")))?;
    Ok(DmdResult {
        modes,
        eigenvalues,
        amplitudes: b.iter().copied().collect(),
        hankel_delays,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmdConfig {
    pub delays: usize,
    pub rank: usize,
}

impl Default for DmdConfig {
    fn default() -> Self {
        Self { delays: 10, rank: 8 }
    }
}

/// Per trailing window: Σ|b|² over modes whose frequency `|arg λ|·fs/2π` lies
/// in the band. All-zero windows give 0.
pub fn dmd_spectrum_series(
    data: &DMatrix<f64>,
    fs: f64,
    window_ms: f64,
    step_ms: f64,
    band: (f64, f64),
    cfg: &DmdConfig,
) -> Result<FeatureSeries> {
    let n = (window_ms * fs / 1000.0).round() as usize;
    let step = (step_ms * fs / 1000.0).round() as usize;
    if n < 2 * cfg.delays || step == 0 {
        return Err(Error::invalid(format!(
            "window of {n} samples is shorter than twice the {} delays",
            cfg.delays
        )));
    }
    if data.ncols() < n {
        return Err(Error::invalid("data shorter than one DMD window"));
    }
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut end = n;
    while end <= data.ncols() {
        let window = data.columns(end - n, n).into_owned();
        let value = if window.iter().all(|v| *v == 0.0) {
            0.0
        } else {
            let fit = dmd_fit(&hankel_embed(&window, cfg.delays)?, cfg.rank, cfg.delays)?;
            fit.spectrum(fs)
                .iter()
                .filter(|(f, _)| *f >= band.0 && *f < band.1)
                .map(|(_, e)| e)
                .sum()
        };
        timestamps.push(end as f64 * 1000.0 / fs);
        values.push(value);
        end += step;
    }
    Ok(FeatureSeries {
        timestamps_ms: timestamps,
        values,
        window_ms,
        step_ms,
        band,
    })
}
