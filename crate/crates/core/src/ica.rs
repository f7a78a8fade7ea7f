//! Infomax independent component analysis.
//!
//! Data are centred and sphered, then an unmixing rotation is learned by
//! stochastic natural-gradient ascent on the joint entropy of logistic-squashed
//! outputs,
//!
//! ```text
//! U  = W·Z_batch + b·1ᵀ
//! W ← W + η·(B·I + (1 − 2·g(U))·Uᵀ)·W
//! b ← b + η·(1 − 2·g(U))·1
//! ```
//!
//! with `g` the logistic function and `B` the batch size. The learning rate is
//! annealed when successive epoch updates turn by more than the anneal angle.
//! Each fitted component is scaled to unit variance with its scalp column
//! absorbing the scale; the sign makes the column's largest-magnitude entry
//! positive, and components are ordered by descending scalp-column energy.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::linalg;
use crate::{Error, Result};

/// Eigenvalues below this fraction of the largest count as zero rank.
const RANK_TOLERANCE: f64 = 1e-10;
const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WhitenMode {
    /// Square sphering; rank-deficient covariance is an error.
    Full,
    /// Keep the leading principal subspace of numerical rank.
    Reduced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpheringTransform {
    pub mean: DVector<f64>,
    /// k × m map from centred data to whitened coordinates.
    pub matrix: DMatrix<f64>,
    /// m × k right inverse of `matrix` on the retained subspace.
    pub inverse: DMatrix<f64>,
}

impl SpheringTransform {
    pub fn apply(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.nrows() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "sphering input channels",
                expected: self.mean.len(),
                actual: data.nrows(),
            });
        }
        Ok(&self.matrix * linalg::center_rows(data, &self.mean))
    }
}

/// Square sphering of channels × samples data.
pub fn whiten(data: &DMatrix<f64>) -> Result<(DMatrix<f64>, SpheringTransform)> {
    whiten_with(data, WhitenMode::Full)
}

pub fn whiten_with(data: &DMatrix<f64>, mode: WhitenMode) -> Result<(DMatrix<f64>, SpheringTransform)> {
    let (m, n) = data.shape();
    if m == 0 || n <= m {
        return Err(Error::invalid(format!(
            "whitening needs more samples than channels ({n} samples, {m} channels)"
        )));
    }
    let mean = linalg::row_means(data);
    let xc = linalg::center_rows(data, &mean);
    let cov = linalg::covariance(&xc);
    let (vals, vecs) = linalg::sym_eigen_desc(&cov);
    let top = vals[0];
    if !(top > 0.0) {
        return Err(Error::RankDeficient { rank: 0, dim: m });
    }
    let rank = vals.iter().filter(|&&v| v > top * RANK_TOLERANCE).count();
    let (matrix, inverse) = match mode {
        WhitenMode::Full => {
            if rank < m {
                return Err(Error::RankDeficient { rank, dim: m });
            }
            let inv_sqrt = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
            let sqrt = DMatrix::from_diagonal(&vals.map(f64::sqrt));
            (
                &vecs * inv_sqrt * vecs.transpose(),
                &vecs * sqrt * vecs.transpose(),
            )
        }
        WhitenMode::Reduced => {
            let ek = vecs.columns(0, rank).into_owned();
            let vk = vals.rows(0, rank).into_owned();
            (
                DMatrix::from_diagonal(&vk.map(|v| 1.0 / v.sqrt())) * ek.transpose(),
                &ek * DMatrix::from_diagonal(&vk.map(f64::sqrt)),
            )
        }
    };
    let z = &matrix * &xc;
    Ok((
        z,
        SpheringTransform {
            mean,
            matrix,
            inverse,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfomaxConfig {
    pub seed: u64,
    /// `None` selects 1e-3 / ln(components + 1).
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once ‖ΔW‖_F / ‖W‖_F over one epoch falls below this.
    pub tolerance: f64,
    pub anneal_factor: f64,
    pub anneal_angle_deg: f64,
    pub whiten: WhitenMode,
}

impl Default for InfomaxConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            learning_rate: None,
            batch_size: 256,
            max_epochs: 512,
            tolerance: 1e-6,
            anneal_factor: 0.9,
            anneal_angle_deg: 60.0,
            whiten: WhitenMode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcaDecomposition {
    /// k × m; `S = unmixing · (X − mean)`.
    pub unmixing: DMatrix<f64>,
    /// m × k; `unmixing · mixing = I`.
    pub mixing: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_entropy_delta: f64,
    /// Entropy surrogate `ln|det W| + E[Σ ln g'(u)]` after each epoch.
    pub entropy_trace: Vec<f64>,
}

impl IcaDecomposition {
    pub fn n_components(&self) -> usize {
        self.unmixing.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.unmixing.ncols()
    }

    /// Identity decomposition (W = A = I, zero mean).
    pub fn identity(m: usize) -> Self {
        Self {
            unmixing: DMatrix::identity(m, m),
            mixing: DMatrix::identity(m, m),
            mean: DVector::zeros(m),
            converged: true,
            iterations: 0,
            final_entropy_delta: 0.0,
            entropy_trace: Vec::new(),
        }
    }

    /// Builds a decomposition from an explicit square unmixing matrix.
    pub fn from_unmixing(unmixing: DMatrix<f64>, mean: DVector<f64>) -> Result<Self> {
        if !unmixing.is_square() || unmixing.nrows() != mean.len() {
            return Err(Error::invalid("unmixing must be square and match the mean length"));
        }
        let mixing = linalg::inverse(&unmixing, "unmixing matrix")?;
        Ok(Self {
            unmixing,
            mixing,
            mean,
            converged: true,
            iterations: 0,
            final_entropy_delta: 0.0,
            entropy_trace: Vec::new(),
        })
    }
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Mean over samples of `ln|det W| + Σ_i ln g'(u_i)`.
fn entropy_surrogate(w: &DMatrix<f64>, bias: &DVector<f64>, z: &DMatrix<f64>) -> f64 {
    let log_det = w.clone().lu().determinant().abs().ln();
    let u = w * z;
    let mut acc = 0.0;
    for col in u.column_iter() {
        for (v, b) in col.iter().zip(bias.iter()) {
            let y = logistic(v + b);
            acc += (y * (1.0 - y)).max(f64::MIN_POSITIVE).ln();
        }
    }
    log_det + acc / z.ncols() as f64
}

/// Learns an unmixing rotation for already-whitened data. The returned
/// decomposition works in whitened coordinates (zero mean, no sphering).
pub fn fit_infomax(whitened: &DMatrix<f64>, cfg: &InfomaxConfig) -> Result<IcaDecomposition> {
    let (k, n) = whitened.shape();
    if k == 0 || n < 2 {
        return Err(Error::invalid("infomax needs at least one component and two samples"));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(Error::invalid("batch size and epoch limit must be positive"));
    }
    let mut lr = cfg
        .learning_rate
        .unwrap_or(1e-3 / ((k + 1) as f64).ln());
    let block = cfg.batch_size.min(n);
    let n_batches = n / block;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = DMatrix::<f64>::identity(k, k);
    let mut bias = DVector::<f64>::zeros(k);
    let eye_b = DMatrix::<f64>::identity(k, k) * block as f64;
    let mut prev_delta: Option<DMatrix<f64>> = None;
    let mut entropy_trace = Vec::new();
    let mut converged = false;
    let mut epochs = 0;
    let mut batch = DMatrix::<f64>::zeros(k, block);

    while epochs < cfg.max_epochs {
        epochs += 1;
        let w_start = w.clone();
        order.shuffle(&mut rng);
        for b in 0..n_batches {
            for (j, &idx) in order[b * block..(b + 1) * block].iter().enumerate() {
                batch.set_column(j, &whitened.column(idx));
            }
            let mut u = &w * &batch;
            for mut col in u.column_iter_mut() {
                col += &bias;
            }
            let y = u.map(|v| 1.0 - 2.0 * logistic(v));
            let grad = (&eye_b + &y * u.transpose()) * &w;
            w += grad * lr;
            bias += y.column_sum() * lr;
            if w.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
                return Err(Error::Divergence(format!(
                    "infomax at epoch {epochs} (learning rate {lr:e})"
                )));
            }
        }
        entropy_trace.push(entropy_surrogate(&w, &bias, whitened));
        let delta = &w - &w_start;
        let rel_change = linalg::frobenius(&delta) / linalg::frobenius(&w);
        if let Some(prev) = &prev_delta {
            let denom = linalg::frobenius(prev) * linalg::frobenius(&delta);
            if denom > 0.0 {
                let cos = (prev.dot(&delta) / denom).clamp(-1.0, 1.0);
                if cos.acos().to_degrees() > cfg.anneal_angle_deg {
                    lr *= cfg.anneal_factor;
                }
            }
        }
        prev_delta = Some(delta);
        if rel_change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let final_entropy_delta = match entropy_trace.as_slice() {
        [.., a, b] => b - a,
        _ => 0.0,
    };
    let mixing = linalg::inverse(&w, "infomax weight matrix")?;
    Ok(IcaDecomposition {
        unmixing: w,
        mixing,
        mean: DVector::zeros(k),
        converged,
        iterations: epochs,
        final_entropy_delta,
        entropy_trace,
    })
}

/// `(W·Wᵀ)^{-1/2}·W`: the orthogonal matrix nearest to `w` up to row scale.
pub fn symmetric_decorrelation(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = linalg::sym_eigen_desc(&(w * w.transpose()));
    if vals.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Degenerate("infomax weight matrix is singular".into()));
    }
    let inv_sqrt = &vecs * DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt())) * vecs.transpose();
    Ok(inv_sqrt * w)
}

/// Centre, sphere, run infomax, compose and canonicalize.
///
/// Unmixing whitened data is a rotation, so the learned weights are projected
/// onto the orthogonal group before composing with the sphering map; the
/// components are then exactly uncorrelated on the fitting data.
pub fn decompose(data: &DMatrix<f64>, cfg: &InfomaxConfig) -> Result<IcaDecomposition> {
    let (z, sphere) = whiten_with(data, cfg.whiten)?;
    let fit = fit_infomax(&z, cfg)?;
    let rotation = symmetric_decorrelation(&fit.unmixing)?;
    let unmixing = &rotation * &sphere.matrix;
    let mixing = &sphere.inverse * rotation.transpose();
    let raw = IcaDecomposition {
        unmixing,
        mixing,
        mean: sphere.mean.clone(),
        ..fit
    };
    Ok(canonicalize(raw, data))
}

/// Unit-variance sources, sign by the scalp column's largest entry, order by
/// descending scalp-column energy.
pub fn canonicalize(mut d: IcaDecomposition, data: &DMatrix<f64>) -> IcaDecomposition {
    let xc = linalg::center_rows(data, &d.mean);
    let s = &d.unmixing * &xc;
    let n = s.ncols().max(1) as f64;
    let k = d.n_components();
    for i in 0..k {
        let var = s.row(i).iter().map(|v| v * v).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            d.unmixing.row_mut(i).scale_mut(1.0 / sd);
            d.mixing.column_mut(i).scale_mut(sd);
        }
        let pivot = d
            .mixing
            .column(i)
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            d.unmixing.row_mut(i).neg_mut();
            d.mixing.column_mut(i).neg_mut();
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    let energy: Vec<f64> = (0..k).map(|i| d.mixing.column(i).norm_squared()).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
    let unmixing = DMatrix::from_fn(k, d.n_channels(), |r, c| d.unmixing[(order[r], c)]);
    let mixing = DMatrix::from_fn(d.n_channels(), k, |r, c| d.mixing[(r, order[c])]);
    d.unmixing = unmixing;
    d.mixing = mixing;
    d
}

/// `S = W·(data − mean)`; row `i` is the waveform of component `i`.
pub fn sources(decomp: &IcaDecomposition, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if data.nrows() != decomp.n_channels() {
        return Err(Error::DimensionMismatch {
            context: "source extraction channels",
            expected: decomp.n_channels(),
            actual: data.nrows(),
        });
    }
    Ok(&decomp.unmixing * linalg::center_rows(data, &decomp.mean))
}

/// Column `i` of the mixing matrix: the component's fixed scalp projection.
pub fn scalp_column(decomp: &IcaDecomposition, i: usize) -> Result<DVector<f64>> {
    if i >= decomp.n_components() {
        return Err(Error::invalid(format!(
            "component {i} out of range ({} components)",
            decomp.n_components()
        )));
    }
    Ok(decomp.mixing.column(i).into_owned())
}

pub const SECTION_MAGIC: &[u8; 4] = b"ICAD";
pub const SECTION_VERSION: u32 = 1;

fn write_matrix(w: &mut Writer, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.f64(m[(r, c)]);
        }
    }
}

fn read_matrix(r: &mut Reader, rows: usize, cols: usize, field: &'static str) -> Result<DMatrix<f64>> {
    let v = r.f64_vec(rows * cols, field)?;
    Ok(DMatrix::from_row_slice(rows, cols, &v))
}

/// Versioned binary section, matrices row-major f64.
pub fn encode_section(d: &IcaDecomposition, w: &mut Writer) {
    w.bytes(SECTION_MAGIC);
    w.u32(SECTION_VERSION);
    w.len_u32(d.n_components());
    w.len_u32(d.n_channels());
    write_matrix(w, &d.unmixing);
    write_matrix(w, &d.mixing);
    w.f64_slice(d.mean.as_slice());
    w.u32(u32::from(d.converged));
    w.len_u32(d.iterations);
    w.f64(d.final_entropy_delta);
    w.len_u32(d.entropy_trace.len());
    w.f64_slice(&d.entropy_trace);
}

pub fn decode_section(r: &mut Reader) -> Result<IcaDecomposition> {
    r.expect_magic(SECTION_MAGIC, "ica section magic")?;
    let at = r.offset();
    let version = r.u32("ica section version")?;
    if version != SECTION_VERSION {
        return Err(Error::Format {
            offset: at,
            field: "ica section version",
            reason: format!("unsupported version {version}"),
        });
    }
    let k = r.u32("component count")? as usize;
    let m = r.u32("channel count")? as usize;
    if k.saturating_mul(m).saturating_mul(16) > r.remaining() {
        return Err(r.error("component count", format!("{k} × {m} matrices exceed the section")));
    }
    let unmixing = read_matrix(r, k, m, "unmixing")?;
    let mixing = read_matrix(r, m, k, "mixing")?;
    let mean = DVector::from_vec(r.f64_vec(m, "mean")?);
    let converged = r.u32("converged")? != 0;
    let iterations = r.u32("iterations")? as usize;
    let final_entropy_delta = r.f64("final entropy delta")?;
    let nt = r.count("entropy trace", 8)?;
    let entropy_trace = r.f64_vec(nt, "entropy trace")?;
    Ok(IcaDecomposition {
        unmixing,
        mixing,
        mean,
        converged,
        iterations,
        final_entropy_delta,
        entropy_trace,
    })
}
