//! Ground-truth EEG generator.
//!
//! Sources are mixed as `X = A·S + noise`. One or more braking-locked sources
//! carry δ–θ bursts that begin 300–500 ms before each planted onset, and the
//! brake trace is a saturating function of a locked source's trailing-window
//! power `lag_ms` earlier:
//!
//! ```text
//! brake(t) = 1 − exp(−k · P(t − lag)) + ε(t)
//! ```
//!
//! `P` is the Hamming²-weighted mean square over the trailing 500 ms, the same
//! weighting the band-power feature applies. `k` puts the strongest trial's
//! peak at `1 − e⁻¹`, which keeps the mapping close to linear. Artifact sources follow the
//! signatures the heuristic IC classifier looks for.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::ica::IcaDecomposition;
use crate::linalg;
use crate::montage;
use crate::signal::{BrakeTrace, EegRecording};
use crate::spectral::Taper;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    BrakingLocked,
    Ocular,
    Muscular,
    LineNoise,
    Background,
}

impl SourceKind {
    fn code(self) -> u32 {
        match self {
            SourceKind::BrakingLocked => 0,
            SourceKind::Ocular => 1,
            SourceKind::Muscular => 2,
            SourceKind::LineNoise => 3,
            SourceKind::Background => 4,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            0 => SourceKind::BrakingLocked,
            1 => SourceKind::Ocular,
            2 => SourceKind::Muscular,
            3 => SourceKind::LineNoise,
            4 => SourceKind::Background,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// Carrier band in Hz (ignored for line noise and ocular).
    pub band: (f64, f64),
    pub amplitude: f64,
}

impl SourceSpec {
    pub fn new(kind: SourceKind, band: (f64, f64), amplitude: f64) -> Self {
        Self { kind, band, amplitude }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub channels: usize,
    pub fs: f64,
    pub trials: usize,
    pub trial_ms: f64,
    pub sources: Vec<SourceSpec>,
    /// True feature → brake delay.
    pub lag_ms: f64,
    pub max_condition: f64,
    /// Sensor-noise standard deviation, in source-amplitude units.
    pub noise_sigma: f64,
    /// RMS of the smooth additive brake noise as a fraction of the clean
    /// ramp's peak.
    pub brake_noise: f64,
    /// Relative depth of the random 1–2.5 Hz modulation of burst envelopes.
    pub modulation_depth: f64,
    /// When false the brake is driven by a hidden source that is not mixed
    /// into the EEG, so no feature carries information about it.
    pub informative: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let channels = 16;
        Self {
            seed: 0,
            channels,
            fs: 200.0,
            trials: 30,
            trial_ms: 6000.0,
            sources: default_sources(channels),
            lag_ms: 200.0,
            max_condition: 10.0,
            noise_sigma: 0.05,
            brake_noise: 0.10,
            modulation_depth: 0.8,
            informative: true,
        }
    }
}

/// One locked source, one ocular, one muscular, the rest background spread
/// over 1–30 Hz; `channels − 1` in total so the mixture stays separable after
/// common average referencing.
pub fn default_sources(channels: usize) -> Vec<SourceSpec> {
    let mut out = vec![
        SourceSpec::new(SourceKind::BrakingLocked, (2.0, 7.0), 1.0),
        SourceSpec::new(SourceKind::Ocular, (0.5, 3.0), 3.0),
        SourceSpec::new(SourceKind::Muscular, (20.0, 45.0), 1.0),
    ];
    let bands = [(1.0, 4.0), (4.0, 8.0), (8.0, 12.0), (12.0, 20.0), (2.0, 6.0), (20.0, 30.0)];
    for i in 0..channels.saturating_sub(4) {
        out.push(SourceSpec::new(SourceKind::Background, bands[i % bands.len()], 1.0));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub seed: u64,
    pub mixing: DMatrix<f64>,
    pub sources: DMatrix<f64>,
    pub kinds: Vec<SourceKind>,
    pub onsets: Vec<usize>,
    pub onset_intensities: Vec<f64>,
    pub locked_sources: Vec<usize>,
    /// Normalized brake before single-precision storage.
    pub brake: Vec<f64>,
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    if cfg.sources.is_empty() {
        return Err(Error::invalid("synthetic config needs at least one source"));
    }
    if cfg.sources.len() > cfg.channels {
        return Err(Error::invalid(format!(
            "infeasible config: {} sources exceed {} channels",
            cfg.sources.len(),
            cfg.channels
        )));
    }
    if ![200.0, 300.0, 400.0].contains(&cfg.lag_ms) {
        return Err(Error::invalid(format!("lag {} ms must be one of 200, 300, 400", cfg.lag_ms)));
    }
    if !(cfg.fs > 0.0) || cfg.trials == 0 || cfg.trial_ms < 4000.0 {
        return Err(Error::invalid("need fs > 0, at least one trial and trials ≥ 4000 ms"));
    }
    if !(cfg.max_condition >= 1.0) {
        return Err(Error::invalid("condition bound must be ≥ 1"));
    }
    if !cfg.sources.iter().any(|s| s.kind == SourceKind::BrakingLocked) && cfg.informative {
        return Err(Error::invalid("an informative dataset needs a braking-locked source"));
    }
    Ok(())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normalize_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

/// Gaussian noise band-limited to `band` by zeroing FFT bins; unit RMS.
fn narrowband(rng: &mut impl Rng, n: usize, fs: f64, band: (f64, f64)) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(normal.sample(rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < band.0 || f > band.1 {
            *b = Complex::default();
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    normalize_rms(&mut out);
    out
}

/// Heavy-tailed positive envelope: exponential draws per block, linearly
/// interpolated between block centres.
fn block_envelope(rng: &mut impl Rng, n: usize, fs: f64, block_ms: f64) -> Vec<f64> {
    let exp = Exp::new(1.0).unwrap();
    let block = ((block_ms * fs / 1000.0).round() as usize).max(1);
    let nodes: Vec<f64> = (0..n / block + 2).map(|_| exp.sample(rng)).collect();
    (0..n)
        .map(|i| {
            let pos = i as f64 / block as f64;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            nodes[j] * (1.0 - frac) + nodes[j + 1] * frac
        })
        .collect()
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    0.5 - 0.5 * (PI * x).cos()
}

struct TrialPlan {
    onset: usize,
    burst_start: usize,
    rise: usize,
    sustain: usize,
    decay: usize,
    peak: f64,
}

fn plan_trials(rng: &mut impl Rng, cfg: &SynthConfig, trial_len: usize) -> Vec<TrialPlan> {
    let ms = |v: f64| (v * cfg.fs / 1000.0).round() as usize;
    (0..cfg.trials)
        .map(|t| {
            let jitter = rng.random_range(-300.0..300.0);
            let onset = t * trial_len + ms(cfg.trial_ms / 2.0 + jitter);
            let lead = ms(rng.random_range(300.0..500.0));
            TrialPlan {
                onset,
                burst_start: onset - lead,
                rise: ms(rng.random_range(300.0..600.0)),
                sustain: ms(rng.random_range(800.0..1400.0)),
                decay: ms(rng.random_range(300.0..600.0)),
                peak: rng.random_range(1.0..3.0),
            }
        })
        .collect()
}

/// Burst envelope of a locked source over the whole recording.
fn locked_envelope(plans: &[TrialPlan], n: usize, modulation: &[f64], depth: f64) -> Vec<f64> {
    const FLOOR: f64 = 0.25;
    let mut env = vec![FLOOR; n];
    for p in plans {
        let end = (p.burst_start + p.rise + p.sustain + p.decay).min(n);
        for (i, e) in env.iter_mut().enumerate().take(end).skip(p.burst_start) {
            let k = i - p.burst_start;
            let ramp = if k < p.rise {
                smoothstep(k as f64 / p.rise as f64)
            } else if k < p.rise + p.sustain {
                1.0
            } else {
                1.0 - smoothstep((k - p.rise - p.sustain) as f64 / p.decay as f64)
            };
            let wobble = (1.0 + depth * modulation[i]).max(0.1);
            *e += p.peak * ramp * wobble;
        }
    }
    env
}

/// Trailing Hamming²-weighted mean square; `out[e]` covers samples `[e − n, e)`.
fn trailing_power(x: &[f64], fs: f64, window_ms: f64) -> Vec<f64> {
    let n = (window_ms * fs / 1000.0).round() as usize;
    let w2: Vec<f64> = Taper::Hamming.coefficients(n).iter().map(|w| w * w).collect();
    let norm: f64 = w2.iter().sum();
    (0..=x.len())
        .map(|e| {
            let mut acc = 0.0;
            for (j, wj) in w2.iter().enumerate() {
                let idx = e as isize - n as isize + j as isize;
                if idx >= 0 {
                    acc += wj * x[idx as usize] * x[idx as usize];
                }
            }
            acc / norm
        })
        .collect()
}

fn smooth_noise(rng: &mut impl Rng, n: usize, sigma: f64, width: usize) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let white: Vec<f64> = (0..n + width).map(|_| normal.sample(rng)).collect();
    let mut out: Vec<f64> = (0..n)
        .map(|i| white[i..i + width].iter().sum::<f64>() / width as f64)
        .collect();
    normalize_rms(&mut out);
    out.iter_mut().for_each(|v| *v *= sigma);
    out
}

fn source_waveform(
    spec: &SourceSpec,
    rng: &mut ChaCha8Rng,
    n: usize,
    cfg: &SynthConfig,
    plans: &[TrialPlan],
) -> Vec<f64> {
    let fs = cfg.fs;
    let mut x = match spec.kind {
        SourceKind::BrakingLocked => {
            let carrier = narrowband(rng, n, fs, spec.band);
            let modulation = narrowband(rng, n, fs, (1.0, 2.5));
            let env = locked_envelope(plans, n, &modulation, cfg.modulation_depth);
            carrier.iter().zip(&env).map(|(c, e)| c * e).collect()
        }
        SourceKind::Ocular => {
            // blinks: sparse 300 ms raised-cosine pulses over a slow drift
            let width = (0.3 * fs).round() as usize;
            let mut x: Vec<f64> = narrowband(rng, n, fs, (0.5, 2.0)).iter().map(|v| 0.15 * v).collect();
            let rate = 0.3 / fs;
            let mut i = 0;
            while i < n {
                if rng.random_bool(rate) {
                    let amp = rng.random_range(2.0..4.0);
                    for k in 0..width.min(n - i) {
                        x[i + k] += amp * (0.5 - 0.5 * (2.0 * PI * k as f64 / width as f64).cos());
                    }
                    i += width;
                } else {
                    i += 1;
                }
            }
            x
        }
        SourceKind::Muscular | SourceKind::Background => {
            let carrier = narrowband(rng, n, fs, spec.band);
            let block = if spec.kind == SourceKind::Muscular { 200.0 } else { 250.0 };
            let env = block_envelope(rng, n, fs, block);
            carrier.iter().zip(&env).map(|(c, e)| c * e).collect()
        }
        SourceKind::LineNoise => {
            let phase = rng.random_range(0.0..2.0 * PI);
            let drift = narrowband(rng, n, fs, (0.1, 1.0));
            (0..n)
                .map(|i| (1.0 + 0.05 * drift[i]) * (2.0 * PI * 50.0 * i as f64 / fs + phase).sin())
                .collect()
        }
    };
    normalize_rms(&mut x);
    x.iter_mut().for_each(|v| *v *= spec.amplitude);
    x
}

fn structured_column(kind: SourceKind, xy: &[[f64; 2]], rng: &mut impl Rng) -> Option<DVector<f64>> {
    let m = xy.len();
    let normal = Normal::new(0.0, 0.08).unwrap();
    let top_two = |score: &dyn Fn(&[f64; 2]) -> f64| {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&a, &b| score(&xy[b]).total_cmp(&score(&xy[a])).then(a.cmp(&b)));
        (idx[0], idx[1])
    };
    match kind {
        SourceKind::BrakingLocked => {
            // smooth fronto-central bump
            let v = DVector::from_iterator(
                m,
                xy.iter().map(|[x, y]| {
                    let d2 = x * x + (y - 0.25) * (y - 0.25);
                    (-d2 / (2.0 * 0.4 * 0.4)).exp()
                }),
            );
            Some(v.normalize())
        }
        SourceKind::Ocular | SourceKind::Muscular => {
            let (a, b) = if kind == SourceKind::Ocular {
                top_two(&|p: &[f64; 2]| p[1])
            } else {
                top_two(&|p: &[f64; 2]| p[0].abs())
            };
            let mut v = DVector::from_iterator(m, (0..m).map(|_| normal.sample(rng)));
            v[a] = 0.75;
            v[b] = 0.6;
            Some(v.normalize())
        }
        SourceKind::LineNoise | SourceKind::Background => None,
    }
}

fn build_mixing(cfg: &SynthConfig, xy: &[[f64; 2]], rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let m = cfg.channels;
    let k = cfg.sources.len();
    let normal = Normal::new(0.0, 1.0).unwrap();
    for _ in 0..1000 {
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(k);
        let mut random_slots = Vec::new();
        for (i, s) in cfg.sources.iter().enumerate() {
            match structured_column(s.kind, xy, rng) {
                Some(c) => cols.push(c),
                None => {
                    random_slots.push(i);
                    cols.push(DVector::zeros(m));
                }
            }
        }
        for &i in &random_slots {
            let mut v = DVector::from_iterator(m, (0..m).map(|_| normal.sample(rng)));
            for (j, c) in cols.iter().enumerate() {
                if j != i && c.norm() > 0.0 {
                    let proj = v.dot(c) / c.norm_squared();
                    v -= c * proj;
                }
            }
            cols[i] = v.normalize();
        }
        let a = DMatrix::from_columns(&cols);
        let cond = if m == k {
            linalg::condition_number(&a)
        } else {
            let sv = a.clone().svd(false, false).singular_values;
            sv.max() / sv.min()
        };
        if cond <= cfg.max_condition {
            return Ok(a);
        }
    }
    Err(Error::invalid(format!(
        "could not draw a mixing matrix with condition ≤ {}",
        cfg.max_condition
    )))
}

/// Generates a recording, its brake trace and the ground truth.
pub fn generate(cfg: &SynthConfig) -> Result<(EegRecording, BrakeTrace, SynthTruth)> {
    validate(cfg)?;
    let fs = cfg.fs;
    let trial_len = (cfg.trial_ms * fs / 1000.0).round() as usize;
    let n = trial_len * cfg.trials;
    let labels = montage::spread_labels(cfg.channels)?;
    let xy = montage::positions(&labels)?;

    let mut plan_rng = rng_for(cfg.seed, 0);
    let plans = plan_trials(&mut plan_rng, cfg, trial_len);

    let k = cfg.sources.len();
    let mut sources = DMatrix::zeros(k, n);
    for (i, spec) in cfg.sources.iter().enumerate() {
        let mut rng = rng_for(cfg.seed, 100 + i as u64);
        let wave = source_waveform(spec, &mut rng, n, cfg, &plans);
        sources.row_mut(i).copy_from_slice(&wave);
    }
    let locked_sources: Vec<usize> = cfg
        .sources
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == SourceKind::BrakingLocked)
        .map(|(i, _)| i)
        .collect();

    // brake driver: the first locked source, or a hidden twin for null data
    let driver: Vec<f64> = if cfg.informative {
        sources.row(locked_sources[0]).iter().copied().collect()
    } else {
        let spec = SourceSpec::new(SourceKind::BrakingLocked, (2.0, 7.0), 1.0);
        let mut rng = rng_for(cfg.seed, 50);
        source_waveform(&spec, &mut rng, n, cfg, &plans)
    };
    let power = trailing_power(&driver, fs, 500.0);
    let lag = (cfg.lag_ms * fs / 1000.0).round() as usize;
    let mut peaks: Vec<f64> = plans
        .iter()
        .map(|p| {
            let end = (p.burst_start + p.rise + p.sustain + p.decay + 200).min(n);
            power[p.burst_start..end].iter().copied().fold(0.0, f64::max)
        })
        .collect();
    peaks.sort_by(f64::total_cmp);
    let gain = 1.0 / peaks[peaks.len() - 1].max(1e-12);
    let clean: Vec<f64> = (0..n)
        .map(|i| if i >= lag { 1.0 - (-gain * power[i - lag]).exp() } else { 0.0 })
        .collect();
    let clean_peak = clean.iter().copied().fold(0.0, f64::max);
    let mut noise_rng = rng_for(cfg.seed, 1);
    let noise = smooth_noise(
        &mut noise_rng,
        n,
        cfg.brake_noise * clean_peak,
        (0.1 * fs).round().max(1.0) as usize,
    );
    let raw: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| (c + e).max(0.0)).collect();
    let onsets: Vec<usize> = plans.iter().map(|p| p.onset).collect();
    let trace = BrakeTrace::normalized(fs, &raw, onsets.clone())?;

    let mixing = build_mixing(cfg, &xy, &mut rng_for(cfg.seed, 2))?;
    let mut data = &mixing * &sources;
    if cfg.noise_sigma > 0.0 {
        let mut rng = rng_for(cfg.seed, 3);
        let normal = Normal::new(0.0, cfg.noise_sigma).unwrap();
        data.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    let recording = EegRecording::new(labels, xy, fs, data)?;
    let onset_intensities = onsets.iter().map(|&o| trace.values()[o]).collect();
    let truth = SynthTruth {
        seed: cfg.seed,
        mixing,
        sources,
        kinds: cfg.sources.iter().map(|s| s.kind).collect(),
        onsets,
        onset_intensities,
        locked_sources,
        brake: trace.values().to_vec(),
    };
    Ok((recording, trace, truth))
}

/// Pearson |r| between every true row and every estimated row.
fn abs_correlations(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let standardize = |m: &DMatrix<f64>| {
        let mut out = linalg::center_rows(m, &linalg::row_means(m));
        for mut row in out.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            }
        }
        out
    };
    (standardize(a) * standardize(b).transpose()).map(f64::abs)
}

/// Greedy one-to-one matching by descending |r|; entry `i` is the |r| of true
/// source `i` with its partner, or 0 when unmatched.
pub fn greedy_match(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Vec<f64> {
    let mut corr = abs_correlations(truth, estimate);
    let mut out = vec![0.0; truth.nrows()];
    for _ in 0..truth.nrows().min(estimate.nrows()) {
        let (mut bi, mut bj, mut best) = (0, 0, -1.0);
        for i in 0..corr.nrows() {
            for j in 0..corr.ncols() {
                if corr[(i, j)] > best {
                    (bi, bj, best) = (i, j, corr[(i, j)]);
                }
            }
        }
        out[bi] = best;
        corr.row_mut(bi).fill(-1.0);
        corr.column_mut(bj).fill(-1.0);
    }
    out
}

/// Amari index of a square system matrix `P = W·A`, normalized to [0, 1];
/// zero iff `P` is a scaled permutation.
pub fn amari_index(p: &DMatrix<f64>) -> Result<f64> {
    let m = p.nrows();
    if !p.is_square() || m < 2 {
        return Err(Error::invalid("Amari index needs a square matrix of order ≥ 2"));
    }
    let a = p.map(f64::abs);
    let mut total = 0.0;
    for i in 0..m {
        let row = a.row(i);
        total += row.sum() / row.max() - 1.0;
    }
    for j in 0..m {
        let col = a.column(j);
        total += col.sum() / col.max() - 1.0;
    }
    Ok(total / (2.0 * m as f64 * (m as f64 - 1.0)))
}

/// Per-true-source best |r| after greedy matching, and the Amari index of
/// `W·A_true`.
pub fn evaluate_unmixing(truth: &SynthTruth, decomp: &IcaDecomposition) -> Result<(Vec<f64>, f64)> {
    if decomp.n_channels() != truth.mixing.nrows() {
        return Err(Error::DimensionMismatch {
            context: "decomposition channels vs true mixing rows",
            expected: truth.mixing.nrows(),
            actual: decomp.n_channels(),
        });
    }
    if decomp.n_components() != truth.mixing.ncols() {
        return Err(Error::DimensionMismatch {
            context: "decomposition components vs true sources",
            expected: truth.mixing.ncols(),
            actual: decomp.n_components(),
        });
    }
    let system = &decomp.unmixing * &truth.mixing;
    let estimate = &system * &truth.sources;
    Ok((greedy_match(&truth.sources, &estimate), amari_index(&system)?))
}

const TRUTH_MAGIC: &[u8; 4] = b"NBTR";
const TRUTH_VERSION: u32 = 1;

pub fn encode_truth(t: &SynthTruth) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(TRUTH_MAGIC);
    w.u32(TRUTH_VERSION);
    w.u64(t.seed);
    w.len_u32(t.mixing.nrows());
    w.len_u32(t.mixing.ncols());
    w.len_u32(t.sources.ncols());
    for r in 0..t.mixing.nrows() {
        for c in 0..t.mixing.ncols() {
            w.f64(t.mixing[(r, c)]);
        }
    }
    for r in 0..t.sources.nrows() {
        for c in 0..t.sources.ncols() {
            w.f64(t.sources[(r, c)]);
        }
    }
    for k in &t.kinds {
        w.u32(k.code());
    }
    w.len_u32(t.onsets.len());
    for (&o, &v) in t.onsets.iter().zip(&t.onset_intensities) {
        w.u64(o as u64);
        w.f64(v);
    }
    w.len_u32(t.locked_sources.len());
    for &i in &t.locked_sources {
        w.len_u32(i);
    }
    w.len_u32(t.brake.len());
    w.f64_slice(&t.brake);
    w.into_bytes()
}

pub fn decode_truth(bytes: &[u8]) -> Result<SynthTruth> {
    let mut r = Reader::new(bytes);
    r.expect_magic(TRUTH_MAGIC, "truth magic")?;
    let at = r.offset();
    if r.u32("truth version")? != TRUTH_VERSION {
        return Err(Error::Format {
            offset: at,
            field: "truth version",
            reason: "unsupported version".into(),
        });
    }
    let seed = r.u64("seed")?;
    let m = r.u32("channel count")? as usize;
    let k = r.u32("source count")? as usize;
    let n = r.u32("sample count")? as usize;
    if m.saturating_mul(k).saturating_add(k.saturating_mul(n)).saturating_mul(8) > r.remaining() {
        return Err(r.error("source count", "matrices exceed file"));
    }
    let mixing = DMatrix::from_row_slice(m, k, &r.f64_vec(m * k, "mixing")?);
    let sources = DMatrix::from_row_slice(k, n, &r.f64_vec(k * n, "sources")?);
    let mut kinds = Vec::with_capacity(k);
    for _ in 0..k {
        let at = r.offset();
        let code = r.u32("source kind")?;
        kinds.push(SourceKind::from_code(code).ok_or(Error::Format {
            offset: at,
            field: "source kind",
            reason: format!("unknown code {code}"),
        })?);
    }
    let no = r.count("onset count", 16)?;
    let mut onsets = Vec::with_capacity(no);
    let mut onset_intensities = Vec::with_capacity(no);
    for _ in 0..no {
        onsets.push(r.u64("onsets")? as usize);
        onset_intensities.push(r.f64("onset intensities")?);
    }
    let nl = r.count("locked count", 4)?;
    let locked_sources = (0..nl)
        .map(|_| r.u32("locked sources").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let nb = r.count("brake count", 8)?;
    let brake = r.f64_vec(nb, "brake")?;
    r.finish("end of truth file")?;
    Ok(SynthTruth {
        seed,
        mixing,
        sources,
        kinds,
        onsets,
        onset_intensities,
        locked_sources,
        brake,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            channels: 8,
            sources: default_sources(8),
            trials: 6,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = generate(&SynthConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(a.0.data(), c.0.data());
    }

    #[test]
    fn too_many_sources_rejected() {
        let cfg = SynthConfig { channels: 4, sources: default_sources(8), ..small() };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn condition_bound_met() {
        let (_, _, truth) = generate(&small()).unwrap();
        assert!(linalg::condition_number(&truth.mixing) <= 10.0);
    }

    #[test]
    fn onsets_have_epoch_margin() {
        let cfg = small();
        let (rec, trace, truth) = generate(&cfg).unwrap();
        assert_eq!(trace.onsets().len(), cfg.trials);
        for &o in trace.onsets() {
            assert!(o >= 300 && o + 300 <= rec.n_samples());
        }
        for (&o, &v) in truth.onsets.iter().zip(&truth.onset_intensities) {
            assert_eq!(trace.values()[o], v);
        }
    }

    #[test]
    fn amari_of_permutation_is_zero() {
        let p = DMatrix::from_row_slice(3, 3, &[0.0, -2.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 3.0]);
        assert_eq!(amari_index(&p).unwrap(), 0.0);
        let dense = DMatrix::from_element(3, 3, 1.0);
        assert!((amari_index(&dense).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truth_round_trip() {
        let (_, _, truth) = generate(&small()).unwrap();
        assert_eq!(decode_truth(&encode_truth(&truth)).unwrap(), truth);
    }
}
