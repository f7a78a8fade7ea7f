//! Welch power spectral density, band power, causal sliding-window band-power
//! features and ERSP-style time-frequency maps.
//!
//! PSDs are one-sided densities in µV²/Hz with the taper's power removed, so
//! `Σ power · bin_width` over all bins equals the taper-weighted mean square of
//! the analysed segments.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::signal::Epoch;
use crate::{Error, Result};

/// The δ–θ band used for every component and channel feature.
pub const DELTA_THETA: (f64, f64) = (0.5, 8.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    Hamming,
    Hann,
    Rectangular,
}

impl Taper {
    /// Periodic (DFT-even) window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let nf = n as f64;
        (0..n)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / nf;
                match self {
                    Taper::Hamming => 0.54 - 0.46 * phase.cos(),
                    Taper::Hann => 0.5 - 0.5 * phase.cos(),
                    Taper::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WelchConfig {
    pub segment_ms: f64,
    pub overlap_fraction: f64,
    pub window: Taper,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segment_ms: 500.0,
            overlap_fraction: 0.5,
            window: Taper::Hamming,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub bin_width: f64,
}

impl Psd {
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.bin_width
    }

    pub fn peak_frequency(&self) -> f64 {
        let (i, _) = self
            .power
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        self.freqs[i]
    }
}

/// Reusable one-sided periodogram for a fixed segment length and taper.
struct Periodogram {
    n: usize,
    fs: f64,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    norm: f64,
    buf: Vec<Complex<f64>>,
}

impl Periodogram {
    fn new(n: usize, fs: f64, taper: Taper) -> Self {
        let window = taper.coefficients(n);
        let wsum2: f64 = window.iter().map(|w| w * w).sum();
        Self {
            n,
            fs,
            fft: FftPlanner::new().plan_fft_forward(n),
            window,
            norm: 1.0 / (fs * wsum2),
            buf: vec![Complex::default(); n],
        }
    }

    fn n_bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Adds the one-sided density of `segment` into `acc`.
    fn accumulate(&mut self, segment: &[f64], acc: &mut [f64]) {
        for ((b, x), w) in self.buf.iter_mut().zip(segment).zip(&self.window) {
            *b = Complex::new(x * w, 0.0);
        }
        self.fft.process(&mut self.buf);
        let nyquist_bin = (self.n % 2 == 0).then_some(self.n / 2);
        for (k, a) in acc.iter_mut().enumerate() {
            let mut p = self.buf[k].norm_sqr() * self.norm;
            if k != 0 && Some(k) != nyquist_bin {
                p *= 2.0;
            }
            *a += p;
        }
    }

    fn bin_width(&self) -> f64 {
        self.fs / self.n as f64
    }
}

fn samples_for(ms: f64, fs: f64) -> usize {
    (ms * fs / 1000.0).round() as usize
}

pub fn welch_psd(signal: &[f64], fs: f64, cfg: &WelchConfig) -> Result<Psd> {
    if !(0.0..1.0).contains(&cfg.overlap_fraction) {
        return Err(Error::invalid(format!(
            "overlap fraction {} must lie in [0, 1)",
            cfg.overlap_fraction
        )));
    }
    let n = samples_for(cfg.segment_ms, fs);
    if n < 2 {
        return Err(Error::invalid("Welch segment shorter than two samples"));
    }
    if signal.len() < n {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one {n}-sample segment",
            signal.len()
        )));
    }
    let step = (n - (cfg.overlap_fraction * n as f64).round() as usize).max(1);
    let mut pg = Periodogram::new(n, fs, cfg.window);
    let mut acc = vec![0.0; pg.n_bins()];
    let mut count = 0usize;
    let mut start = 0;
    while start + n <= signal.len() {
        pg.accumulate(&signal[start..start + n], &mut acc);
        count += 1;
        start += step;
    }
    for a in &mut acc {
        *a /= count as f64;
    }
    let bin_width = pg.bin_width();
    Ok(Psd {
        freqs: (0..acc.len()).map(|k| k as f64 * bin_width).collect(),
        power: acc,
        bin_width,
    })
}

/// Sum of the densities whose bin centre lies in `[low, high)`, times the bin
/// width.
pub fn band_power(psd: &Psd, band: (f64, f64)) -> Result<f64> {
    let (low, high) = band;
    let nyquist = psd.bin_width * (psd.freqs.len() as f64 - 1.0).max(0.0);
    let limit = nyquist.max(psd.freqs.last().copied().unwrap_or(0.0)) + psd.bin_width / 2.0;
    if !(low >= 0.0 && low < high && high <= limit) {
        return Err(Error::invalid(format!(
            "band [{low}, {high}) Hz outside [0, {nyquist}] Hz"
        )));
    }
    let mut hit = false;
    let mut sum = 0.0;
    for (f, p) in psd.freqs.iter().zip(&psd.power) {
        if *f >= low && *f < high {
            hit = true;
            sum += p;
        }
    }
    if !hit {
        return Err(Error::invalid(format!("band [{low}, {high}) Hz contains no bins")));
    }
    Ok(sum * psd.bin_width)
}

/// Band power of trailing windows at a fixed step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    /// Right edge of each window, ms from the start of the signal.
    pub timestamps_ms: Vec<f64>,
    pub values: Vec<f64>,
    pub window_ms: f64,
    pub step_ms: f64,
    pub band: (f64, f64),
}

impl FeatureSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value whose timestamp is within a microsecond of `t_ms`.
    pub fn at_ms(&self, t_ms: f64) -> Option<f64> {
        let first = *self.timestamps_ms.first()?;
        let k = ((t_ms - first) / self.step_ms).round();
        if k < 0.0 {
            return None;
        }
        let k = k as usize;
        (k < self.len() && (self.timestamps_ms[k] - t_ms).abs() < 1e-3).then(|| self.values[k])
    }
}

/// Causal sliding band power. The window ending at timestamp `t` covers the
/// samples whose start times lie in `[t − window, t)`; the first timestamp is
/// `window_ms`.
pub fn sliding_band_power(
    signal: &[f64],
    fs: f64,
    window_ms: f64,
    step_ms: f64,
    band: (f64, f64),
) -> Result<FeatureSeries> {
    let n = samples_for(window_ms, fs);
    let step = samples_for(step_ms, fs);
    if n < 2 || step == 0 {
        return Err(Error::invalid(format!(
            "window {window_ms} ms / step {step_ms} ms too short at {fs} Hz"
        )));
    }
    if signal.len() < n {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one {n}-sample window",
            signal.len()
        )));
    }
    let mut pg = Periodogram::new(n, fs, Taper::Hamming);
    let bin_width = pg.bin_width();
    let freqs: Vec<f64> = (0..pg.n_bins()).map(|k| k as f64 * bin_width).collect();
    let selected: Vec<usize> = (0..freqs.len())
        .filter(|&k| freqs[k] >= band.0 && freqs[k] < band.1)
        .collect();
    if selected.is_empty() || band.0 < 0.0 || band.1 <= band.0 || band.1 > fs / 2.0 + bin_width / 2.0 {
        return Err(Error::invalid(format!(
            "band [{}, {}) Hz has no bins at {bin_width} Hz resolution",
            band.0, band.1
        )));
    }
    let mut acc = vec![0.0; pg.n_bins()];
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut end = n;
    while end <= signal.len() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        pg.accumulate(&signal[end - n..end], &mut acc);
        values.push(selected.iter().map(|&k| acc[k]).sum::<f64>() * bin_width);
        timestamps.push(end as f64 * 1000.0 / fs);
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErspConfig {
    /// Analysis window centred on each time point.
    pub window_ms: f64,
    /// Welch sub-segment inside each window (50% overlap).
    pub segment_ms: f64,
    pub step_ms: f64,
}

impl Default for ErspConfig {
    fn default() -> Self {
        Self {
            window_ms: 400.0,
            segment_ms: 200.0,
            step_ms: 50.0,
        }
    }
}

/// dB change of trial-averaged power relative to the per-frequency baseline
/// mean. Rows are time points, columns frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFreqMap {
    /// Window centres relative to onset.
    pub times_ms: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

pub fn ersp(
    epochs: &[Epoch],
    channel: usize,
    freqs: &[f64],
    baseline_ms: [f64; 2],
    cfg: &ErspConfig,
) -> Result<TimeFreqMap> {
    let first = epochs.first().ok_or_else(|| Error::invalid("ERSP needs at least one epoch"))?;
    if freqs.is_empty() {
        return Err(Error::invalid("ERSP needs at least one frequency"));
    }
    if baseline_ms[0] >= baseline_ms[1] || baseline_ms[1] > 0.0 {
        return Err(Error::invalid("ERSP baseline must be a pre-onset interval"));
    }
    let fs = first.fs();
    let len = first.n_samples();
    let t0 = first.t0_index();
    if let Some(e) = epochs
        .iter()
        .find(|e| e.n_samples() != len || e.t0_index() != t0 || e.fs() != fs)
    {
        return Err(Error::invalid(format!(
            "epochs differ in shape ({} samples, onset {}) vs ({len}, {t0})",
            e.n_samples(),
            e.t0_index()
        )));
    }
    if channel >= first.n_channels() {
        return Err(Error::invalid(format!("channel {channel} out of range")));
    }
    let win = samples_for(cfg.window_ms, fs);
    let seg = samples_for(cfg.segment_ms, fs).min(win);
    let step = samples_for(cfg.step_ms, fs).max(1);
    if seg < 2 || win > len {
        return Err(Error::invalid("ERSP window does not fit the epoch"));
    }
    let seg_step = (seg / 2).max(1);
    let taper = Taper::Hamming.coefficients(seg);
    // direct DFT kernels at the requested frequencies
    let kernels: Vec<Vec<Complex<f64>>> = freqs
        .iter()
        .map(|f| {
            (0..seg)
                .map(|n| Complex::from_polar(taper[n], -2.0 * PI * f * n as f64 / fs))
                .collect()
        })
        .collect();
    let half = win / 2;
    let centres: Vec<usize> = (half..=len - (win - half)).step_by(step).collect();
    let mut power = vec![vec![0.0; freqs.len()]; centres.len()];
    for e in epochs {
        let x: Vec<f64> = e.eeg().row(channel).iter().copied().collect();
        for (ti, &c) in centres.iter().enumerate() {
            let w = &x[c - half..c - half + win];
            let mut nseg = 0;
            let mut start = 0;
            let mut acc = vec![0.0; freqs.len()];
            while start + seg <= win {
                for (fi, k) in kernels.iter().enumerate() {
                    let z: Complex<f64> = k.iter().zip(&w[start..start + seg]).map(|(k, v)| k * v).sum();
                    acc[fi] += z.norm_sqr();
                }
                nseg += 1;
                start += seg_step;
            }
            for fi in 0..freqs.len() {
                power[ti][fi] += acc[fi] / nseg as f64;
            }
        }
    }
    let times_ms: Vec<f64> = centres
        .iter()
        .map(|&c| (c as f64 - t0 as f64) * 1000.0 / fs)
        .collect();
    let base_rows: Vec<usize> = (0..times_ms.len())
        .filter(|&i| times_ms[i] >= baseline_ms[0] && times_ms[i] <= baseline_ms[1])
        .collect();
    if base_rows.is_empty() {
        return Err(Error::invalid(format!(
            "no analysis window centred inside baseline [{}, {}] ms",
            baseline_ms[0], baseline_ms[1]
        )));
    }
    let mut baseline = vec![0.0; freqs.len()];
    for &i in &base_rows {
        for fi in 0..freqs.len() {
            baseline[fi] += power[i][fi] / base_rows.len() as f64;
        }
    }
    if let Some(fi) = baseline.iter().position(|b| *b <= 0.0) {
        return Err(Error::Degenerate(format!(
            "baseline power is zero at {} Hz",
            freqs[fi]
        )));
    }
    let values = power
        .iter()
        .map(|row| {
            row.iter()
                .zip(&baseline)
                .map(|(p, b)| 10.0 * (p / b).log10())
                .collect()
        })
        .collect();
    Ok(TimeFreqMap {
        times_ms,
        freqs_hz: freqs.to_vec(),
        values,
    })
}

impl TimeFreqMap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ms");
        for f in &self.freqs_hz {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
        for (t, row) in self.times_ms.iter().zip(&self.values) {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// `time_ms` followed by one column per series; all series must share
/// timestamps.
pub fn features_to_csv(series: &[FeatureSeries], names: &[String]) -> Result<String> {
    let first = series.first().ok_or_else(|| Error::invalid("no feature series"))?;
    if names.len() != series.len() {
        return Err(Error::DimensionMismatch {
            context: "feature column names",
            expected: series.len(),
            actual: names.len(),
        });
    }
    if series.iter().any(|s| s.timestamps_ms != first.timestamps_ms) {
        return Err(Error::invalid("feature series do not share timestamps"));
    }
    let mut out = String::from("time_ms");
    for n in names {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    for (i, t) in first.timestamps_ms.iter().enumerate() {
        let _ = write!(out, "{t}");
        for s in series {
            let _ = write!(out, ",{}", s.values[i]);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses the layout written by [`features_to_csv`], e.g. features produced
/// by an external extractor. Timestamps must advance by `step_ms`.
pub fn features_from_csv(text: &str, window_ms: f64, step_ms: f64, band: (f64, f64)) -> Result<Vec<FeatureSeries>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::invalid("empty feature CSV"))?;
    let ncols = header.split(',').count();
    if ncols < 2 || header.split(',').next().map(str::trim) != Some("time_ms") {
        return Err(Error::invalid("feature CSV header must be `time_ms,<name>...`"));
    }
    let mut times = Vec::new();
    let mut cols = vec![Vec::new(); ncols - 1];
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(Error::invalid(format!("feature CSV row {} has {} fields", row + 1, fields.len())));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("feature CSV row {}: cannot parse `{s}`", row + 1)))
        };
        times.push(parse(fields[0])?);
        for (c, f) in fields[1..].iter().enumerate() {
            cols[c].push(parse(f)?);
        }
    }
    if times.windows(2).any(|w| ((w[1] - w[0]) - step_ms).abs() > 1e-6) {
        return Err(Error::invalid(format!("feature timestamps do not advance by {step_ms} ms")));
    }
    Ok(cols
        .into_iter()
        .map(|values| FeatureSeries {
            timestamps_ms: times.clone(),
            values,
            window_ms,
            step_ms,
            band,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn zero_signal_zero_psd() {
        let psd = welch_psd(&[0.0; 400], 200.0, &WelchConfig::default()).unwrap();
        assert!(psd.power.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn bin_width_identity() {
        for (fs, ms) in [(200.0, 500.0), (256.0, 250.0), (1000.0, 128.0)] {
            let n = samples_for(ms, fs);
            let psd = welch_psd(&vec![1.0; 2 * n], fs, &WelchConfig { segment_ms: ms, ..Default::default() }).unwrap();
            assert_eq!(psd.bin_width * n as f64, fs);
        }
    }

    #[test]
    fn short_signal_rejected() {
        assert!(welch_psd(&[1.0; 50], 200.0, &WelchConfig::default()).is_err());
    }

    #[test]
    fn single_bin_band_power() {
        let psd = Psd {
            freqs: (0..51).map(|k| 2.0 * k as f64).collect(),
            power: (0..51).map(|k| if k == 2 { 3.0 } else { 0.0 }).collect(),
            bin_width: 2.0,
        };
        assert_eq!(band_power(&psd, (0.5, 8.0)).unwrap(), 6.0);
        let zero = Psd { power: vec![0.0; 51], ..psd.clone() };
        assert_eq!(band_power(&zero, (0.5, 8.0)).unwrap(), 0.0);
        assert!(band_power(&psd, (0.5, 1.5)).is_err());
        assert!(band_power(&psd, (8.0, 4.0)).is_err());
    }

    #[test]
    fn sinusoid_concentrated_in_delta_theta() {
        let x = sine(5.0, 200.0, 2000, 1.0);
        let psd = welch_psd(&x, 200.0, &WelchConfig::default()).unwrap();
        let low = band_power(&psd, (0.5, 8.0)).unwrap();
        let high = band_power(&psd, (8.0, 45.0)).unwrap();
        assert!(low / high >= 100.0, "{low} {high}");
    }

    #[test]
    fn zero_signal_zero_series() {
        let s = sliding_band_power(&[0.0; 600], 200.0, 500.0, 50.0, DELTA_THETA).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert_eq!(s.timestamps_ms[0], 500.0);
        assert_eq!(s.timestamps_ms[1], 550.0);
        assert_eq!(s.len(), 51);
    }

    #[test]
    fn burst_only_visible_after_its_start() {
        // 4 Hz burst starting at 1000 ms
        let x: Vec<f64> = (0..800)
            .map(|i| if i >= 200 { (2.0 * PI * 4.0 * i as f64 / 200.0).sin() } else { 0.0 })
            .collect();
        let s = sliding_band_power(&x, 200.0, 500.0, 50.0, DELTA_THETA).unwrap();
        for (t, v) in s.timestamps_ms.iter().zip(&s.values) {
            if *t <= 1000.0 {
                assert_eq!(*v, 0.0, "t={t}");
            } else {
                assert!(*v > 0.0, "t={t}");
            }
        }
    }

    #[test]
    fn growing_chirp_trend() {
        // 2 → 5 Hz chirp with linearly growing amplitude
        let fs = 200.0;
        let n = 2000;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                let phase = 2.0 * PI * (2.0 * t + 0.15 * t * t);
                (0.1 + t) * phase.sin()
            })
            .collect();
        let s = sliding_band_power(&x, fs, 500.0, 50.0, DELTA_THETA).unwrap();
        let smooth: Vec<f64> = s.values.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
        for w in smooth.windows(2) {
            assert!(w[1] >= w[0] * 0.999, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn csv_round_trip_of_features() {
        let a = sliding_band_power(&sine(3.0, 200.0, 400, 1.0), 200.0, 500.0, 50.0, DELTA_THETA).unwrap();
        let b = sliding_band_power(&sine(6.0, 200.0, 400, 2.0), 200.0, 500.0, 50.0, DELTA_THETA).unwrap();
        let text = features_to_csv(&[a.clone(), b.clone()], &["a".into(), "b".into()]).unwrap();
        let back = features_from_csv(&text, 500.0, 50.0, DELTA_THETA).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].timestamps_ms, a.timestamps_ms);
        for (x, y) in back[1].values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn feature_lookup_by_time() {
        let s = sliding_band_power(&[1.0; 400], 200.0, 500.0, 50.0, DELTA_THETA).unwrap();
        assert!(s.at_ms(550.0).is_some());
        assert!(s.at_ms(560.0).is_none());
        assert!(s.at_ms(450.0).is_none());
    }
}
