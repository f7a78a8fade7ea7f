//! Windowed-sinc FIR design, zero-phase application and polyphase rational
//! resampling.

use std::f64::consts::PI;

/// Symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / m).cos())
        .collect()
}

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

pub fn kaiser(n: usize, beta: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let m = (n - 1) as f64;
    let denom = bessel_i0(beta);
    (0..n)
        .map(|i| {
            let r = 2.0 * i as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Low-pass taps with cutoff `cutoff` in cycles/sample (0 < cutoff < 0.5),
/// shaped by `window` and scaled to DC gain `gain`.
pub fn windowed_sinc(cutoff: f64, window: &[f64], gain: f64) -> Vec<f64> {
    let n = window.len();
    let center = (n - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = window
        .iter()
        .enumerate()
        .map(|(i, w)| 2.0 * cutoff * sinc(2.0 * cutoff * (i as f64 - center)) * w)
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t *= gain / sum;
    }
    taps
}

/// Linear-phase Hamming low-pass whose order is the smallest even number
/// ≥ 4·fs/transition.
pub fn hamming_lowpass(fs: f64, cutoff_hz: f64, transition_hz: f64) -> Vec<f64> {
    let mut order = (4.0 * fs / transition_hz).ceil() as usize;
    if order % 2 == 1 {
        order += 1;
    }
    windowed_sinc(cutoff_hz / fs, &hamming(order + 1), 1.0)
}

/// Magnitude of the frequency response at `freq_hz`.
pub fn response_magnitude(taps: &[f64], fs: f64, freq_hz: f64) -> f64 {
    let w = 2.0 * PI * freq_hz / fs;
    let (re, im) = taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, h)| {
        (re + h * (w * k as f64).cos(), im - h * (w * k as f64).sin())
    });
    re.hypot(im)
}

fn odd_reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let pad = pad.min(n.saturating_sub(1));
    let mut out = Vec::with_capacity(n + 2 * pad);
    let first = x[0];
    let last = x[n - 1];
    out.extend((1..=pad).rev().map(|k| 2.0 * first - x[k]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|k| 2.0 * last - x[n - 1 - k]));
    out
}

/// Centered (delay-compensated) convolution of a symmetric filter with
/// odd-reflection edge padding.
fn centered_pass(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let n = x.len();
    let half = (taps.len() - 1) / 2;
    let pad = half.min(n.saturating_sub(1));
    let padded = odd_reflect_pad(x, half);
    (0..n)
        .map(|i| {
            let c = i + pad;
            taps.iter()
                .enumerate()
                .map(|(k, h)| {
                    let j = c as isize + half as isize - k as isize;
                    if j < 0 || j as usize >= padded.len() {
                        0.0
                    } else {
                        h * padded[j as usize]
                    }
                })
                .sum()
        })
        .collect()
}

/// Forward-backward application of a symmetric FIR: zero group delay and a
/// squared magnitude response.
pub fn filtfilt(x: &[f64], taps: &[f64]) -> Vec<f64> {
    debug_assert!(taps.len() % 2 == 1);
    if x.is_empty() {
        return Vec::new();
    }
    let once = centered_pass(x, taps);
    centered_pass(&once, taps)
}

/// Smallest `(up, down)` with `up/down == to/from`, both ≤ `limit`.
pub fn rational_ratio(from: f64, to: f64, limit: usize) -> Option<(usize, usize)> {
    let ratio = to / from;
    (1..=limit).find_map(|down| {
        let up = (ratio * down as f64).round();
        if up < 1.0 || up > limit as f64 {
            return None;
        }
        ((up / down as f64 - ratio).abs() <= 1e-12 * ratio).then_some((up as usize, down))
    })
}

/// Kaiser low-pass for rational resampling: passband edge at 0.9 of the lower
/// Nyquist frequency, stopband edge at that Nyquist, 80 dB attenuation.
pub fn resampling_taps(fs_in: f64, up: usize, down: usize) -> Vec<f64> {
    const ATTEN_DB: f64 = 80.0;
    let fs_up = fs_in * up as f64;
    let nyq = fs_in.min(fs_in * up as f64 / down as f64) / 2.0;
    let transition = 0.1 * nyq;
    let cutoff = 0.95 * nyq;
    let beta = 0.1102 * (ATTEN_DB - 8.7);
    let mut n = ((ATTEN_DB - 7.95) / (2.285 * 2.0 * PI * transition / fs_up)).ceil() as usize + 1;
    if n % 2 == 0 {
        n += 1;
    }
    windowed_sinc(cutoff / fs_up, &kaiser(n, beta), up as f64)
}

/// Upsample by `up`, filter, downsample by `down`, evaluating only the kept
/// outputs. Output length is ⌈len·up/down⌉; the filter delay is removed.
pub fn resample_poly(x: &[f64], up: usize, down: usize, taps: &[f64]) -> Vec<f64> {
    let n = x.len();
    let out_len = (n * up).div_ceil(down);
    let center = (taps.len() - 1) / 2;
    (0..out_len)
        .map(|m| {
            let pos = m * down + center;
            let mut acc = 0.0;
            let mut k = pos % up;
            while k < taps.len() && k <= pos {
                let i = (pos - k) / up;
                if i < n {
                    acc += taps[k] * x[i];
                }
                k += up;
            }
            acc
        })
        .collect()
}
