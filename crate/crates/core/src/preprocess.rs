//! Low-pass filtering, onset-locked epoching, baseline correction and common
//! average referencing.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::filter;
use crate::signal::{BrakeTrace, EegRecording, Epoch};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub lowpass_cutoff: f64,
    /// Width of the FIR transition band; sets the filter order.
    pub transition_hz: f64,
    pub epoch_pre_ms: f64,
    pub epoch_post_ms: f64,
    /// Relative to onset, both ends in ms.
    pub baseline_window_ms: [f64; 2],
    pub apply_car: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            lowpass_cutoff: 45.0,
            transition_hz: 5.0,
            epoch_pre_ms: 1500.0,
            epoch_post_ms: 1500.0,
            baseline_window_ms: [-1500.0, -1300.0],
            apply_car: true,
        }
    }
}

/// Zero-phase low-pass of every channel.
pub fn lowpass_filter(recording: &EegRecording, cutoff: f64, transition_hz: f64) -> Result<EegRecording> {
    let nyquist = recording.fs() / 2.0;
    if !(cutoff > 0.0 && cutoff < nyquist) {
        return Err(Error::invalid(format!(
            "low-pass cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz"
        )));
    }
    if !(transition_hz > 0.0) {
        return Err(Error::invalid("transition width must be positive"));
    }
    let taps = filter::hamming_lowpass(recording.fs(), cutoff, transition_hz);
    let m = recording.n_channels();
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|c| filter::filtfilt(&recording.channel(c), &taps))
        .collect();
    let data = DMatrix::from_fn(m, recording.n_samples(), |c, s| rows[c][s]);
    recording.with_data(data)
}

#[derive(Debug, Clone)]
pub struct EpochSet {
    pub epochs: Vec<Epoch>,
    /// Onsets dropped for lacking a full pre/post margin.
    pub skipped: usize,
}

fn ms_to_samples(ms: f64, fs: f64) -> usize {
    (ms * fs / 1000.0).round() as usize
}

pub fn make_epochs(recording: &EegRecording, trace: &BrakeTrace, cfg: &PreprocessConfig) -> Result<EpochSet> {
    if !(cfg.epoch_pre_ms > 0.0 && cfg.epoch_post_ms > 0.0) {
        return Err(Error::invalid("epoch pre/post spans must be positive"));
    }
    if trace.len() != recording.n_samples() {
        return Err(Error::DimensionMismatch {
            context: "brake trace length vs recording samples",
            expected: recording.n_samples(),
            actual: trace.len(),
        });
    }
    let fs = recording.fs();
    let pre = ms_to_samples(cfg.epoch_pre_ms, fs);
    let post = ms_to_samples(cfg.epoch_post_ms, fs);
    let n = recording.n_samples();
    let mut epochs = Vec::new();
    let mut skipped = 0;
    for &onset in trace.onsets() {
        if onset < pre || onset + post > n {
            skipped += 1;
            continue;
        }
        let start = onset - pre;
        let eeg = recording.data().columns(start, pre + post).into_owned();
        let brake = trace.values()[start..start + pre + post].to_vec();
        epochs.push(Epoch::new(eeg, brake, pre, fs)?);
    }
    if epochs.is_empty() {
        return Err(Error::invalid(format!(
            "no usable onsets: {skipped} of {} lack a ±margin of {}/{} ms",
            trace.onsets().len(),
            cfg.epoch_pre_ms,
            cfg.epoch_post_ms
        )));
    }
    Ok(EpochSet { epochs, skipped })
}

/// Sample range `[start, end)` of a window given in ms relative to onset.
pub fn window_indices(epoch: &Epoch, window_ms: [f64; 2]) -> Result<(usize, usize)> {
    let fs = epoch.fs();
    let t0 = epoch.t0_index() as f64;
    let start = t0 + (window_ms[0] * fs / 1000.0).round();
    let end = t0 + (window_ms[1] * fs / 1000.0).round();
    if !(start >= 0.0 && end > start && end <= t0) {
        return Err(Error::invalid(format!(
            "baseline window [{}, {}] ms must lie inside the epoch and before onset",
            window_ms[0], window_ms[1]
        )));
    }
    Ok((start as usize, end as usize))
}

/// Subtracts each channel's mean over the pre-onset window.
pub fn baseline_correct(epoch: &Epoch, window_ms: [f64; 2]) -> Result<Epoch> {
    let (start, end) = window_indices(epoch, window_ms)?;
    let mut eeg = epoch.eeg().clone();
    for mut row in eeg.row_iter_mut() {
        let mean = row.columns(start, end - start).sum() / (end - start) as f64;
        row.add_scalar_mut(-mean);
    }
    epoch.with_eeg(eeg)
}

/// Subtracts the cross-channel mean at every sample.
pub fn common_average_reference(epoch: &Epoch) -> Result<Epoch> {
    if epoch.n_channels() < 2 {
        return Err(Error::invalid("common average reference needs at least 2 channels"));
    }
    let mut eeg = epoch.eeg().clone();
    let m = eeg.nrows() as f64;
    for mut col in eeg.column_iter_mut() {
        let mean = col.sum() / m;
        col.add_scalar_mut(-mean);
    }
    epoch.with_eeg(eeg)
}

/// Filter → epoch → baseline → CAR.
pub fn run_chain(recording: &EegRecording, trace: &BrakeTrace, cfg: &PreprocessConfig) -> Result<EpochSet> {
    let filtered = lowpass_filter(recording, cfg.lowpass_cutoff, cfg.transition_hz)?;
    let set = make_epochs(&filtered, trace, cfg)?;
    let epochs = set
        .epochs
        .iter()
        .map(|e| {
            let e = baseline_correct(e, cfg.baseline_window_ms)?;
            if cfg.apply_car {
                common_average_reference(&e)
            } else {
                Ok(e)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpochSet {
        epochs,
        skipped: set.skipped,
    })
}

/// Concatenates epochs along time; the boundary sample of epoch `k` is
/// `k * len`.
pub fn concat_epochs(epochs: &[Epoch]) -> Result<DMatrix<f64>> {
    let first = epochs
        .first()
        .ok_or_else(|| Error::invalid("no epochs to concatenate"))?;
    let m = first.n_channels();
    let total: usize = epochs.iter().map(Epoch::n_samples).sum();
    let mut out = DMatrix::zeros(m, total);
    let mut at = 0;
    for e in epochs {
        if e.n_channels() != m {
            return Err(Error::DimensionMismatch {
                context: "epoch channel count",
                expected: m,
                actual: e.n_channels(),
            });
        }
        out.columns_mut(at, e.n_samples()).copy_from(e.eeg());
        at += e.n_samples();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montage;
    use std::f64::consts::PI;

    fn recording(rows: Vec<Vec<f64>>, fs: f64) -> EegRecording {
        let m = rows.len();
        let n = rows[0].len();
        let labels = montage::spread_labels(m).unwrap();
        EegRecording::with_standard_montage(labels, fs, DMatrix::from_fn(m, n, |c, s| rows[c][s])).unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn dc_passes_unchanged() {
        let rec = recording(vec![vec![4.5; 1000]], 200.0);
        let out = lowpass_filter(&rec, 45.0, 5.0).unwrap();
        for v in out.data().iter() {
            assert!((v - 4.5).abs() < 1e-9);
        }
    }

    #[test]
    fn passband_sinusoid_amplitude_kept() {
        let x: Vec<f64> = (0..2000).map(|i| (2.0 * PI * 5.0 * i as f64 / 200.0).sin()).collect();
        let out = lowpass_filter(&recording(vec![x.clone()], 200.0), 45.0, 5.0).unwrap();
        let y = out.channel(0);
        // away from the edges, compare against the analytic sinusoid
        for i in 400..1600 {
            assert!((y[i] - x[i]).abs() <= 0.02, "sample {i}");
        }
    }

    #[test]
    fn line_noise_suppressed() {
        let x: Vec<f64> = (0..2000).map(|i| (2.0 * PI * 50.0 * i as f64 / 200.0 + 0.3).sin()).collect();
        let out = lowpass_filter(&recording(vec![x.clone()], 200.0), 45.0, 5.0).unwrap();
        let y = out.channel(0);
        assert!(rms(&y[400..1600]) <= 0.01 * rms(&x[400..1600]));
    }

    #[test]
    fn cutoff_above_nyquist_rejected() {
        let rec = recording(vec![vec![0.0; 100]], 80.0);
        assert!(lowpass_filter(&rec, 45.0, 5.0).is_err());
    }

    #[test]
    fn centered_onset_gives_one_epoch() {
        let rec = recording(vec![vec![0.0; 800], vec![1.0; 800]], 200.0);
        let trace = BrakeTrace::new(200.0, vec![0.0; 800], vec![400]).unwrap();
        let set = make_epochs(&rec, &trace, &PreprocessConfig::default()).unwrap();
        assert_eq!(set.epochs.len(), 1);
        assert_eq!(set.epochs[0].n_samples(), 600);
        assert_eq!(set.epochs[0].t0_index(), 300);
        assert_eq!(set.skipped, 0);
    }

    #[test]
    fn onset_without_margin_skipped() {
        let rec = recording(vec![vec![0.0; 2000], vec![1.0; 2000]], 200.0);
        let trace = BrakeTrace::new(200.0, vec![0.0; 2000], vec![20, 1000]).unwrap();
        let set = make_epochs(&rec, &trace, &PreprocessConfig::default()).unwrap();
        assert_eq!(set.skipped, 1);
        assert_eq!(set.epochs.len(), 1);
        let only_bad = BrakeTrace::new(200.0, vec![0.0; 2000], vec![20]).unwrap();
        assert!(make_epochs(&rec, &only_bad, &PreprocessConfig::default()).is_err());
    }

    fn epoch_from(rows: Vec<Vec<f64>>) -> Epoch {
        let m = rows.len();
        let n = rows[0].len();
        Epoch::new(DMatrix::from_fn(m, n, |c, s| rows[c][s]), vec![0.0; n], n / 2, 200.0).unwrap()
    }

    #[test]
    fn constant_channel_baselines_to_zero() {
        let e = baseline_correct(&epoch_from(vec![vec![3.0; 600]]), [-1500.0, -1300.0]).unwrap();
        assert!(e.eeg().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn offset_sinusoid_baseline_mean_zero() {
        let x: Vec<f64> = (0..600).map(|i| 7.0 + (i as f64 * 0.13).sin()).collect();
        let e = baseline_correct(&epoch_from(vec![x]), [-1500.0, -1300.0]).unwrap();
        let mean: f64 = e.eeg().row(0).columns(0, 40).sum() / 40.0;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn window_after_onset_rejected() {
        assert!(baseline_correct(&epoch_from(vec![vec![0.0; 600]]), [-100.0, 100.0]).is_err());
        assert!(baseline_correct(&epoch_from(vec![vec![0.0; 600]]), [-1600.0, -1300.0]).is_err());
    }

    #[test]
    fn car_cases() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64).cos()).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let e = epoch_from(vec![x.clone(), neg]);
        let out = common_average_reference(&e).unwrap();
        assert!((out.eeg() - e.eeg()).amax() < 1e-15);

        let same = epoch_from(vec![x.clone(), x.clone(), x]);
        assert!(common_average_reference(&same).unwrap().eeg().amax() < 1e-15);

        assert!(common_average_reference(&epoch_from(vec![vec![1.0; 10]])).is_err());
    }
}
