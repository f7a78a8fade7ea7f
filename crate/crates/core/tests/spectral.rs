mod common;

use brakecast::signal::Epoch;
use brakecast::spectral::{self, ErspConfig, Psd, WelchConfig, DELTA_THETA};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sine(f: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin()).collect()
}

#[test]
fn sinusoid_peak_bin_width_and_power() {
    let psd = spectral::welch_psd(&sine(5.0, 200.0, 2000, 1.0), 200.0, &WelchConfig::default()).unwrap();
    assert_eq!(psd.bin_width, 2.0);
    let peak = psd.peak_frequency();
    assert!((peak - 5.0).abs() <= psd.bin_width / 2.0 + 1e-12, "{peak}");
    assert!((psd.total_power() - 0.5).abs() <= 0.025, "{}", psd.total_power());
}

#[test]
fn white_noise_power_matches_variance() {
    let sigma2: f64 = 2.5;
    let mean: f64 = (0..50)
        .map(|seed| {
            let x: Vec<f64> = common::white(1, 2000, sigma2.sqrt(), seed).row(0).iter().copied().collect();
            spectral::welch_psd(&x, 200.0, &WelchConfig::default()).unwrap().total_power()
        })
        .sum::<f64>()
        / 50.0;
    assert!((mean / sigma2 - 1.0).abs() <= 0.1, "{mean}");
}

#[test]
fn sinusoid_band_ratio() {
    let psd = spectral::welch_psd(&sine(5.0, 200.0, 2000, 1.0), 200.0, &WelchConfig::default()).unwrap();
    let low = spectral::band_power(&psd, DELTA_THETA).unwrap();
    let high = spectral::band_power(&psd, (8.0, 45.0)).unwrap();
    assert!(low / high >= 100.0, "{}", low / high);
}

#[test]
fn band_power_single_bin() {
    let psd = Psd {
        freqs: (0..51).map(|i| 2.0 * i as f64).collect(),
        power: (0..51).map(|i| if i == 2 { 3.0 } else { 0.0 }).collect(),
        bin_width: 2.0,
    };
    assert_eq!(spectral::band_power(&psd, DELTA_THETA).unwrap(), 6.0);
    assert!(spectral::band_power(&psd, (4.5, 5.5)).is_err());
}

fn noise_epochs(trials: usize, seed: u64) -> Vec<Epoch> {
    (0..trials)
        .map(|t| {
            let x = common::white(1, 600, 1.0, seed * 1000 + t as u64);
            Epoch::new(x, vec![0.0; 600], 300, 200.0).unwrap()
        })
        .collect()
}

#[test]
fn ersp_of_white_noise_is_flat() {
    let freqs: Vec<f64> = (2..=40).step_by(2).map(f64::from).collect();
    let map = spectral::ersp(&noise_epochs(20, 1), 0, &freqs, [-1300.0, -300.0], &ErspConfig::default()).unwrap();
    let cells: Vec<f64> = map.values.iter().flatten().copied().collect();
    let inside = cells.iter().filter(|v| v.abs() <= 1.5).count();
    assert!(inside as f64 >= 0.95 * cells.len() as f64, "{inside}/{}", cells.len());
}

#[test]
fn ersp_shows_injected_burst() {
    let mut epochs = noise_epochs(20, 2);
    for e in &mut epochs {
        let mut x = e.eeg().clone();
        for s in 300..380 {
            x[(0, s)] += 3.0 * (2.0 * std::f64::consts::PI * 5.0 * (s - 300) as f64 / 200.0).sin();
        }
        *e = e.with_eeg(x).unwrap();
    }
    let freqs = [5.0, 20.0, 35.0];
    let map = spectral::ersp(&epochs, 0, &freqs, [-1300.0, -300.0], &ErspConfig::default()).unwrap();
    let at = |t: f64| map.times_ms.iter().position(|x| (*x - t).abs() < 1e-9).unwrap();
    let burst = at(200.0);
    assert!(map.values[burst][0] > 6.0, "{:?}", map.values[burst]);
    assert!(map.values[burst][0] > map.values[burst][1] + 3.0);
    assert!(map.values[burst][0] > map.values[burst][2] + 3.0);
    assert!(map.values[at(-800.0)][0].abs() < 3.0);
}

#[test]
fn ersp_baseline_must_be_pre_onset() {
    assert!(spectral::ersp(&noise_epochs(2, 3), 0, &[5.0], [0.0, 200.0], &ErspConfig::default()).is_err());
    let zeros = vec![Epoch::new(DMatrix::zeros(1, 600), vec![0.0; 600], 300, 200.0).unwrap()];
    assert!(spectral::ersp(&zeros, 0, &[5.0], [-1300.0, -300.0], &ErspConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn psd_scales_quadratically(seed in 0u64..10_000, c in 0.1f64..10.0) {
        let x: Vec<f64> = common::white(1, 400, 1.0, seed).row(0).iter().copied().collect();
        let y: Vec<f64> = x.iter().map(|v| v * c).collect();
        let px = spectral::welch_psd(&x, 200.0, &WelchConfig::default()).unwrap();
        let py = spectral::welch_psd(&y, 200.0, &WelchConfig::default()).unwrap();
        for (a, b) in px.power.iter().zip(&py.power) {
            prop_assert!(*a >= 0.0);
            prop_assert!((b - c * c * a).abs() <= 1e-9 * (c * c * a).max(1e-12));
        }
    }

    #[test]
    fn bands_partition_additively(seed in 0u64..10_000) {
        let x: Vec<f64> = common::white(1, 400, 1.0, seed).row(0).iter().copied().collect();
        let psd = spectral::welch_psd(&x, 200.0, &WelchConfig::default()).unwrap();
        let whole = spectral::band_power(&psd, (0.0, 100.0 + 1e-9)).unwrap();
        let parts: f64 = [(0.0, 8.0), (8.0, 30.0), (30.0, 100.0 + 1e-9)]
            .iter()
            .map(|b| spectral::band_power(&psd, *b).unwrap())
            .sum();
        prop_assert!((whole - parts).abs() <= 1e-9 * whole);
        prop_assert_eq!(psd.bin_width * 100.0, 200.0);
    }

    #[test]
    fn sliding_power_is_shift_equivariant(seed in 0u64..10_000, k in 1usize..6) {
        let x: Vec<f64> = common::white(1, 600, 1.0, seed).row(0).iter().copied().collect();
        let mut delayed = vec![0.0; 10 * k];
        delayed.extend_from_slice(&x);
        let a = spectral::sliding_band_power(&x, 200.0, 500.0, 50.0, DELTA_THETA).unwrap();
        let b = spectral::sliding_band_power(&delayed, 200.0, 500.0, 50.0, DELTA_THETA).unwrap();
        for (i, v) in a.values.iter().enumerate() {
            prop_assert!((b.values[i + k] - v).abs() <= 1e-12 * v.max(1e-12));
            prop_assert_eq!(b.timestamps_ms[i + k], a.timestamps_ms[i] + 50.0 * k as f64);
        }
    }
}
