use brakecast::preprocess::{self, PreprocessConfig};
use brakecast::signal::Epoch;
use brakecast::synth::{self, SynthConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_epoch(ch: usize, n: usize, seed: u64) -> Epoch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Normal::new(3.0, 2.0).unwrap();
    let eeg = DMatrix::from_fn(ch, n, |_, _| g.sample(&mut rng));
    Epoch::new(eeg, vec![0.0; n], n / 2, 200.0).unwrap()
}

#[test]
fn synthetic_onsets_become_epochs() {
    let cfg = SynthConfig::default();
    let (rec, trace, truth) = synth::generate(&cfg).unwrap();
    let set = preprocess::make_epochs(&rec, &trace, &PreprocessConfig::default()).unwrap();
    assert_eq!(set.epochs.len(), 30);
    assert_eq!(set.skipped, 0);
    for (e, want) in set.epochs.iter().zip(&truth.onset_intensities) {
        assert_eq!(e.t0_index(), 300);
        assert_eq!(e.n_samples(), 600);
        assert!((e.brake()[e.t0_index()] - want).abs() <= 1e-7);
    }
}

#[test]
fn baseline_matches_independent_means() {
    let e = random_epoch(5, 600, 3);
    let out = preprocess::baseline_correct(&e, [-1500.0, -1300.0]).unwrap();
    for ch in 0..5 {
        let mean: f64 = (0..40).map(|s| e.eeg()[(ch, s)]).sum::<f64>() / 40.0;
        for s in 0..600 {
            assert!((out.eeg()[(ch, s)] - (e.eeg()[(ch, s)] - mean)).abs() <= 1e-12);
        }
    }
}

#[test]
fn car_on_full_montage() {
    let out = preprocess::common_average_reference(&random_epoch(59, 600, 4)).unwrap();
    for col in out.eeg().column_iter() {
        assert!(col.mean().abs() <= 1e-12);
    }
}

#[test]
fn chain_is_bit_deterministic() {
    let cfg = SynthConfig {
        channels: 8,
        sources: synth::default_sources(8),
        trials: 5,
        ..Default::default()
    };
    let (rec, trace, _) = synth::generate(&cfg).unwrap();
    let a = preprocess::run_chain(&rec, &trace, &PreprocessConfig::default()).unwrap();
    let b = preprocess::run_chain(&rec, &trace, &PreprocessConfig::default()).unwrap();
    assert_eq!(a.epochs, b.epochs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn car_is_idempotent(seed in 0u64..10_000, ch in 2usize..10) {
        let once = preprocess::common_average_reference(&random_epoch(ch, 80, seed)).unwrap();
        let twice = preprocess::common_average_reference(&once).unwrap();
        prop_assert!((once.eeg() - twice.eeg()).amax() <= 1e-12);
    }

    #[test]
    fn baseline_is_idempotent(seed in 0u64..10_000) {
        let once = preprocess::baseline_correct(&random_epoch(3, 600, seed), [-1500.0, -1300.0]).unwrap();
        let twice = preprocess::baseline_correct(&once, [-1500.0, -1300.0]).unwrap();
        prop_assert!((once.eeg() - twice.eeg()).amax() <= 1e-12);
    }
}
