use brakecast::ica::IcaDecomposition;
use brakecast::select;
use brakecast::signal::BrakeTrace;
use brakecast::spectral;
use brakecast::synth::{self, SourceKind, SourceSpec, SynthConfig};
use nalgebra::DMatrix;

#[test]
fn noiseless_brake_follows_lagged_power() {
    let cfg = SynthConfig {
        channels: 4,
        sources: vec![SourceSpec::new(SourceKind::BrakingLocked, (2.0, 7.0), 1.0)],
        noise_sigma: 0.0,
        brake_noise: 0.0,
        trials: 10,
        ..Default::default()
    };
    let (_, trace, truth) = synth::generate(&cfg).unwrap();
    let fs = cfg.fs;
    let src: Vec<f64> = truth.sources.row(0).iter().copied().collect();
    let trial_len = (cfg.trial_ms / 1000.0 * fs) as usize;
    for trial in 0..cfg.trials {
        let span = trial * trial_len..(trial + 1) * trial_len;
        let seg = &src[span.clone()];
        let power = spectral::sliding_band_power(seg, fs, 500.0, 50.0, spectral::DELTA_THETA).unwrap();
        let brake = BrakeTrace::new(fs, trace.values()[span].to_vec(), vec![]).unwrap();
        let (f, y) = select::pair_delayed(&power, &brake, 200.0).unwrap();
        let r = select::pearson(&f, &y).unwrap().unwrap();
        assert!(r >= 0.99, "trial {trial}: r = {r}");
    }
}

#[test]
fn seeds_differ_but_statistics_agree() {
    let a = synth::generate(&SynthConfig { seed: 1, ..Default::default() }).unwrap();
    let b = synth::generate(&SynthConfig { seed: 2, ..Default::default() }).unwrap();
    assert_ne!(a.0.data(), b.0.data());
    let rms = |m: &DMatrix<f64>| (m.norm_squared() / m.len() as f64).sqrt();
    let (ra, rb) = (rms(a.0.data()), rms(b.0.data()));
    assert!((ra / rb - 1.0).abs() < 0.25, "{ra} vs {rb}");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean(a.1.values()) - mean(b.1.values())).abs() < 0.1);
}

#[test]
fn square_config_meets_condition_bound() {
    let sources: Vec<SourceSpec> = (0..8)
        .map(|i| SourceSpec::new(if i == 0 { SourceKind::BrakingLocked } else { SourceKind::Background }, (2.0, 7.0), 1.0))
        .collect();
    let cfg = SynthConfig {
        channels: 8,
        sources,
        max_condition: 10.0,
        trials: 4,
        ..Default::default()
    };
    let (_, _, truth) = synth::generate(&cfg).unwrap();
    assert!(brakecast::linalg::condition_number(&truth.mixing) <= 10.0);
}

#[test]
fn unmixing_evaluation_cases() {
    let cfg = SynthConfig {
        channels: 8,
        sources: (0..8)
            .map(|i| SourceSpec::new(if i == 0 { SourceKind::BrakingLocked } else { SourceKind::Background }, (2.0, 7.0), 1.0))
            .collect(),
        trials: 4,
        noise_sigma: 0.0,
        ..Default::default()
    };
    let (_, _, truth) = synth::generate(&cfg).unwrap();
    let zero = nalgebra::DVector::zeros(8);
    let exact = IcaDecomposition::from_unmixing(brakecast::linalg::inverse(&truth.mixing, "mixing").unwrap(), zero.clone()).unwrap();
    let (corr, amari) = synth::evaluate_unmixing(&truth, &exact).unwrap();
    assert!(amari <= 1e-10);
    assert!(corr.iter().all(|c| (c - 1.0).abs() <= 1e-9));

    let perm = [3usize, 0, 7, 1, 6, 2, 5, 4];
    let inv = brakecast::linalg::inverse(&truth.mixing, "mixing").unwrap();
    let shuffled = DMatrix::from_fn(8, 8, |r, c| if r % 2 == 0 { -inv[(perm[r], c)] } else { inv[(perm[r], c)] });
    let (_, amari) = synth::evaluate_unmixing(&truth, &IcaDecomposition::from_unmixing(shuffled, zero.clone()).unwrap()).unwrap();
    assert!(amari <= 1e-10);

    let identity = IcaDecomposition::from_unmixing(DMatrix::identity(8, 8), zero).unwrap();
    let (_, amari) = synth::evaluate_unmixing(&truth, &identity).unwrap();
    assert!(amari > 0.3, "{amari}");

    let wrong = IcaDecomposition::from_unmixing(DMatrix::identity(3, 3), nalgebra::DVector::zeros(3)).unwrap();
    assert!(synth::evaluate_unmixing(&truth, &wrong).is_err());
}
