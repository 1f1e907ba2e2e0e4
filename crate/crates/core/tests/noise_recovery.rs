use nalgebra::Vector3;
use penning_probe::constants::{mhz_to_angular, MICRO};
use penning_probe::electrodes::TrapModel;
use penning_probe::noise::{fit_distance_scaling, fit_frequency_scaling, model_rate, DistanceFitOptions, NoiseModelParams};
use penning_probe::penning::{IonSpecies, ModeLabel};
use penning_probe::synth::{distance_scan, frequency_scan, mode_omega, phonon_record, phonon_series, task_rng, NoiseSpec};

fn heights(spec: &NoiseSpec) -> Vec<f64> {
    spec.heights_um.iter().map(|h| h * MICRO).collect()
}

#[test]
fn exponents_recovered_across_seeds() {
    let trap = TrapModel::default_layout();
    let spec = NoiseSpec::default();
    for mode in ModeLabel::ALL {
        let ms = spec.mode(mode);
        let truth = ms.params(mode);
        let mut hits = 0;
        for seed in 0..40 {
            let recs = distance_scan(&truth, &trap, mode_omega(ms), &heights(&spec), false, spec.relative_sigma, &mut task_rng(seed, 10 + mode as u64)).unwrap();
            let fit = fit_distance_scaling(&recs, &trap, &DistanceFitOptions::default()).unwrap();
            if (fit.params.beta - truth.beta).abs() <= 0.3 {
                hits += 1;
            }
        }
        assert!(hits >= 34, "{mode:?}: {hits}/40");
    }
}

#[test]
fn correlated_voltage_noise_recovered() {
    let trap = TrapModel::default_layout();
    let spec = NoiseSpec::default();
    let ms = &spec.cyclotron;
    let truth = ms.params(ModeLabel::Cyclotron);
    let mut hits = 0;
    for seed in 0..40 {
        let recs = distance_scan(&truth, &trap, mode_omega(ms), &heights(&spec), false, spec.relative_sigma, &mut task_rng(seed, 20)).unwrap();
        let fit = fit_distance_scaling(&recs, &trap, &DistanceFitOptions::default()).unwrap();
        let ratio = fit.params.s_v_corr / truth.s_v_corr;
        if ratio.max(1.0 / ratio) <= 1.5 {
            hits += 1;
        }
    }
    assert!(hits >= 34, "{hits}/40");
}

#[test]
fn adding_generator_component_never_raises_chi2() {
    let trap = TrapModel::default_layout();
    let spec = NoiseSpec::default();
    for mode in ModeLabel::ALL {
        let ms = spec.mode(mode);
        for seed in 0..10 {
            let recs = distance_scan(&ms.params(mode), &trap, mode_omega(ms), &heights(&spec), false, 0.1, &mut task_rng(seed, 30)).unwrap();
            let with = fit_distance_scaling(&recs, &trap, &DistanceFitOptions::default()).unwrap();
            let without = fit_distance_scaling(&recs, &trap, &DistanceFitOptions { technical: false, ..Default::default() }).unwrap();
            assert!(with.chi2 <= without.chi2 * (1.0 + 1e-9), "{mode:?} seed {seed}");
        }
    }
}

#[test]
fn phonon_series_coverage() {
    let waits: Vec<f64> = (0..10).map(|i| i as f64 * 0.1 / 9.0).collect();
    let mut rng = task_rng(77, 0);
    let mut inside = 0;
    for _ in 0..1000 {
        let (rate, sigma, _) = phonon_series(100.0, 0.05, &waits, 200, &mut rng).unwrap();
        if (rate - 100.0).abs() <= 3.0 * sigma {
            inside += 1;
        }
    }
    assert!(inside >= 990, "{inside}/1000");
}

#[test]
fn doubling_noise_doubles_rate_in_expectation() {
    let trap = TrapModel::default_layout();
    let pos = Vector3::new(0.0, 100e-6, 0.0);
    let omega = mhz_to_angular(2.6);
    let base = NoiseModelParams::new(ModeLabel::Axial, 40.0, 4.0).with_emi(3.0).without_johnson();
    let double = NoiseModelParams::new(ModeLabel::Axial, 80.0, 4.0).with_emi(6.0).without_johnson();
    let mean = |p: &NoiseModelParams| {
        let mut rng = task_rng(5, 1);
        (0..200).map(|_| phonon_record(p, &trap, ModeLabel::Axial, pos, omega, false, 200, &mut rng).unwrap().0.rate).sum::<f64>() / 200.0
    };
    let (a, b) = (mean(&base), mean(&double));
    assert!((b / a - 2.0).abs() < 0.05, "{a} {b}");
}

#[test]
fn phonon_records_feed_distance_fit() {
    let trap = TrapModel::default_layout();
    let spec = NoiseSpec::default();
    let truth = NoiseModelParams::new(ModeLabel::Axial, 40.0, 4.0).with_emi(4.0);
    let omega = mode_omega(&spec.axial);
    let mut rng = task_rng(3, 3);
    let recs: Vec<_> = heights(&spec)
        .iter()
        .map(|&h| phonon_record(&truth, &trap, ModeLabel::Axial, Vector3::new(0.0, h, 0.0), omega, false, 200, &mut rng).unwrap().0)
        .collect();
    let fit = fit_distance_scaling(&recs, &trap, &DistanceFitOptions::default()).unwrap();
    assert!((fit.params.beta - 4.0).abs() <= 0.2, "{}", fit.params.beta);
    for (b, r) in fit.breakdown.iter().zip(&recs) {
        assert_eq!(b.johnson + b.surface + b.technical, b.total);
        let direct = model_rate(&fit.params, &trap, r).unwrap();
        assert_eq!(direct.total, b.total);
    }
}

#[test]
fn frequency_exponent_recovered() {
    let trap = TrapModel::default_layout();
    let spec = NoiseSpec::default();
    let species = IonSpecies::beryllium9();
    let omegas: Vec<f64> = spec.scan_f_mhz.iter().map(|f| mhz_to_angular(*f)).collect();
    let mut hits = 0;
    for seed in 0..40 {
        let recs = frequency_scan(&species, 1e-13, mhz_to_angular(1.0), 1.7, &omegas, 75e-6, 0.1, &mut task_rng(seed, 40)).unwrap();
        let fit = fit_frequency_scaling(&recs, &trap, mhz_to_angular(1.0)).unwrap();
        if (fit.alpha.value - 1.7).abs() <= 0.05 {
            hits += 1;
        }
    }
    println!("alpha {hits}/40"); assert!(hits >= 36, "{hits}/40");
}
