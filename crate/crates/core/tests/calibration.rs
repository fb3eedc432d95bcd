use fsu_demand::{
    apply_measurement_model, build_calibration_matrix, correct_parameters, cv_error,
    fit_calibrated, fit_la_aids, fold_assignment, generate, grid_search, predict_shares,
    AidsParameters, CalibrationSpec, DemandDataset, Error, ErrorTarget, FitOptions, Loss,
    MeasurementNoise, SyntheticConfig,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn data(seed: u64, n: usize, noise: f64) -> (DemandDataset, AidsParameters) {
    let (d, t) = generate(&SyntheticConfig {
        n_households: n,
        n_fsus: n / 10,
        share_noise_sd: noise,
        within_fsu_price_sd: 0.05,
        seed,
        ..Default::default()
    })
    .unwrap();
    (d, t.params)
}

fn max_diff(a: &AidsParameters, b: &AidsParameters) -> f64 {
    let mut d = 0.0f64;
    for i in 0..a.n_items() {
        d = d
            .max((a.alpha[i] - b.alpha[i]).abs())
            .max((a.beta[i] - b.beta[i]).abs());
        for j in 0..a.n_items() {
            d = d.max((a.gamma[(i, j)] - b.gamma[(i, j)]).abs());
        }
    }
    d
}

#[test]
fn identity_model_returns_input() {
    let (d, _) = data(1, 200, 0.01);
    let out = apply_measurement_model(
        &d,
        &CalibrationSpec::identity(),
        MeasurementNoise::none(),
        4,
    )
    .unwrap();
    assert_eq!(out, d);
}

#[test]
fn noise_free_slope_scales_log_expenditure() {
    let (d, _) = data(2, 200, 0.01);
    let out = apply_measurement_model(
        &d,
        &CalibrationSpec::expenditure_only(0.0, 0.8),
        MeasurementNoise::none(),
        4,
    )
    .unwrap();
    for (a, b) in d.households.iter().zip(&out.households) {
        assert!((b.log_expenditure() - 0.8 * a.log_expenditure()).abs() < 1e-12);
        assert_eq!(a.shares, b.shares);
    }
}

#[test]
fn noisy_slope_is_recovered_by_simple_regression() {
    let (d, _) = data(3, 10_000, 0.01);
    let noise = MeasurementNoise {
        expenditure_sd: 0.05,
        price_sd: 0.0,
    };
    let out = apply_measurement_model(&d, &CalibrationSpec::expenditure_only(0.0, 0.8), noise, 9)
        .unwrap();
    let x: Vec<f64> = d.households.iter().map(|h| h.log_expenditure()).collect();
    let y: Vec<f64> = out.households.iter().map(|h| h.log_expenditure()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    assert!((sxy / sxx - 0.8).abs() < 0.01, "slope {}", sxy / sxx);
}

#[test]
fn matrix_times_stored_inverse_is_identity() {
    let spec = CalibrationSpec::joint(0.3, 1.7, -0.2, 0.6);
    let l = build_calibration_matrix(&spec, 5).unwrap();
    let numeric = l.matrix.clone().try_inverse().unwrap();
    assert!(
        (&l.matrix * &l.inverse - DMatrix::identity(7, 7))
            .abs()
            .max()
            < 1e-12
    );
    assert!((numeric - &l.inverse).abs().max() < 1e-12);
}

#[test]
fn real_target_transform_and_correction_paths_agree() {
    let (d, truth) = data(5, 1500, 0.0);
    let spec =
        CalibrationSpec::joint(0.1, 0.8, 0.02, 1.01).with_target(ErrorTarget::RealExpenditure);
    let observed = apply_measurement_model(&d, &spec, MeasurementNoise::none(), 1).unwrap();
    let naive = fit_la_aids(&observed, &FitOptions::default())
        .unwrap()
        .parameters;
    let corrected = correct_parameters(&naive, &spec).unwrap();
    let transformed = fit_calibrated(&observed, &spec, &FitOptions::default())
        .unwrap()
        .parameters;
    assert!(max_diff(&corrected, &transformed) < 1e-8);
    assert!(max_diff(&corrected, &truth) < 1e-6);
    assert!(corrected.restriction_residuals().max_violation() < 1e-8);
}

#[test]
fn expenditure_slope_round_trip_recovers_truth() {
    let (d, truth) = data(6, 1500, 0.0);
    for target in [ErrorTarget::GroupExpenditure, ErrorTarget::RealExpenditure] {
        let spec = CalibrationSpec::expenditure_only(0.0, 0.8).with_target(target);
        let observed = apply_measurement_model(&d, &spec, MeasurementNoise::none(), 1).unwrap();
        let fit = fit_calibrated(&observed, &spec, &FitOptions::default()).unwrap();
        assert!(max_diff(&fit.parameters, &truth) < 1e-6, "{target:?}");
    }
}

#[test]
fn cv_error_is_zero_on_self_consistent_data() {
    // with beta = 0 the price index weights drop out, so every training fold
    // represents the generating model exactly
    let items: Vec<String> = (1..=4).map(|k| format!("item{k}")).collect();
    let mut params = fsu_demand::random_parameters(&items, 7);
    params.beta = vec![0.0; 4];
    let (d, _) = generate(&SyntheticConfig {
        n_households: 300,
        n_fsus: 30,
        share_noise_sd: 0.0,
        within_fsu_price_sd: 0.05,
        true_params: Some(params),
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    let e = cv_error(&d, &CalibrationSpec::identity(), 5, Loss::L2, 3).unwrap();
    assert!(e < 1e-10, "{e}");
    let a = cv_error(
        &d,
        &CalibrationSpec::expenditure_only(0.0, 0.9),
        5,
        Loss::L1,
        3,
    )
    .unwrap();
    let b = cv_error(
        &d,
        &CalibrationSpec::expenditure_only(0.0, 0.9),
        5,
        Loss::L1,
        3,
    )
    .unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn two_fold_cv_matches_manual_computation() {
    let (d, _) = data(8, 200, 0.01);
    let spec = CalibrationSpec::expenditure_only(0.0, 0.9);
    let assign = fold_assignment(&d, 2, 42).unwrap();
    assert_eq!(assign.iter().filter(|f| **f == 0).count(), 100);

    // independent path: calibrate by hand, fit each half, score the other
    let mut calibrated = d.clone();
    for h in &mut calibrated.households {
        let x = (h.log_expenditure() / 0.9).exp();
        h.group_expenditure = x;
    }
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for f in 0..2 {
        let train: Vec<usize> = (0..200).filter(|&r| assign[r] != f).collect();
        let test: Vec<usize> = (0..200).filter(|&r| assign[r] == f).collect();
        let fit = fit_la_aids(&calibrated.subset(&train), &FitOptions::default()).unwrap();
        let held = calibrated.subset(&test);
        let pred = predict_shares(&fit.parameters, &held, None).unwrap();
        for (h, p) in held.households.iter().zip(&pred) {
            for (w, q) in h.shares.iter().zip(p) {
                l1 += (q - w).abs();
                l2 += (q - w).powi(2);
            }
        }
    }
    let got1 = cv_error(&d, &spec, 2, Loss::L1, 42).unwrap();
    let got2 = cv_error(&d, &spec, 2, Loss::L2, 42).unwrap();
    assert!((got1 - l1).abs() < 1e-9 * l1, "{got1} vs {l1}");
    assert!((got2 - l2).abs() < 1e-9 * l2);
}

#[test]
fn too_small_fold_is_an_estimation_error() {
    // 4 items leave 12 free parameters; 4 folds of 16 rows train on 12
    let (d, _) = data(9, 16, 0.01);
    match cv_error(&d, &CalibrationSpec::identity(), 4, Loss::L2, 1) {
        Err(Error::Estimation(msg)) => assert!(msg.contains("fold"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        cv_error(&d, &CalibrationSpec::identity(), 1, Loss::L2, 1),
        Err(Error::Contract(_))
    ));
}

#[test]
fn grid_search_identity_and_failed_points() {
    let (d, _) = data(10, 300, 0.01);
    let only = grid_search(&d, &[CalibrationSpec::identity()], 3, 1).unwrap();
    assert_eq!(only.best_l1, Some(CalibrationSpec::identity()));
    assert_eq!(only.best_l2, Some(CalibrationSpec::identity()));

    let grid = vec![
        CalibrationSpec::joint(0.0, 1.0, 0.0, 0.0),
        CalibrationSpec::identity(),
        CalibrationSpec::expenditure_only(0.0, 1.1),
    ];
    let r = grid_search(&d, &grid, 3, 1).unwrap();
    assert_eq!(r.failures, vec![0]);
    assert!(r.grid[0].error.is_some());
    assert!(r.grid[1].cv_l1.is_some() && r.grid[2].cv_l2.is_some());
    let best = r.best_l2_index.unwrap();
    let min = r
        .grid
        .iter()
        .filter_map(|p| p.cv_l2)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(r.grid[best].cv_l2, Some(min));

    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("theta1,theta2,theta3,cv_l1,cv_l2\n"));
    assert!(text.lines().nth(1).unwrap().ends_with(",,"));
}

#[test]
fn grid_search_recovers_corrupting_slope() {
    let (d, _) = data(12, 3000, 0.01);
    let noise = MeasurementNoise {
        expenditure_sd: 0.05,
        price_sd: 0.0,
    };
    let observed =
        apply_measurement_model(&d, &CalibrationSpec::expenditure_only(0.0, 0.8), noise, 77)
            .unwrap();
    let grid: Vec<CalibrationSpec> = [0.6, 0.7, 0.8, 0.9, 1.0]
        .into_iter()
        .map(|t| CalibrationSpec::expenditure_only(0.0, t))
        .collect();
    let r = grid_search(&observed, &grid, 10, 5).unwrap();
    let best = r.best_l2.unwrap().theta1;
    assert!((best - 0.8).abs() <= 0.1 + 1e-12, "selected {best}");
}

#[test]
fn cv_is_invariant_to_row_order() {
    let (d, _) = data(13, 400, 0.01);
    let mut rev = d.clone();
    rev.households.reverse();
    let spec = CalibrationSpec::expenditure_only(0.0, 0.95);
    let a = cv_error(&d, &spec, 4, Loss::L2, 8).unwrap();
    let b = cv_error(&rev, &spec, 4, Loss::L2, 8).unwrap();
    assert!((a - b).abs() < 1e-9 * a);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_specs_invert_exactly(
        t0 in -1.0f64..1.0,
        t1 in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0],
        t2 in -1.0f64..1.0,
        t3 in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0],
        n in 2usize..8,
    ) {
        let l = build_calibration_matrix(&CalibrationSpec::joint(t0, t1, t2, t3), n).unwrap();
        let err = (&l.matrix * &l.inverse - DMatrix::identity(n + 2, n + 2)).abs().max();
        prop_assert!(err < 1e-12);
    }

    #[test]
    fn correction_preserves_restrictions(seed in 0u64..500, t1 in 0.5f64..1.5, t3 in 0.9f64..1.1, t2 in -0.05f64..0.05) {
        let items: Vec<String> = (0..4).map(|i| format!("i{i}")).collect();
        let naive = fsu_demand::random_parameters(&items, seed);
        let fixed = correct_parameters(&naive, &CalibrationSpec::joint(0.1, t1, t2, t3)).unwrap();
        prop_assert!(fixed.restriction_residuals().max_violation() < 1e-8);
        prop_assert_eq!(correct_parameters(&naive, &CalibrationSpec::identity()).unwrap(), naive);
    }

    #[test]
    fn fold_sizes_are_near_equal(n in 10usize..300, folds in 2usize..10, seed in any::<u64>()) {
        let (d, _) = data(1, 20, 0.0);
        let d = d.subset(&(0..n).map(|i| i % 20).collect::<Vec<_>>());
        let a = fold_assignment(&d, folds, seed).unwrap();
        let mut counts = vec![0usize; folds];
        for f in a { counts[f] += 1; }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
    }
}
