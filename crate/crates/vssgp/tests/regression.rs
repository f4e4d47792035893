//! End-to-end library flows: stochastic training on a long series,
//! predictive calibration on held-out points, and the frozen
//! random-projections regime at large K.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vssgp::{
    fit_adaptive_sgd, fit_quasi_newton, fit_random_projections, init_state, predict_batch,
    BoundKind, Dataset, FitConfig, InitOptions, KernelSpec, OptimizerKind, SmComponent,
};

/// A crude speech-like signal: a few amplitude-modulated harmonics plus a
/// little noise.
fn audio_like(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freqs = [11.0, 23.0, 41.0];
    let amps = [0.8, 0.5, 0.3];
    let phases: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let inputs = DMatrix::from_fn(n, 1, |r, _| r as f64 / n as f64);
    let outputs = DMatrix::from_fn(n, 1, |r, _| {
        let t = inputs[(r, 0)];
        let envelope = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 1.5 * t).sin().powi(2);
        let mut v = 0.0;
        for j in 0..3 {
            v += amps[j] * envelope * (2.0 * std::f64::consts::PI * freqs[j] * t + phases[j]).sin();
        }
        v + 0.02 * rng.gen_range(-1.0..1.0)
    });
    Dataset::new(inputs, outputs).unwrap()
}

#[test]
fn stochastic_training_makes_progress_on_long_series() {
    let data = audio_like(4000, 21);
    let spec = KernelSpec::new(vec![SmComponent::isotropic(1.0, 0.02, 0.0, 1)]).unwrap();
    let opts = InitOptions { tau: 100.0, ..InitOptions::default() };
    let state0 = init_state(&data, &spec, 50, &opts, 2).unwrap();
    let config = FitConfig {
        bound: BoundKind::Stochastic { batch_size: 256, seed: 2 },
        optimizer: OptimizerKind::AdaptiveSgd,
        max_iters: 500,
        step_size: 1e-2,
        ..FitConfig::default()
    };
    let (_, _, trace) = fit_adaptive_sgd(&data, &state0, &spec, &config).unwrap();
    assert_eq!(trace.iterations.len(), 500);
    let first: f64 = trace.iterations[..50].iter().map(|r| r.bound).sum::<f64>() / 50.0;
    let last: f64 = trace.iterations[450..].iter().map(|r| r.bound).sum::<f64>() / 50.0;
    assert!(
        last > first,
        "no training progress: first-50 mean {first:.2}, last-50 mean {last:.2}"
    );
}

#[test]
fn sinusoid_fit_improves_the_bound_and_calibrates() {
    // three noisy cycles; every fifth point held out
    let n = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let xs = DMatrix::from_fn(n, 1, |r, _| r as f64 / n as f64);
    let ys = DMatrix::from_fn(n, 1, |r, _| {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        (2.0 * std::f64::consts::PI * 3.0 * xs[(r, 0)]).sin() + 0.1 * z
    });
    let train_rows: Vec<usize> = (0..n).filter(|r| r % 5 != 0).collect();
    let test_rows: Vec<usize> = (0..n).filter(|r| r % 5 == 0).collect();
    let all = Dataset::new(xs, ys).unwrap();
    let train = all.select_rows(&train_rows).unwrap();

    let spec = KernelSpec::new(vec![SmComponent::isotropic(1.0, 0.1, 0.0, 1)]).unwrap();
    let state0 = init_state(&train, &spec, 20, &InitOptions::default(), 3).unwrap();
    let config = FitConfig { max_iters: 300, seed: 3, ..FitConfig::default() };
    let (state, spec_out, trace) = fit_quasi_newton(&train, &state0, &spec, &config).unwrap();
    assert!(
        trace.iterations.last().unwrap().bound > trace.iterations.first().unwrap().bound,
        "bound did not improve"
    );

    let moments = vssgp::FeatureMoments::compute(train.inputs(), &state, &spec_out);
    let solve =
        vssgp::solve_optimal_coefficients(&moments, train.outputs(), state.noise_precision)
            .unwrap();
    let test_inputs = all.inputs().select_rows(&test_rows);
    let preds = predict_batch(&test_inputs, &state, &spec_out, Some(&solve)).unwrap();
    let mut within = 0usize;
    for (i, &r) in test_rows.iter().enumerate() {
        let truth = all.outputs()[(r, 0)];
        let sd = preds[i].covariance[(0, 0)].sqrt();
        if (preds[i].mean[0] - truth).abs() <= 2.0 * sd {
            within += 1;
        }
    }
    let frac = within as f64 / test_rows.len() as f64;
    assert!(frac >= 0.9, "only {frac:.2} of held-out points within 2 posterior sd");
}

#[test]
fn frozen_random_projections_scale_to_many_features() {
    // high-precision, many-feature regime: one linear solve, no iterations
    let data = audio_like(100, 5);
    let spec = KernelSpec::new(vec![SmComponent::isotropic(1.0, 0.004, 0.0, 1)]).unwrap();
    let opts = InitOptions { tau: 100.0, ..InitOptions::default() };
    let config = FitConfig { max_iters: 0, seed: 1, ..FitConfig::default() };
    let (state, spec_out, trace, solve) =
        fit_random_projections(&data, &spec, 500, &opts, &config, false).unwrap();
    assert!(trace.iterations.is_empty());
    assert_eq!(state.num_columns(), 500);
    assert_eq!(state.noise_precision, 100.0);
    let preds = predict_batch(data.inputs(), &state, &spec_out, Some(&solve)).unwrap();
    // interpolates the training points closely at this capacity
    let mut mse = 0.0;
    for (r, p) in preds.iter().enumerate() {
        mse += (p.mean[0] - data.outputs()[(r, 0)]).powi(2) / 100.0;
    }
    assert!(mse.sqrt() < 0.2, "train RMSE {}", mse.sqrt());
    for p in &preds {
        assert!(p.mean[0].is_finite() && p.covariance[(0, 0)].is_finite());
    }
}
