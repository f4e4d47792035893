//! Per-point predictive moments of the approximate posterior.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::bounds::CoefficientSolve;
use crate::error::{Error, Result};
use crate::features::point_moments;
use crate::model::{KernelSpec, VariationalState};

/// Predictive mean (1 x D) and covariance (D x D) at a single input.
#[derive(Debug, Clone)]
pub struct PredictiveDensity {
    pub mean: RowDVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl PredictiveDensity {
    /// Per-output standard deviations (square roots of the diagonal).
    pub fn std(&self) -> Vec<f64> {
        (0..self.covariance.nrows())
            .map(|d| self.covariance[(d, d)].max(0.0).sqrt())
            .collect()
    }
}

/// Where the coefficient posterior comes from: the trained diagonal state, or
/// the closed-form solve (full covariance) computed on the training data.
#[derive(Debug, Clone, Copy)]
pub enum CoefficientPosterior<'a> {
    FromState,
    Optimal(&'a CoefficientSolve),
}

/// E[y*] = E[phi(x*)] M.
pub fn predictive_mean(
    x_star: &DVector<f64>,
    state: &VariationalState,
    spec: &KernelSpec,
    coeff: CoefficientPosterior,
) -> RowDVector<f64> {
    let (a, _) = point_moments(x_star, state, spec);
    match coeff {
        CoefficientPosterior::FromState => &a * &state.coeff_mean,
        CoefficientPosterior::Optimal(solve) => &a * &solve.mean,
    }
}

/// Var[y*] = tau^-1 I + Psi + M^T (E[phi^T phi] - E[phi]^T E[phi]) M,
/// where Psi_dd traces E[phi^T phi] against the coefficient covariance of
/// output d (the diagonal state covariance, or the full tau^-1 SigmaHat for
/// the solved posterior).
pub fn predictive_variance(
    x_star: &DVector<f64>,
    state: &VariationalState,
    spec: &KernelSpec,
    coeff: CoefficientPosterior,
) -> DMatrix<f64> {
    let (a, b) = point_moments(x_star, state, spec);
    let lk = state.num_columns();
    let tau = state.noise_precision;
    let feature_var = DVector::from_fn(lk, |k, _| (b[k] - a[k] * a[k]).max(0.0));

    let (m, d_out) = match coeff {
        CoefficientPosterior::FromState => (&state.coeff_mean, state.output_dim()),
        CoefficientPosterior::Optimal(solve) => (&solve.mean, solve.mean.ncols()),
    };
    let mut cov = DMatrix::zeros(d_out, d_out);
    for i in 0..d_out {
        for j in 0..d_out {
            let mut acc = 0.0;
            for k in 0..lk {
                acc += m[(k, i)] * feature_var[k] * m[(k, j)];
            }
            cov[(i, j)] = acc;
        }
    }
    match coeff {
        CoefficientPosterior::FromState => {
            for d in 0..d_out {
                let mut psi = 0.0;
                for k in 0..lk {
                    psi += b[k] * state.coeff_var[(k, d)];
                }
                cov[(d, d)] += psi;
            }
        }
        CoefficientPosterior::Optimal(solve) => {
            // tr(E[phi^T phi] . tau^-1 SigmaHat) with the full point gram
            let mut trace = 0.0;
            for k in 0..lk {
                for kk in 0..lk {
                    let gram_entry = if k == kk { b[k] } else { a[k] * a[kk] };
                    trace += gram_entry * solve.sigma_hat[(kk, k)];
                }
            }
            let psi = trace / solve.tau;
            for d in 0..d_out {
                cov[(d, d)] += psi;
            }
        }
    }
    for d in 0..d_out {
        cov[(d, d)] += 1.0 / tau;
    }
    cov
}

/// Predictive densities for every row of `x_stars`. A supplied solve is used
/// for the coefficient posterior (avoiding refactorisation); otherwise the
/// state's diagonal posterior is used.
pub fn predict_batch(
    x_stars: &DMatrix<f64>,
    state: &VariationalState,
    spec: &KernelSpec,
    solve: Option<&CoefficientSolve>,
) -> Result<Vec<PredictiveDensity>> {
    if x_stars.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    if x_stars.ncols() != state.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "prediction inputs have {} columns, model expects {}",
            x_stars.ncols(),
            state.input_dim()
        )));
    }
    let coeff = match solve {
        Some(s) => CoefficientPosterior::Optimal(s),
        None => CoefficientPosterior::FromState,
    };
    let mut out = Vec::with_capacity(x_stars.nrows());
    for r in 0..x_stars.nrows() {
        let x = DVector::from_fn(x_stars.ncols(), |q, _| x_stars[(r, q)]);
        out.push(PredictiveDensity {
            mean: predictive_mean(&x, state, spec, coeff),
            covariance: predictive_variance(&x, state, spec, coeff),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::solve_optimal_coefficients;
    use crate::features::FeatureMoments;
    use crate::model::SmComponent;
    use crate::oracle::{random_dataset, random_instance};
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_coefficients_give_zero_mean() {
        let (mut state, spec) = random_instance(90, 1, 3, 1, 2, false);
        state.coeff_mean.fill(0.0);
        let mean = predictive_mean(&dvector![0.4], &state, &spec, CoefficientPosterior::FromState);
        assert!(mean.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn point_mass_state_matches_ridge_prediction() {
        let (mut state, spec) = random_instance(91, 1, 4, 1, 1, false);
        state.freq_var.fill(0.0);
        let data = random_dataset(92, 15, 1, 1);
        let moments = FeatureMoments::compute(data.inputs(), &state, &spec);
        let solve =
            solve_optimal_coefficients(&moments, data.outputs(), state.noise_precision).unwrap();
        let x_star = dvector![0.37];
        let mean =
            predictive_mean(&x_star, &state, &spec, CoefficientPosterior::Optimal(&solve));
        // ridge weights from the deterministic features
        let phi = &moments.phi_mean;
        let mut c = phi.transpose() * phi;
        for k in 0..c.nrows() {
            c[(k, k)] += 1.0 / state.noise_precision;
        }
        let w = c.try_inverse().unwrap() * phi.transpose() * data.outputs();
        let (a, _) = point_moments(&x_star, &state, &spec);
        let want = (&a * &w)[(0, 0)];
        assert!((mean[0] - want).abs() < 1e-10);
    }

    #[test]
    fn zero_mean_vanishing_variance_leaves_noise_floor() {
        let (mut state, spec) = random_instance(93, 1, 2, 1, 2, false);
        state.coeff_mean.fill(0.0);
        state.coeff_var.fill(1e-300);
        let cov = predictive_variance(&dvector![0.1], &state, &spec, CoefficientPosterior::FromState);
        let tau_inv = 1.0 / state.noise_precision;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { tau_inv } else { 0.0 };
                assert!((cov[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moments_match_posterior_monte_carlo() {
        let (state, spec) = random_instance(94, 1, 2, 1, 1, true);
        let x_star = dvector![0.3];
        let mean = predictive_mean(&x_star, &state, &spec, CoefficientPosterior::FromState);
        let cov = predictive_variance(&x_star, &state, &spec, CoefficientPosterior::FromState);

        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let samples = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let tau_inv_sqrt = (1.0 / state.noise_precision).sqrt();
        for _ in 0..samples {
            let omega = crate::features::sample_posterior_omega(&state, &mut rng);
            let row = crate::features::phi_row(&x_star, &omega, &state.inducing, &spec);
            let mut y = 0.0;
            for k in 0..state.num_columns() {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                y += row[k] * (state.coeff_mean[(k, 0)] + state.coeff_var[(k, 0)].sqrt() * z);
            }
            let noise: f64 = rng.sample(rand_distr::StandardNormal);
            y += tau_inv_sqrt * noise;
            sum += y;
            sumsq += y * y;
        }
        let n = samples as f64;
        let mc_mean = sum / n;
        let mc_var = sumsq / n - mc_mean * mc_mean;
        let se_mean = (mc_var / n).sqrt();
        assert!((mean[0] - mc_mean).abs() < 3.0 * se_mean, "{} vs {mc_mean}", mean[0]);
        // variance of the variance estimator ~ 2 var^2 / n for near-Gaussians
        let se_var = (2.0 * mc_var * mc_var / n).sqrt();
        assert!((cov[(0, 0)] - mc_var).abs() < 5.0 * se_var, "{} vs {mc_var}", cov[(0, 0)]);
    }

    #[test]
    fn far_from_data_variance_collapses_to_prior_form() {
        // single SE component, positive frequency variance everywhere
        let spec = KernelSpec::new(vec![SmComponent::isotropic(1.4, 0.9, 0.0, 1)]).unwrap();
        let k_per = 3;
        let (mut state, _) = random_instance(95, 1, k_per, 1, 2, false);
        state.freq_var.fill(0.8);
        state.inducing.fill(0.0);
        let x_far = dvector![1e4];
        let cov =
            predictive_variance(&x_far, &state, &spec, CoefficientPosterior::FromState);
        let mean = predictive_mean(&x_far, &state, &spec, CoefficientPosterior::FromState);
        assert!(mean.norm() < 1e-10);
        let sigma2_over_k = 1.4 / k_per as f64;
        let tau_inv = 1.0 / state.noise_precision;
        for i in 0..2 {
            for j in 0..2 {
                let mut psi = 0.0;
                for k in 0..k_per {
                    psi += sigma2_over_k * state.coeff_mean[(k, i)] * state.coeff_mean[(k, j)];
                }
                if i == j {
                    for k in 0..k_per {
                        psi += sigma2_over_k * state.coeff_var[(k, i)];
                    }
                    psi += tau_inv;
                }
                assert!(
                    (cov[(i, j)] - psi).abs() < 1e-6,
                    "entry ({i},{j}): {} vs {psi}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn variance_diagonal_never_drops_below_noise_floor() {
        for seed in 0..20u64 {
            let (state, spec) = random_instance(600 + seed, 2, 2, 2, 2, seed % 2 == 0);
            let x = dvector![seed as f64 * 0.3 - 2.0, 0.5];
            let cov = predictive_variance(&x, &state, &spec, CoefficientPosterior::FromState);
            for d in 0..2 {
                assert!(cov[(d, d)] >= 1.0 / state.noise_precision - 1e-10);
            }
        }
    }

    #[test]
    fn batch_matches_scalar_and_permutes() {
        let (state, spec) = random_instance(96, 2, 2, 1, 1, false);
        let xs = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -0.5, 0.9, 1.5, -1.0]);
        let batch = predict_batch(&xs, &state, &spec, None).unwrap();
        for r in 0..3 {
            let x = dvector![xs[(r, 0)], xs[(r, 1)]];
            let mean = predictive_mean(&x, &state, &spec, CoefficientPosterior::FromState);
            assert_eq!(batch[r].mean, mean);
        }
        let perm = DMatrix::from_row_slice(3, 2, &[1.5, -1.0, 0.1, 0.2, -0.5, 0.9]);
        let batch_perm = predict_batch(&perm, &state, &spec, None).unwrap();
        assert_eq!(batch_perm[0].mean, batch[2].mean);
        assert_eq!(batch_perm[1].mean, batch[0].mean);
        assert_eq!(batch_perm[2].mean, batch[1].mean);
    }

    #[test]
    fn batch_rejects_dimension_mismatch() {
        let (state, spec) = random_instance(97, 2, 2, 1, 1, false);
        let xs = DMatrix::zeros(2, 3);
        assert!(predict_batch(&xs, &state, &spec, None).is_err());
    }
}
