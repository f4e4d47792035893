//! Independent reference computations used to verify the closed forms:
//! Monte Carlo estimators, adaptive quadrature, central finite differences,
//! and direct dense Gaussian densities. Nothing here shares a code path
//! with what it checks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::{phi_row, sample_posterior_omega};
use crate::model::{KernelSpec, PhaseMode, SmComponent, VariationalState, TWO_PI};

/// Monte Carlo mean and standard error of cos(w^T x + b), w ~ N(mu, diag(var)).
pub fn mc_expected_cos(
    mu: &DVector<f64>,
    var: &DVector<f64>,
    x: &DVector<f64>,
    b: f64,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    mc_cos_impl(mu, var, x, b, samples, seed, false)
}

/// Monte Carlo mean and standard error of cos^2(w^T x + b).
pub fn mc_expected_cos_sq(
    mu: &DVector<f64>,
    var: &DVector<f64>,
    x: &DVector<f64>,
    b: f64,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    mc_cos_impl(mu, var, x, b, samples, seed, true)
}

fn mc_cos_impl(
    mu: &DVector<f64>,
    var: &DVector<f64>,
    x: &DVector<f64>,
    b: f64,
    samples: usize,
    seed: u64,
    squared: bool,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..samples {
        let mut arg = b;
        for q in 0..x.len() {
            let z: f64 = rng.sample(StandardNormal);
            arg += (mu[q] + sd[q] * z) * x[q];
        }
        let mut v = arg.cos();
        if squared {
            v *= v;
        }
        sum += v;
        sumsq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let se = ((sumsq / n - mean * mean).max(0.0) / n).sqrt();
    (mean, se)
}

/// Adaptive Simpson quadrature to the requested absolute tolerance.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 40)
}

/// Monte Carlo estimate of E[Phi] over the posterior, with per-entry
/// standard errors.
pub fn mc_expected_phi(
    x: &DMatrix<f64>,
    state: &VariationalState,
    spec: &KernelSpec,
    samples: usize,
    seed: u64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.nrows();
    let lk = state.num_columns();
    let mut sum = DMatrix::zeros(n, lk);
    let mut sumsq = DMatrix::zeros(n, lk);
    for _ in 0..samples {
        let omega = sample_posterior_omega(state, &mut rng);
        for r in 0..n {
            let xr = DVector::from_fn(x.ncols(), |q, _| x[(r, q)]);
            let row = phi_row(&xr, &omega, &state.inducing, spec);
            for k in 0..lk {
                sum[(r, k)] += row[k];
                sumsq[(r, k)] += row[k] * row[k];
            }
        }
    }
    finish_moments(sum, sumsq, samples)
}

/// Monte Carlo estimate of E[Phi^T Phi] over the posterior, with per-entry
/// standard errors.
pub fn mc_expected_gram(
    x: &DMatrix<f64>,
    state: &VariationalState,
    spec: &KernelSpec,
    samples: usize,
    seed: u64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.nrows();
    let lk = state.num_columns();
    let mut sum = DMatrix::zeros(lk, lk);
    let mut sumsq = DMatrix::zeros(lk, lk);
    let mut phi = DMatrix::zeros(n, lk);
    for _ in 0..samples {
        let omega = sample_posterior_omega(state, &mut rng);
        for r in 0..n {
            let xr = DVector::from_fn(x.ncols(), |q, _| x[(r, q)]);
            phi.set_row(r, &phi_row(&xr, &omega, &state.inducing, spec));
        }
        let gram = phi.transpose() * &phi;
        for (s, (ss, g)) in sum.iter_mut().zip(sumsq.iter_mut().zip(gram.iter())) {
            *s += g;
            *ss += g * g;
        }
    }
    finish_moments(sum, sumsq, samples)
}

fn finish_moments(
    mut sum: DMatrix<f64>,
    mut sumsq: DMatrix<f64>,
    samples: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = samples as f64;
    for (s, ss) in sum.iter_mut().zip(sumsq.iter_mut()) {
        let mean = *s / n;
        *ss = ((*ss / n - mean * mean).max(0.0) / n).sqrt();
        *s = mean;
    }
    (sum, sumsq)
}

/// Central finite-difference gradient, step h per coordinate.
pub fn central_difference_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// log N(Y; 0, cov) summed over the columns of Y, evaluated directly in the
/// N-dimensional data space via a dense Cholesky factorization.
pub fn dense_log_density_zero_mean(y: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let n = y.nrows();
    let chol = cov.clone().cholesky().ok_or(Error::CholeskyFailure {
        min_eigenvalue: cov.clone().symmetric_eigenvalues().min(),
    })?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut total = 0.0;
    for d in 0..y.ncols() {
        let yd = y.column(d).into_owned();
        let alpha = chol.solve(&yd);
        total += -0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * log_det
            - 0.5 * yd.dot(&alpha);
    }
    Ok(total)
}

/// Dense GP log marginal likelihood and posterior computed with an explicit
/// matrix inverse; cubic and slow on purpose.
pub fn naive_gp_log_marginal(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    spec: &KernelSpec,
    tau: f64,
) -> Result<f64> {
    let n = x.nrows();
    let mut cov = DMatrix::from_fn(n, n, |i, j| {
        let xi = DVector::from_fn(x.ncols(), |q, _| x[(i, q)]);
        let xj = DVector::from_fn(x.ncols(), |q, _| x[(j, q)]);
        spec.kernel_exact(&xi, &xj)
    });
    for i in 0..n {
        cov[(i, i)] += 1.0 / tau;
    }
    let inv = cov
        .clone()
        .try_inverse()
        .ok_or(Error::InvalidArgument("singular covariance".into()))?;
    let det = cov.determinant();
    let mut total = 0.0;
    for d in 0..y.ncols() {
        let yd = y.column(d).into_owned();
        total += -0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * det.ln()
            - 0.5 * yd.dot(&(&inv * &yd));
    }
    Ok(total)
}

fn unif<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// A random valid (state, kernel) pair for randomized checks. Inverse periods
/// mix exact zeros with positive values; variances stay well away from the
/// underflow regime.
pub fn random_instance(
    seed: u64,
    input_dim: usize,
    per_component: usize,
    num_components: usize,
    output_dim: usize,
    variational_phases: bool,
) -> (VariationalState, KernelSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let components = (0..num_components)
        .map(|_| SmComponent {
            weight: unif(&mut rng, 0.3, 2.0),
            lengthscales: DVector::from_fn(input_dim, |_, _| unif(&mut rng, 0.4, 2.5)),
            inv_periods: DVector::from_fn(input_dim, |_, _| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    unif(&mut rng, 0.1, 1.2)
                }
            }),
        })
        .collect();
    let spec = KernelSpec { components };

    let lk = per_component * num_components;
    let freq_mean = DMatrix::from_fn(lk, input_dim, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z
    });
    let freq_var = DMatrix::from_fn(lk, input_dim, |_, _| unif(&mut rng, 0.05, 1.5));
    let inducing = DMatrix::from_fn(lk, input_dim, |_, _| unif(&mut rng, -1.5, 1.5));
    let phases = if variational_phases {
        let lower = DVector::from_fn(lk, |_, _| unif(&mut rng, 0.0, 3.0));
        let upper = DVector::from_fn(lk, |k, _| {
            let gap = unif(&mut rng, 0.2, TWO_PI - lower[k]);
            lower[k] + gap
        });
        PhaseMode::Variational { lower, upper }
    } else {
        PhaseMode::Fixed {
            offsets: DVector::from_fn(lk, |_, _| unif(&mut rng, 0.0, TWO_PI)),
        }
    };
    let coeff_mean = DMatrix::from_fn(lk, output_dim, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        0.6 * z
    });
    let coeff_var = DMatrix::from_fn(lk, output_dim, |_, _| unif(&mut rng, 0.05, 1.8));
    let state = VariationalState {
        inducing,
        freq_mean,
        freq_var,
        phases,
        coeff_mean,
        coeff_var,
        noise_precision: unif(&mut rng, 0.5, 15.0),
    };
    debug_assert!(state.validate(&spec).is_ok());
    (state, spec)
}

/// A random dataset matching the given dimensions.
pub fn random_dataset(seed: u64, n: usize, input_dim: usize, output_dim: usize) -> crate::Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(17));
    let x = DMatrix::from_fn(n, input_dim, |_, _| unif(&mut rng, -2.0, 2.0));
    let y = DMatrix::from_fn(n, output_dim, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z
    });
    crate::Dataset::new(x, y).expect("random dataset is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(&|t: f64| t.cos(), 0.0, 1.0, 1e-12);
        assert!((v - 1f64.sin()).abs() < 1e-11);
        let v = adaptive_simpson(&|t: f64| (-t * t).exp() * t.sin(), -2.0, 3.0, 1e-11);
        // cross-check against a fine midpoint rule
        let m = 2_000_000;
        let h = 5.0 / m as f64;
        let mut acc = 0.0;
        for i in 0..m {
            let t = -2.0 + (i as f64 + 0.5) * h;
            acc += (-t * t).exp() * t.sin() * h;
        }
        assert!((v - acc).abs() < 1e-8);
    }

    #[test]
    fn finite_differences_recover_polynomial_gradients() {
        let f = |v: &[f64]| Ok(v[0] * v[0] + 3.0 * v[0] * v[1] - v[1]);
        let g = central_difference_gradient(f, &[1.5, -0.5], 1e-5).unwrap();
        assert!((g[0] - (2.0 * 1.5 - 1.5)).abs() < 1e-9);
        assert!((g[1] - (3.0 * 1.5 - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn dense_log_density_matches_scalar_case() {
        let y = DMatrix::from_row_slice(1, 1, &[0.7]);
        let cov = DMatrix::from_row_slice(1, 1, &[2.0]);
        let got = dense_log_density_zero_mean(&y, &cov).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - 0.5 * 0.7 * 0.7 / 2.0;
        assert!((got - want).abs() < 1e-14);
    }
}
