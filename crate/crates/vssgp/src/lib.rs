//! Gaussian process regression through a finite Fourier expansion with a
//! variational posterior over the expansion's frequencies and phases.
//!
//! The covariance function (a spectral mixture) is rewritten as an
//! expectation of random cosine features. Placing a Gaussian posterior over
//! the feature frequencies and (optionally) a uniform posterior over the
//! phases gives closed-form expected features, three evidence lower bounds
//! (with the coefficient posterior profiled out, kept factorised, or
//! estimated on mini-batches), exact gradients for training, and per-point
//! predictive moments. The classic sparse-spectrum and random-projection
//! approximations fall out as special cases with the frequency variances
//! pinned at zero and are provided as baselines, next to an exact GP
//! reference.

pub mod baselines;
pub mod bounds;
pub mod error;
pub mod features;
mod grad;
pub mod io;
pub mod model;
pub mod oracle;
pub mod params;
pub mod predict;
pub mod training;

pub use bounds::{
    elbo_factorised, elbo_optimal, elbo_pointwise, elbo_stochastic, kl_coeff, kl_freq,
    solve_optimal_coefficients, BoundKind, CoefficientSolve,
};
pub use error::{Error, Result};
pub use features::{
    expected_cos_gaussian, expected_cos_sq_gaussian, expected_cos_uniform_phase, expected_phi,
    expected_phitphi, phi_row, point_gram, point_moments, sample_posterior_omega,
    sample_prior_omega, FeatureMoments, OmegaSample,
};
pub use grad::BoundValue;
pub use model::{component_of, Dataset, KernelSpec, PhaseMode, SmComponent, VariationalState};
pub use params::{pack, unpack, Layout, ParameterVector, Trainability};
pub use predict::{
    predict_batch, predictive_mean, predictive_variance, CoefficientPosterior, PredictiveDensity,
};
pub use training::{
    bound_and_gradient, fit, fit_adaptive_sgd, fit_quasi_newton, init_state, FitConfig, FitTrace,
    InitOptions, IterRecord, OptimizerKind,
};
pub use baselines::{
    exact_gp, fit_random_projections, fit_ssgp, mc_log_evidence, BaselineKind, ExactGpPredictor,
    EXACT_GP_DEFAULT_CAP,
};

#[cfg(test)]
pub(crate) fn testrng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
pub(crate) fn unif(rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    use rand::Rng;
    rng.gen_range(lo..hi)
}
