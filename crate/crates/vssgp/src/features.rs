//! Expected Fourier features under the frequency and phase posteriors.
//!
//! Basis column `k` of component `i` evaluates, for a sampled frequency `w`
//! and phase `b`,
//!
//! ```text
//! phi_k(x) = sqrt(2 sigma_i^2 / K) cos(w^T xbar + bbar),
//! xbar_q   = (x_q - z_kq) / l_iq,
//! bbar     = b + 2 pi pbar_i^T (x - z_k),
//! ```
//!
//! with `w` standard-normal under the prior. Taking expectations over
//! `w ~ N(mu_k, diag(var_k))` and the phase posterior gives closed forms for
//! `E[phi]` (per entry) and `E[phi^2]` (per entry); off-diagonal entries of
//! `E[Phi^T Phi]` factor across independent columns.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{component_of, KernelSpec, PhaseMode, VariationalState, TWO_PI};

/// Exponent floor; exp underflows to zero below this.
const EXP_FLOOR: f64 = -745.0;

#[inline]
pub(crate) fn exp_clamped(u: f64) -> f64 {
    u.max(EXP_FLOOR).exp()
}

/// sin(u)/u with the removable singularity filled in.
#[inline]
pub(crate) fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        let u2 = u * u;
        1.0 - u2 / 6.0 + u2 * u2 / 120.0
    } else {
        u.sin() / u
    }
}

/// d sinc(u) / du.
#[inline]
pub(crate) fn sinc_deriv(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        let u2 = u * u;
        -u / 3.0 + u * u2 / 30.0
    } else {
        (u.cos() - sinc(u)) / u
    }
}

/// E[cos(w^T x + b)] for w ~ N(mu, diag(var)):
/// exp(-1/2 x^T diag(var) x) * cos(mu^T x + b).
pub fn expected_cos_gaussian(mu: &DVector<f64>, var: &DVector<f64>, x: &DVector<f64>, b: f64) -> f64 {
    let mut quad = 0.0;
    let mut arg = b;
    for q in 0..x.len() {
        quad += var[q] * x[q] * x[q];
        arg += mu[q] * x[q];
    }
    exp_clamped(-0.5 * quad) * arg.cos()
}

/// E[cos^2(w^T x + b)] for w ~ N(mu, diag(var)):
/// 1/2 + 1/2 exp(-2 x^T diag(var) x) * cos(2 mu^T x + 2 b).
pub fn expected_cos_sq_gaussian(
    mu: &DVector<f64>,
    var: &DVector<f64>,
    x: &DVector<f64>,
    b: f64,
) -> f64 {
    let mut quad = 0.0;
    let mut arg = b;
    for q in 0..x.len() {
        quad += var[q] * x[q] * x[q];
        arg += mu[q] * x[q];
    }
    0.5 + 0.5 * exp_clamped(-2.0 * quad) * (2.0 * arg).cos()
}

/// E[cos(c + b)] for b ~ Unif[lower, upper]. Written as
/// cos(c + midpoint) * sinc(halfwidth), which is the integral
/// (sin(c + upper) - sin(c + lower)) / (upper - lower) for upper > lower and
/// its continuous limit cos(c + lower) at upper == lower.
pub fn expected_cos_uniform_phase(c: f64, lower: f64, upper: f64) -> f64 {
    let mid = 0.5 * (lower + upper);
    let half = 0.5 * (upper - lower);
    (c + mid).cos() * sinc(half)
}

/// Per-column scale sqrt(2 sigma_i^2 / K).
#[inline]
pub(crate) fn column_scale(spec: &KernelSpec, per_component: usize, k: usize) -> f64 {
    let i = component_of(k, per_component);
    (2.0 * spec.components[i].weight / per_component as f64).sqrt()
}

/// Geometry of one (input row, basis column) pair: the scaled input quadratic
/// form against the frequency variance, and the cosine argument excluding the
/// phase variable.
#[inline]
pub(crate) fn point_geometry(
    x_row: &[f64],
    state: &VariationalState,
    spec: &KernelSpec,
    per_component: usize,
    k: usize,
) -> (f64, f64) {
    let i = component_of(k, per_component);
    let comp = &spec.components[i];
    let mut quad = 0.0;
    let mut theta = 0.0;
    for (q, xq) in x_row.iter().enumerate() {
        let diff = xq - state.inducing[(k, q)];
        let xbar = diff / comp.lengthscales[q];
        quad += state.freq_var[(k, q)] * xbar * xbar;
        theta += state.freq_mean[(k, q)] * xbar + TWO_PI * comp.inv_periods[q] * diff;
    }
    (quad, theta)
}

/// Phase expectation of cos(theta + b) and of cos(2 theta + 2 b) for column k.
#[inline]
pub(crate) fn phase_expectations(phases: &PhaseMode, k: usize, theta: f64) -> (f64, f64) {
    match phases {
        PhaseMode::Fixed { offsets } => {
            let psi = theta + offsets[k];
            (psi.cos(), (2.0 * psi).cos())
        }
        PhaseMode::Variational { lower, upper } => {
            let mid = 0.5 * (lower[k] + upper[k]);
            let half = 0.5 * (upper[k] - lower[k]);
            (
                (theta + mid).cos() * sinc(half),
                (2.0 * (theta + mid)).cos() * sinc(2.0 * half),
            )
        }
    }
}

/// Per-entry expected features A = E[phi] and expected squares B = E[phi^2]
/// for the selected rows of X (all rows when `rows` is None).
pub(crate) fn feature_tables(
    x: &DMatrix<f64>,
    rows: Option<&[usize]>,
    state: &VariationalState,
    spec: &KernelSpec,
    per_component: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let lk = state.num_columns();
    let n = rows.map_or(x.nrows(), <[usize]>::len);
    let q = x.ncols();
    let mut a = DMatrix::zeros(n, lk);
    let mut b = DMatrix::zeros(n, lk);
    let mut x_row = vec![0.0; q];
    for r in 0..n {
        let src = rows.map_or(r, |rs| rs[r]);
        for qq in 0..q {
            x_row[qq] = x[(src, qq)];
        }
        for k in 0..lk {
            let scale = column_scale(spec, per_component, k);
            let (quad, theta) = point_geometry(&x_row, state, spec, per_component, k);
            let (c, c2) = phase_expectations(&state.phases, k, theta);
            a[(r, k)] = scale * exp_clamped(-0.5 * quad) * c;
            b[(r, k)] = scale * scale * (0.5 + 0.5 * exp_clamped(-2.0 * quad) * c2);
        }
    }
    (a, b)
}

/// E[Phi] (N x LK) and E[Phi^T Phi] (LK x LK) for a batch of inputs.
#[derive(Debug, Clone)]
pub struct FeatureMoments {
    /// E[Phi], one row per input point.
    pub phi_mean: DMatrix<f64>,
    /// E[Phi^T Phi]; off-diagonal entries factor as products of per-column
    /// expectations, diagonal entries sum the per-entry second moments.
    pub phi_gram: DMatrix<f64>,
}

impl FeatureMoments {
    pub fn compute(x: &DMatrix<f64>, state: &VariationalState, spec: &KernelSpec) -> Self {
        let per = state
            .per_component(spec)
            .expect("state/spec column mismatch");
        let (a, b) = feature_tables(x, None, state, spec, per);
        let mut gram = a.transpose() * &a;
        for k in 0..state.num_columns() {
            gram[(k, k)] = b.column(k).sum();
        }
        Self {
            phi_mean: a,
            phi_gram: gram,
        }
    }
}

/// E[Phi] alone.
pub fn expected_phi(x: &DMatrix<f64>, state: &VariationalState, spec: &KernelSpec) -> DMatrix<f64> {
    let per = state.per_component(spec).expect("state/spec column mismatch");
    feature_tables(x, None, state, spec, per).0
}

/// E[Phi^T Phi] alone.
pub fn expected_phitphi(
    x: &DMatrix<f64>,
    state: &VariationalState,
    spec: &KernelSpec,
) -> DMatrix<f64> {
    FeatureMoments::compute(x, state, spec).phi_gram
}

/// Expected feature row E[phi(x*)] (1 x LK) and per-entry second moments
/// (1 x LK) for one input point.
pub fn point_moments(
    x_star: &DVector<f64>,
    state: &VariationalState,
    spec: &KernelSpec,
) -> (RowDVector<f64>, RowDVector<f64>) {
    let per = state.per_component(spec).expect("state/spec column mismatch");
    let lk = state.num_columns();
    let x_row: Vec<f64> = x_star.iter().copied().collect();
    let mut a = RowDVector::zeros(lk);
    let mut b = RowDVector::zeros(lk);
    for k in 0..lk {
        let scale = column_scale(spec, per, k);
        let (quad, theta) = point_geometry(&x_row, state, spec, per, k);
        let (c, c2) = phase_expectations(&state.phases, k, theta);
        a[k] = scale * exp_clamped(-0.5 * quad) * c;
        b[k] = scale * scale * (0.5 + 0.5 * exp_clamped(-2.0 * quad) * c2);
    }
    (a, b)
}

/// E[phi(x*)^T phi(x*)] (LK x LK) for one input point.
pub fn point_gram(x_star: &DVector<f64>, state: &VariationalState, spec: &KernelSpec) -> DMatrix<f64> {
    let (a, b) = point_moments(x_star, state, spec);
    let mut gram = a.transpose() * &a;
    for k in 0..a.len() {
        gram[(k, k)] = b[k];
    }
    gram
}

/// One joint draw of frequencies and phases, one pair per basis column.
#[derive(Debug, Clone)]
pub struct OmegaSample {
    /// Standard-normal-parameterised frequencies w_k (LK x Q).
    pub freqs: DMatrix<f64>,
    /// Phases b_k (length LK).
    pub phases: DVector<f64>,
}

/// Draw omega from the prior: w ~ N(0, I), b ~ Unif[0, 2 pi).
pub fn sample_prior_omega<R: Rng>(num_columns: usize, input_dim: usize, rng: &mut R) -> OmegaSample {
    OmegaSample {
        freqs: DMatrix::from_fn(num_columns, input_dim, |_, _| rng.sample(StandardNormal)),
        phases: DVector::from_fn(num_columns, |_, _| rng.gen_range(0.0..TWO_PI)),
    }
}

/// Draw omega from the posterior: w_k ~ N(mu_k, diag(var_k)), b_k from the
/// phase posterior (fixed phases are returned as-is).
pub fn sample_posterior_omega<R: Rng>(state: &VariationalState, rng: &mut R) -> OmegaSample {
    let lk = state.num_columns();
    let q = state.input_dim();
    let freqs = DMatrix::from_fn(lk, q, |k, qq| {
        let z: f64 = rng.sample(StandardNormal);
        state.freq_mean[(k, qq)] + state.freq_var[(k, qq)].sqrt() * z
    });
    let phases = match &state.phases {
        PhaseMode::Fixed { offsets } => offsets.clone(),
        PhaseMode::Variational { lower, upper } => DVector::from_fn(lk, |k, _| {
            if upper[k] > lower[k] {
                rng.gen_range(lower[k]..upper[k])
            } else {
                lower[k]
            }
        }),
    };
    OmegaSample { freqs, phases }
}

/// Deterministic feature row for a sampled omega. The frequencies follow the
/// standard-normal parameterisation: the cosine argument for column k is
/// (L_i^{-1} w_k + pbar_i)^T 2 pi (x - z_k) + b_k.
pub fn phi_row(
    x: &DVector<f64>,
    omega: &OmegaSample,
    inducing: &DMatrix<f64>,
    spec: &KernelSpec,
) -> RowDVector<f64> {
    let lk = inducing.nrows();
    let per = lk / spec.num_components();
    let mut row = RowDVector::zeros(lk);
    for k in 0..lk {
        let i = component_of(k, per);
        let comp = &spec.components[i];
        let mut arg = omega.phases[k];
        for q in 0..x.len() {
            let diff = x[q] - inducing[(k, q)];
            arg += omega.freqs[(k, q)] * diff / comp.lengthscales[q]
                + TWO_PI * comp.inv_periods[q] * diff;
        }
        row[k] = column_scale(spec, per, k) * arg.cos();
    }
    row
}

/// Dense model covariance Phi(omega) Phi(omega)^T + tau^-1 I for one omega
/// draw (used by the Monte Carlo evidence estimate).
pub fn dense_cov_from_omega(
    x: &DMatrix<f64>,
    omega: &OmegaSample,
    inducing: &DMatrix<f64>,
    spec: &KernelSpec,
    tau: f64,
) -> DMatrix<f64> {
    let n = x.nrows();
    let mut phi = DMatrix::zeros(n, inducing.nrows());
    for r in 0..n {
        let xr = DVector::from_fn(x.ncols(), |q, _| x[(r, q)]);
        phi.set_row(r, &phi_row(&xr, omega, inducing, spec));
    }
    let mut cov = &phi * phi.transpose();
    for i in 0..n {
        cov[(i, i)] += 1.0 / tau;
    }
    cov
}
