//! KL divergence terms, the closed-form optimal coefficient posterior, and
//! the three evidence lower bounds (optimal-coefficient, factorised over data
//! points, and the mini-batch estimator of the factorised bound).

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::features::{feature_tables, FeatureMoments};
use crate::model::{Dataset, KernelSpec, PhaseMode, VariationalState, TWO_PI};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which lower bound to evaluate/optimise.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundKind {
    /// Coefficient posterior solved in closed form each evaluation.
    OptimalCoefficients,
    /// Coefficient posterior kept as explicit (diagonal) parameters.
    Factorised,
    /// Mini-batch estimator of the factorised bound.
    Stochastic { batch_size: usize, seed: u64 },
}

impl BoundKind {
    pub fn name(&self) -> &'static str {
        match self {
            BoundKind::OptimalCoefficients => "optimal",
            BoundKind::Factorised => "factorised",
            BoundKind::Stochastic { .. } => "stochastic",
        }
    }
}

/// KL(q(w) || p(w)) plus, for variational phases, KL(q(b) || p(b)).
/// Zero frequency variance (or a zero-width phase interval) makes the
/// divergence infinite; returned as +inf rather than an error.
pub fn kl_freq(state: &VariationalState) -> f64 {
    let lk = state.num_columns();
    let q = state.input_dim() as f64;
    let mut total = 0.0;
    for k in 0..lk {
        let mut tr = 0.0;
        let mut sq = 0.0;
        let mut logdet = 0.0;
        for qq in 0..state.input_dim() {
            let v = state.freq_var[(k, qq)];
            if v <= 0.0 {
                return f64::INFINITY;
            }
            tr += v;
            logdet += v.ln();
            let m = state.freq_mean[(k, qq)];
            sq += m * m;
        }
        total += 0.5 * (tr + sq - q - logdet);
    }
    if let PhaseMode::Variational { lower, upper } = &state.phases {
        for k in 0..lk {
            let gap = upper[k] - lower[k];
            if gap <= 0.0 {
                return f64::INFINITY;
            }
            total += (TWO_PI / gap).ln();
        }
    }
    total
}

/// KL(q(A) || p(A)) for the diagonal Gaussian coefficient posterior against
/// the standard-normal prior.
pub fn kl_coeff(state: &VariationalState) -> f64 {
    let mut total = 0.0;
    for d in 0..state.output_dim() {
        for k in 0..state.num_columns() {
            let s = state.coeff_var[(k, d)];
            let m = state.coeff_mean[(k, d)];
            total += 0.5 * (s + m * m - 1.0 - s.ln());
        }
    }
    total
}

/// The closed-form coefficient posterior: q(a_d) = N(M_d, tau^-1 SigmaHat)
/// with SigmaHat = (E[Phi^T Phi] + tau^-1 I)^-1 and M = SigmaHat E[Phi^T] Y.
#[derive(Debug, Clone)]
pub struct CoefficientSolve {
    /// (E[Phi^T Phi] + tau^-1 I)^-1, LK x LK.
    pub sigma_hat: DMatrix<f64>,
    /// Posterior means, LK x D.
    pub mean: DMatrix<f64>,
    /// log |E[Phi^T Phi] + tau^-1 I| from the Cholesky factor.
    pub log_det_c: f64,
    /// Jitter that was needed on the diagonal (0 when none).
    pub jitter: f64,
    /// Noise precision the solve was formed with.
    pub tau: f64,
}

const JITTERS: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Cholesky factorization with the escalating jitter ladder; failing past the
/// largest jitter is an error carrying a smallest-eigenvalue estimate.
pub(crate) fn cholesky_with_jitter(
    mat: &DMatrix<f64>,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    for &jitter in &JITTERS {
        let mut m = mat.clone();
        if jitter > 0.0 {
            for k in 0..m.nrows() {
                m[(k, k)] += jitter;
            }
        }
        if let Some(chol) = m.cholesky() {
            return Ok((chol, jitter));
        }
    }
    Err(Error::CholeskyFailure {
        min_eigenvalue: mat.clone().symmetric_eigenvalues().min(),
    })
}

pub fn solve_optimal_coefficients(
    moments: &FeatureMoments,
    y: &DMatrix<f64>,
    tau: f64,
) -> Result<CoefficientSolve> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let lk = moments.phi_gram.nrows();
    let mut c = moments.phi_gram.clone();
    for k in 0..lk {
        c[(k, k)] += 1.0 / tau;
    }
    let (chol, jitter) = cholesky_with_jitter(&c)?;
    let log_det_c = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let v = moments.phi_mean.transpose() * y;
    let mean = chol.solve(&v);
    Ok(CoefficientSolve {
        sigma_hat: chol.inverse(),
        mean,
        log_det_c,
        jitter,
        tau,
    })
}

/// Shared intermediates of the factorised data terms over a row subset.
pub(crate) struct FactorisedPieces {
    /// E[phi] entries for the selected rows.
    pub a: DMatrix<f64>,
    /// A^T A.
    pub gram_mean: DMatrix<f64>,
    /// Column sums of B (the diagonal of E[Phi^T Phi] over these rows).
    pub diag_b: DVector<f64>,
    /// Y_rows M^T, same shape as `a`.
    pub w: DMatrix<f64>,
    /// Selected outputs.
    pub y: DMatrix<f64>,
    /// Coefficient linear in tau: the data terms equal
    /// -(n D / 2) ln(2 pi / tau) + tau * j.
    pub j: f64,
    pub n_rows: usize,
}

pub(crate) fn factorised_pieces(
    data: &Dataset,
    rows: Option<&[usize]>,
    state: &VariationalState,
    spec: &KernelSpec,
) -> Result<FactorisedPieces> {
    let per = state.per_component(spec)?;
    let (a, b) = feature_tables(data.inputs(), rows, state, spec, per);
    let y = match rows {
        Some(rs) => data.outputs().select_rows(rs),
        None => data.outputs().clone(),
    };
    let gram_mean = a.transpose() * &a;
    let lk = state.num_columns();
    let diag_b = DVector::from_fn(lk, |k, _| b.column(k).sum());
    let w = &y * state.coeff_mean.transpose();

    let mut quad = 0.0;
    for d in 0..state.output_dim() {
        let m_d = state.coeff_mean.column(d);
        let gm = &gram_mean * m_d;
        quad += m_d.dot(&gm);
        for k in 0..lk {
            let corr = diag_b[k] - gram_mean[(k, k)];
            quad += corr * m_d[k] * m_d[k] + diag_b[k] * state.coeff_var[(k, d)];
        }
    }
    let ysq: f64 = y.iter().map(|v| v * v).sum();
    let dot_w: f64 = w.iter().zip(a.iter()).map(|(wv, av)| wv * av).sum();
    let j = -0.5 * ysq + dot_w - 0.5 * quad;
    Ok(FactorisedPieces {
        n_rows: a.nrows(),
        a,
        gram_mean,
        diag_b,
        w,
        y,
        j,
    })
}

impl FactorisedPieces {
    /// The data terms (sum of the per-point, per-output log-likelihood
    /// expectations) given the noise precision.
    pub fn data_value(&self, tau: f64, output_dim: usize) -> f64 {
        let n = self.n_rows as f64;
        -0.5 * n * output_dim as f64 * (LN_2PI - tau.ln()) + tau * self.j
    }
}

/// The bound with the coefficient posterior profiled out in closed form.
/// With `include_freq_kl = false` this is the objective used when the
/// frequencies are treated as plain parameters (the sparse-spectrum special
/// case, where the divergence is undefined at zero frequency variance).
pub fn elbo_optimal(
    data: &Dataset,
    state: &VariationalState,
    spec: &KernelSpec,
    include_freq_kl: bool,
) -> Result<f64> {
    let moments = FeatureMoments::compute(data.inputs(), state, spec);
    let solve = solve_optimal_coefficients(&moments, data.outputs(), state.noise_precision)?;
    let tau = state.noise_precision;
    let n = data.num_points() as f64;
    let lk = state.num_columns() as f64;
    let mut value = 0.0;
    for d in 0..data.output_dim() {
        let y_d = data.outputs().column(d);
        let v_d = moments.phi_mean.transpose() * y_d;
        let quad = v_d.dot(&solve.mean.column(d).into_owned());
        value += -0.5 * n * (LN_2PI - tau.ln()) - 0.5 * tau * y_d.dot(&y_d)
            + 0.5 * (-lk * tau.ln() - solve.log_det_c)
            + 0.5 * tau * quad;
    }
    if include_freq_kl {
        value -= kl_freq(state);
    }
    Ok(value)
}

/// One term of the factorised bound: the expected log-likelihood of output
/// `d` at point `n`, given that point's feature moments.
pub fn elbo_pointwise(
    n: usize,
    d: usize,
    data: &Dataset,
    state: &VariationalState,
    phi_mean_row: &RowDVector<f64>,
    phi_second_row: &RowDVector<f64>,
) -> f64 {
    let tau = state.noise_precision;
    let y = data.outputs()[(n, d)];
    let m_d = state.coeff_mean.column(d);
    let proj = phi_mean_row.transpose().dot(&m_d);
    let mut quad = proj * proj;
    for k in 0..state.num_columns() {
        let var_entry = phi_second_row[k] - phi_mean_row[k] * phi_mean_row[k];
        quad += var_entry * m_d[k] * m_d[k] + phi_second_row[k] * state.coeff_var[(k, d)];
    }
    -0.5 * (LN_2PI - tau.ln()) - 0.5 * tau * y * y + tau * y * proj - 0.5 * tau * quad
}

/// The factorised bound: all data terms minus both KL divergences.
pub fn elbo_factorised(data: &Dataset, state: &VariationalState, spec: &KernelSpec) -> Result<f64> {
    let pieces = factorised_pieces(data, None, state, spec)?;
    Ok(pieces.data_value(state.noise_precision, data.output_dim()) - kl_coeff(state)
        - kl_freq(state))
}

/// The mini-batch estimator: data terms over `batch` scaled by N/|batch|,
/// minus the (unscaled) KL divergences. Batch indices must be distinct.
pub fn elbo_stochastic(
    data: &Dataset,
    state: &VariationalState,
    spec: &KernelSpec,
    batch: &[usize],
) -> Result<f64> {
    validate_batch(batch, data.num_points())?;
    let pieces = factorised_pieces(data, Some(batch), state, spec)?;
    let scale = data.num_points() as f64 / batch.len() as f64;
    let data_terms = pieces.data_value(state.noise_precision, data.output_dim());
    Ok(scale * data_terms - kl_coeff(state) - kl_freq(state))
}

pub(crate) fn validate_batch(batch: &[usize], n: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty mini-batch".into()));
    }
    let mut seen = vec![false; n];
    for &i in batch {
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "batch index {i} out of range (N = {n})"
            )));
        }
        if seen[i] {
            return Err(Error::InvalidArgument(format!("duplicate batch index {i}")));
        }
        seen[i] = true;
    }
    Ok(())
}
