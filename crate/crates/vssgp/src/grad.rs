//! Exact gradients of the lower bounds with respect to the unconstrained
//! parameter vector.
//!
//! All three bounds depend on the feature tables A = E[phi] and B = E[phi^2]
//! only through the data terms; the chain rule is organised as
//!
//! ```text
//! dL/dA = tau (W - A P + A dg(P)),   dL/dB_{.k} = -tau/2 P_kk,
//! ```
//!
//! where for the factorised bounds P = sum_d (diag(s_d) + m_d m_d^T) and
//! W = Y M^T, and for the optimal-coefficient bound P = (D/tau) SigmaHat +
//! M M^T and W = Y M^T with M the solved posterior mean (the profiled
//! coefficient posterior makes both bounds share one backprop). The feature
//! sweep then pushes dL/dA and dL/dB onto frequency means/variances, inducing
//! inputs, phases, and kernel hyper-parameters; transform Jacobians map the
//! result into unconstrained coordinates.

use nalgebra::{DMatrix, DVector};

use crate::bounds::{
    factorised_pieces, kl_coeff, kl_freq, solve_optimal_coefficients, validate_batch,
};
use crate::error::{Error, Result};
use crate::features::{column_scale, exp_clamped, sinc, sinc_deriv, FeatureMoments};
use crate::model::{component_of, Dataset, KernelSpec, PhaseMode, VariationalState, TWO_PI};
use crate::params::{sigmoid, softplus_grad, Block, ParameterVector};
use crate::params::unpack;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A bound evaluation: the scalar and its gradient in unconstrained space.
#[derive(Debug, Clone)]
pub struct BoundValue {
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// Which objective to differentiate.
#[derive(Debug, Clone)]
pub enum Objective<'a> {
    Optimal { include_freq_kl: bool },
    Factorised,
    Stochastic { batch: &'a [usize] },
}

/// Gradients with respect to the constrained quantities that enter the
/// feature tables.
struct FeatureGrads {
    freq_mean: DMatrix<f64>,
    freq_var: DMatrix<f64>,
    inducing: DMatrix<f64>,
    /// Fixed phases: d/d offset. Variational: d/d midpoint.
    phase_mid: DVector<f64>,
    /// Variational only: d/d halfwidth.
    phase_half: DVector<f64>,
    weights: Vec<f64>,
    lengthscales: DMatrix<f64>,
    inv_periods: DMatrix<f64>,
}

/// Push dL/dA and dL/dB (per-column) back onto the feature inputs. The
/// geometry is recomputed on the fly; `rows` selects the data rows the
/// adjoints refer to.
#[allow(clippy::too_many_arguments)]
fn backprop_features(
    x: &DMatrix<f64>,
    rows: Option<&[usize]>,
    state: &VariationalState,
    spec: &KernelSpec,
    per: usize,
    ga: &DMatrix<f64>,
    gb_col: &DVector<f64>,
) -> FeatureGrads {
    let lk = state.num_columns();
    let q_dim = x.ncols();
    let l = spec.num_components();
    let n = ga.nrows();
    let mut out = FeatureGrads {
        freq_mean: DMatrix::zeros(lk, q_dim),
        freq_var: DMatrix::zeros(lk, q_dim),
        inducing: DMatrix::zeros(lk, q_dim),
        phase_mid: DVector::zeros(lk),
        phase_half: DVector::zeros(lk),
        weights: vec![0.0; l],
        lengthscales: DMatrix::zeros(l, q_dim),
        inv_periods: DMatrix::zeros(l, q_dim),
    };
    let mut x_row = vec![0.0; q_dim];
    let mut xbar = vec![0.0; q_dim];
    let mut diffs = vec![0.0; q_dim];
    for r in 0..n {
        let src = rows.map_or(r, |rs| rs[r]);
        for qq in 0..q_dim {
            x_row[qq] = x[(src, qq)];
        }
        for k in 0..lk {
            let i = component_of(k, per);
            let comp = &spec.components[i];
            let scale = column_scale(spec, per, k);
            let mut quad = 0.0;
            let mut theta = 0.0;
            for qq in 0..q_dim {
                let diff = x_row[qq] - state.inducing[(k, qq)];
                let xb = diff / comp.lengthscales[qq];
                diffs[qq] = diff;
                xbar[qq] = xb;
                quad += state.freq_var[(k, qq)] * xb * xb;
                theta += state.freq_mean[(k, qq)] * xb + TWO_PI * comp.inv_periods[qq] * diff;
            }
            let e = exp_clamped(-0.5 * quad);
            let e2 = exp_clamped(-2.0 * quad);
            let ga_nk = ga[(r, k)];
            let gb_k = gb_col[k];

            let (c, dc_dtheta, dc_dhalf, c2, dc2_dtheta, dc2_dhalf) = match &state.phases {
                PhaseMode::Fixed { offsets } => {
                    let psi = theta + offsets[k];
                    (
                        psi.cos(),
                        -psi.sin(),
                        0.0,
                        (2.0 * psi).cos(),
                        -2.0 * (2.0 * psi).sin(),
                        0.0,
                    )
                }
                PhaseMode::Variational { lower, upper } => {
                    let mid = 0.5 * (lower[k] + upper[k]);
                    let half = 0.5 * (upper[k] - lower[k]);
                    let u = theta + mid;
                    (
                        u.cos() * sinc(half),
                        -u.sin() * sinc(half),
                        u.cos() * sinc_deriv(half),
                        (2.0 * u).cos() * sinc(2.0 * half),
                        -2.0 * (2.0 * u).sin() * sinc(2.0 * half),
                        2.0 * (2.0 * u).cos() * sinc_deriv(2.0 * half),
                    )
                }
            };

            let a_val = scale * e * c;
            let b_val = scale * scale * (0.5 + 0.5 * e2 * c2);
            let dtheta = ga_nk * scale * e * dc_dtheta
                + gb_k * scale * scale * 0.5 * e2 * dc2_dtheta;
            let dquad = -0.5 * ga_nk * scale * e * c - gb_k * scale * scale * e2 * c2;

            out.weights[i] += ga_nk * a_val / (2.0 * comp.weight) + gb_k * b_val / comp.weight;
            if dc_dhalf != 0.0 || dc2_dhalf != 0.0 {
                out.phase_half[k] += ga_nk * scale * e * dc_dhalf
                    + gb_k * scale * scale * 0.5 * e2 * dc2_dhalf;
            }
            out.phase_mid[k] += dtheta;
            for qq in 0..q_dim {
                let lq = comp.lengthscales[qq];
                let var = state.freq_var[(k, qq)];
                let mu = state.freq_mean[(k, qq)];
                let pq = comp.inv_periods[qq];
                out.freq_mean[(k, qq)] += dtheta * xbar[qq];
                out.freq_var[(k, qq)] += dquad * xbar[qq] * xbar[qq];
                out.inducing[(k, qq)] +=
                    dtheta * (-mu / lq - TWO_PI * pq) + dquad * (-2.0 * var * xbar[qq] / lq);
                out.lengthscales[(i, qq)] += dtheta * (-mu * xbar[qq] / lq)
                    + dquad * (-2.0 * var * xbar[qq] * xbar[qq] / lq);
                out.inv_periods[(i, qq)] += dtheta * TWO_PI * diffs[qq];
            }
        }
    }
    out
}

/// Evaluate the selected bound and its exact gradient with respect to every
/// entry of the unconstrained parameter vector (mask not applied here).
pub(crate) fn value_and_grad(
    pv: &ParameterVector,
    data: &Dataset,
    objective: &Objective,
) -> Result<BoundValue> {
    let (state, spec) = unpack(pv)?;
    let per = state.per_component(&spec)?;
    let layout = &pv.layout;
    let lk = state.num_columns();
    let d_out = state.output_dim();
    let tau = state.noise_precision;
    let n_total = data.num_points();

    let (rows, scale): (Option<&[usize]>, f64) = match objective {
        Objective::Stochastic { batch } => {
            validate_batch(batch, n_total)?;
            (Some(batch), n_total as f64 / batch.len() as f64)
        }
        _ => (None, 1.0),
    };

    let pieces = factorised_pieces(data, rows, &state, &spec)?;
    let include_freq_kl = match objective {
        Objective::Optimal { include_freq_kl } => *include_freq_kl,
        _ => true,
    };
    let include_coeff_terms = !matches!(objective, Objective::Optimal { .. });

    // Bound value plus the adjoints of the feature tables.
    let mut value;
    let d_tau;
    let ga;
    let gb_col;
    let mut grad_m = DMatrix::zeros(lk, d_out);
    let mut grad_s = DMatrix::zeros(lk, d_out);

    if include_coeff_terms {
        value = scale * pieces.data_value(tau, d_out);
        // P = sum_d diag(s_d) + m_d m_d^T
        let mut p = &state.coeff_mean * state.coeff_mean.transpose();
        for k in 0..lk {
            let s_row: f64 = state.coeff_var.row(k).sum();
            p[(k, k)] += s_row;
        }
        let ap = &pieces.a * &p;
        ga = DMatrix::from_fn(pieces.a.nrows(), lk, |r, k| {
            scale * tau * (pieces.w[(r, k)] - ap[(r, k)] + p[(k, k)] * pieces.a[(r, k)])
        });
        gb_col = DVector::from_fn(lk, |k, _| -0.5 * scale * tau * p[(k, k)]);

        // coefficient gradients: data terms plus the coefficient KL
        let v_mat = pieces.a.transpose() * &pieces.y;
        for d in 0..d_out {
            let m_d = state.coeff_mean.column(d).into_owned();
            let mut hm = &pieces.gram_mean * &m_d;
            for k in 0..lk {
                hm[k] += (pieces.diag_b[k] - pieces.gram_mean[(k, k)]) * m_d[k];
            }
            for k in 0..lk {
                grad_m[(k, d)] = scale * tau * (v_mat[(k, d)] - hm[k]) - m_d[k];
                let s = state.coeff_var[(k, d)];
                grad_s[(k, d)] = -0.5 * scale * tau * pieces.diag_b[k] - 0.5 * (1.0 - 1.0 / s);
            }
        }
        let n_rows = pieces.n_rows as f64;
        d_tau = scale * (0.5 * n_rows * d_out as f64 / tau + pieces.j);
        value -= kl_coeff(&state);
    } else {
        // optimal-coefficient bound
        let mut gram = pieces.gram_mean.clone();
        for k in 0..lk {
            gram[(k, k)] = pieces.diag_b[k];
        }
        let moments = FeatureMoments {
            phi_mean: pieces.a.clone(),
            phi_gram: gram,
        };
        let solve = solve_optimal_coefficients(&moments, &pieces.y, tau)?;
        let n = pieces.n_rows as f64;
        let v_mat = pieces.a.transpose() * &pieces.y;
        value = 0.0;
        let mut quad_sum = 0.0;
        for d in 0..d_out {
            let y_d = pieces.y.column(d);
            let quad = v_mat.column(d).dot(&solve.mean.column(d));
            quad_sum += quad;
            value += -0.5 * n * (LN_2PI - tau.ln()) - 0.5 * tau * y_d.dot(&y_d)
                + 0.5 * (-(lk as f64) * tau.ln() - solve.log_det_c)
                + 0.5 * tau * quad;
        }
        let mut p = &solve.mean * solve.mean.transpose();
        p += solve.sigma_hat.scale(d_out as f64 / tau);
        let w = &pieces.y * solve.mean.transpose();
        let ap = &pieces.a * &p;
        ga = DMatrix::from_fn(pieces.a.nrows(), lk, |r, k| {
            tau * (w[(r, k)] - ap[(r, k)] + p[(k, k)] * pieces.a[(r, k)])
        });
        gb_col = DVector::from_fn(lk, |k, _| -0.5 * tau * p[(k, k)]);

        let ysq: f64 = pieces.y.iter().map(|v| v * v).sum();
        let m_fro: f64 = solve.mean.iter().map(|v| v * v).sum();
        d_tau = 0.5 * n * d_out as f64 / tau - 0.5 * ysq
            - 0.5 * d_out as f64 * lk as f64 / tau
            + 0.5 * d_out as f64 * solve.sigma_hat.trace() / (tau * tau)
            + 0.5 * quad_sum
            + 0.5 * m_fro / tau;
    }

    let mut fg = backprop_features(data.inputs(), rows, &state, &spec, per, &ga, &gb_col);

    let mut kl_is_infinite = false;
    if include_freq_kl {
        let kl = kl_freq(&state);
        if kl.is_infinite() {
            kl_is_infinite = true;
        }
        value -= kl;
        for k in 0..lk {
            for qq in 0..state.input_dim() {
                fg.freq_mean[(k, qq)] -= state.freq_mean[(k, qq)];
                let var = state.freq_var[(k, qq)];
                if var > 0.0 {
                    fg.freq_var[(k, qq)] -= 0.5 * (1.0 - 1.0 / var);
                }
            }
        }
        if let PhaseMode::Variational { lower, upper } = &state.phases {
            for k in 0..lk {
                let gap = upper[k] - lower[k];
                if gap > 0.0 {
                    // KL = ln(2 pi) - ln(2 half): only the halfwidth moves it
                    fg.phase_half[k] += 2.0 / gap;
                }
            }
        }
    }

    if !value.is_finite() {
        let block = if kl_is_infinite {
            if state.freq_var.iter().any(|v| *v <= 0.0) {
                Block::FreqVars
            } else {
                Block::Phases
            }
        } else {
            Block::Noise
        };
        return Err(Error::NonFiniteBound {
            block: block.name().into(),
        });
    }

    // Assemble the unconstrained gradient through the transform Jacobians.
    let mut grad = DVector::zeros(pv.len());
    grad[layout.index_noise()] = d_tau * tau;
    for (i, comp) in spec.components.iter().enumerate() {
        grad[layout.index_weight(i)] = fg.weights[i] * comp.weight;
        for qq in 0..layout.input_dim {
            grad[layout.index_lengthscale(i, qq)] =
                fg.lengthscales[(i, qq)] * comp.lengthscales[qq];
            let u = pv.values[layout.index_inv_period(i, qq)];
            grad[layout.index_inv_period(i, qq)] = fg.inv_periods[(i, qq)] * softplus_grad(u);
        }
    }
    for k in 0..lk {
        for qq in 0..layout.input_dim {
            grad[layout.index_freq_mean(k, qq)] = fg.freq_mean[(k, qq)];
            grad[layout.index_freq_var(k, qq)] = fg.freq_var[(k, qq)] * state.freq_var[(k, qq)];
            grad[layout.index_inducing(k, qq)] = fg.inducing[(k, qq)];
        }
    }
    match &state.phases {
        PhaseMode::Fixed { .. } => {
            for k in 0..lk {
                grad[layout.index_phase(k)] = fg.phase_mid[k];
            }
        }
        PhaseMode::Variational { .. } => {
            for k in 0..lk {
                let d_lower = 0.5 * (fg.phase_mid[k] - fg.phase_half[k]);
                let d_upper = 0.5 * (fg.phase_mid[k] + fg.phase_half[k]);
                let a_raw = pv.values[layout.index_phase(k)];
                let gap_raw = pv.values[layout.index_phase_gap(k)].exp();
                let sig = sigmoid(a_raw);
                let alpha = TWO_PI * sig;
                let d_alpha_d_raw = TWO_PI * sig * (1.0 - sig);
                let clamped = alpha + gap_raw > TWO_PI;
                if clamped {
                    grad[layout.index_phase(k)] = d_lower * d_alpha_d_raw;
                    grad[layout.index_phase_gap(k)] = 0.0;
                } else {
                    grad[layout.index_phase(k)] = (d_lower + d_upper) * d_alpha_d_raw;
                    grad[layout.index_phase_gap(k)] = d_upper * gap_raw;
                }
            }
        }
    }
    for d in 0..d_out {
        for k in 0..lk {
            grad[layout.index_coeff_mean(d, k)] = grad_m[(k, d)];
            grad[layout.index_coeff_var(d, k)] = grad_s[(k, d)] * state.coeff_var[(k, d)];
        }
    }

    for (idx, g) in grad.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFiniteBound {
                block: layout.block_of(idx).name().into(),
            });
        }
    }
    Ok(BoundValue { value, gradient: grad })
}
