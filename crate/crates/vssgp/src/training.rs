//! Gradient-based training of the bounds: a limited-memory quasi-Newton
//! optimizer for the full-data bounds and an adaptive stochastic optimizer
//! for the mini-batch bound.
//!
//! Both optimizers maximize: ascent directions, sufficient-increase line
//! search. The quasi-Newton history is stored in minimization convention,
//! noted where it happens.

use std::time::Instant;

use nalgebra::DVector;
use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bounds::BoundKind;
use crate::error::{Error, Result};
use crate::grad::{value_and_grad, BoundValue, Objective};
use crate::model::{Dataset, KernelSpec, PhaseMode, VariationalState, TWO_PI};
use crate::params::{pack, unpack, ParameterVector, Trainability};

/// Named random substreams so every draw is attributable to the seed.
mod stream {
    pub const FREQ: u64 = 1;
    pub const PHASE: u64 = 2;
    pub const INDUCING: u64 = 3;
    pub const MINIBATCH: u64 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    QuasiNewton,
    AdaptiveSgd,
}

/// Training configuration.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub bound: BoundKind,
    /// Include KL(q(w) || p(w)) in the optimal-coefficient bound. The
    /// factorised bounds always include it. Switched off when frequencies
    /// are treated as plain parameters (zero variance), where the
    /// divergence is undefined.
    pub freq_kl: bool,
    pub optimizer: OptimizerKind,
    pub max_iters: usize,
    /// AdaptiveSgd step size.
    pub step_size: f64,
    /// AdaptiveSgd squared-gradient decay.
    pub decay: f64,
    /// AdaptiveSgd denominator floor.
    pub epsilon: f64,
    pub seed: u64,
    pub trainability: Trainability,
    pub lbfgs_memory: usize,
    /// Optional gradient-norm stop: halt when |g| <= tol * (1 + |bound|).
    pub grad_tol: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            bound: BoundKind::OptimalCoefficients,
            freq_kl: true,
            optimizer: OptimizerKind::QuasiNewton,
            max_iters: 500,
            step_size: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
            seed: 0,
            trainability: Trainability::default(),
            lbfgs_memory: 10,
            grad_tol: None,
        }
    }
}

/// One optimizer iteration: accepted bound value, gradient norm, and elapsed
/// wall-clock seconds since the fit started.
#[derive(Debug, Clone, Copy)]
pub struct IterRecord {
    pub bound: f64,
    pub grad_norm: f64,
    pub elapsed_s: f64,
}

/// Per-iteration progress of a fit.
#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    pub iterations: Vec<IterRecord>,
    /// Set when the line search could not find an uphill step and the best
    /// iterate so far was returned.
    pub line_search_warning: bool,
}

/// Evaluate the configured bound and its exact gradient in unconstrained
/// coordinates. `batch` must be given for the stochastic bound and is
/// ignored otherwise. The gradient covers every coordinate; the trainability
/// mask is applied by the optimizers, not here.
pub fn bound_and_gradient(
    pv: &ParameterVector,
    data: &Dataset,
    config: &FitConfig,
    batch: Option<&[usize]>,
) -> Result<BoundValue> {
    let objective = match &config.bound {
        BoundKind::OptimalCoefficients => Objective::Optimal {
            include_freq_kl: config.freq_kl,
        },
        BoundKind::Factorised => Objective::Factorised,
        BoundKind::Stochastic { .. } => {
            let batch = batch.ok_or_else(|| {
                Error::InvalidArgument("stochastic bound requires a mini-batch".into())
            })?;
            Objective::Stochastic { batch }
        }
    };
    value_and_grad(pv, data, &objective)
}

fn masked(mut g: DVector<f64>, mask: &[bool]) -> DVector<f64> {
    for (i, m) in mask.iter().enumerate() {
        if !m {
            g[i] = 0.0;
        }
    }
    g
}

/// Starting-point choices for a fresh state.
#[derive(Debug, Clone, Copy)]
pub struct InitOptions {
    /// Initial observation noise precision.
    pub tau: f64,
    /// Uniform phase posterior over the full period instead of fixed
    /// randomised phases.
    pub variational_phases: bool,
    /// Initial frequency variance (0 freezes the features at their means).
    pub freq_var: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            tau: 10.0,
            variational_phases: false,
            freq_var: 0.1,
        }
    }
}

/// Draw a starting state: random standard-normal frequency means, inducing
/// inputs taken from the training inputs (without replacement while they
/// last), unit coefficient variances, zero coefficient means.
pub fn init_state(
    data: &Dataset,
    spec: &KernelSpec,
    per_component: usize,
    options: &InitOptions,
    seed: u64,
) -> Result<VariationalState> {
    if per_component == 0 {
        return Err(Error::InvalidArgument("need at least one feature per component".into()));
    }
    spec.validate()?;
    if spec.input_dim() != data.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "kernel input dim {} vs data input dim {}",
            spec.input_dim(),
            data.input_dim()
        )));
    }
    let lk = per_component * spec.num_components();
    let q = data.input_dim();
    let n = data.num_points();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream::FREQ);
    let freq_mean = nalgebra::DMatrix::from_fn(lk, q, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z
    });
    let freq_var = nalgebra::DMatrix::from_element(lk, q, options.freq_var);

    rng.set_stream(stream::INDUCING);
    let mut inducing = nalgebra::DMatrix::zeros(lk, q);
    if lk <= n {
        let picks = index_sample(&mut rng, n, lk);
        for (k, row) in picks.into_iter().enumerate() {
            for qq in 0..q {
                inducing[(k, qq)] = data.inputs()[(row, qq)];
            }
        }
    } else {
        for k in 0..lk {
            let row = rng.gen_range(0..n);
            for qq in 0..q {
                inducing[(k, qq)] = data.inputs()[(row, qq)];
            }
        }
    }

    rng.set_stream(stream::PHASE);
    let phases = if options.variational_phases {
        PhaseMode::Variational {
            lower: DVector::zeros(lk),
            upper: DVector::from_element(lk, TWO_PI),
        }
    } else {
        PhaseMode::Fixed {
            offsets: DVector::from_fn(lk, |_, _| rng.gen_range(0.0..TWO_PI)),
        }
    };

    let state = VariationalState {
        inducing,
        freq_mean,
        freq_var,
        phases,
        coeff_mean: nalgebra::DMatrix::zeros(lk, data.output_dim()),
        coeff_var: nalgebra::DMatrix::from_element(lk, data.output_dim(), 1.0),
        noise_precision: options.tau,
    };
    state.validate(spec)?;
    Ok(state)
}

/// Generic limited-memory quasi-Newton ascent with a backtracking
/// sufficient-increase line search. Returns the best iterate seen.
pub(crate) fn lbfgs_maximize<F>(
    mut f: F,
    x0: DVector<f64>,
    max_iters: usize,
    memory: usize,
    grad_tol: Option<f64>,
) -> Result<(DVector<f64>, FitTrace)>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    const C1: f64 = 1e-4;
    let start = Instant::now();
    let mut trace = FitTrace::default();
    let mut x = x0;
    let (mut fx, mut gx) = f(&x)?;
    let mut best_x = x.clone();
    let mut best_f = fx;
    let mut history: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::new();

    for iter in 0..max_iters {
        if let Some(tol) = grad_tol {
            if gx.norm() <= tol * (1.0 + fx.abs()) {
                break;
            }
        }
        // two-loop recursion on the ascent direction
        let mut d = gx.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * s.dot(&d);
            d -= y * a;
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.last() {
            let scale = s.dot(y) / y.dot(y);
            d *= scale;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&d);
            d += s * (a - b);
        }
        let mut slope = gx.dot(&d);
        if !(slope.is_finite() && slope > 0.0) {
            // fall back to steepest ascent
            d = gx.clone();
            slope = gx.dot(&d);
            history.clear();
            if slope <= 0.0 {
                break; // zero gradient
            }
        }

        let mut step = if iter == 0 {
            (1.0 / gx.norm().max(1.0)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &x + &d * step;
            match f(&cand) {
                Ok((fc, gc)) if fc.is_finite() && fc >= fx + C1 * step * slope => {
                    accepted = Some((cand, fc, gc));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            trace.line_search_warning = true;
            break;
        };

        let s = &x_new - &x;
        let y = &g_new - &gx;
        let sy = s.dot(&y);
        if sy.abs() > 1e-10 * s.norm() * y.norm() && sy < 0.0 {
            // ascent on L means s'y < 0 w.r.t. the concave model; store the
            // pair in minimization convention so the recursion stays standard
            history.push((s, -y, -1.0 / sy));
            if history.len() > memory {
                history.remove(0);
            }
        }
        x = x_new;
        fx = f_new;
        gx = g_new;
        if fx > best_f {
            best_f = fx;
            best_x = x.clone();
        }
        trace.iterations.push(IterRecord {
            bound: fx,
            grad_norm: gx.norm(),
            elapsed_s: start.elapsed().as_secs_f64(),
        });
    }
    let _ = best_f;
    Ok((best_x, trace))
}

/// Adaptive stochastic gradient ascent: per-coordinate running second moment
/// r <- decay r + (1-decay) g^2, update x <- x + step g / sqrt(r + eps).
pub(crate) fn rmsprop_maximize<F>(
    mut f: F,
    x0: DVector<f64>,
    max_iters: usize,
    step_size: f64,
    decay: f64,
    epsilon: f64,
) -> Result<(DVector<f64>, FitTrace)>
where
    F: FnMut(&DVector<f64>, usize) -> Result<(f64, DVector<f64>)>,
{
    let start = Instant::now();
    let mut trace = FitTrace::default();
    let mut x = x0;
    let mut r: DVector<f64> = DVector::zeros(x.len());
    for t in 0..max_iters {
        let (v, g) = f(&x, t)?;
        for i in 0..x.len() {
            r[i] = decay * r[i] + (1.0 - decay) * g[i] * g[i];
            x[i] += step_size * g[i] / (r[i] + epsilon).sqrt();
        }
        trace.iterations.push(IterRecord {
            bound: v,
            grad_norm: g.norm(),
            elapsed_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((x, trace))
}

/// Quasi-Newton fit of the optimal-coefficient or factorised bound.
pub fn fit_quasi_newton(
    data: &Dataset,
    init: &VariationalState,
    spec: &KernelSpec,
    config: &FitConfig,
) -> Result<(VariationalState, KernelSpec, FitTrace)> {
    if matches!(config.bound, BoundKind::Stochastic { .. }) {
        return Err(Error::InvalidArgument(
            "the stochastic bound is trained with the adaptive optimizer".into(),
        ));
    }
    let mut pv = pack(init, spec)?;
    pv.set_trainability(&config.trainability);
    let mask = pv.mask.clone();
    let base = pv.clone();
    let objective = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let cand = base.with_values(x.clone());
        let bv = bound_and_gradient(&cand, data, config, None)?;
        Ok((bv.value, masked(bv.gradient, &mask)))
    };
    let (best, trace) = lbfgs_maximize(
        objective,
        pv.values.clone(),
        config.max_iters,
        config.lbfgs_memory,
        config.grad_tol,
    )?;
    let (state, spec_out) = unpack(&pv.with_values(best))?;
    Ok((state, spec_out, trace))
}

/// Adaptive stochastic fit of the mini-batch bound. Batches are resampled
/// uniformly without replacement each step from the seeded generator.
pub fn fit_adaptive_sgd(
    data: &Dataset,
    init: &VariationalState,
    spec: &KernelSpec,
    config: &FitConfig,
) -> Result<(VariationalState, KernelSpec, FitTrace)> {
    let BoundKind::Stochastic { batch_size, seed } = config.bound else {
        return Err(Error::InvalidArgument(
            "the adaptive optimizer trains the stochastic bound".into(),
        ));
    };
    let n = data.num_points();
    if batch_size == 0 || batch_size > n {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} must lie in 1..={n}"
        )));
    }
    let mut pv = pack(init, spec)?;
    pv.set_trainability(&config.trainability);
    let mask = pv.mask.clone();
    let base = pv.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream::MINIBATCH);
    let objective = |x: &DVector<f64>, _t: usize| -> Result<(f64, DVector<f64>)> {
        let batch: Vec<usize> = index_sample(&mut rng, n, batch_size).into_vec();
        let cand = base.with_values(x.clone());
        let bv = bound_and_gradient(&cand, data, config, Some(&batch))?;
        Ok((bv.value, masked(bv.gradient, &mask)))
    };
    let (final_x, trace) = rmsprop_maximize(
        objective,
        pv.values.clone(),
        config.max_iters,
        config.step_size,
        config.decay,
        config.epsilon,
    )?;
    let (state, spec_out) = unpack(&pv.with_values(final_x))?;
    Ok((state, spec_out, trace))
}

/// Dispatch on the configured optimizer.
pub fn fit(
    data: &Dataset,
    init: &VariationalState,
    spec: &KernelSpec,
    config: &FitConfig,
) -> Result<(VariationalState, KernelSpec, FitTrace)> {
    match config.optimizer {
        OptimizerKind::QuasiNewton => fit_quasi_newton(data, init, spec, config),
        OptimizerKind::AdaptiveSgd => fit_adaptive_sgd(data, init, spec, config),
    }
}
