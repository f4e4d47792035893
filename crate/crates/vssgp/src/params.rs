//! Flat unconstrained parameter vector and its mapping onto the model types.
//!
//! Layout (fixed, in order):
//!
//! ```text
//! [0]                      log tau
//! [1 .. L*(1+2Q)]          per component i: log weight_i,
//!                          log lengthscale_{i,1..Q}, softplus^-1 inv_period_{i,1..Q}
//! [.. + LK*Q]              freq means mu_k (row-major over k, q)
//! [.. + LK*Q]              log freq variances
//! [.. + LK*Q]              inducing inputs z_k
//! [.. + LK or 2*LK]        phases: fixed -> raw offset per column;
//!                          variational -> (logit(lower/2pi), log(upper-lower)) per column
//! [.. + LK*D]              coeff means (column-major over d, then k)
//! [.. + LK*D]              log coeff variances
//! ```
//!
//! Positive quantities train in log space; inverse periods through a softplus
//! so that exactly-zero entries (infinite period) stay representable; the phase
//! pair through (logit of lower/2pi, log gap) so the ordering constraint holds
//! by construction. Exact zeros map to a large negative sentinel whose inverse
//! transform underflows back to exactly 0.0.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{KernelSpec, PhaseMode, SmComponent, VariationalState, TWO_PI};

/// Sentinel for log/logit/softplus-inverse of exactly zero: the inverse
/// transforms underflow back to 0.0 at this magnitude.
const ZERO_SENTINEL: f64 = -750.0;

pub fn to_log(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        ZERO_SENTINEL
    }
}

pub fn from_log(u: f64) -> f64 {
    u.exp()
}

pub fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

pub fn softplus_inv(v: f64) -> f64 {
    if v == 0.0 {
        ZERO_SENTINEL
    } else if v > 30.0 {
        v
    } else {
        v.exp_m1().ln()
    }
}

/// d softplus(u) / du.
pub fn softplus_grad(u: f64) -> f64 {
    sigmoid(u)
}

pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(t: f64) -> f64 {
    if t <= 0.0 {
        ZERO_SENTINEL
    } else if t >= 1.0 {
        -ZERO_SENTINEL
    } else {
        (t / (1.0 - t)).ln()
    }
}

/// Named parameter blocks, used for trainability masks and error reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Noise,
    Weights,
    Lengthscales,
    InvPeriods,
    FreqMeans,
    FreqVars,
    Inducing,
    Phases,
    CoeffMeans,
    CoeffVars,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Noise => "noise_precision",
            Block::Weights => "weights",
            Block::Lengthscales => "lengthscales",
            Block::InvPeriods => "inv_periods",
            Block::FreqMeans => "freq_means",
            Block::FreqVars => "freq_vars",
            Block::Inducing => "inducing_inputs",
            Block::Phases => "phases",
            Block::CoeffMeans => "coeff_means",
            Block::CoeffVars => "coeff_vars",
        }
    }
}

/// Which parameter blocks the optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainability {
    pub noise: bool,
    pub weights: bool,
    pub lengthscales: bool,
    pub inv_periods: bool,
    pub freq_means: bool,
    pub freq_vars: bool,
    pub inducing: bool,
    pub phases: bool,
    pub coeff_means: bool,
    pub coeff_vars: bool,
}

impl Default for Trainability {
    /// Everything the factorised objective optimises; inducing inputs and
    /// phases stay where initialisation put them.
    fn default() -> Self {
        Self {
            noise: true,
            weights: true,
            lengthscales: true,
            inv_periods: true,
            freq_means: true,
            freq_vars: true,
            inducing: false,
            phases: false,
            coeff_means: true,
            coeff_vars: true,
        }
    }
}

impl Trainability {
    pub fn allows(&self, block: Block) -> bool {
        match block {
            Block::Noise => self.noise,
            Block::Weights => self.weights,
            Block::Lengthscales => self.lengthscales,
            Block::InvPeriods => self.inv_periods,
            Block::FreqMeans => self.freq_means,
            Block::FreqVars => self.freq_vars,
            Block::Inducing => self.inducing,
            Block::Phases => self.phases,
            Block::CoeffMeans => self.coeff_means,
            Block::CoeffVars => self.coeff_vars,
        }
    }
}

/// Shape metadata needed to interpret a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub num_components: usize,
    pub input_dim: usize,
    pub per_component: usize,
    pub output_dim: usize,
    pub variational_phases: bool,
}

impl Layout {
    pub fn of(state: &VariationalState, spec: &KernelSpec) -> Result<Self> {
        Ok(Self {
            num_components: spec.num_components(),
            input_dim: spec.input_dim(),
            per_component: state.per_component(spec)?,
            output_dim: state.output_dim(),
            variational_phases: state.phases.is_variational(),
        })
    }

    pub fn num_columns(&self) -> usize {
        self.num_components * self.per_component
    }

    pub fn len(&self) -> usize {
        let lk = self.num_columns();
        let q = self.input_dim;
        let phases = if self.variational_phases { 2 * lk } else { lk };
        1 + self.num_components * (1 + 2 * q) + 3 * lk * q + phases + 2 * lk * self.output_dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn kernel_offset(&self) -> usize {
        1
    }

    fn freq_mean_offset(&self) -> usize {
        self.kernel_offset() + self.num_components * (1 + 2 * self.input_dim)
    }

    fn freq_var_offset(&self) -> usize {
        self.freq_mean_offset() + self.num_columns() * self.input_dim
    }

    fn inducing_offset(&self) -> usize {
        self.freq_var_offset() + self.num_columns() * self.input_dim
    }

    fn phase_offset(&self) -> usize {
        self.inducing_offset() + self.num_columns() * self.input_dim
    }

    fn coeff_mean_offset(&self) -> usize {
        let lk = self.num_columns();
        self.phase_offset() + if self.variational_phases { 2 * lk } else { lk }
    }

    fn coeff_var_offset(&self) -> usize {
        self.coeff_mean_offset() + self.num_columns() * self.output_dim
    }

    pub fn index_noise(&self) -> usize {
        0
    }

    pub fn index_weight(&self, i: usize) -> usize {
        self.kernel_offset() + i * (1 + 2 * self.input_dim)
    }

    pub fn index_lengthscale(&self, i: usize, q: usize) -> usize {
        self.index_weight(i) + 1 + q
    }

    pub fn index_inv_period(&self, i: usize, q: usize) -> usize {
        self.index_weight(i) + 1 + self.input_dim + q
    }

    pub fn index_freq_mean(&self, k: usize, q: usize) -> usize {
        self.freq_mean_offset() + k * self.input_dim + q
    }

    pub fn index_freq_var(&self, k: usize, q: usize) -> usize {
        self.freq_var_offset() + k * self.input_dim + q
    }

    pub fn index_inducing(&self, k: usize, q: usize) -> usize {
        self.inducing_offset() + k * self.input_dim + q
    }

    /// Fixed phases: the single entry; variational: the logit(lower) entry.
    pub fn index_phase(&self, k: usize) -> usize {
        self.phase_offset() + if self.variational_phases { 2 * k } else { k }
    }

    /// Variational phases only: the log-gap entry.
    pub fn index_phase_gap(&self, k: usize) -> usize {
        debug_assert!(self.variational_phases);
        self.phase_offset() + 2 * k + 1
    }

    pub fn index_coeff_mean(&self, d: usize, k: usize) -> usize {
        self.coeff_mean_offset() + d * self.num_columns() + k
    }

    pub fn index_coeff_var(&self, d: usize, k: usize) -> usize {
        self.coeff_var_offset() + d * self.num_columns() + k
    }

    pub fn block_of(&self, idx: usize) -> Block {
        if idx < self.kernel_offset() {
            Block::Noise
        } else if idx < self.freq_mean_offset() {
            let within = (idx - self.kernel_offset()) % (1 + 2 * self.input_dim);
            if within == 0 {
                Block::Weights
            } else if within <= self.input_dim {
                Block::Lengthscales
            } else {
                Block::InvPeriods
            }
        } else if idx < self.freq_var_offset() {
            Block::FreqMeans
        } else if idx < self.inducing_offset() {
            Block::FreqVars
        } else if idx < self.phase_offset() {
            Block::Inducing
        } else if idx < self.coeff_mean_offset() {
            Block::Phases
        } else if idx < self.coeff_var_offset() {
            Block::CoeffMeans
        } else {
            Block::CoeffVars
        }
    }
}

/// Flat trainable parameters in unconstrained space plus a per-entry mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: DVector<f64>,
    pub mask: Vec<bool>,
    pub layout: Layout,
}

impl ParameterVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn set_trainability(&mut self, spec: &Trainability) {
        for (idx, m) in self.mask.iter_mut().enumerate() {
            *m = spec.allows(self.layout.block_of(idx));
        }
    }

    pub fn with_values(&self, values: DVector<f64>) -> Self {
        Self {
            values,
            mask: self.mask.clone(),
            layout: self.layout,
        }
    }
}

/// Map a valid state into unconstrained coordinates (mask all-trainable).
pub fn pack(state: &VariationalState, spec: &KernelSpec) -> Result<ParameterVector> {
    state.validate(spec)?;
    let layout = Layout::of(state, spec)?;
    let mut v = DVector::zeros(layout.len());

    v[layout.index_noise()] = to_log(state.noise_precision);
    for (i, c) in spec.components.iter().enumerate() {
        v[layout.index_weight(i)] = to_log(c.weight);
        for q in 0..layout.input_dim {
            v[layout.index_lengthscale(i, q)] = to_log(c.lengthscales[q]);
            v[layout.index_inv_period(i, q)] = softplus_inv(c.inv_periods[q]);
        }
    }
    for k in 0..layout.num_columns() {
        for q in 0..layout.input_dim {
            v[layout.index_freq_mean(k, q)] = state.freq_mean[(k, q)];
            v[layout.index_freq_var(k, q)] = to_log(state.freq_var[(k, q)]);
            v[layout.index_inducing(k, q)] = state.inducing[(k, q)];
        }
    }
    match &state.phases {
        PhaseMode::Fixed { offsets } => {
            for k in 0..layout.num_columns() {
                v[layout.index_phase(k)] = offsets[k];
            }
        }
        PhaseMode::Variational { lower, upper } => {
            for k in 0..layout.num_columns() {
                v[layout.index_phase(k)] = logit(lower[k] / TWO_PI);
                v[layout.index_phase_gap(k)] = to_log(upper[k] - lower[k]);
            }
        }
    }
    for d in 0..layout.output_dim {
        for k in 0..layout.num_columns() {
            v[layout.index_coeff_mean(d, k)] = state.coeff_mean[(k, d)];
            v[layout.index_coeff_var(d, k)] = to_log(state.coeff_var[(k, d)]);
        }
    }

    for (idx, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                path: format!("packed[{idx}] ({})", layout.block_of(idx).name()),
            });
        }
    }
    Ok(ParameterVector {
        mask: vec![true; v.len()],
        values: v,
        layout,
    })
}

/// Rebuild the constrained state and kernel from unconstrained coordinates.
/// All state invariants hold by construction.
pub fn unpack(pv: &ParameterVector) -> Result<(VariationalState, KernelSpec)> {
    unpack_values(&pv.values, &pv.layout)
}

pub fn unpack_values(v: &DVector<f64>, layout: &Layout) -> Result<(VariationalState, KernelSpec)> {
    if v.len() != layout.len() {
        return Err(Error::DimensionMismatch(format!(
            "parameter vector has length {}, layout requires {}",
            v.len(),
            layout.len()
        )));
    }
    for (idx, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                path: format!("packed[{idx}] ({})", layout.block_of(idx).name()),
            });
        }
    }

    let q = layout.input_dim;
    let lk = layout.num_columns();
    let d = layout.output_dim;

    let mut components = Vec::with_capacity(layout.num_components);
    for i in 0..layout.num_components {
        components.push(SmComponent {
            weight: from_log(v[layout.index_weight(i)]),
            lengthscales: DVector::from_fn(q, |qq, _| from_log(v[layout.index_lengthscale(i, qq)])),
            inv_periods: DVector::from_fn(q, |qq, _| softplus(v[layout.index_inv_period(i, qq)])),
        });
    }
    let spec = KernelSpec { components };

    let freq_mean = DMatrix::from_fn(lk, q, |k, qq| v[layout.index_freq_mean(k, qq)]);
    let freq_var = DMatrix::from_fn(lk, q, |k, qq| from_log(v[layout.index_freq_var(k, qq)]));
    let inducing = DMatrix::from_fn(lk, q, |k, qq| v[layout.index_inducing(k, qq)]);
    let phases = if layout.variational_phases {
        let mut lower = DVector::zeros(lk);
        let mut upper = DVector::zeros(lk);
        for k in 0..lk {
            let a = TWO_PI * sigmoid(v[layout.index_phase(k)]);
            let b = (a + from_log(v[layout.index_phase_gap(k)])).min(TWO_PI);
            lower[k] = a;
            upper[k] = b;
        }
        PhaseMode::Variational { lower, upper }
    } else {
        PhaseMode::Fixed {
            offsets: DVector::from_fn(lk, |k, _| v[layout.index_phase(k)].rem_euclid(TWO_PI)),
        }
    };
    let coeff_mean = DMatrix::from_fn(lk, d, |k, dd| v[layout.index_coeff_mean(dd, k)]);
    let coeff_var = DMatrix::from_fn(lk, d, |k, dd| from_log(v[layout.index_coeff_var(dd, k)]));

    Ok((
        VariationalState {
            inducing,
            freq_mean,
            freq_var,
            phases,
            coeff_mean,
            coeff_var,
            noise_precision: from_log(v[layout.index_noise()]),
        },
        spec,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::random_instance;
    use proptest::prelude::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn unit_noise_packs_to_zero() {
        let (state, spec) = random_instance(1, 1, 2, 1, 1, false);
        let mut state = state;
        state.noise_precision = 1.0;
        let pv = pack(&state, &spec).unwrap();
        assert_eq!(pv.values[pv.layout.index_noise()], 0.0);
    }

    #[test]
    fn e_lengthscale_packs_to_one() {
        let (state, mut spec) = random_instance(2, 1, 2, 1, 1, false);
        spec.components[0].lengthscales[0] = std::f64::consts::E;
        let pv = pack(&state, &spec).unwrap();
        assert!((pv.values[pv.layout.index_lengthscale(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_unpacks_to_unit_scales() {
        let (state, spec) = random_instance(3, 1, 3, 2, 1, false);
        let pv = pack(&state, &spec).unwrap();
        let zero = pv.with_values(DVector::zeros(pv.len()));
        let (s, k) = unpack(&zero).unwrap();
        assert_eq!(s.noise_precision, 1.0);
        assert_eq!(k.components[0].lengthscales[0], 1.0);
        assert_eq!(s.freq_mean[(0, 0)], 0.0);
        // softplus(0) = ln 2
        assert!((k.components[0].inv_periods[0] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_entry_is_rejected() {
        let (state, spec) = random_instance(4, 1, 2, 1, 1, true);
        let pv = pack(&state, &spec).unwrap();
        let mut vals = pv.values.clone();
        vals[3] = f64::INFINITY;
        assert!(matches!(
            unpack(&pv.with_values(vals)),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let (state, spec) = random_instance(5, 1, 2, 1, 1, false);
        let pv = pack(&state, &spec).unwrap();
        let short = DVector::zeros(pv.len() - 1);
        assert!(matches!(
            unpack_values(&short, &pv.layout),
            Err(Error::DimensionMismatch(..))
        ));
    }

    #[test]
    fn exact_zero_variance_round_trips() {
        let (mut state, spec) = random_instance(6, 1, 2, 1, 1, false);
        state.freq_var.fill(0.0);
        let pv = pack(&state, &spec).unwrap();
        let (s, _) = unpack(&pv).unwrap();
        assert_eq!(s.freq_var[(0, 0)], 0.0);
    }

    #[test]
    fn boundary_phase_bounds_round_trip() {
        let (mut state, spec) = random_instance(7, 2, 2, 2, 1, true);
        if let PhaseMode::Variational { lower, upper } = &mut state.phases {
            lower[0] = 0.0;
            upper[0] = TWO_PI;
            lower[1] = 1.0;
            upper[1] = 1.0;
        }
        let pv = pack(&state, &spec).unwrap();
        let (s, _) = unpack(&pv).unwrap();
        if let PhaseMode::Variational { lower, upper } = &s.phases {
            assert_eq!(lower[0], 0.0);
            assert!((upper[0] - TWO_PI).abs() < 1e-12);
            assert!(rel_close(lower[1], 1.0, 1e-12));
            assert!(rel_close(upper[1], 1.0, 1e-12));
        } else {
            panic!("phase mode changed");
        }
    }

    fn assert_state_close(a: &VariationalState, b: &VariationalState, tol: f64) {
        for (x, y) in a.freq_mean.iter().zip(b.freq_mean.iter()) {
            assert!(rel_close(*x, *y, tol));
        }
        for (x, y) in a.freq_var.iter().zip(b.freq_var.iter()) {
            assert!(rel_close(*x, *y, tol));
        }
        for (x, y) in a.inducing.iter().zip(b.inducing.iter()) {
            assert!(rel_close(*x, *y, tol));
        }
        for (x, y) in a.coeff_mean.iter().zip(b.coeff_mean.iter()) {
            assert!(rel_close(*x, *y, tol));
        }
        for (x, y) in a.coeff_var.iter().zip(b.coeff_var.iter()) {
            assert!(rel_close(*x, *y, tol));
        }
        assert!(rel_close(a.noise_precision, b.noise_precision, tol));
        match (&a.phases, &b.phases) {
            (PhaseMode::Fixed { offsets: oa }, PhaseMode::Fixed { offsets: ob }) => {
                for (x, y) in oa.iter().zip(ob.iter()) {
                    assert!(rel_close(*x, *y, tol));
                }
            }
            (
                PhaseMode::Variational { lower: la, upper: ua },
                PhaseMode::Variational { lower: lb, upper: ub },
            ) => {
                for (x, y) in la.iter().zip(lb.iter()) {
                    assert!(rel_close(*x, *y, tol));
                }
                for (x, y) in ua.iter().zip(ub.iter()) {
                    assert!(rel_close(*x, *y, tol));
                }
            }
            _ => panic!("phase mode changed"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn round_trip_reproduces_state(seed in 0u64..10_000, variational in proptest::bool::ANY) {
            let (state, spec) = random_instance(seed, 2, 3, 2, 2, variational);
            let pv = pack(&state, &spec).unwrap();
            let (state2, spec2) = unpack(&pv).unwrap();
            assert_state_close(&state, &state2, 1e-12);
            for (ca, cb) in spec.components.iter().zip(spec2.components.iter()) {
                assert!(rel_close(ca.weight, cb.weight, 1e-12));
                for (x, y) in ca.lengthscales.iter().zip(cb.lengthscales.iter()) {
                    assert!(rel_close(*x, *y, 1e-12));
                }
                for (x, y) in ca.inv_periods.iter().zip(cb.inv_periods.iter()) {
                    assert!(rel_close(*x, *y, 1e-12));
                }
            }
            // and the reverse direction in packed coordinates
            let pv2 = pack(&state2, &spec2).unwrap();
            for (x, y) in pv.values.iter().zip(pv2.values.iter()) {
                assert!(rel_close(*x, *y, 1e-12));
            }
        }
    }
}
