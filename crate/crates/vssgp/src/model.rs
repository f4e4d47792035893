//! Domain types: datasets, spectral-mixture kernels, and the variational state.
//!
//! The kernel is a weighted sum of `L` spectral-mixture components. Each of the
//! `LK` basis columns (K per component) carries its own inducing input `z_k`,
//! frequency posterior `N(mu_k, diag(sigma2_k))`, and phase treatment. The
//! column-to-component map is `component_of`, the single source of truth used
//! everywhere.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Regression data: inputs `X` (N x Q) and outputs `Y` (N x D).
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyData);
        }
        if inputs.nrows() != outputs.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "inputs have {} rows, outputs have {}",
                inputs.nrows(),
                outputs.nrows()
            )));
        }
        for (idx, v) in inputs.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { path: format!("inputs[{}]", idx) });
            }
        }
        for (idx, v) in outputs.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { path: format!("outputs[{}]", idx) });
            }
        }
        Ok(Self { inputs, outputs })
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn num_points(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }

    /// Dataset restricted to the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        for &r in rows {
            if r >= self.num_points() {
                return Err(Error::InvalidArgument(format!(
                    "row index {} out of range (N = {})",
                    r,
                    self.num_points()
                )));
            }
        }
        Ok(Self {
            inputs: self.inputs.select_rows(rows),
            outputs: self.outputs.select_rows(rows),
        })
    }
}

/// One spectral-mixture component: variance weight, per-dimension
/// length-scales, and per-dimension inverse periods (0 = infinite period,
/// i.e. a pure squared-exponential factor).
#[derive(Debug, Clone, PartialEq)]
pub struct SmComponent {
    /// Component variance (sigma_i^2).
    pub weight: f64,
    /// Length-scales l_iq, strictly positive. Length Q.
    pub lengthscales: DVector<f64>,
    /// Inverse periods (cycles per input unit), non-negative. Length Q.
    pub inv_periods: DVector<f64>,
}

impl SmComponent {
    pub fn isotropic(weight: f64, lengthscale: f64, inv_period: f64, input_dim: usize) -> Self {
        Self {
            weight,
            lengthscales: DVector::from_element(input_dim, lengthscale),
            inv_periods: DVector::from_element(input_dim, inv_period),
        }
    }

    fn validate(&self, idx: usize) -> Result<()> {
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "component {idx}: weight must be positive and finite, got {}",
                self.weight
            )));
        }
        if self.lengthscales.len() != self.inv_periods.len() {
            return Err(Error::DimensionMismatch(format!(
                "component {idx}: {} lengthscales vs {} inverse periods",
                self.lengthscales.len(),
                self.inv_periods.len()
            )));
        }
        for (q, &l) in self.lengthscales.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "component {idx}: lengthscale[{q}] must be positive and finite, got {l}"
                )));
            }
        }
        for (q, &p) in self.inv_periods.iter().enumerate() {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "component {idx}: inv_period[{q}] must be non-negative and finite, got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// A spectral-mixture kernel: an ordered list of components.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub components: Vec<SmComponent>,
}

impl KernelSpec {
    pub fn new(components: Vec<SmComponent>) -> Result<Self> {
        let spec = Self { components };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidArgument(
                "kernel needs at least one component".into(),
            ));
        }
        let q = self.components[0].lengthscales.len();
        for (i, c) in self.components.iter().enumerate() {
            c.validate(i)?;
            if c.lengthscales.len() != q {
                return Err(Error::DimensionMismatch(format!(
                    "component {i} has input dim {}, expected {q}",
                    c.lengthscales.len()
                )));
            }
        }
        Ok(())
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.components[0].lengthscales.len()
    }

    /// Sum of component weights; equals the kernel value at zero lag.
    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// The spectral-mixture covariance evaluated directly:
    /// sum_i sigma_i^2 exp(-1/2 sum_q d_q^2 / l_iq^2) prod_q cos(2 pi d_q pbar_iq)
    /// with d = x - y.
    pub fn kernel_exact(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.input_dim());
        assert_eq!(y.len(), self.input_dim());
        let mut total = 0.0;
        for c in &self.components {
            let mut quad = 0.0;
            let mut cos_prod = 1.0;
            for q in 0..x.len() {
                let d = x[q] - y[q];
                let r = d / c.lengthscales[q];
                quad += r * r;
                cos_prod *= (TWO_PI * d * c.inv_periods[q]).cos();
            }
            total += c.weight * (-0.5 * quad).exp() * cos_prod;
        }
        total
    }
}

/// Component index of basis column `k` when each component owns
/// `per_component` consecutive columns.
#[inline]
pub fn component_of(k: usize, per_component: usize) -> usize {
    k / per_component
}

/// Phase treatment for the basis columns.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseMode {
    /// Uniform posterior on [lower_k, upper_k] within [0, 2 pi].
    Variational {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// Constant phases in [0, 2 pi), treated as Monte Carlo constants.
    Fixed { offsets: DVector<f64> },
}

impl PhaseMode {
    pub fn len(&self) -> usize {
        match self {
            PhaseMode::Variational { lower, .. } => lower.len(),
            PhaseMode::Fixed { offsets } => offsets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_variational(&self) -> bool {
        matches!(self, PhaseMode::Variational { .. })
    }
}

/// All variational parameters and hyper-parameters of the approximate model.
///
/// Rows of the LK x Q matrices are indexed by basis column `k`; the coefficient
/// matrices are LK x D with column `d` holding `m_d` / `s_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    /// Inducing inputs z_k, one row per basis column (LK x Q).
    pub inducing: DMatrix<f64>,
    /// Frequency posterior means mu_k (LK x Q).
    pub freq_mean: DMatrix<f64>,
    /// Frequency posterior variances, diagonal entries (LK x Q), >= 0.
    pub freq_var: DMatrix<f64>,
    /// Phase posterior or fixed phases (length LK).
    pub phases: PhaseMode,
    /// Coefficient posterior means, column d is m_d (LK x D).
    pub coeff_mean: DMatrix<f64>,
    /// Coefficient posterior variances, diagonal entries, > 0 (LK x D).
    pub coeff_var: DMatrix<f64>,
    /// Observation noise precision tau, > 0.
    pub noise_precision: f64,
}

impl VariationalState {
    /// Number of basis columns LK.
    pub fn num_columns(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inducing.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.coeff_mean.ncols()
    }

    /// Basis columns per kernel component; errors unless LK divides evenly.
    pub fn per_component(&self, spec: &KernelSpec) -> Result<usize> {
        let lk = self.num_columns();
        let l = spec.num_components();
        if lk == 0 || !lk.is_multiple_of(l) {
            return Err(Error::DimensionMismatch(format!(
                "{lk} basis columns cannot be split across {l} components"
            )));
        }
        Ok(lk / l)
    }

    pub fn validate(&self, spec: &KernelSpec) -> Result<()> {
        spec.validate()?;
        let lk = self.num_columns();
        let q = self.input_dim();
        self.per_component(spec)?;
        if spec.input_dim() != q {
            return Err(Error::DimensionMismatch(format!(
                "kernel input dim {} vs state input dim {q}",
                spec.input_dim()
            )));
        }
        let same_shape = |name: &str, m: &DMatrix<f64>| -> Result<()> {
            if m.nrows() != lk || m.ncols() != q {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {lk}x{q}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(())
        };
        same_shape("freq_mean", &self.freq_mean)?;
        same_shape("freq_var", &self.freq_var)?;
        for (idx, v) in self.freq_mean.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { path: format!("freq_mean[{idx}]") });
            }
        }
        for (idx, v) in self.freq_var.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "freq_var[{idx}] must be >= 0 and finite, got {v}"
                )));
            }
        }
        for (idx, v) in self.inducing.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { path: format!("inducing[{idx}]") });
            }
        }
        if self.phases.len() != lk {
            return Err(Error::DimensionMismatch(format!(
                "{} phase entries for {lk} basis columns",
                self.phases.len()
            )));
        }
        match &self.phases {
            PhaseMode::Variational { lower, upper } => {
                for k in 0..lk {
                    let (a, b) = (lower[k], upper[k]);
                    if !(a.is_finite() && b.is_finite() && 0.0 <= a && a <= b && b <= TWO_PI + 1e-12)
                    {
                        return Err(Error::InvalidArgument(format!(
                            "phase bounds for column {k} must satisfy 0 <= lower <= upper <= 2pi, got ({a}, {b})"
                        )));
                    }
                }
            }
            PhaseMode::Fixed { offsets } => {
                for (k, &b) in offsets.iter().enumerate() {
                    if !(b.is_finite() && (0.0..TWO_PI).contains(&b)) {
                        return Err(Error::InvalidArgument(format!(
                            "fixed phase for column {k} must lie in [0, 2pi), got {b}"
                        )));
                    }
                }
            }
        }
        let d = self.output_dim();
        if self.coeff_mean.nrows() != lk || self.coeff_var.nrows() != lk || self.coeff_var.ncols() != d
        {
            return Err(Error::DimensionMismatch(format!(
                "coefficient blocks must be {lk}xD, got {}x{} and {}x{}",
                self.coeff_mean.nrows(),
                self.coeff_mean.ncols(),
                self.coeff_var.nrows(),
                self.coeff_var.ncols()
            )));
        }
        for (idx, v) in self.coeff_mean.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { path: format!("coeff_mean[{idx}]") });
            }
        }
        for (idx, v) in self.coeff_var.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "coeff_var[{idx}] must be > 0 and finite, got {v}"
                )));
            }
        }
        if !(self.noise_precision.is_finite() && self.noise_precision > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise precision must be > 0 and finite, got {}",
                self.noise_precision
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn se_spec(weight: f64, lengthscale: f64) -> KernelSpec {
        KernelSpec::new(vec![SmComponent::isotropic(weight, lengthscale, 0.0, 1)]).unwrap()
    }

    #[test]
    fn kernel_zero_lag_is_total_weight() {
        let spec = KernelSpec::new(vec![
            SmComponent::isotropic(0.7, 0.3, 2.0, 2),
            SmComponent::isotropic(1.9, 4.0, 0.0, 2),
        ])
        .unwrap();
        let x = dvector![0.4, -1.2];
        let v = spec.kernel_exact(&x, &x);
        assert!((v - spec.total_weight()).abs() < 1e-14);
    }

    #[test]
    fn kernel_matches_se_closed_form() {
        let spec = se_spec(1.0, 1.0);
        let v = spec.kernel_exact(&dvector![1.0], &dvector![0.0]);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_sum_is_additive_over_components() {
        let mut rng = crate::testrng(7);
        for _ in 0..20 {
            let c0 = SmComponent {
                weight: crate::unif(&mut rng, 0.2, 2.0),
                lengthscales: dvector![crate::unif(&mut rng, 0.3, 2.0), crate::unif(&mut rng, 0.3, 2.0)],
                inv_periods: dvector![crate::unif(&mut rng, 0.0, 1.5), 0.0],
            };
            let c1 = SmComponent {
                weight: crate::unif(&mut rng, 0.2, 2.0),
                lengthscales: dvector![crate::unif(&mut rng, 0.3, 2.0), crate::unif(&mut rng, 0.3, 2.0)],
                inv_periods: dvector![0.0, crate::unif(&mut rng, 0.0, 1.5)],
            };
            let x = dvector![crate::unif(&mut rng, -2.0, 2.0), crate::unif(&mut rng, -2.0, 2.0)];
            let y = dvector![crate::unif(&mut rng, -2.0, 2.0), crate::unif(&mut rng, -2.0, 2.0)];
            let joint = KernelSpec::new(vec![c0.clone(), c1.clone()]).unwrap();
            let s0 = KernelSpec::new(vec![c0]).unwrap();
            let s1 = KernelSpec::new(vec![c1]).unwrap();
            let lhs = joint.kernel_exact(&x, &y);
            let rhs = s0.kernel_exact(&x, &y) + s1.kernel_exact(&x, &y);
            assert!((lhs - rhs).abs() < 1e-13, "additivity violated: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn kernel_symmetric_and_bounded() {
        let spec = KernelSpec::new(vec![
            SmComponent::isotropic(0.8, 0.5, 3.0, 1),
            SmComponent::isotropic(0.5, 2.0, 0.0, 1),
        ])
        .unwrap();
        let mut rng = crate::testrng(11);
        let cap = spec.total_weight();
        for _ in 0..50 {
            let x = dvector![crate::unif(&mut rng, -3.0, 3.0)];
            let y = dvector![crate::unif(&mut rng, -3.0, 3.0)];
            let a = spec.kernel_exact(&x, &y);
            let b = spec.kernel_exact(&y, &x);
            assert!((a - b).abs() < 1e-14);
            assert!(a.abs() <= cap + 1e-12);
        }
    }

    #[test]
    fn dataset_rejects_non_finite_and_empty() {
        let bad = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        let y = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert!(matches!(Dataset::new(bad, y.clone()), Err(Error::NonFinite { .. })));
        let empty = DMatrix::<f64>::zeros(0, 1);
        let ey = DMatrix::<f64>::zeros(0, 1);
        assert!(matches!(Dataset::new(empty, ey), Err(Error::EmptyData)));
    }

    #[test]
    fn component_indexing_is_block_wise() {
        // 2 components, 3 columns each
        let idx: Vec<usize> = (0..6).map(|k| component_of(k, 3)).collect();
        assert_eq!(idx, vec![0, 0, 0, 1, 1, 1]);
    }
}
