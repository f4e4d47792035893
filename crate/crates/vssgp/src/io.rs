//! Versioned model file: a JSON document carrying the kernel, the
//! variational state, and fit metadata. Floating-point numbers are written
//! with 17 significant digits so every f64 round-trips exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KernelSpec, PhaseMode, SmComponent, VariationalState};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub kernel_spec: KernelSpecFile,
    pub variational_state: StateFile,
    pub metadata: Metadata,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSpecFile {
    pub components: Vec<ComponentFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentFile {
    pub weight: f64,
    pub lengthscales: Vec<f64>,
    pub inv_periods: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFile {
    /// Row per basis column.
    pub inducing_inputs: Vec<Vec<f64>>,
    pub freq_means: Vec<Vec<f64>>,
    pub freq_vars: Vec<Vec<f64>>,
    pub phase_mode: PhaseFile,
    /// Outer index: output dimension d.
    pub coeff_means: Vec<Vec<f64>>,
    pub coeff_vars: Vec<Vec<f64>>,
    pub noise_precision: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseFile {
    Variational { lower: Vec<f64>, upper: Vec<f64> },
    Fixed { offsets: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub iterations: usize,
    pub bound_kind: String,
    /// Output scale divided out before fitting (predictions are multiplied
    /// back by it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_scale: Option<f64>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn matrix_cols(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols())
        .map(|c| (0..m.nrows()).map(|r| m[(r, c)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::ModelFile(format!("{what}: no rows")));
    }
    let ncols = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::ModelFile(format!(
                "{what}: row {i} has {} entries, expected {ncols}",
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

fn cols_to_matrix(cols: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let m = rows_to_matrix(cols, what)?;
    Ok(m.transpose())
}

impl ModelFile {
    pub fn from_parts(
        state: &VariationalState,
        spec: &KernelSpec,
        metadata: Metadata,
    ) -> Result<Self> {
        state.validate(spec)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            kernel_spec: KernelSpecFile {
                components: spec
                    .components
                    .iter()
                    .map(|c| ComponentFile {
                        weight: c.weight,
                        lengthscales: c.lengthscales.iter().copied().collect(),
                        inv_periods: c.inv_periods.iter().copied().collect(),
                    })
                    .collect(),
            },
            variational_state: StateFile {
                inducing_inputs: matrix_rows(&state.inducing),
                freq_means: matrix_rows(&state.freq_mean),
                freq_vars: matrix_rows(&state.freq_var),
                phase_mode: match &state.phases {
                    PhaseMode::Variational { lower, upper } => PhaseFile::Variational {
                        lower: lower.iter().copied().collect(),
                        upper: upper.iter().copied().collect(),
                    },
                    PhaseMode::Fixed { offsets } => PhaseFile::Fixed {
                        offsets: offsets.iter().copied().collect(),
                    },
                },
                coeff_means: matrix_cols(&state.coeff_mean),
                coeff_vars: matrix_cols(&state.coeff_var),
                noise_precision: state.noise_precision,
            },
            metadata,
        })
    }

    pub fn into_parts(&self) -> Result<(VariationalState, KernelSpec)> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::ModelFile(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let components = self
            .kernel_spec
            .components
            .iter()
            .map(|c| SmComponent {
                weight: c.weight,
                lengthscales: DVector::from_vec(c.lengthscales.clone()),
                inv_periods: DVector::from_vec(c.inv_periods.clone()),
            })
            .collect();
        let spec = KernelSpec { components };
        let sf = &self.variational_state;
        let phases = match &sf.phase_mode {
            PhaseFile::Variational { lower, upper } => PhaseMode::Variational {
                lower: DVector::from_vec(lower.clone()),
                upper: DVector::from_vec(upper.clone()),
            },
            PhaseFile::Fixed { offsets } => PhaseMode::Fixed {
                offsets: DVector::from_vec(offsets.clone()),
            },
        };
        let state = VariationalState {
            inducing: rows_to_matrix(&sf.inducing_inputs, "inducing_inputs")?,
            freq_mean: rows_to_matrix(&sf.freq_means, "freq_means")?,
            freq_var: rows_to_matrix(&sf.freq_vars, "freq_vars")?,
            phases,
            coeff_mean: cols_to_matrix(&sf.coeff_means, "coeff_means")?,
            coeff_var: cols_to_matrix(&sf.coeff_vars, "coeff_vars")?,
            noise_precision: sf.noise_precision,
        };
        state.validate(&spec)?;
        Ok((state, spec))
    }
}

/// JSON formatter writing every float with 17 significant digits.
struct PreciseFormatter;

impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_json_string(model: &ModelFile) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter);
    model
        .serialize(&mut ser)
        .map_err(|e| Error::ModelFile(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| Error::ModelFile(e.to_string()))
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    let json = to_json_string(model)?;
    let mut f = fs::File::create(path).map_err(|e| Error::ModelFile(format!("{path:?}: {e}")))?;
    f.write_all(json.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::ModelFile(format!("{path:?}: {e}")))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::ModelFile(format!("{path:?}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Error::ModelFile(format!("{path:?}: {e}")))
}
