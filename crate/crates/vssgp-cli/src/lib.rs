//! Harness around the regression library: CSV ingestion, imputation
//! benchmark construction, error metrics, report emission, and the CLI.

pub mod app;
pub mod impute;
pub mod metrics;
pub mod report;
pub mod table;

pub use app::{parse_components, run_cli};
pub use impute::{make_imputation_task, ImputationTask};
pub use metrics::{rmse, stft_rmse};
pub use report::{to_csv, RunReport, REPORT_HEADER};
pub use table::{load_csv, load_inputs, write_csv, write_predictions};
