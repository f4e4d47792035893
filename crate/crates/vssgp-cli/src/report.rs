//! Benchmark result rows and their CSV form.

use std::fmt::Write as _;

/// One method's result on one imputation task.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub method: String,
    /// Features per kernel component.
    pub num_features: usize,
    pub seed: u64,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub stft_train_rmse: Option<f64>,
    pub stft_test_rmse: Option<f64>,
    pub wall_clock_s: f64,
    /// Echo of the configuration that produced the row.
    pub config: String,
}

pub const REPORT_HEADER: &str =
    "method,k,seed,train_rmse,test_rmse,stft_train_rmse,stft_test_rmse,wall_clock_s,config";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

pub fn to_csv(rows: &[RunReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},\"{}\"",
            r.method,
            r.num_features,
            r.seed,
            r.train_rmse,
            r.test_rmse,
            opt(r.stft_train_rmse),
            opt(r.stft_test_rmse),
            r.wall_clock_s,
            r.config
        );
    }
    out
}
