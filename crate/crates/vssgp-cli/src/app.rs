//! Command-line surface: fit / predict / impute / bench / oracle-check.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vssgp::io::{load_model, save_model, Metadata, ModelFile};
use vssgp::oracle;
use vssgp::{
    bound_and_gradient, elbo_factorised, elbo_optimal, exact_gp, expected_cos_gaussian,
    expected_cos_sq_gaussian, expected_cos_uniform_phase, fit, fit_random_projections, fit_ssgp,
    init_state, pack, solve_optimal_coefficients, unpack, BoundKind, CoefficientSolve, Dataset,
    FeatureMoments, FitConfig, InitOptions, KernelSpec, OptimizerKind, SmComponent,
    VariationalState, EXACT_GP_DEFAULT_CAP,
};

use crate::impute::{make_imputation_task, ImputationTask};
use crate::metrics::{rmse, stft_rmse};
use crate::report::{to_csv, RunReport};
use crate::table::{load_csv, load_inputs, write_predictions};

#[derive(Parser, Debug)]
#[command(
    name = "vssgp",
    about = "Sparse-spectrum GP regression with uncertainty over frequency inputs",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model to a CSV dataset and write a model file.
    Fit(FitArgs),
    /// Predict at the inputs of a CSV file using a fitted model.
    Predict(PredictArgs),
    /// Remove random segments from a series, refit, and report errors.
    Impute(ImputeArgs),
    /// Sweep the number of features per component over an imputation task.
    Bench(BenchArgs),
    /// Run the Monte Carlo / quadrature / finite-difference check suites.
    OracleCheck(OracleCheckArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundArg {
    Optimal,
    Factorised,
    Stochastic,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerArg {
    Lbfgs,
    Rmsprop,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineArg {
    None,
    Ssgp,
    Rp,
}

#[derive(Args, Debug, Clone)]
pub struct CommonFitArgs {
    /// Features per kernel component (K).
    #[arg(long = "num-features", default_value_t = 10)]
    pub num_features: usize,
    /// Kernel components "l1:p1,l2:p2,...": initial lengthscale and period
    /// per component; period 0 means infinite (pure squared exponential).
    #[arg(long, default_value = "1:0")]
    pub components: String,
    #[arg(long, value_enum, default_value_t = BoundArg::Optimal)]
    pub bound: BoundArg,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Lbfgs)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    /// Mini-batch size for the stochastic bound.
    #[arg(long, default_value_t = 256)]
    pub minibatch: usize,
    /// Master seed; all randomness flows from it through named substreams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial observation noise precision.
    #[arg(long, default_value_t = 10.0)]
    pub tau: f64,
    /// Keep phases fixed at their random draw (default).
    #[arg(long = "fixed-phases", overrides_with = "variational_phases")]
    pub fixed_phases: bool,
    /// Place a uniform variational posterior over the phases instead.
    #[arg(long = "variational-phases")]
    pub variational_phases: bool,
    #[arg(long, value_enum, default_value_t = BaselineArg::None)]
    pub baseline: BaselineArg,
    /// Divide outputs by their standard deviation before fitting; predictions
    /// are mapped back automatically.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "model-out")]
    pub model_out: PathBuf,
    #[command(flatten)]
    pub common: CommonFitArgs,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ImputeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub segments: usize,
    #[arg(long = "seg-length", default_value_t = 20)]
    pub seg_length: usize,
    #[arg(long = "report-out")]
    pub report_out: PathBuf,
    /// Comma-separated methods: vssgp, ssgp, rp, exact.
    #[arg(long, default_value = "vssgp")]
    pub methods: String,
    /// Also report the short-time Fourier magnitude RMSE (1-D outputs only).
    #[arg(long)]
    pub stft: bool,
    #[arg(long = "sample-rate", default_value_t = 16_000.0)]
    pub sample_rate: f64,
    /// Write 0 for wall-clock so reruns are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
    #[command(flatten)]
    pub common: CommonFitArgs,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Values of K to sweep, comma separated.
    #[arg(long = "k-values", default_value = "5,10,20,40")]
    pub k_values: String,
    /// Number of seeds per K (seed, seed+1, ...).
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 5)]
    pub segments: usize,
    #[arg(long = "seg-length", default_value_t = 20)]
    pub seg_length: usize,
    #[arg(long = "report-out")]
    pub report_out: PathBuf,
    #[arg(long, default_value = "vssgp")]
    pub methods: String,
    #[arg(long)]
    pub deterministic: bool,
    #[command(flatten)]
    pub common: CommonFitArgs,
}

#[derive(Args, Debug)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo sample count per check.
    #[arg(long, default_value_t = 200_000)]
    pub samples: usize,
}

/// Entry point used by the binary and by tests; returns the exit code.
pub fn run_cli(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            classify_exit(&err)
        }
    }
}

/// Marker for failures of numerical checks (exit code 2).
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "numerical failure: {}", self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn classify_exit(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<NumericalFailure>().is_some() {
            return 2;
        }
        if let Some(
            vssgp::Error::CholeskyFailure { .. } | vssgp::Error::NonFiniteBound { .. },
        ) = cause.downcast_ref::<vssgp::Error>()
        {
            return 2;
        }
    }
    1
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Impute(args) => cmd_impute(args),
        Command::Bench(args) => cmd_bench(args),
        Command::OracleCheck(args) => cmd_oracle_check(args),
    }
}

/// Parse the "l:p" component grammar into an isotropic spectral mixture.
pub fn parse_components(text: &str, input_dim: usize) -> Result<KernelSpec> {
    let mut components = Vec::new();
    for (i, part) in text.split(',').enumerate() {
        let (l, p) = part
            .split_once(':')
            .ok_or_else(|| anyhow!("component {i}: expected \"lengthscale:period\", got {part:?}"))?;
        let lengthscale: f64 = l
            .trim()
            .parse()
            .map_err(|_| anyhow!("component {i}: bad lengthscale {l:?}"))?;
        let period: f64 = p
            .trim()
            .parse()
            .map_err(|_| anyhow!("component {i}: bad period {p:?}"))?;
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            bail!("component {i}: lengthscale must be positive");
        }
        if !(period.is_finite() && period >= 0.0) {
            bail!("component {i}: period must be non-negative (0 = infinite)");
        }
        let inv_period = if period == 0.0 { 0.0 } else { 1.0 / period };
        components.push(SmComponent::isotropic(1.0, lengthscale, inv_period, input_dim));
    }
    Ok(KernelSpec::new(components)?)
}

fn pooled_std(y: &DMatrix<f64>) -> f64 {
    let n = (y.nrows() * y.ncols()) as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt().max(1e-12)
}

struct Fitted {
    state: VariationalState,
    spec: KernelSpec,
    solve: Option<CoefficientSolve>,
    iterations: usize,
    bound_name: String,
}

impl CommonFitArgs {
    fn bound_kind(&self, n: usize) -> Result<BoundKind> {
        Ok(match self.bound {
            BoundArg::Optimal => BoundKind::OptimalCoefficients,
            BoundArg::Factorised => BoundKind::Factorised,
            BoundArg::Stochastic => BoundKind::Stochastic {
                batch_size: self.minibatch.min(n),
                seed: self.seed,
            },
        })
    }

    fn fit_config(&self, n: usize) -> Result<FitConfig> {
        let bound = self.bound_kind(n)?;
        let optimizer = match (self.bound, self.optimizer) {
            (BoundArg::Stochastic, OptimizerArg::Rmsprop) => OptimizerKind::AdaptiveSgd,
            (BoundArg::Stochastic, OptimizerArg::Lbfgs) => {
                bail!("the stochastic bound is trained with --optimizer rmsprop")
            }
            (_, OptimizerArg::Lbfgs) => OptimizerKind::QuasiNewton,
            (_, OptimizerArg::Rmsprop) => {
                bail!("--optimizer rmsprop requires --bound stochastic")
            }
        };
        Ok(FitConfig {
            bound,
            optimizer,
            max_iters: self.iters,
            seed: self.seed,
            ..FitConfig::default()
        })
    }

    fn init_options(&self) -> InitOptions {
        InitOptions {
            tau: self.tau,
            variational_phases: self.variational_phases,
            ..InitOptions::default()
        }
    }

    fn echo(&self, extra: &str) -> String {
        let phases = if self.variational_phases { "variational" } else { "fixed" };
        format!(
            "components={};bound={:?};optimizer={:?};iters={};minibatch={};tau={};phases={};standardize={}{}",
            self.components,
            self.bound,
            self.optimizer,
            self.iters,
            self.minibatch,
            self.tau,
            phases,
            self.standardize,
            extra
        )
    }
}

/// Fit the configured model (or baseline) on `data`, which must already be
/// on the training scale.
fn fit_on(data: &Dataset, common: &CommonFitArgs, method: BaselineArg) -> Result<Fitted> {
    let spec = parse_components(&common.components, data.input_dim())?;
    let k = common.num_features;
    let config = common.fit_config(data.num_points())?;
    let opts = common.init_options();
    let (state, spec_out, trace, bound_name) = match method {
        BaselineArg::None => {
            let state0 = init_state(data, &spec, k, &opts, common.seed)?;
            let (s, sp, tr) = fit(data, &state0, &spec, &config)?;
            (s, sp, tr, config.bound.name().to_string())
        }
        BaselineArg::Ssgp => {
            let (s, sp, tr) = fit_ssgp(data, &spec, k, &opts, &config)?;
            (s, sp, tr, "ssgp".to_string())
        }
        BaselineArg::Rp => {
            let (s, sp, tr, _solve) =
                fit_random_projections(data, &spec, k, &opts, &config, common.iters > 0)?;
            (s, sp, tr, "rp".to_string())
        }
    };
    // for objectives that profile the coefficients out, materialise the
    // closed-form posterior so the state is self-contained
    let uses_solve = matches!(method, BaselineArg::Ssgp | BaselineArg::Rp)
        || common.bound == BoundArg::Optimal;
    let (state, solve) = if uses_solve {
        let moments = FeatureMoments::compute(data.inputs(), &state, &spec_out);
        let solve = solve_optimal_coefficients(&moments, data.outputs(), state.noise_precision)?;
        let lk = state.num_columns();
        let d = data.output_dim();
        let mut state = state;
        state.coeff_mean = solve.mean.clone();
        state.coeff_var = DMatrix::from_fn(lk, d, |kk, _| {
            (solve.sigma_hat[(kk, kk)] / state.noise_precision).max(1e-300)
        });
        (state, Some(solve))
    } else {
        (state, None)
    };
    Ok(Fitted {
        state,
        spec: spec_out,
        solve,
        iterations: trace.iterations.len(),
        bound_name,
    })
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let raw = load_csv(&args.data)?;
    let y_scale = if args.common.standardize { pooled_std(raw.outputs()) } else { 1.0 };
    let data = Dataset::new(raw.inputs().clone(), raw.outputs() / y_scale)?;
    let fitted = fit_on(&data, &args.common, args.common.baseline)?;
    let meta = Metadata {
        seed: args.common.seed,
        iterations: fitted.iterations,
        bound_kind: fitted.bound_name.clone(),
        y_scale: args.common.standardize.then_some(y_scale),
    };
    let model = ModelFile::from_parts(&fitted.state, &fitted.spec, meta)?;
    save_model(&args.model_out, &model)?;
    let final_bound = match args.common.baseline {
        BaselineArg::None if args.common.bound == BoundArg::Factorised => {
            elbo_factorised(&data, &fitted.state, &fitted.spec)?
        }
        BaselineArg::None if args.common.bound == BoundArg::Stochastic => {
            elbo_factorised(&data, &fitted.state, &fitted.spec)?
        }
        _ => elbo_optimal(&data, &fitted.state, &fitted.spec, false)?,
    };
    println!(
        "fit: {} iterations, bound {:.6}, model written to {}",
        fitted.iterations,
        final_bound,
        args.model_out.display()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let y_scale = model.metadata.y_scale.unwrap_or(1.0);
    let (state, spec) = model.into_parts()?;
    let inputs = load_inputs(&args.data)?;
    let preds = vssgp::predict_batch(&inputs, &state, &spec, None)?;
    let d = state.output_dim();
    let means = DMatrix::from_fn(inputs.nrows(), d, |r, c| preds[r].mean[c] * y_scale);
    let stds = DMatrix::from_fn(inputs.nrows(), d, |r, c| preds[r].std()[c] * y_scale);
    write_predictions(&args.out, &inputs, &means, &stds)?;
    println!("predict: {} rows written to {}", inputs.nrows(), args.out.display());
    Ok(())
}

fn parse_methods(text: &str) -> Result<Vec<String>> {
    let methods: Vec<String> = text
        .split(',')
        .map(|m| m.trim().to_lowercase())
        .filter(|m| !m.is_empty())
        .collect();
    if methods.is_empty() {
        bail!("no methods given");
    }
    for m in &methods {
        if !matches!(m.as_str(), "vssgp" | "ssgp" | "rp" | "exact") {
            bail!("unknown method {m:?} (expected vssgp, ssgp, rp, exact)");
        }
    }
    Ok(methods)
}

/// Predictive means at every row of `inputs`, on the training scale.
fn full_series_means(
    fitted: &Fitted,
    inputs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let preds = vssgp::predict_batch(inputs, &fitted.state, &fitted.spec, fitted.solve.as_ref())?;
    let d = fitted.state.output_dim();
    Ok(DMatrix::from_fn(inputs.nrows(), d, |r, c| preds[r].mean[c]))
}

fn gather(values: &DMatrix<f64>, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * values.ncols());
    for &r in rows {
        for c in 0..values.ncols() {
            out.push(values[(r, c)]);
        }
    }
    out
}

/// Run one method on one imputation task and report its errors.
#[allow(clippy::too_many_arguments)]
fn run_method(
    method: &str,
    raw: &Dataset,
    task: &ImputationTask,
    common: &CommonFitArgs,
    stft: bool,
    sample_rate: f64,
    deterministic: bool,
    extra_echo: &str,
) -> Result<RunReport> {
    let t0 = Instant::now();
    let train_rows = task.train_indices();
    let test_rows = task.test_indices();
    let train_raw = raw.select_rows(&train_rows)?;
    let y_scale = if common.standardize { pooled_std(train_raw.outputs()) } else { 1.0 };
    let train = Dataset::new(train_raw.inputs().clone(), train_raw.outputs() / y_scale)?;

    let means_scaled = match method {
        "vssgp" => full_series_means(&fit_on(&train, common, BaselineArg::None)?, raw.inputs())?,
        "ssgp" => full_series_means(&fit_on(&train, common, BaselineArg::Ssgp)?, raw.inputs())?,
        "rp" => full_series_means(&fit_on(&train, common, BaselineArg::Rp)?, raw.inputs())?,
        "exact" => {
            let spec = parse_components(&common.components, raw.input_dim())?;
            let (_, predictor) = exact_gp(&train, &spec, common.tau, EXACT_GP_DEFAULT_CAP)?;
            let d = raw.output_dim();
            let mut means = DMatrix::zeros(raw.num_points(), d);
            for r in 0..raw.num_points() {
                let x = DVector::from_fn(raw.input_dim(), |q, _| raw.inputs()[(r, q)]);
                let (m, _) = predictor.predict(&x);
                for c in 0..d {
                    means[(r, c)] = m[c];
                }
            }
            means
        }
        other => bail!("unknown method {other:?}"),
    };
    let means = means_scaled * y_scale;

    let train_rmse = rmse(&gather(&means, &train_rows), &gather(raw.outputs(), &train_rows))?;
    let test_rmse = if test_rows.is_empty() {
        0.0
    } else {
        rmse(&gather(&means, &test_rows), &gather(raw.outputs(), &test_rows))?
    };

    let (stft_train_rmse, stft_test_rmse) = if stft {
        if raw.output_dim() != 1 {
            bail!("--stft requires a single output column");
        }
        let truth: Vec<f64> = (0..raw.num_points()).map(|r| raw.outputs()[(r, 0)]).collect();
        let mut recon_train = truth.clone();
        for &r in &train_rows {
            recon_train[r] = means[(r, 0)];
        }
        let mut recon_test = truth.clone();
        for &r in &test_rows {
            recon_test[r] = means[(r, 0)];
        }
        (
            Some(stft_rmse(&recon_train, &truth, sample_rate)?),
            Some(stft_rmse(&recon_test, &truth, sample_rate)?),
        )
    } else {
        (None, None)
    };

    Ok(RunReport {
        method: method.to_string(),
        num_features: common.num_features,
        seed: common.seed,
        train_rmse,
        test_rmse,
        stft_train_rmse,
        stft_test_rmse,
        wall_clock_s: if deterministic { 0.0 } else { t0.elapsed().as_secs_f64() },
        config: common.echo(extra_echo),
    })
}

fn cmd_impute(args: ImputeArgs) -> Result<()> {
    let raw = load_csv(&args.data)?;
    let task = make_imputation_task(&raw, args.segments, args.seg_length, args.common.seed)?;
    let methods = parse_methods(&args.methods)?;
    let extra = format!(";segments={};seg_length={}", args.segments, args.seg_length);
    let mut rows = Vec::new();
    for m in &methods {
        rows.push(run_method(
            m,
            &raw,
            &task,
            &args.common,
            args.stft,
            args.sample_rate,
            args.deterministic,
            &extra,
        )?);
    }
    let csv = to_csv(&rows);
    std::fs::write(&args.report_out, &csv)
        .with_context(|| format!("{}", args.report_out.display()))?;
    print!("{csv}");
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let raw = load_csv(&args.data)?;
    let methods = parse_methods(&args.methods)?;
    let k_values: Vec<usize> = args
        .k_values
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| anyhow!("bad K value {t:?}")))
        .collect::<Result<_>>()?;
    if k_values.is_empty() || args.seeds == 0 {
        bail!("need at least one K value and one seed");
    }
    let extra = format!(";segments={};seg_length={}", args.segments, args.seg_length);
    let mut rows = Vec::new();
    for &k in &k_values {
        for s in 0..args.seeds {
            let seed = args.common.seed + s;
            let common = CommonFitArgs {
                num_features: k,
                seed,
                ..args.common.clone()
            };
            let task = make_imputation_task(&raw, args.segments, args.seg_length, seed)?;
            for m in &methods {
                rows.push(run_method(
                    m,
                    &raw,
                    &task,
                    &common,
                    false,
                    16_000.0,
                    args.deterministic,
                    &extra,
                )?);
            }
        }
    }
    let csv = to_csv(&rows);
    std::fs::write(&args.report_out, &csv)
        .with_context(|| format!("{}", args.report_out.display()))?;
    println!("bench: {} rows written to {}", rows.len(), args.report_out.display());
    Ok(())
}

fn cmd_oracle_check(args: OracleCheckArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut all_ok = true;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("oracle-check {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    // expected cosine under a Gaussian vs Monte Carlo
    let mut worst = 0.0f64;
    let mut ok = true;
    for i in 0..20 {
        let q = 1 + (i % 3);
        let mu = DVector::from_fn(q, |_, _| rng.gen_range(-2.0..2.0));
        let var = DVector::from_fn(q, |_, _| rng.gen_range(0.0..2.0));
        let x = DVector::from_fn(q, |_, _| rng.gen_range(-2.0..2.0));
        let b = rng.gen_range(0.0..std::f64::consts::TAU);
        let got = expected_cos_gaussian(&mu, &var, &x, b);
        let (mc, se) = oracle::mc_expected_cos(&mu, &var, &x, b, args.samples, args.seed + i as u64);
        let z = (got - mc).abs() / se.max(1e-12);
        worst = worst.max(z);
        ok &= z < 4.0;
    }
    report("expected-cos-gaussian", ok, format!("worst z = {worst:.2}"));

    let mut worst = 0.0f64;
    let mut ok = true;
    for i in 0..20 {
        let mu = DVector::from_fn(1, |_, _| rng.gen_range(-2.0..2.0));
        let var = DVector::from_fn(1, |_, _| rng.gen_range(0.0..2.0));
        let x = DVector::from_fn(1, |_, _| rng.gen_range(-2.0..2.0));
        let b = rng.gen_range(0.0..std::f64::consts::TAU);
        let got = expected_cos_sq_gaussian(&mu, &var, &x, b);
        let (mc, se) =
            oracle::mc_expected_cos_sq(&mu, &var, &x, b, args.samples, args.seed + 100 + i as u64);
        let z = (got - mc).abs() / se.max(1e-12);
        worst = worst.max(z);
        ok &= z < 4.0;
    }
    report("expected-cos-squared-gaussian", ok, format!("worst z = {worst:.2}"));

    // uniform-phase expectation vs adaptive quadrature
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let a = rng.gen_range(0.0..6.0);
        let b = rng.gen_range(a..std::f64::consts::TAU);
        let c = rng.gen_range(-5.0..5.0);
        let got = expected_cos_uniform_phase(c, a, b);
        let want = oracle::adaptive_simpson(&|t: f64| (c + t).cos(), a, b, 1e-13) / (b - a);
        worst = worst.max((got - want).abs());
    }
    report("expected-cos-uniform-phase", worst < 1e-10, format!("worst |err| = {worst:.2e}"));

    // product-of-cosines phase integral identity
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = rng.gen_range(-6.0..6.0);
        let y = rng.gen_range(-6.0..6.0);
        let integral = oracle::adaptive_simpson(
            &|b: f64| 2.0 * (x + b).cos() * (y + b).cos(),
            0.0,
            2.0 * std::f64::consts::PI,
            1e-13,
        ) / (2.0 * std::f64::consts::PI);
        worst = worst.max((integral - (x - y).cos()).abs());
    }
    report("phase-product-identity", worst < 1e-10, format!("worst |err| = {worst:.2e}"));

    // analytic gradients vs central differences
    let mut worst = 0.0f64;
    let mut ok = true;
    for (i, bound) in [BoundKind::Factorised, BoundKind::OptimalCoefficients]
        .into_iter()
        .enumerate()
    {
        let (state, spec) = oracle::random_instance(args.seed + 7 + i as u64, 2, 2, 2, 2, i == 0);
        let data = oracle::random_dataset(args.seed + 13 + i as u64, 8, 2, 2);
        let config = FitConfig { bound: bound.clone(), ..FitConfig::default() };
        let pv = pack(&state, &spec)?;
        let bv = bound_and_gradient(&pv, &data, &config, None)?;
        let x: Vec<f64> = pv.values.iter().copied().collect();
        let fd = oracle::central_difference_gradient(
            |v: &[f64]| {
                let cand = pv.with_values(DVector::from_column_slice(v));
                let (s, kk) = unpack(&cand)?;
                match bound {
                    BoundKind::Factorised => elbo_factorised(&data, &s, &kk),
                    _ => elbo_optimal(&data, &s, &kk, true),
                }
            },
            &x,
            1e-5,
        )?;
        for (g, f) in bv.gradient.iter().zip(fd.iter()) {
            let rel = (g - f).abs() / (1.0 + g.abs().max(f.abs()));
            worst = worst.max(rel);
            ok &= rel < 1e-4;
        }
    }
    report("gradient-finite-differences", ok, format!("worst rel err = {worst:.2e}"));

    if all_ok {
        Ok(())
    } else {
        Err(anyhow::Error::new(NumericalFailure("oracle checks failed".into())))
    }
}
