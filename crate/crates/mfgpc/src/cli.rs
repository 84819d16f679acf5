//! The `mfgpc` command line.
//!
//! Every command writes machine-readable files (CSV or JSON) that start with
//! provenance comments, prints a short human-readable summary, and writes
//! wall-clock timings to a separate `<out>.timing.csv` so the other outputs
//! stay byte-for-byte reproducible. Exit codes: 0 on full success, 1 when
//! the operation failed or a check did not pass, 2 on usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use mfgpc_core::datagen::{generate_synthetic, SynthesisSpec};
use mfgpc_core::hyperopt::optimize_report;
use mfgpc_core::metrics::{auc_profile, RunRecord};
use mfgpc_core::nalgebra::DMatrix;
use mfgpc_core::oracles::McmcConfig;
use mfgpc_core::{
    rng, sf_optimize, FidelityDataset, FitConfig, Hyperparams, OptConfig, RbfParams, SfDataset,
};
use serde::{Deserialize, Serialize};

use crate::checks::{gradcheck, mcmc_check, PARAMETER_NAMES};
use crate::config::{load_config, merge};
use crate::format::num;
use crate::harness::{
    budget_sweep, method_means, run_benchmark, sensitivity_grid, Axis, BenchmarkDataset, BudgetConfig, Grid,
    Method, PoolSource, Protocol, BUILTIN_METHODS,
};
use crate::io::{
    dataset_checksum, load_any_model, load_dataset, load_model, load_scores, render_predictions,
    save_dataset, save_model, save_sf_model, save_truth, truth_document, write_text, LoadedDataset,
    StoredModel,
};
use crate::provenance::Provenance;

#[derive(Debug, Parser)]
#[command(
    name = "mfgpc",
    version,
    about = "Multi-fidelity Gaussian process classification"
)]
pub struct Cli {
    /// TOML file with one table of defaults per subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-fidelity dataset with a test set and ground truth.
    Generate(GenerateArgs),
    /// Fit hyperparameters and save the model.
    Train(TrainArgs),
    /// Score every row of a dataset file with a saved model.
    Predict(PredictArgs),
    /// Run the benchmark protocol over dataset files.
    Evaluate(EvaluateArgs),
    /// Sweep the split of a labelling budget between the two fidelities.
    Budget(BudgetArgs),
    /// Validation ROC AUC as one hyperparameter moves away from its tuned value.
    Sensitivity(SensitivityArgs),
    /// Compare the analytic hyperparameter gradient with finite differences.
    Gradcheck(GradcheckArgs),
    /// Compare Laplace predictions with MCMC under the same hyperparameters.
    McmcCheck(McmcCheckArgs),
}

/// Settings of the hyperparameter search shared by training commands.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OptArgs {
    /// Optimizer restarts; the first starts from the default guess.
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 50)]
    pub max_newton_iters: usize,
    /// Newton convergence tolerance on the mode.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Optimizer steps per restart.
    #[arg(long, default_value_t = 200)]
    pub max_steps: usize,
}

impl OptArgs {
    fn config(&self, seed: u64) -> OptConfig {
        OptConfig {
            restarts: self.restarts,
            max_steps: self.max_steps,
            seed,
            fit: FitConfig {
                tol: self.tol,
                max_iters: self.max_newton_iters,
                ..FitConfig::default()
            },
            ..OptConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 450)]
    pub n_low: usize,
    #[arg(long, default_value_t = 375)]
    pub n_high: usize,
    /// Size of the separate high-fidelity test set.
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,
    /// Target disagreement rate between the two label sources, in [0, 0.5).
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training-pool file; the test set and ground truth go next to it as
    /// `<stem>.test.csv` and `<stem>.truth.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Log-amplitude of the low-fidelity kernel.
    #[arg(long, default_value_t = 0.0)]
    pub s_l: f64,
    /// Length scale of the low-fidelity kernel [default: 0.12 sqrt(dim)].
    #[arg(long)]
    pub sigma_l: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub s_d: f64,
    #[arg(long)]
    pub sigma_d: Option<f64>,
    /// Use this rho instead of matching the noise level.
    #[arg(long, allow_hyphen_values = true)]
    pub fixed_rho: Option<f64>,
    /// Draw labels as Bernoulli(sigmoid(f)) instead of thresholding.
    #[arg(long)]
    pub bernoulli_labels: bool,
    /// Uniform probe points used to measure the disagreement rate.
    #[arg(long, default_value_t = 4096)]
    pub probe_count: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// mf-gpc, sf-gpc-hf or sf-gpc-concat.
    #[arg(long, default_value = "mf-gpc")]
    pub method: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub opt: OptArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model file (JSON); the report goes to `<stem>.report.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Identifier written to the `dataset_id` column [default: file stem].
    #[arg(long)]
    pub dataset_id: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Dataset files; each file stem is its dataset id.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Methods to run [default: every registered method].
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// External scores as NAME=FILE with columns dataset_id,point_id,score.
    #[arg(long)]
    pub scores: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    /// High-fidelity training points per run.
    #[arg(long, default_value_t = 75)]
    pub n_high: usize,
    /// Low-fidelity training points per high-fidelity one.
    #[arg(long, default_value_t = 3)]
    pub lf_ratio: usize,
    /// Cap on held-out test points [default: all remaining high-fidelity points].
    #[arg(long)]
    pub n_test: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub opt: OptArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Run table; `<stem>.summary.csv` and `<stem>.profile.csv` go next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BudgetArgs {
    /// Pool file to subsample instead of generating pools; low-fidelity
    /// labels are flipped at each noise level.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 800)]
    pub pool_low: usize,
    #[arg(long, default_value_t = 100)]
    pub pool_high: usize,
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.3, 0.4])]
    pub noise_levels: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
    pub hf_shares: Vec<f64>,
    /// Cost of a low-fidelity label as a fraction of a high-fidelity one.
    #[arg(long, value_delimiter = ',', default_values_t = [0.125, 0.25, 0.5])]
    pub lf_costs: Vec<f64>,
    /// Budget in high-fidelity labels.
    #[arg(long, default_value_t = 100.0)]
    pub budget: f64,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub opt: OptArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Cell table; per-run rows go to `<stem>.runs.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SensitivityArgs {
    /// Tuned multi-fidelity model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Validation file; its high-fidelity rows are scored.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// rho, theta-l or theta-d.
    #[arg(long, default_value = "rho")]
    pub axis: String,
    /// rho values [default: -2 to 2 in steps of 0.25].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub values: Vec<f64>,
    /// Log-amplitudes for the kernel axes.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub amplitudes: Vec<f64>,
    /// Length scales for the kernel axes.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// Dataset to check on [default: a generated instance].
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub n_low: usize,
    #[arg(long, default_value_t = 10)]
    pub n_high: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// rho of the checked point [default: drawn from the seed in [-2, 2]].
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// Central-difference step in (rho, s, ln sigma) coordinates.
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    /// Largest relative error that passes.
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct McmcCheckArgs {
    /// Saved multi-fidelity model; trained from --data when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Test file; its high-fidelity rows are scored.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub opt: OptArgs,
    /// Chain length including burn-in.
    #[arg(long, default_value_t = 4000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 2)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.03)]
    pub max_auc_gap: f64,
    #[arg(long, default_value_t = 0.95)]
    pub min_correlation: f64,
    /// Per-point table; metrics go to `<stem>.summary.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Bad invocation; reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A check ran but did not pass; reported with exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> anyhow::Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| usage(format!("missing required option --{flag}")))
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(matches: &clap::ArgMatches) -> anyhow::Result<()> {
    let cli = Cli::from_arg_matches(matches).map_err(|e| usage(e.to_string()))?;
    let (name, sub) = matches.subcommand().ok_or_else(|| usage("no subcommand given"))?;
    let config = cli.config.as_deref().map(load_config).transpose()?;
    let section = config.as_ref().and_then(|c| c.get(name));
    if let Some(c) = &config {
        for key in c.keys() {
            if !Cli::command().get_subcommands().any(|s| s.get_name() == key) {
                return Err(usage(format!("config has a table for unknown command {key:?}")));
            }
        }
    }
    let m = |e: anyhow::Error| usage(e.to_string());
    match cli.command {
        Command::Generate(a) => cmd_generate(merge(a, sub, section).map_err(m)?),
        Command::Train(a) => cmd_train(merge(a, sub, section).map_err(m)?),
        Command::Predict(a) => cmd_predict(merge(a, sub, section).map_err(m)?),
        Command::Evaluate(a) => cmd_evaluate(merge(a, sub, section).map_err(m)?),
        Command::Budget(a) => cmd_budget(merge(a, sub, section).map_err(m)?),
        Command::Sensitivity(a) => cmd_sensitivity(merge(a, sub, section).map_err(m)?),
        Command::Gradcheck(a) => cmd_gradcheck(merge(a, sub, section).map_err(m)?),
        Command::McmcCheck(a) => cmd_mcmc_check(merge(a, sub, section).map_err(m)?),
    }
}

fn provenance<A: Serialize>(command: &str, args: &A, seed: Option<u64>) -> Provenance {
    let flags = serde_json::to_value(args).unwrap_or(serde_json::Value::Null);
    Provenance::new(command, flags, seed)
}

/// `dir/stem<suffix>` for an output path `dir/stem.ext`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn file_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Comment lines followed by a CSV table.
fn table_text(comments: &[String], header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?;
    let mut out = String::new();
    for c in comments {
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(&body);
    Ok(out)
}

fn write_table(path: &Path, prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    write_text(path, &table_text(&prov.comment_lines(), header, rows)?)?;
    Ok(())
}

/// Wall-clock timings, kept out of the reproducible outputs.
struct Timings {
    rows: Vec<Vec<String>>,
}

impl Timings {
    fn new() -> Self {
        Self { rows: Vec::new() }
    }

    fn record(&mut self, task: impl Into<String>, elapsed: Duration) {
        self.rows
            .push(vec![task.into(), format!("{:.6}", elapsed.as_secs_f64())]);
    }

    fn time<T>(&mut self, task: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(task, start.elapsed());
        out
    }

    fn write(&self, out: &Path, prov: &Provenance) -> anyhow::Result<()> {
        write_table(
            &sibling(out, ".timing.csv"),
            prov,
            &["task", "wall_time_s"],
            &self.rows,
        )
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn load(path: &Path) -> anyhow::Result<LoadedDataset> {
    Ok(load_dataset(path)?)
}

/// High-fidelity rows of a file as an evaluation set, with their row ids.
fn high_rows_of(path: &Path) -> anyhow::Result<(SfDataset, Vec<usize>)> {
    let loaded = load(path)?;
    if loaded.data.n_high() == 0 {
        bail!("{} has no high-fidelity rows to evaluate on", path.display());
    }
    let d = SfDataset::from_high(&loaded.data);
    Ok((d, loaded.high_rows))
}

fn cmd_generate(a: GenerateArgs) -> anyhow::Result<()> {
    let out = required(&a.out, "out")?.clone();
    let prov = provenance("generate", &a, Some(a.seed));
    let mut spec = SynthesisSpec::new(a.dim, a.n_low, a.n_high, a.n_test, a.noise, a.seed);
    let default_sigma = spec.kernel_l.sigma();
    spec.kernel_l = RbfParams::new(a.s_l, a.sigma_l.unwrap_or(default_sigma))?;
    spec.kernel_d = RbfParams::new(a.s_d, a.sigma_d.unwrap_or(default_sigma))?;
    spec.fixed_rho = a.fixed_rho;
    spec.bernoulli_labels = a.bernoulli_labels;
    spec.probe_count = a.probe_count;
    spec.validate().map_err(|e| usage(e.to_string()))?;

    let mut timings = Timings::new();
    let problem = timings.time("generate", || generate_synthetic(&spec))?;
    let truth = &problem.truth;
    let test = FidelityDataset::high_only(problem.test.x.clone(), problem.test.y.clone())?;
    let meta = |role: &str| {
        let mut c = prov.comment_lines();
        c.push(format!("# role: {role}"));
        c.push(format!("# noise_level: {}", num(a.noise)));
        c.push(format!("# rho: {}", num(truth.rho)));
        c.push(format!("# disagreement: {}", num(truth.disagreement)));
        c
    };
    save_dataset(&problem.train, &out, &meta("train"))?;
    let test_path = sibling(&out, ".test.csv");
    save_dataset(&test, &test_path, &meta("test"))?;
    let truth_path = sibling(&out, ".truth.json");
    let doc = truth_document(
        &spec,
        truth,
        dataset_checksum(&problem.train),
        dataset_checksum(&test),
        prov.clone(),
    );
    save_truth(&doc, &truth_path)?;
    timings.write(&out, &prov)?;

    println!(
        "generated {} low / {} high training points and {} test points in {} dimensions",
        a.n_low, a.n_high, a.n_test, a.dim
    );
    println!(
        "rho = {:.6}, measured disagreement = {:.4} (target {:.4}, {} draw(s))",
        truth.rho, truth.disagreement, truth.target, truth.attempts
    );
    println!(
        "wrote {}, {}, {}",
        out.display(),
        test_path.display(),
        truth_path.display()
    );
    Ok(())
}

fn hyper_fields(h: &Hyperparams) -> [f64; 5] {
    [
        h.rho,
        h.theta_l.s,
        h.theta_l.sigma(),
        h.theta_d.s,
        h.theta_d.sigma(),
    ]
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let data_path = required(&a.data, "data")?.clone();
    let out = required(&a.out, "out")?.clone();
    if Method::builtin(&a.method).is_none() {
        return Err(usage(format!(
            "unknown method {:?}; registered methods: {}",
            a.method,
            BUILTIN_METHODS.join(", ")
        )));
    }
    let prov = provenance("train", &a, Some(a.seed));
    let opt = a.opt.config(a.seed);
    opt.validate().map_err(|e| usage(e.to_string()))?;
    let data = load(&data_path)?.data;
    let mut timings = Timings::new();
    let mut report: Vec<Vec<String>> = Vec::new();
    let mut kv = |k: &str, v: String| report.push(vec![k.to_string(), v]);

    if a.method == "mf-gpc" {
        data.validate_for_training()?;
        let outcome = timings
            .time("optimize", || optimize_report(&data, &opt))
            .context("hyperparameter optimization failed")?;
        let model = &outcome.model;
        save_model(model, prov.clone(), &out)?;
        let h = model.hyper();
        kv("method", a.method.clone());
        kv("log_marginal", num(model.log_marginal()));
        for (name, v) in ["rho", "s_l", "sigma_l", "s_d", "sigma_d"]
            .iter()
            .zip(hyper_fields(h))
        {
            kv(name, num(v));
        }
        kv("newton_iterations", model.newton_iters().to_string());
        kv("newton_converged", model.is_converged().to_string());
        kv("best_restart", outcome.best_restart.to_string());
        let failed = outcome.restarts.iter().filter(|r| r.result.is_err()).count();
        kv("restarts_failed", failed.to_string());

        let rows: Vec<Vec<String>> = outcome
            .restarts
            .iter()
            .map(|r| {
                let init = hyper_fields(&r.initial).map(num);
                let mut row = vec![r.index.to_string()];
                row.extend(init);
                row.push(opt_num(r.initial_log_marginal));
                match &r.result {
                    Ok(res) => {
                        row.push("ok".into());
                        row.push(num(res.log_marginal));
                        row.extend(hyper_fields(&res.hyper).map(num));
                        row.push(num(res.grad_norm));
                        row.push(res.history.len().to_string());
                        row.push(res.evaluations.to_string());
                        row.push(format!("{:?}", res.termination));
                        row.push(String::new());
                    }
                    Err(e) => {
                        row.push("failed".into());
                        row.extend(std::iter::repeat_n(String::new(), 10));
                        row.push(e.clone());
                    }
                }
                row
            })
            .collect();
        write_table(
            &sibling(&out, ".restarts.csv"),
            &prov,
            &[
                "restart",
                "init_rho",
                "init_s_l",
                "init_sigma_l",
                "init_s_d",
                "init_sigma_d",
                "init_log_marginal",
                "status",
                "log_marginal",
                "rho",
                "s_l",
                "sigma_l",
                "s_d",
                "sigma_d",
                "grad_norm",
                "steps",
                "evaluations",
                "termination",
                "message",
            ],
            &rows,
        )?;
        println!(
            "mf-gpc: log marginal likelihood {:.6} (restart {} of {}, {} failed)",
            model.log_marginal(),
            outcome.best_restart,
            outcome.restarts.len(),
            failed
        );
        println!(
            "rho = {:.6}, theta_l = (s {:.6}, sigma {:.6}), theta_d = (s {:.6}, sigma {:.6})",
            h.rho,
            h.theta_l.s,
            h.theta_l.sigma(),
            h.theta_d.s,
            h.theta_d.sigma()
        );
    } else {
        let sf = if a.method == "sf-gpc-hf" {
            SfDataset::from_high(&data)
        } else {
            SfDataset::concatenated(&data)
        };
        let model = timings
            .time("optimize", || sf_optimize(&sf, &opt))
            .context("hyperparameter optimization failed")?;
        save_sf_model(&model, prov.clone(), &out)?;
        let p = model.params().expect("single RBF kernel");
        kv("method", a.method.clone());
        kv("log_marginal", num(model.log_marginal()));
        kv("s", num(p.s));
        kv("sigma", num(p.sigma()));
        kv("newton_iterations", model.state().iterations().to_string());
        kv("newton_converged", model.is_converged().to_string());
        println!(
            "{}: log marginal likelihood {:.6}, s = {:.6}, sigma = {:.6}",
            a.method,
            model.log_marginal(),
            p.s,
            p.sigma()
        );
    }
    write_table(&sibling(&out, ".report.csv"), &prov, &["key", "value"], &report)?;
    timings.write(&out, &prov)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> anyhow::Result<()> {
    let model_path = required(&a.model, "model")?.clone();
    let data_path = required(&a.data, "data")?.clone();
    let out = required(&a.out, "out")?.clone();
    let prov = provenance("predict", &a, None);
    let mut timings = Timings::new();
    let model: StoredModel = load_any_model(&model_path)?;
    let loaded = load(&data_path)?;
    let d = &loaded.data;
    if d.dim() != model.dim() {
        bail!(
            "{} has {} features but the model was trained on {}",
            data_path.display(),
            d.dim(),
            model.dim()
        );
    }
    // Rows back in file order.
    let n = d.n_low() + d.n_high();
    let mut x = DMatrix::zeros(n, d.dim());
    for (i, &r) in loaded.low_rows.iter().enumerate() {
        x.row_mut(r).copy_from(&d.x_low.row(i));
    }
    for (i, &r) in loaded.high_rows.iter().enumerate() {
        x.row_mut(r).copy_from(&d.x_high.row(i));
    }
    let scores = timings.time("predict", || model.predict(&x))?;
    let id = a.dataset_id.clone().unwrap_or_else(|| file_id(&data_path));
    let ids: Vec<usize> = (0..n).collect();
    write_text(
        &out,
        &render_predictions(&id, &ids, &scores, &prov.comment_lines()),
    )?;
    timings.write(&out, &prov)?;
    let positive = scores.iter().filter(|s| s.label).count();
    println!(
        "predicted {n} rows ({positive} labelled 1), wrote {}",
        out.display()
    );
    Ok(())
}

fn status_cells<T>(r: &Result<T, String>) -> (String, String) {
    match r {
        Ok(_) => ("ok".into(), String::new()),
        Err(e) => ("failed".into(), e.clone()),
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let out = required(&a.out, "out")?.clone();
    if a.data.is_empty() {
        return Err(usage("missing required option --data"));
    }
    let prov = provenance("evaluate", &a, Some(a.seed));
    let opt = a.opt.config(a.seed);
    opt.validate().map_err(|e| usage(e.to_string()))?;

    let mut registered: Vec<Method> = BUILTIN_METHODS
        .iter()
        .map(|n| Method::builtin(n).expect("builtin"))
        .collect();
    for spec in &a.scores {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--scores expects NAME=FILE, got {spec:?}")))?;
        if registered.iter().any(|m| m.name() == name) {
            return Err(usage(format!("method {name:?} registered twice")));
        }
        let scores = load_scores(Path::new(path))?;
        registered.push(Method::External {
            name: name.to_string(),
            scores,
        });
    }
    let names: Vec<String> = registered.iter().map(|m| m.name().to_string()).collect();
    let methods: Vec<Method> = if a.methods.is_empty() {
        registered.clone()
    } else {
        a.methods
            .iter()
            .map(|n| {
                registered.iter().find(|m| m.name() == n).cloned().ok_or_else(|| {
                    usage(format!(
                        "unknown method {n:?}; registered methods: {}",
                        names.join(", ")
                    ))
                })
            })
            .collect::<anyhow::Result<_>>()?
    };

    let mut datasets = Vec::new();
    for path in &a.data {
        let id = file_id(path);
        if datasets.iter().any(|d: &BenchmarkDataset| d.id == id) {
            return Err(usage(format!("two datasets share the id {id:?}")));
        }
        datasets.push(BenchmarkDataset::from_loaded(&id, load(path)?));
    }
    let protocol = Protocol {
        n_high: a.n_high,
        lf_ratio: a.lf_ratio,
        runs: a.runs,
        seed: a.seed,
        n_test: a.n_test,
        opt,
    };
    let outcomes = run_benchmark(&datasets, &methods, &protocol, a.jobs);

    let mut timings = Timings::new();
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            timings.record(format!("{}/{}/{}", o.dataset_id, o.method, o.run), o.wall_time);
            let (status, message) = status_cells(&o.result);
            let (auc, nl, nh, noise) = match &o.result {
                Ok(r) => (
                    num(r.roc_auc),
                    r.n_low.to_string(),
                    r.n_high.to_string(),
                    num(r.noise_level),
                ),
                Err(_) => Default::default(),
            };
            vec![
                o.dataset_id.clone(),
                o.method.clone(),
                o.run.to_string(),
                o.seed.to_string(),
                status,
                auc,
                nl,
                nh,
                noise,
                message,
            ]
        })
        .collect();
    write_table(
        &out,
        &prov,
        &[
            "dataset_id",
            "method",
            "run",
            "seed",
            "status",
            "roc_auc",
            "n_low",
            "n_high",
            "noise_level",
            "message",
        ],
        &rows,
    )?;

    let records: Vec<RunRecord> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok().cloned())
        .collect();
    let thresholds: Vec<f64> = (0..=100).map(|i| 0.5 + f64::from(i) / 200.0).collect();
    let profile_rows: Vec<Vec<String>> = auc_profile(&records, &thresholds)
        .iter()
        .flat_map(|c| {
            c.thresholds
                .iter()
                .zip(&c.shares)
                .map(|(t, s)| vec![c.method.clone(), num(*t), num(*s)])
                .collect::<Vec<_>>()
        })
        .collect();
    write_table(
        &sibling(&out, ".profile.csv"),
        &prov,
        &["method", "threshold", "share"],
        &profile_rows,
    )?;

    let means = method_means(&outcomes);
    let summary: Vec<Vec<String>> = methods
        .iter()
        .map(|m| {
            let failed = outcomes
                .iter()
                .filter(|o| o.method == m.name() && o.result.is_err())
                .count();
            match means.iter().find(|(n, ..)| n == m.name()) {
                Some((_, mean, se, ok)) => vec![
                    m.name().to_string(),
                    num(*mean),
                    num(*se),
                    ok.to_string(),
                    failed.to_string(),
                ],
                None => vec![
                    m.name().to_string(),
                    String::new(),
                    String::new(),
                    "0".into(),
                    failed.to_string(),
                ],
            }
        })
        .collect();
    write_table(
        &sibling(&out, ".summary.csv"),
        &prov,
        &["method", "mean_roc_auc", "stderr", "runs_ok", "runs_failed"],
        &summary,
    )?;
    timings.write(&out, &prov)?;

    println!(
        "{:<16} {:>10} {:>10} {:>6} {:>7}",
        "method", "mean AUC", "stderr", "ok", "failed"
    );
    for row in &summary {
        let f = |s: &str| s.parse::<f64>().map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<16} {:>10} {:>10} {:>6} {:>7}",
            row[0],
            f(&row[1]),
            f(&row[2]),
            row[3],
            row[4]
        );
    }
    println!("wrote {}", out.display());
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    if failed > 0 {
        bail!(
            "{failed} of {} runs failed; see the status column",
            outcomes.len()
        );
    }
    Ok(())
}

fn cmd_budget(a: BudgetArgs) -> anyhow::Result<()> {
    let out = required(&a.out, "out")?.clone();
    let prov = provenance("budget", &a, Some(a.seed));
    let opt = a.opt.config(a.seed);
    opt.validate().map_err(|e| usage(e.to_string()))?;
    let source = match &a.data {
        Some(path) => PoolSource::File(BenchmarkDataset::from_loaded(&file_id(path), load(path)?)),
        None => PoolSource::Synthetic {
            dim: a.dim,
            n_low: a.pool_low,
            n_high: a.pool_high,
            n_test: a.n_test,
        },
    };
    let config = BudgetConfig {
        source,
        noise_levels: a.noise_levels.clone(),
        hf_shares: a.hf_shares.clone(),
        lf_cost_fractions: a.lf_costs.clone(),
        runs: a.runs,
        budget: a.budget,
        seed: a.seed,
        opt,
    };
    let sweep = budget_sweep(&config, a.jobs).map_err(usage)?;

    let cost = |c: Option<f64>| opt_num(c);
    let cell_rows: Vec<Vec<String>> = sweep
        .cells
        .iter()
        .map(|c| {
            vec![
                c.method.clone(),
                num(c.noise_level),
                cost(c.lf_cost_fraction),
                num(c.hf_share),
                c.n_low.to_string(),
                c.n_high.to_string(),
                opt_num(c.mean),
                opt_num(c.stderr),
                c.runs_ok.to_string(),
                c.runs_failed.to_string(),
                c.note.clone(),
            ]
        })
        .collect();
    write_table(
        &out,
        &prov,
        &[
            "method",
            "noise_level",
            "lf_cost_fraction",
            "hf_share",
            "n_low",
            "n_high",
            "mean_roc_auc",
            "stderr",
            "runs_ok",
            "runs_failed",
            "note",
        ],
        &cell_rows,
    )?;
    let mut timings = Timings::new();
    let run_rows: Vec<Vec<String>> = sweep
        .runs
        .iter()
        .map(|r| {
            timings.record(
                format!(
                    "{}/{}/{}/{}/{}",
                    r.method,
                    num(r.noise_level),
                    cost(r.lf_cost_fraction),
                    num(r.hf_share),
                    r.run
                ),
                r.wall_time,
            );
            let (status, message) = status_cells(&r.result);
            vec![
                r.method.clone(),
                num(r.noise_level),
                cost(r.lf_cost_fraction),
                num(r.hf_share),
                r.run.to_string(),
                r.seed.to_string(),
                r.n_low.to_string(),
                r.n_high.to_string(),
                status,
                r.result.as_ref().map(|v| num(*v)).unwrap_or_default(),
                message,
            ]
        })
        .collect();
    write_table(
        &sibling(&out, ".runs.csv"),
        &prov,
        &[
            "method",
            "noise_level",
            "lf_cost_fraction",
            "hf_share",
            "run",
            "seed",
            "n_low",
            "n_high",
            "status",
            "roc_auc",
            "message",
        ],
        &run_rows,
    )?;
    timings.write(&out, &prov)?;

    println!(
        "{:<10} {:>6} {:>8} {:>6} {:>6} {:>6} {:>10} {:>8}",
        "method", "noise", "lf cost", "share", "n_low", "n_high", "mean AUC", "stderr"
    );
    for c in &sweep.cells {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<10} {:>6} {:>8} {:>6} {:>6} {:>6} {:>10} {:>8} {}",
            c.method,
            c.noise_level,
            c.lf_cost_fraction.map_or("-".to_string(), |v| v.to_string()),
            c.hf_share,
            c.n_low,
            c.n_high,
            f(c.mean),
            f(c.stderr),
            c.note
        );
    }
    println!("wrote {}", out.display());
    let failed: usize = sweep.cells.iter().map(|c| c.runs_failed).sum();
    if failed > 0 {
        bail!(
            "{failed} runs failed; see {}",
            sibling(&out, ".runs.csv").display()
        );
    }
    Ok(())
}

fn cmd_sensitivity(a: SensitivityArgs) -> anyhow::Result<()> {
    let model_path = required(&a.model, "model")?.clone();
    let data_path = required(&a.data, "data")?.clone();
    let out = required(&a.out, "out")?.clone();
    let axis = match a.axis.as_str() {
        "rho" => Axis::Rho,
        "theta-l" | "theta_l" => Axis::ThetaL,
        "theta-d" | "theta_d" => Axis::ThetaD,
        other => {
            return Err(usage(format!(
                "unknown axis {other:?}; expected rho, theta-l or theta-d"
            )))
        }
    };
    let mut grid = Grid {
        values: a.values.clone(),
        amplitudes: a.amplitudes.clone(),
        sigmas: a.sigmas.clone(),
    };
    if axis == Axis::Rho && grid.values.is_empty() {
        grid.values = (-8..=8).map(|i| f64::from(i) * 0.25).collect();
    }
    if axis != Axis::Rho && grid.amplitudes.is_empty() && grid.sigmas.is_empty() {
        return Err(usage("kernel axes need --amplitudes and/or --sigmas"));
    }
    let prov = provenance("sensitivity", &a, None);
    let model = load_model(&model_path)?;
    let (validation, _) = high_rows_of(&data_path)?;
    let mut timings = Timings::new();
    let result = timings
        .time("grid", || {
            sensitivity_grid(&model, &validation, axis, &grid, a.jobs)
        })
        .map_err(|e| anyhow!(e))?;
    let rows: Vec<Vec<String>> = result
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (status, message) = status_cells(&p.auc);
            let mut row = vec![axis.name().to_string(), i.to_string()];
            row.extend(hyper_fields(&p.hyper).map(num));
            row.push(u8::from(p.is_tuned).to_string());
            row.push(status);
            row.push(p.auc.as_ref().map(|v| num(*v)).unwrap_or_default());
            row.push(message);
            row
        })
        .collect();
    write_table(
        &out,
        &prov,
        &[
            "axis", "point", "rho", "s_l", "sigma_l", "s_d", "sigma_d", "tuned", "status", "roc_auc",
            "message",
        ],
        &rows,
    )?;
    timings.write(&out, &prov)?;
    println!("tuned validation ROC AUC {:.4}", result.tuned_auc);
    for p in &result.points {
        let v = hyper_fields(&p.hyper);
        let shown = match axis {
            Axis::Rho => format!("rho {:>8.4}", v[0]),
            Axis::ThetaL => format!("s_l {:>8.4} sigma_l {:>8.4}", v[1], v[2]),
            Axis::ThetaD => format!("s_d {:>8.4} sigma_d {:>8.4}", v[3], v[4]),
        };
        let auc = p
            .auc
            .as_ref()
            .map_or("missing".to_string(), |v| format!("{v:.4}"));
        println!("{shown}  AUC {auc}{}", if p.is_tuned { "  (tuned)" } else { "" });
    }
    println!("wrote {}", out.display());
    let missing = result.points.iter().filter(|p| p.auc.is_err()).count();
    if missing > 0 {
        bail!("{missing} grid points have no AUC (mode refit failed)");
    }
    Ok(())
}

/// Uniform draw in `[lo, hi)` from a seed and a label.
fn uniform(seed: u64, label: u64, lo: f64, hi: f64) -> f64 {
    let bits = rng::derive(seed, label) >> 11;
    lo + (hi - lo) * (bits as f64 / (1u64 << 53) as f64)
}

fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    let prov = provenance("gradcheck", &a, Some(a.seed));
    let mut timings = Timings::new();
    let data = match &a.data {
        Some(path) => load(path)?.data,
        None => {
            let spec = SynthesisSpec::new(a.dim, a.n_low, a.n_high, 1, 0.2, a.seed);
            spec.validate().map_err(|e| usage(e.to_string()))?;
            timings.time("generate", || generate_synthetic(&spec))?.train
        }
    };
    data.validate_for_training()?;
    let scale = (data.dim() as f64).sqrt();
    let hyper = Hyperparams {
        rho: a.rho.unwrap_or_else(|| uniform(a.seed, 1, -2.0, 2.0)),
        theta_l: RbfParams::new(
            uniform(a.seed, 2, -1.0, 1.5),
            scale * uniform(a.seed, 3, 0.2, 0.8),
        )?,
        theta_d: RbfParams::new(
            uniform(a.seed, 4, -1.0, 1.0),
            scale * uniform(a.seed, 5, 0.2, 0.8),
        )?,
    };
    let check = timings.time("check", || gradcheck(&data, &hyper, a.step))?;
    let rows: Vec<Vec<String>> = (0..5)
        .map(|i| {
            vec![
                PARAMETER_NAMES[i].to_string(),
                num(check.analytic[i]),
                num(check.numeric[i]),
                num(check.rel_errors[i]),
            ]
        })
        .collect();
    let max = check.max_rel_error();
    let pass = max < a.threshold;
    if let Some(out) = &a.out {
        write_table(
            out,
            &prov,
            &["parameter", "analytic", "numeric", "rel_error"],
            &rows,
        )?;
        timings.write(out, &prov)?;
    }
    println!(
        "point: rho {:.4}, theta_l (s {:.4}, sigma {:.4}), theta_d (s {:.4}, sigma {:.4}); log marginal {:.6}",
        hyper.rho,
        hyper.theta_l.s,
        hyper.theta_l.sigma(),
        hyper.theta_d.s,
        hyper.theta_d.sigma(),
        check.log_marginal
    );
    println!(
        "{:<12} {:>16} {:>16} {:>10}",
        "parameter", "analytic", "numeric", "rel. err"
    );
    for (i, name) in PARAMETER_NAMES.iter().enumerate() {
        println!(
            "{:<12} {:>16.8e} {:>16.8e} {:>10.2e}",
            name, check.analytic[i], check.numeric[i], check.rel_errors[i]
        );
    }
    let verdict = format!(
        "{} max rel. err {max:.3e} (threshold {:.1e})",
        if pass { "PASS" } else { "FAIL" },
        a.threshold
    );
    println!("{verdict}");
    if pass {
        Ok(())
    } else {
        Err(CheckFailed(verdict).into())
    }
}

fn cmd_mcmc_check(a: McmcCheckArgs) -> anyhow::Result<()> {
    let test_path = required(&a.test, "test")?.clone();
    let out = required(&a.out, "out")?.clone();
    let prov = provenance("mcmc-check", &a, Some(a.seed));
    let mut timings = Timings::new();
    let model = match (&a.model, &a.data) {
        (Some(path), _) => load_model(path)?,
        (None, Some(path)) => {
            let data = load(path)?.data;
            data.validate_for_training()?;
            let opt = a.opt.config(a.seed);
            opt.validate().map_err(|e| usage(e.to_string()))?;
            timings
                .time("optimize", || optimize_report(&data, &opt))
                .context("hyperparameter optimization failed")?
                .model
        }
        (None, None) => return Err(usage("give --model or --data")),
    };
    let (test, rows_ids) = high_rows_of(&test_path)?;
    let config = McmcConfig {
        n_samples: a.samples,
        burn_in: a.burn_in,
        thin: a.thin,
        seed: rng::derive(a.seed, 2),
        ..McmcConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let check = timings.time("mcmc", || mcmc_check(&model, &test, &config))?;

    let rows: Vec<Vec<String>> = (0..test.len())
        .map(|i| {
            vec![
                rows_ids[i].to_string(),
                u8::from(test.y[i]).to_string(),
                num(check.laplace_latent[i]),
                num(check.laplace_probabilities[i]),
                num(check.mcmc_latent[i]),
                num(check.mcmc_probabilities[i]),
            ]
        })
        .collect();
    write_table(
        &out,
        &prov,
        &[
            "point_id",
            "label",
            "laplace_latent",
            "laplace_probability",
            "mcmc_latent",
            "mcmc_probability",
        ],
        &rows,
    )?;
    let pass = check.auc_gap() <= a.max_auc_gap && check.correlation >= a.min_correlation;
    let summary = vec![
        vec!["laplace_roc_auc".to_string(), num(check.laplace_auc)],
        vec!["mcmc_roc_auc".into(), num(check.mcmc_auc)],
        vec!["auc_gap".into(), num(check.auc_gap())],
        vec!["probability_correlation".into(), num(check.correlation)],
        vec!["effective_sample_size".into(), num(check.ess)],
        vec!["retained_samples".into(), check.retained.to_string()],
        vec!["mean_shrinks".into(), num(check.mean_shrinks)],
        vec!["pass".into(), pass.to_string()],
    ];
    write_table(
        &sibling(&out, ".summary.csv"),
        &prov,
        &["metric", "value"],
        &summary,
    )?;
    timings.write(&out, &prov)?;
    println!(
        "ROC AUC: Laplace {:.4}, MCMC {:.4} (gap {:.4}, allowed {})",
        check.laplace_auc,
        check.mcmc_auc,
        check.auc_gap(),
        a.max_auc_gap
    );
    println!(
        "probability correlation {:.4} (required {}), ESS {:.0} of {} retained samples",
        check.correlation, a.min_correlation, check.ess, check.retained
    );
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("{verdict}");
    if pass {
        Ok(())
    } else {
        Err(CheckFailed(format!(
            "Laplace and MCMC disagree: AUC gap {:.4}, correlation {:.4}",
            check.auc_gap(),
            check.correlation
        ))
        .into())
    }
}
