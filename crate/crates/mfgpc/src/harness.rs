//! Experiment runners: the fixed-size benchmark protocol, budget sweeps and
//! post-hoc sensitivity grids.
//!
//! Every run derives its seeds from the master seed and its position in the
//! sweep, so results do not depend on `jobs` or on scheduling.

use std::time::{Duration, Instant};

use mfgpc_core::datagen::{budget_counts, generate_synthetic, inject_flip_noise, subsample, SynthesisSpec};
use mfgpc_core::hyperopt::optimize;
use mfgpc_core::metrics::{mean_and_stderr, roc_auc, RunRecord};
use mfgpc_core::nalgebra::DMatrix;
use mfgpc_core::{
    fit_mode, predict, rng, sf_optimize, sf_predict, FidelityDataset, FittedModel, Hyperparams, OptConfig,
    RbfParams, SfDataset,
};
use rayon::prelude::*;

use crate::io::{LoadedDataset, ScoreTable};

pub const BUILTIN_METHODS: [&str; 3] = ["mf-gpc", "sf-gpc-hf", "sf-gpc-concat"];

/// A method the benchmark can run.
#[derive(Debug, Clone)]
pub enum Method {
    /// Multi-fidelity model on both label sources.
    MfGpc,
    /// Single-fidelity model on the high-fidelity points only.
    SfGpcHf,
    /// Single-fidelity model on the union of both sources.
    SfGpcConcat,
    /// Precomputed scores, looked up by dataset id and file row.
    External { name: String, scores: ScoreTable },
}

impl Method {
    pub fn builtin(name: &str) -> Option<Method> {
        match name {
            "mf-gpc" => Some(Method::MfGpc),
            "sf-gpc-hf" => Some(Method::SfGpcHf),
            "sf-gpc-concat" => Some(Method::SfGpcConcat),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Method::MfGpc => "mf-gpc",
            Method::SfGpcHf => "sf-gpc-hf",
            Method::SfGpcConcat => "sf-gpc-concat",
            Method::External { name, .. } => name,
        }
    }
}

/// Ranking scores at `x_test` from a model trained on `train`. Latent means
/// are used rather than probabilities so that saturated sigmoids do not
/// create ties.
pub fn fit_and_score(
    method: &Method,
    train: &FidelityDataset,
    x_test: &DMatrix<f64>,
    opt: &OptConfig,
) -> Result<Vec<f64>, String> {
    let latent =
        |scores: Vec<mfgpc_core::PredictionScore>| scores.into_iter().map(|s| s.latent_mean).collect();
    match method {
        Method::MfGpc => {
            let model = optimize(train, opt).map_err(|e| e.to_string())?;
            predict(&model, x_test).map(latent).map_err(|e| e.to_string())
        }
        Method::SfGpcHf | Method::SfGpcConcat => {
            let data = if matches!(method, Method::SfGpcHf) {
                SfDataset::from_high(train)
            } else {
                SfDataset::concatenated(train)
            };
            let model = sf_optimize(&data, opt).map_err(|e| e.to_string())?;
            sf_predict(&model, x_test).map(latent).map_err(|e| e.to_string())
        }
        Method::External { name, .. } => Err(format!("{name} has no model to fit")),
    }
}

/// A dataset file prepared for the benchmark.
#[derive(Debug, Clone)]
pub struct BenchmarkDataset {
    pub id: String,
    pub pool: FidelityDataset,
    /// File row of each high-fidelity pool point (the `point_id` of score
    /// files).
    pub high_rows: Vec<usize>,
    pub noise_level: f64,
}

impl BenchmarkDataset {
    /// `noise_level` comes from the file's `# noise_level:` comment when
    /// present, NaN otherwise.
    pub fn from_loaded(id: &str, loaded: LoadedDataset) -> Self {
        let noise_level = loaded
            .meta("noise_level")
            .and_then(|v| v.parse().ok())
            .unwrap_or(f64::NAN);
        Self {
            id: id.to_string(),
            pool: loaded.data,
            high_rows: loaded.high_rows,
            noise_level,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Protocol {
    pub n_high: usize,
    /// Low-fidelity training points per high-fidelity one.
    pub lf_ratio: usize,
    pub runs: usize,
    pub seed: u64,
    /// Cap on the number of held-out high-fidelity test points; all of them
    /// by default.
    pub n_test: Option<usize>,
    pub opt: OptConfig,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            n_high: 75,
            lf_ratio: 3,
            runs: 3,
            seed: 0,
            n_test: None,
            opt: OptConfig::default(),
        }
    }
}

/// One (dataset, method, run) cell of a benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dataset_id: String,
    pub method: String,
    pub run: usize,
    pub seed: u64,
    pub result: Result<RunRecord, String>,
    pub wall_time: Duration,
}

/// Seed shared by every method and dataset in run `run`.
pub fn run_seed(master: u64, run: usize) -> u64 {
    rng::derive(master, run as u64)
}

/// Training subsample and held-out test points of one run.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: FidelityDataset,
    /// Indices into the pool's high-fidelity part.
    pub test_indices: Vec<usize>,
}

pub fn benchmark_split(
    dataset: &BenchmarkDataset,
    protocol: &Protocol,
    seed: u64,
) -> mfgpc_core::Result<Split> {
    let n_low = protocol.n_high * protocol.lf_ratio;
    let sub = subsample(&dataset.pool, n_low, protocol.n_high, seed)?;
    let mut test: Vec<usize> = (0..dataset.pool.n_high())
        .filter(|i| sub.high_indices.binary_search(i).is_err())
        .collect();
    if let Some(cap) = protocol.n_test {
        test.truncate(cap);
    }
    Ok(Split {
        train: sub.data,
        test_indices: test,
    })
}

fn run_one(dataset: &BenchmarkDataset, method: &Method, protocol: &Protocol, run: usize) -> RunOutcome {
    let seed = run_seed(protocol.seed, run);
    let start = Instant::now();
    let result = (|| {
        let split = benchmark_split(dataset, protocol, seed).map_err(|e| e.to_string())?;
        let labels: Vec<bool> = split
            .test_indices
            .iter()
            .map(|&i| dataset.pool.y_high[i])
            .collect();
        let scores = match method {
            Method::External { name, scores } => {
                let rows: Vec<usize> = split.test_indices.iter().map(|&i| dataset.high_rows[i]).collect();
                scores
                    .lookup(&dataset.id, &rows)
                    .map_err(|p| format!("{name} has no score for dataset {} point {p}", dataset.id))?
            }
            _ => {
                let x_test = dataset.pool.x_high.select_rows(split.test_indices.iter());
                let opt = OptConfig {
                    seed: rng::derive(seed, 1),
                    ..protocol.opt.clone()
                };
                fit_and_score(method, &split.train, &x_test, &opt)?
            }
        };
        let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        Ok(RunRecord {
            dataset_id: dataset.id.clone(),
            method: method.name().to_string(),
            seed,
            roc_auc: auc,
            n_low: split.train.n_low(),
            n_high: split.train.n_high(),
            noise_level: dataset.noise_level,
            wall_time: Duration::ZERO,
        })
    })();
    let elapsed = start.elapsed();
    let result = result.map(|mut r: RunRecord| {
        r.wall_time = elapsed;
        r
    });
    RunOutcome {
        dataset_id: dataset.id.clone(),
        method: method.name().to_string(),
        run,
        seed,
        result,
        wall_time: elapsed,
    }
}

fn thread_pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool")
}

/// Runs every method on every dataset `protocol.runs` times. Failures are
/// kept as `Err` outcomes. Output order is dataset, method, run regardless
/// of `jobs`.
pub fn run_benchmark(
    datasets: &[BenchmarkDataset],
    methods: &[Method],
    protocol: &Protocol,
    jobs: usize,
) -> Vec<RunOutcome> {
    let mut tasks = Vec::new();
    for d in datasets {
        for m in methods {
            for run in 0..protocol.runs {
                tasks.push((d, m, run));
            }
        }
    }
    thread_pool(jobs).install(|| {
        tasks
            .par_iter()
            .map(|&(d, m, run)| run_one(d, m, protocol, run))
            .collect()
    })
}

/// Mean ROC AUC per method over successful runs, in first-seen order.
pub fn method_means(outcomes: &[RunOutcome]) -> Vec<(String, f64, f64, usize)> {
    let mut names: Vec<String> = Vec::new();
    for o in outcomes {
        if !names.contains(&o.method) {
            names.push(o.method.clone());
        }
    }
    names
        .into_iter()
        .filter_map(|name| {
            let aucs: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.method == name)
                .filter_map(|o| o.result.as_ref().ok().map(|r| r.roc_auc))
                .collect();
            mean_and_stderr(&aucs).map(|(m, se)| (name, m, se, aucs.len()))
        })
        .collect()
}

/// Where budget-sweep training pools come from.
#[derive(Debug, Clone)]
pub enum PoolSource {
    /// A fresh synthetic pool per (noise level, run); `n_low`/`n_high` are
    /// the pool sizes and `n_test` the separate test set.
    Synthetic {
        dim: usize,
        n_low: usize,
        n_high: usize,
        n_test: usize,
    },
    /// A fixed pool whose low-fidelity labels are flipped at each noise
    /// level; high-fidelity points outside the subsample are the test set.
    File(BenchmarkDataset),
}

#[derive(Debug, Clone)]
pub struct BudgetConfig {
    pub source: PoolSource,
    pub noise_levels: Vec<f64>,
    pub hf_shares: Vec<f64>,
    pub lf_cost_fractions: Vec<f64>,
    pub runs: usize,
    /// In units of one high-fidelity label.
    pub budget: f64,
    pub seed: u64,
    pub opt: OptConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRun {
    pub method: String,
    pub noise_level: f64,
    /// `None` for the single-fidelity reference.
    pub lf_cost_fraction: Option<f64>,
    pub hf_share: f64,
    pub run: usize,
    pub seed: u64,
    pub n_low: usize,
    pub n_high: usize,
    pub result: Result<f64, String>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetCell {
    pub method: String,
    pub noise_level: f64,
    pub lf_cost_fraction: Option<f64>,
    pub hf_share: f64,
    pub n_low: usize,
    pub n_high: usize,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub runs_ok: usize,
    pub runs_failed: usize,
    /// Empty, or why the cell has no runs.
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSweep {
    pub runs: Vec<BudgetRun>,
    pub cells: Vec<BudgetCell>,
}

struct Pool {
    train: FidelityDataset,
    /// Separate test set, or `None` to test on unused high-fidelity points.
    test: Option<SfDataset>,
}

fn budget_pool(config: &BudgetConfig, noise_index: usize, run: usize) -> Result<Pool, String> {
    let noise = config.noise_levels[noise_index];
    let seed = rng::derive(run_seed(config.seed, run), noise_index as u64);
    match &config.source {
        PoolSource::Synthetic {
            dim,
            n_low,
            n_high,
            n_test,
        } => {
            let spec = SynthesisSpec::new(*dim, *n_low, *n_high, *n_test, noise, seed);
            let p = generate_synthetic(&spec).map_err(|e| e.to_string())?;
            Ok(Pool {
                train: p.train,
                test: Some(p.test),
            })
        }
        PoolSource::File(d) => {
            let mut train = d.pool.clone();
            train.y_low = inject_flip_noise(&train.y_low, noise, seed).map_err(|e| e.to_string())?;
            Ok(Pool { train, test: None })
        }
    }
}

fn pool_sizes(source: &PoolSource) -> (usize, usize) {
    match source {
        PoolSource::Synthetic { n_low, n_high, .. } => (*n_low, *n_high),
        PoolSource::File(d) => (d.pool.n_low(), d.pool.n_high()),
    }
}

#[derive(Clone, Copy)]
struct BudgetTask {
    noise_index: usize,
    run: usize,
    /// `None` for the reference.
    cost_index: Option<usize>,
    share: f64,
    /// Seeds the subsample; shared by all costs at the same share.
    share_label: u64,
}

fn budget_task(config: &BudgetConfig, pool: &Result<Pool, String>, t: BudgetTask) -> BudgetRun {
    let share = t.share;
    let cost = t.cost_index.map(|c| config.lf_cost_fractions[c]);
    // The subsample seed ignores the cost so that cells without
    // low-fidelity points draw identical subsamples.
    let seed = rng::derive(
        rng::derive(run_seed(config.seed, t.run), t.noise_index as u64),
        1000 + t.share_label,
    );
    let (n_low, n_high) = budget_counts(config.budget, share, cost.unwrap_or(1.0)).unwrap_or((0, 0));
    let start = Instant::now();
    let result = (|| {
        let pool = pool
            .as_ref()
            .map_err(|e| format!("pool generation failed: {e}"))?;
        let sub = subsample(&pool.train, n_low, n_high, seed).map_err(|e| e.to_string())?;
        let (x_test, y_test) = match &pool.test {
            Some(t) => (t.x.clone(), t.y.clone()),
            None => {
                let rest: Vec<usize> = (0..pool.train.n_high())
                    .filter(|i| sub.high_indices.binary_search(i).is_err())
                    .collect();
                let y = rest.iter().map(|&i| pool.train.y_high[i]).collect();
                (pool.train.x_high.select_rows(rest.iter()), y)
            }
        };
        let opt = OptConfig {
            seed: rng::derive(seed, 1),
            ..config.opt.clone()
        };
        let method = if cost.is_some() {
            Method::MfGpc
        } else {
            Method::SfGpcHf
        };
        let scores = fit_and_score(&method, &sub.data, &x_test, &opt)?;
        roc_auc(&scores, &y_test).map_err(|e| e.to_string())
    })();
    BudgetRun {
        method: if cost.is_some() { "mf-gpc" } else { "sf-gpc-hf" }.into(),
        noise_level: config.noise_levels[t.noise_index],
        lf_cost_fraction: cost,
        hf_share: share,
        run: t.run,
        seed,
        n_low,
        n_high,
        result,
        wall_time: start.elapsed(),
    }
}

/// Multi-fidelity ROC AUC over a grid of high-fidelity budget shares and
/// low-fidelity costs, plus a single-fidelity model trained on the whole
/// budget in high-fidelity points as the reference (`hf_share = 1`, no
/// cost). Cells whose subsample does not fit in the pool are reported with
/// a note and no runs.
pub fn budget_sweep(config: &BudgetConfig, jobs: usize) -> Result<BudgetSweep, String> {
    if config.noise_levels.is_empty() || config.hf_shares.is_empty() || config.runs == 0 {
        return Err("budget sweep needs noise levels, shares and at least one run".into());
    }
    if config.lf_cost_fractions.is_empty() {
        return Err("budget sweep needs at least one low-fidelity cost".into());
    }
    for &s in &config.hf_shares {
        if !(0.0..=1.0).contains(&s) {
            return Err(format!("hf share {s} outside [0, 1]"));
        }
    }
    for &c in &config.lf_cost_fractions {
        if !(c > 0.0 && c <= 1.0) {
            return Err(format!("low-fidelity cost {c} outside (0, 1]"));
        }
    }
    for &n in &config.noise_levels {
        if !(0.0..0.5).contains(&n) {
            return Err(format!("noise level {n} outside [0, 0.5)"));
        }
    }
    config.opt.validate().map_err(|e| e.to_string())?;

    let (pool_low, pool_high) = pool_sizes(&config.source);
    let feasible = |n_low: usize, n_high: usize| -> Result<(), String> {
        let test_room = matches!(config.source, PoolSource::File(_));
        if n_low > pool_low || n_high > pool_high || (test_room && n_high >= pool_high) {
            Err(format!(
                "infeasible: needs ({n_low}, {n_high}) points, pool has ({pool_low}, {pool_high})"
            ))
        } else if n_low + n_high == 0 {
            Err("infeasible: empty training set".into())
        } else {
            Ok(())
        }
    };

    // Cell layout: per noise level, each cost × share, then the reference.
    let mut cells = Vec::new();
    let mut tasks = Vec::new();
    for ni in 0..config.noise_levels.len() {
        let mut layout: Vec<(Option<usize>, usize)> = Vec::new();
        for ci in 0..config.lf_cost_fractions.len() {
            for si in 0..config.hf_shares.len() {
                layout.push((Some(ci), si));
            }
        }
        // The reference shares its subsample with the hf_share = 1 cells.
        let full = config.hf_shares.iter().position(|&x| x == 1.0);
        layout.push((None, full.unwrap_or(config.hf_shares.len())));
        for (ci, si) in layout {
            let cost = ci.map(|c| config.lf_cost_fractions[c]);
            let share = config.hf_shares.get(si).copied().unwrap_or(1.0);
            let (n_low, n_high) =
                budget_counts(config.budget, share, cost.unwrap_or(1.0)).map_err(|e| e.to_string())?;
            let note = match feasible(n_low, n_high) {
                Ok(()) => String::new(),
                Err(e) => e,
            };
            if note.is_empty() {
                for run in 0..config.runs {
                    tasks.push(BudgetTask {
                        noise_index: ni,
                        run,
                        cost_index: ci,
                        share,
                        share_label: si as u64,
                    });
                }
            }
            cells.push(BudgetCell {
                method: if ci.is_some() { "mf-gpc" } else { "sf-gpc-hf" }.into(),
                noise_level: config.noise_levels[ni],
                lf_cost_fraction: cost,
                hf_share: share,
                n_low,
                n_high,
                mean: None,
                stderr: None,
                runs_ok: 0,
                runs_failed: 0,
                note,
            });
        }
    }
    let pool = thread_pool(jobs);
    let mut pool_keys = Vec::new();
    for ni in 0..config.noise_levels.len() {
        for run in 0..config.runs {
            pool_keys.push((ni, run));
        }
    }
    let pools: Vec<Result<Pool, String>> = pool.install(|| {
        pool_keys
            .par_iter()
            .map(|&(ni, run)| budget_pool(config, ni, run))
            .collect()
    });
    let runs: Vec<BudgetRun> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| budget_task(config, &pools[t.noise_index * config.runs + t.run], *t))
            .collect()
    });

    for cell in &mut cells {
        if !cell.note.is_empty() {
            continue;
        }
        let matching: Vec<&BudgetRun> = runs
            .iter()
            .filter(|r| {
                r.method == cell.method
                    && r.noise_level == cell.noise_level
                    && r.lf_cost_fraction == cell.lf_cost_fraction
                    && r.hf_share == cell.hf_share
            })
            .collect();
        let aucs: Vec<f64> = matching.iter().filter_map(|r| r.result.clone().ok()).collect();
        cell.runs_ok = aucs.len();
        cell.runs_failed = matching.len() - aucs.len();
        if let Some((m, se)) = mean_and_stderr(&aucs) {
            cell.mean = Some(m);
            cell.stderr = Some(se);
        } else {
            cell.note = "all runs failed".into();
        }
    }
    Ok(BudgetSweep { runs, cells })
}

/// Hyperparameter a sensitivity grid varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rho,
    ThetaL,
    ThetaD,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Rho => "rho",
            Axis::ThetaL => "theta-l",
            Axis::ThetaD => "theta-d",
        }
    }
}

/// Grid values. For `Rho` only `values` is used. For the kernel axes the
/// grid is `amplitudes × sigmas` (log-amplitude `s` and length scale); an
/// empty list keeps only the tuned value, giving a curve instead of a
/// surface. The tuned value is always added to each list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grid {
    pub values: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityPoint {
    pub hyper: Hyperparams,
    /// `Err` when the mode refit or scoring failed.
    pub auc: Result<f64, String>,
    pub is_tuned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub axis: Axis,
    pub tuned_auc: f64,
    pub points: Vec<SensitivityPoint>,
}

/// `values` in ascending order with `tuned` added if absent.
fn with_tuned(values: &[f64], tuned: f64) -> Vec<f64> {
    let mut out = values.to_vec();
    if !out.contains(&tuned) {
        out.push(tuned);
    }
    out.sort_by(f64::total_cmp);
    out
}

fn grid_hypers(tuned: &Hyperparams, axis: Axis, grid: &Grid) -> Result<Vec<Hyperparams>, String> {
    match axis {
        Axis::Rho => {
            if grid.values.is_empty() {
                return Err("rho grid is empty".into());
            }
            Ok(with_tuned(&grid.values, tuned.rho)
                .iter()
                .map(|&rho| Hyperparams { rho, ..*tuned })
                .collect())
        }
        Axis::ThetaL | Axis::ThetaD => {
            let base = if axis == Axis::ThetaL {
                tuned.theta_l
            } else {
                tuned.theta_d
            };
            let amps = with_tuned(&grid.amplitudes, base.s);
            let sigmas = with_tuned(&grid.sigmas, base.sigma());
            let mut out = Vec::new();
            for &s in &amps {
                for &sigma in &sigmas {
                    // Reuse the tuned parameters bit-for-bit when they are on
                    // the grid.
                    let p = if s == base.s && sigma == base.sigma() {
                        base
                    } else {
                        RbfParams::new(s, sigma).map_err(|e| e.to_string())?
                    };
                    let mut h = *tuned;
                    if axis == Axis::ThetaL {
                        h.theta_l = p;
                    } else {
                        h.theta_d = p;
                    }
                    out.push(h);
                }
            }
            Ok(out)
        }
    }
}

fn latent_auc(model: &FittedModel, validation: &SfDataset) -> Result<f64, String> {
    let scores = predict(model, &validation.x).map_err(|e| e.to_string())?;
    let latent: Vec<f64> = scores.iter().map(|s| s.latent_mean).collect();
    roc_auc(&latent, &validation.y).map_err(|e| e.to_string())
}

/// Validation ROC AUC as one hyperparameter block moves away from its tuned
/// value, the others fixed. The latent mode is refitted at every grid point;
/// the tuned point itself reuses `model`.
pub fn sensitivity_grid(
    model: &FittedModel,
    validation: &SfDataset,
    axis: Axis,
    grid: &Grid,
    jobs: usize,
) -> Result<Sensitivity, String> {
    let tuned_auc = latent_auc(model, validation)?;
    let hypers = grid_hypers(model.hyper(), axis, grid)?;
    let points = thread_pool(jobs).install(|| {
        hypers
            .par_iter()
            .map(|h| {
                let is_tuned = h == model.hyper();
                let auc = if is_tuned {
                    Ok(tuned_auc)
                } else {
                    fit_mode(model.data(), h, model.config())
                        .map_err(|e| e.to_string())
                        .and_then(|m| latent_auc(&m, validation))
                };
                SensitivityPoint {
                    hyper: *h,
                    auc,
                    is_tuned,
                }
            })
            .collect()
    });
    Ok(Sensitivity {
        axis,
        tuned_auc,
        points,
    })
}
