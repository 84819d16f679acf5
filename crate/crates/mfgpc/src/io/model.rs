//! Model documents (JSON). A document stores the hyperparameters, fit
//! settings, the latent mode, the training data with its checksum and
//! convergence metadata; loading rebuilds the posterior around the stored
//! mode without re-running Newton.

use std::path::Path;

use mfgpc_core::nalgebra::{DMatrix, DVector};
use mfgpc_core::single_fidelity::{sf_from_mode, SfModel};
use mfgpc_core::{
    FidelityDataset, FitConfig, FittedModel, Hyperparams, JitterPolicy, KernelSpec, RbfParams, SfDataset,
};
use serde::{Deserialize, Serialize};

use super::dataset::dataset_checksum;
use super::{read_text, write_text, IoError, IoResult};
use crate::provenance::Provenance;

pub const FORMAT: &str = "mfgpc-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfDoc {
    pub s: f64,
    pub log_sigma: f64,
}

impl From<RbfParams> for RbfDoc {
    fn from(p: RbfParams) -> Self {
        Self {
            s: p.s,
            log_sigma: p.log_sigma(),
        }
    }
}

impl From<RbfDoc> for RbfParams {
    fn from(d: RbfDoc) -> Self {
        RbfParams::from_log_sigma(d.s, d.log_sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDoc {
    pub tol: f64,
    pub max_iters: usize,
    pub max_halvings: usize,
    pub jitter_initial: f64,
    pub jitter_max: f64,
    pub jitter_growth: f64,
    pub jitter_relative: bool,
}

impl From<FitConfig> for FitDoc {
    fn from(c: FitConfig) -> Self {
        Self {
            tol: c.tol,
            max_iters: c.max_iters,
            max_halvings: c.max_halvings,
            jitter_initial: c.jitter.initial,
            jitter_max: c.jitter.max,
            jitter_growth: c.jitter.growth,
            jitter_relative: c.jitter.relative,
        }
    }
}

impl From<FitDoc> for FitConfig {
    fn from(d: FitDoc) -> Self {
        FitConfig {
            tol: d.tol,
            max_iters: d.max_iters,
            max_halvings: d.max_halvings,
            jitter: JitterPolicy {
                initial: d.jitter_initial,
                max: d.jitter_max,
                growth: d.jitter_growth,
                relative: d.jitter_relative,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelDoc {
    Rbf(RbfDoc),
    WeightedSum { terms: Vec<(f64, RbfDoc)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelParams {
    MultiFidelity {
        rho: f64,
        theta_l: RbfDoc,
        theta_d: RbfDoc,
    },
    SingleFidelity {
        kernel: KernelDoc,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataDoc {
    pub dim: usize,
    pub x_low: Vec<Vec<f64>>,
    pub y_low: Vec<bool>,
    pub x_high: Vec<Vec<f64>>,
    pub y_high: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDoc {
    pub log_marginal: f64,
    pub newton_iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub format_version: u32,
    /// 2 for multi-fidelity models, 1 for single-fidelity baselines.
    pub fidelity_count: u8,
    pub params: ModelParams,
    pub fit: FitDoc,
    pub latent_mode: Vec<f64>,
    pub training_data: DataDoc,
    pub training_data_sha256: String,
    pub convergence: ConvergenceDoc,
    pub provenance: Provenance,
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}

fn matrix(rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>, String> {
    if rows.iter().any(|r| r.len() != dim) {
        return Err(format!("every training row must have {dim} features"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), dim, &flat))
}

impl DataDoc {
    fn from_dataset(d: &FidelityDataset) -> Self {
        Self {
            dim: d.dim(),
            x_low: rows(&d.x_low),
            y_low: d.y_low.clone(),
            x_high: rows(&d.x_high),
            y_high: d.y_high.clone(),
        }
    }

    fn to_dataset(&self) -> Result<FidelityDataset, String> {
        FidelityDataset::new(
            matrix(&self.x_low, self.dim)?,
            self.y_low.clone(),
            matrix(&self.x_high, self.dim)?,
            self.y_high.clone(),
        )
        .map_err(|e| e.to_string())
    }
}

pub fn model_document(model: &FittedModel, provenance: Provenance) -> ModelDocument {
    let h = model.hyper();
    ModelDocument {
        format: FORMAT.into(),
        format_version: FORMAT_VERSION,
        fidelity_count: 2,
        params: ModelParams::MultiFidelity {
            rho: h.rho,
            theta_l: h.theta_l.into(),
            theta_d: h.theta_d.into(),
        },
        fit: (*model.config()).into(),
        latent_mode: model.latent_values(),
        training_data: DataDoc::from_dataset(model.data()),
        training_data_sha256: dataset_checksum(model.data()),
        convergence: ConvergenceDoc {
            log_marginal: model.log_marginal(),
            newton_iterations: model.newton_iters(),
            grad_norm: model.grad_norm(),
            converged: model.is_converged(),
        },
        provenance,
    }
}

fn kernel_doc(k: &KernelSpec) -> KernelDoc {
    match k {
        KernelSpec::Rbf(p) => KernelDoc::Rbf((*p).into()),
        KernelSpec::WeightedSum(terms) => KernelDoc::WeightedSum {
            terms: terms.iter().map(|(w, p)| (*w, (*p).into())).collect(),
        },
    }
}

pub fn sf_model_document(model: &SfModel, provenance: Provenance) -> ModelDocument {
    let data = FidelityDataset::low_only(model.data().x.clone(), model.data().y.clone())
        .expect("consistent single-fidelity data");
    let state = model.state();
    ModelDocument {
        format: FORMAT.into(),
        format_version: FORMAT_VERSION,
        fidelity_count: 1,
        params: ModelParams::SingleFidelity {
            kernel: kernel_doc(model.kernel()),
        },
        fit: (*model.config()).into(),
        latent_mode: model.f_hat().iter().copied().collect(),
        training_data: DataDoc::from_dataset(&data),
        training_data_sha256: dataset_checksum(&data),
        convergence: ConvergenceDoc {
            log_marginal: model.log_marginal(),
            newton_iterations: state.iterations(),
            grad_norm: state.grad_norm(),
            converged: state.is_converged(),
        },
        provenance,
    }
}

fn to_json(doc: &ModelDocument) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("model documents serialize");
    s.push('\n');
    s
}

pub fn save_model(model: &FittedModel, provenance: Provenance, path: &Path) -> IoResult<()> {
    write_text(path, &to_json(&model_document(model, provenance)))
}

pub fn save_sf_model(model: &SfModel, provenance: Provenance, path: &Path) -> IoResult<()> {
    write_text(path, &to_json(&sf_model_document(model, provenance)))
}

/// Either kind of model, as loaded from disk.
#[derive(Debug, Clone)]
pub enum StoredModel {
    MultiFidelity(FittedModel),
    SingleFidelity(SfModel),
}

impl StoredModel {
    pub fn log_marginal(&self) -> f64 {
        match self {
            StoredModel::MultiFidelity(m) => m.log_marginal(),
            StoredModel::SingleFidelity(m) => m.log_marginal(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            StoredModel::MultiFidelity(m) => m.data().dim(),
            StoredModel::SingleFidelity(m) => m.data().x.ncols(),
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> mfgpc_core::Result<Vec<mfgpc_core::PredictionScore>> {
        match self {
            StoredModel::MultiFidelity(m) => mfgpc_core::predict(m, x),
            StoredModel::SingleFidelity(m) => mfgpc_core::sf_predict(m, x),
        }
    }
}

fn read_document(path: &Path) -> IoResult<ModelDocument> {
    let doc: ModelDocument = serde_json::from_str(&read_text(path)?).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let invalid = |message: String| IoError::Invalid {
        path: path.to_path_buf(),
        message,
    };
    if doc.format != FORMAT || doc.format_version != FORMAT_VERSION {
        return Err(invalid(format!(
            "unsupported model format {} v{}",
            doc.format, doc.format_version
        )));
    }
    let data = doc.training_data.to_dataset().map_err(invalid)?;
    let sum = dataset_checksum(&data);
    if sum != doc.training_data_sha256 {
        return Err(invalid(format!(
            "training data checksum mismatch (stored {}, computed {sum})",
            doc.training_data_sha256
        )));
    }
    Ok(doc)
}

/// Loads either kind of model.
pub fn load_any_model(path: &Path) -> IoResult<StoredModel> {
    let doc = read_document(path)?;
    let invalid = |message: String| IoError::Invalid {
        path: path.to_path_buf(),
        message,
    };
    let data = doc.training_data.to_dataset().map_err(invalid)?;
    let config: FitConfig = doc.fit.into();
    let mode = DVector::from_vec(doc.latent_mode.clone());
    match &doc.params {
        ModelParams::MultiFidelity {
            rho,
            theta_l,
            theta_d,
        } => {
            let hyper = Hyperparams {
                rho: *rho,
                theta_l: (*theta_l).into(),
                theta_d: (*theta_d).into(),
            };
            Ok(StoredModel::MultiFidelity(FittedModel::from_mode(
                data, hyper, config, mode,
            )?))
        }
        ModelParams::SingleFidelity { kernel } => {
            let kernel = match kernel {
                KernelDoc::Rbf(p) => KernelSpec::Rbf((*p).into()),
                KernelDoc::WeightedSum { terms } => {
                    KernelSpec::WeightedSum(terms.iter().map(|(w, p)| (*w, (*p).into())).collect())
                }
            };
            let sf = SfDataset::new(data.x_low.clone(), data.y_low.clone())?;
            Ok(StoredModel::SingleFidelity(sf_from_mode(
                &sf, kernel, &config, mode,
            )?))
        }
    }
}

pub fn load_model(path: &Path) -> IoResult<FittedModel> {
    match load_any_model(path)? {
        StoredModel::MultiFidelity(m) => Ok(m),
        StoredModel::SingleFidelity(_) => Err(IoError::Invalid {
            path: path.to_path_buf(),
            message: "expected a multi-fidelity model, found a single-fidelity one".into(),
        }),
    }
}

pub fn load_sf_model(path: &Path) -> IoResult<SfModel> {
    match load_any_model(path)? {
        StoredModel::SingleFidelity(m) => Ok(m),
        StoredModel::MultiFidelity(_) => Err(IoError::Invalid {
            path: path.to_path_buf(),
            message: "expected a single-fidelity model, found a multi-fidelity one".into(),
        }),
    }
}
