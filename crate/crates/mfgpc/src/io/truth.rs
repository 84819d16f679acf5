//! Ground-truth sidecar (JSON) written next to generated datasets: the
//! generation settings, the chosen `rho`, and every latent value, in the
//! same order as the rows of the dataset and test files.

use std::path::Path;

use mfgpc_core::datagen::{GroundTruth, SynthesisSpec};
use serde::{Deserialize, Serialize};

use super::model::RbfDoc;
use super::{read_text, write_text, IoError, IoResult};
use crate::provenance::Provenance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecDoc {
    pub dim: usize,
    pub n_low: usize,
    pub n_high: usize,
    pub n_test: usize,
    pub noise_level: f64,
    pub kernel_l: RbfDoc,
    pub kernel_d: RbfDoc,
    pub seed: u64,
    pub bernoulli_labels: bool,
    pub probe_count: usize,
    pub fixed_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub format: String,
    pub spec: SpecDoc,
    pub rho: f64,
    pub disagreement: f64,
    pub target: f64,
    pub attempts: usize,
    pub f_low_at_low: Vec<f64>,
    pub f_low_at_high: Vec<f64>,
    pub delta_at_high: Vec<f64>,
    pub f_low_at_test: Vec<f64>,
    pub delta_at_test: Vec<f64>,
    pub train_sha256: String,
    pub test_sha256: String,
    pub provenance: Provenance,
}

pub fn truth_document(
    spec: &SynthesisSpec,
    truth: &GroundTruth,
    train_sha256: String,
    test_sha256: String,
    provenance: Provenance,
) -> TruthDocument {
    TruthDocument {
        format: "mfgpc-truth".into(),
        spec: SpecDoc {
            dim: spec.dim,
            n_low: spec.n_low,
            n_high: spec.n_high,
            n_test: spec.n_test,
            noise_level: spec.noise_level,
            kernel_l: spec.kernel_l.into(),
            kernel_d: spec.kernel_d.into(),
            seed: spec.seed,
            bernoulli_labels: spec.bernoulli_labels,
            probe_count: spec.probe_count,
            fixed_rho: spec.fixed_rho,
        },
        rho: truth.rho,
        disagreement: truth.disagreement,
        target: truth.target,
        attempts: truth.attempts,
        f_low_at_low: truth.f_low_at_low.clone(),
        f_low_at_high: truth.f_low_at_high.clone(),
        delta_at_high: truth.delta_at_high.clone(),
        f_low_at_test: truth.f_low_at_test.clone(),
        delta_at_test: truth.delta_at_test.clone(),
        train_sha256,
        test_sha256,
        provenance,
    }
}

pub fn save_truth(doc: &TruthDocument, path: &Path) -> IoResult<()> {
    let mut s = serde_json::to_string_pretty(doc).expect("truth documents serialize");
    s.push('\n');
    write_text(path, &s)
}

pub fn load_truth(path: &Path) -> IoResult<TruthDocument> {
    serde_json::from_str(&read_text(path)?).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}
