#![allow(dead_code)]

use mfgpc_core::nalgebra::{DMatrix, DVector};
use mfgpc_core::{FidelityDataset, Hyperparams, LatentVector, RbfParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Labels from a smooth rule plus a little randomness; both classes forced
/// in every non-empty fidelity.
pub fn random_dataset(rng: &mut ChaCha8Rng, n_low: usize, n_high: usize, dim: usize) -> FidelityDataset {
    let mut pts = |n: usize| DMatrix::from_fn(n, dim, |_, _| rng.random::<f64>());
    let x_low = pts(n_low);
    let x_high = pts(n_high);
    let mut label = |x: &DMatrix<f64>| -> Vec<bool> {
        let mut y: Vec<bool> = (0..x.nrows())
            .map(|i| x.row(i).sum() + 0.3 * (rng.random::<f64>() - 0.5) > 0.5 * dim as f64)
            .collect();
        if y.len() >= 2 {
            y[0] = true;
            y[1] = false;
        }
        y
    };
    let y_low = label(&x_low);
    let y_high = label(&x_high);
    FidelityDataset::new(x_low, y_low, x_high, y_high).unwrap()
}

pub fn random_hyper(rng: &mut ChaCha8Rng, rho: f64) -> Hyperparams {
    Hyperparams {
        rho,
        theta_l: RbfParams::new(rng.random_range(-1.0..1.5), rng.random_range(0.2..0.8)).unwrap(),
        theta_d: RbfParams::new(rng.random_range(-1.0..1.0), rng.random_range(0.2..0.8)).unwrap(),
    }
}

pub fn random_latent(rng: &mut ChaCha8Rng, data: &FidelityDataset, scale: f64) -> LatentVector {
    let n = data.latent_len();
    let v = DVector::from_fn(n, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
    LatentVector::for_dataset(v, data).unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    mfgpc_core::oracles::relative_error(a, b, floor)
}
