//! Mode fitting, marginal likelihood, hyperparameter gradient and prediction
//! checked against independent computations.

mod common;

use common::{random_dataset, random_hyper, rel_err, rng};
use mfgpc_core::laplace::{fit_mode_from, posterior_precision};
use mfgpc_core::likelihood::log_likelihood;
use mfgpc_core::nalgebra::{DMatrix, DVector};
use mfgpc_core::oracles::finite_diff_gradient;
use mfgpc_core::single_fidelity::sf_fit_kernel;
use mfgpc_core::*;

const RHOS: [f64; 6] = [-2.0, -0.5, 0.0, 0.5, 1.0, 2.0];

fn tight(jitter: f64) -> FitConfig {
    FitConfig {
        tol: 1e-10,
        jitter: JitterPolicy::fixed(jitter),
        ..FitConfig::default()
    }
}

/// Root of `f = k (1 - sigmoid(f))` by bisection on `[0, k]`.
fn single_point_mode(k: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, k);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - k * (1.0 - 1.0 / (1.0 + (-mid).exp())) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn single_point_mode_matches_bisection() {
    let data = FidelityDataset::low_only(DMatrix::from_element(1, 1, 0.3), vec![true]).unwrap();
    let hyper = Hyperparams {
        rho: 1.0,
        theta_l: RbfParams::new(0.0, 1.0).unwrap(),
        theta_d: RbfParams::new(0.0, 1.0).unwrap(),
    };
    let model = fit_mode(&data, &hyper, &tight(1e-8)).unwrap();
    let k = model.prior().low_block()[(0, 0)];
    let f = model.xi_hat().values()[0];
    assert!((f - single_point_mode(k)).abs() < 1e-8);
    assert!((f - 0.401058).abs() < 1e-5);
}

#[test]
fn objective_trace_is_non_decreasing() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 40, 20, 2);
        let hyper = random_hyper(&mut r, RHOS[seed as usize % 6]);
        let model = fit_mode(&data, &hyper, &FitConfig::default()).unwrap();
        let t = model.objective_trace();
        assert!(t.len() >= 2);
        assert!(t.windows(2).all(|w| w[1] >= w[0]), "seed {seed}: {t:?}");
        assert!(model.grad_norm() < 1e-6 || model.is_converged());
    }
}

#[test]
fn label_flip_negates_mode() {
    for seed in 0..6 {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 30, 15, 2);
        let hyper = random_hyper(&mut r, RHOS[seed as usize]);
        let a = fit_mode(&data, &hyper, &tight(1e-8)).unwrap();
        let b = fit_mode(&data.flipped(), &hyper, &tight(1e-8)).unwrap();
        let diff = (a.xi_hat().values() + b.xi_hat().values()).amax();
        assert!(diff < 1e-8, "seed {seed}: {diff}");
    }
}

#[test]
fn iteration_cap_reports_last_iterate() {
    let mut r = rng(3);
    let data = random_dataset(&mut r, 10, 5, 2);
    let hyper = random_hyper(&mut r, 1.0);
    let config = FitConfig {
        max_iters: 1,
        ..FitConfig::default()
    };
    match fit_mode(&data, &hyper, &config) {
        Err(Error::NotConverged {
            last_iterate,
            iterations,
            ..
        }) => {
            assert_eq!(iterations, 1);
            assert_eq!(last_iterate.len(), data.latent_len());
        }
        other => panic!("expected NotConverged, got {other:?}"),
    }
}

#[test]
fn posterior_precision_is_positive_definite() {
    for seed in 0..12 {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 25, 12, 3);
        let hyper = random_hyper(&mut r, RHOS[seed as usize % 6] * 1.3);
        let model = fit_mode(&data, &hyper, &tight(1e-6)).unwrap();
        let h = posterior_precision(&model);
        let h = (&h + h.transpose()) * 0.5;
        let min = h.symmetric_eigenvalues().min();
        assert!(min >= -1e-8, "seed {seed}: {min}");
    }
}

#[test]
fn log_marginal_recomputes_and_is_bounded_by_likelihood() {
    for seed in 0..8 {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 30, 20, 2);
        let hyper = random_hyper(&mut r, RHOS[seed as usize % 6]);
        let model = fit_mode(&data, &hyper, &FitConfig::default()).unwrap();
        let recomputed = log_marginal(&model);
        assert!((recomputed - model.log_marginal()).abs() < 1e-10);
        let lambda = log_likelihood(model.xi_hat(), &data, hyper.rho).unwrap();
        assert!(model.log_marginal() <= lambda);
    }
}

fn permute_rows(x: &DMatrix<f64>, y: &[bool], perm: &[usize]) -> (DMatrix<f64>, Vec<bool>) {
    (x.select_rows(perm.iter()), perm.iter().map(|&i| y[i]).collect())
}

#[test]
fn log_marginal_is_permutation_invariant() {
    for seed in 0..6 {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 20, 10, 2);
        let hyper = random_hyper(&mut r, RHOS[seed as usize]);
        let pl: Vec<usize> = (0..20).rev().collect();
        let ph: Vec<usize> = (0..10).map(|i| (i * 3) % 10).collect();
        let (xl, yl) = permute_rows(&data.x_low, &data.y_low, &pl);
        let (xh, yh) = permute_rows(&data.x_high, &data.y_high, &ph);
        let shuffled = FidelityDataset::new(xl, yl, xh, yh).unwrap();
        let a = fit_mode(&data, &hyper, &tight(1e-8)).unwrap().log_marginal();
        let b = fit_mode(&shuffled, &hyper, &tight(1e-8)).unwrap().log_marginal();
        assert!((a - b).abs() < 1e-8, "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn doubling_jitter_barely_moves_log_marginal() {
    let mut r = rng(11);
    let data = random_dataset(&mut r, 30, 15, 2);
    let hyper = Hyperparams {
        rho: 0.8,
        theta_l: RbfParams::new(0.0, 0.3).unwrap(),
        theta_d: RbfParams::new(-1.0, 0.3).unwrap(),
    };
    let a = fit_mode(&data, &hyper, &tight(1e-6)).unwrap().log_marginal();
    let b = fit_mode(&data, &hyper, &tight(2e-6)).unwrap().log_marginal();
    assert!((a - b).abs() < 1e-4, "{a} vs {b}");
}

/// Analytic gradient against central differences of the whole pipeline
/// (mode refit at every perturbed point), in `(rho, s_l, ln sigma_l, s_d,
/// ln sigma_d)` coordinates.
fn gradient_error(data: &FidelityDataset, hyper: &Hyperparams) -> f64 {
    let config = tight(1e-8);
    let model = fit_mode(data, hyper, &config).unwrap();
    let analytic = grad_hyper(&model)
        .unwrap()
        .unconstrained(&hyper.theta_l, &hyper.theta_d);
    let warm = model.state().alpha().clone();
    let numeric = finite_diff_gradient(
        |x| {
            let h = Hyperparams::from_unconstrained(&[x[0], x[1], x[2], x[3], x[4]]);
            Ok(fit_mode_from(data, &h, &config, Some(&warm))?.log_marginal())
        },
        &hyper.to_unconstrained(),
        1e-4,
    )
    .unwrap();
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_err(*a, *n, 1e-3 * scale.max(1.0)))
        .fold(0.0, f64::max)
}

#[test]
fn hyper_gradient_matches_refit_finite_differences() {
    for seed in 0..24u64 {
        let mut r = rng(100 + seed);
        let data = random_dataset(&mut r, 20 + (seed as usize % 3) * 5, 10, 2);
        let hyper = random_hyper(&mut r, RHOS[seed as usize % 6]);
        let err = gradient_error(&data, &hyper);
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn no_high_fidelity_gives_zero_high_gradients() {
    let mut r = rng(5);
    let full = random_dataset(&mut r, 20, 0, 2);
    let hyper = random_hyper(&mut r, 0.7);
    let g = grad_hyper(&fit_mode(&full, &hyper, &FitConfig::default()).unwrap()).unwrap();
    assert_eq!(g.d_rho, 0.0);
    assert_eq!(g.d_theta_d, (0.0, 0.0));
}

#[test]
fn unconverged_model_is_rejected_by_gradient() {
    let mut r = rng(8);
    let data = random_dataset(&mut r, 15, 8, 2);
    let hyper = random_hyper(&mut r, 1.0);
    let model = fit_mode(&data, &hyper, &FitConfig::default()).unwrap();
    let mut xi = model.xi_hat().values().clone();
    xi[0] += 0.5;
    let moved = FittedModel::from_mode(data, hyper, FitConfig::default(), xi).unwrap();
    assert!(!moved.is_converged());
    assert!(matches!(grad_hyper(&moved), Err(Error::Unconverged { .. })));
}

#[test]
fn duplicated_points_keep_gradient_signs() {
    let mut r = rng(21);
    let data = random_dataset(&mut r, 12, 6, 2);
    let hyper = random_hyper(&mut r, 0.9);
    let stack = |x: &DMatrix<f64>, y: &[bool]| {
        let mut xx = DMatrix::zeros(2 * x.nrows(), x.ncols());
        xx.rows_mut(0, x.nrows()).copy_from(x);
        xx.rows_mut(x.nrows(), x.nrows()).copy_from(x);
        let mut yy = y.to_vec();
        yy.extend_from_slice(y);
        (xx, yy)
    };
    let (xl, yl) = stack(&data.x_low, &data.y_low);
    let (xh, yh) = stack(&data.x_high, &data.y_high);
    let doubled = FidelityDataset::new(xl, yl, xh, yh).unwrap();
    let config = tight(1e-6);
    let g1 = grad_hyper(&fit_mode(&data, &hyper, &config).unwrap()).unwrap();
    let g2 = grad_hyper(&fit_mode(&doubled, &hyper, &config).unwrap()).unwrap();
    let a = g1.unconstrained(&hyper.theta_l, &hyper.theta_d);
    let b = g2.unconstrained(&hyper.theta_l, &hyper.theta_d);
    for (x, y) in a.iter().zip(&b) {
        if x.abs() > 1e-3 && y.abs() > 1e-3 {
            assert_eq!(x.signum(), y.signum(), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn far_test_points_predict_one_half() {
    let mut r = rng(2);
    let data = random_dataset(&mut r, 20, 10, 2);
    let hyper = random_hyper(&mut r, 1.0);
    let model = fit_mode(&data, &hyper, &FitConfig::default()).unwrap();
    let width = hyper.theta_l.sigma().max(hyper.theta_d.sigma());
    let far = DMatrix::from_row_slice(2, 2, &[30.0 * width + 1.0, 0.0, -40.0 * width, 5.0]);
    for s in predict(&model, &far).unwrap() {
        assert!(s.latent_mean.abs() < 1e-12);
        assert!((s.probability - 0.5).abs() < 1e-12);
    }
}

#[test]
fn label_flip_negates_predictions() {
    let mut r = rng(4);
    let data = random_dataset(&mut r, 25, 12, 2);
    let hyper = random_hyper(&mut r, -0.5);
    let config = tight(1e-8);
    let a = fit_mode(&data, &hyper, &config).unwrap();
    let b = fit_mode(&data.flipped(), &hyper, &config).unwrap();
    let test = DMatrix::from_fn(30, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0);
    let pa = predict(&a, &test).unwrap();
    let pb = predict(&b, &test).unwrap();
    for (x, y) in pa.iter().zip(&pb) {
        assert!((x.latent_mean + y.latent_mean).abs() < 1e-8);
    }
}

#[test]
fn high_only_model_equals_single_fidelity_co_kriging_kernel() {
    for (seed, rho) in RHOS.iter().enumerate() {
        let mut r = rng(40 + seed as u64);
        let data = random_dataset(&mut r, 0, 25, 2);
        let hyper = random_hyper(&mut r, *rho);
        let eps = 1e-6;
        let mf = fit_mode(&data, &hyper, &tight(eps)).unwrap();
        let sf_config = tight((rho * rho + 1.0) * eps);
        let kernel = KernelSpec::co_kriging(*rho, hyper.theta_l, hyper.theta_d);
        let sf = sf_fit_kernel(&SfDataset::from_high(&data), kernel, &sf_config, None).unwrap();

        let f_mf = DVector::from_vec(mf.xi_hat().high_latent(*rho));
        assert!((&f_mf - sf.f_hat()).amax() < 1e-8, "rho {rho}");

        let test = DMatrix::from_fn(40, 2, |i, j| ((i * 13 + j * 5) % 17) as f64 / 16.0);
        let pm = predict(&mf, &test).unwrap();
        let ps = sf_predict(&sf, &test).unwrap();
        for (a, b) in pm.iter().zip(&ps) {
            assert!((a.latent_mean - b.latent_mean).abs() < 1e-6, "rho {rho}");
        }
    }
}

#[test]
fn reloaded_mode_reproduces_predictions() {
    let mut r = rng(9);
    let data = random_dataset(&mut r, 20, 10, 2);
    let hyper = random_hyper(&mut r, 1.2);
    let model = fit_mode(&data, &hyper, &FitConfig::default()).unwrap();
    let again = FittedModel::from_mode(
        data.clone(),
        hyper,
        FitConfig::default(),
        model.xi_hat().values().clone(),
    )
    .unwrap();
    assert!(again.is_converged());
    assert!((again.log_marginal() - model.log_marginal()).abs() < 1e-10);
    let test = DMatrix::from_fn(10, 2, |i, j| (i + j) as f64 / 12.0);
    let a = predict(&model, &test).unwrap();
    let b = predict(&again, &test).unwrap();
    assert_eq!(a, b);
}
