//! End-to-end behaviour of the MLME ascent on simulated data.

use mlme_qpt::channel::{channel_entropy, random_channel, ChoiOperator};
use mlme_qpt::metrics::{random_interior_choi, trace_distance};
use mlme_qpt::operator::{kron_identity, ptrace_second, HermitianOperator};
use mlme_qpt::random::{gaussian_matrix, rng};
use mlme_qpt::setup::{
    probabilities, product_sic_pom, sample_counts, sic_inputs_builtin, Copies, InputEnsemble, Pom, TomographyData,
};
use mlme_qpt::solver::{
    extremal_residual, information, mlme_solve, mlme_step, normalized_log_likelihood, w_operator, MlmeConfig,
};
use mlme_qpt::Choi;
use nalgebra::Complex;

type Setup = (Choi, InputEnsemble<f64>, Pom<f64>, TomographyData<f64>);

fn qubit_setup(n_inputs: usize, copies: Copies) -> Setup {
    let truth = random_channel::<f64>(2, 2, 2, 11).unwrap();
    let inputs = sic_inputs_builtin::<f64>(2).unwrap().select(&(0..n_inputs).collect::<Vec<_>>());
    let pom = product_sic_pom::<f64>(1).unwrap();
    let data = sample_counts(&probabilities(&truth, &inputs, &pom).unwrap(), copies, 3).unwrap();
    (truth, inputs, pom, data)
}

/// Hermitian direction with `tr_K X = 0`, so `E ± hX` stays trace preserving.
fn tp_direction(di: usize, d_o: usize, seed: u64) -> HermitianOperator<f64> {
    let g = gaussian_matrix::<f64, _>(di * d_o, di * d_o, &mut rng(seed));
    let h = (&g + g.adjoint()) * Complex::new(0.5, 0.0);
    let correction = kron_identity(&ptrace_second(&h, di, d_o), d_o) * Complex::new(1.0 / d_o as f64, 0.0);
    HermitianOperator::symmetrized(h - correction)
}

#[test]
fn gradient_matches_finite_differences() {
    let (_, inputs, pom, data) = qubit_setup(3, Copies::Finite(200));
    let e = random_interior_choi::<f64>(2, 2, 4).unwrap();
    for lambda in [0.0, 1e-2] {
        let w = w_operator(&e, &data, &inputs, &pom, lambda).unwrap();
        for seed in 0..3 {
            let x = tp_direction(2, 2, seed);
            let h = 1e-6;
            let at = |s: f64| {
                let m = e.matrix().add(&x.scale(s));
                information(&ChoiOperator::from_parts(m, 2, 2), &data, &inputs, &pom, lambda).unwrap()
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let analytic = w.trace_product(&x);
            let rel = (numeric - analytic).abs() / analytic.abs().max(1e-3);
            assert!(rel < 1e-4, "λ = {lambda}: {numeric} vs {analytic}");
        }
    }
}

#[test]
fn every_iteration_ascends_and_stays_physical() {
    let truth = random_channel::<f64>(4, 4, 3, 2).unwrap();
    let inputs = sic_inputs_builtin::<f64>(4).unwrap().select(&[0, 3, 5, 9, 12]);
    let pom = product_sic_pom::<f64>(2).unwrap();
    let data = sample_counts(&probabilities(&truth, &inputs, &pom).unwrap(), Copies::Finite(1000), 1).unwrap();
    let cfg = MlmeConfig::default();
    let mut e = random_interior_choi::<f64>(4, 4, 9).unwrap();
    let mut info = information(&e, &data, &inputs, &pom, cfg.lambda).unwrap();
    for it in 0..200 {
        e = mlme_step(&e, &data, &inputs, &pom, &cfg).unwrap();
        let next = information(&e, &data, &inputs, &pom, cfg.lambda).unwrap();
        assert!(next >= info - 1e-12 * info.abs().max(1.0), "iteration {it}: {info} -> {next}");
        assert!(e.tp_residual() < 1e-9, "iteration {it}: TP residual {}", e.tp_residual());
        assert!(e.matrix().min_eigenvalue().unwrap() > -1e-9);
        info = next;
    }
}

#[test]
fn uninformative_data_give_the_maximally_mixed_channel() {
    let inputs = sic_inputs_builtin::<f64>(2).unwrap().select(&[0]);
    let pom = Pom::new(vec![HermitianOperator::identity(3)]).unwrap();
    let mut data = TomographyData::new(Copies::Finite(100));
    data.push_counts(0, vec![100]).unwrap();
    let start = random_interior_choi::<f64>(2, 3, 1).unwrap();
    // The entropy term is a λ-sized part of W, so the residual must go well below λ·1e-6.
    let cfg = MlmeConfig {
        residual_tol: 1e-10,
        ..MlmeConfig::default()
    };
    let rep = mlme_solve(&data, &inputs, &pom, &cfg, Some(&start)).unwrap();
    assert!(rep.converged);
    let flat = ChoiOperator::maximally_mixed(2, 3);
    assert!(rep.estimator.matrix().max_abs_diff(flat.matrix()) < 1e-6);
}

#[test]
fn complete_data_have_a_unique_ml_point() {
    // Full-rank truth keeps the ML point interior.
    let truth = random_channel::<f64>(2, 2, 4, 5).unwrap();
    let inputs = sic_inputs_builtin::<f64>(2).unwrap();
    let pom = product_sic_pom::<f64>(1).unwrap();
    let data = sample_counts(&probabilities(&truth, &inputs, &pom).unwrap(), Copies::Noiseless, 0).unwrap();
    let cfg = MlmeConfig {
        residual_tol: 1e-10,
        ..MlmeConfig::default().ml()
    };
    let estimates: Vec<Choi> = (0..10)
        .map(|s| {
            let start = random_interior_choi(2, 2, 100 + s).unwrap();
            mlme_solve(&data, &inputs, &pom, &cfg, Some(&start)).unwrap().estimator
        })
        .collect();
    for e in &estimates {
        assert!(trace_distance(e, &estimates[0]).unwrap() < 1e-6);
        assert!(trace_distance(e, &truth).unwrap() < 1e-6);
    }
}

#[test]
fn uniform_efficiency_does_not_change_the_estimator() {
    let truth = random_channel::<f64>(2, 2, 2, 8).unwrap();
    let inputs = sic_inputs_builtin::<f64>(2).unwrap().select(&[0, 1]);
    let perfect = product_sic_pom::<f64>(1).unwrap();
    let lossy = perfect.with_uniform_efficiency(0.4).unwrap();
    // Run to the round-off floor of the ascent rather than the default tolerance.
    let cfg = MlmeConfig {
        residual_tol: 1e-9,
        ..MlmeConfig::default()
    };
    let solve = |pom: &Pom<f64>| {
        let data = sample_counts(&probabilities(&truth, &inputs, pom).unwrap(), Copies::Noiseless, 0).unwrap();
        mlme_solve(&data, &inputs, pom, &cfg, None).unwrap()
    };
    let a = solve(&perfect);
    let b = solve(&lossy);
    assert!(a.final_residual < 1e-6 && b.final_residual < 1e-6);
    assert!(trace_distance(&a.estimator, &b.estimator).unwrap() < 1e-6);
}

#[test]
fn small_entropy_weights_leave_the_estimate_stable() {
    // Full-rank channel, four of sixteen SIC inputs, noiseless data.
    let truth = random_channel::<f64>(4, 4, 16, 1).unwrap();
    let inputs = sic_inputs_builtin::<f64>(4).unwrap().select(&[0, 1, 2, 3]);
    let pom = product_sic_pom::<f64>(2).unwrap();
    let data = sample_counts(&probabilities(&truth, &inputs, &pom).unwrap(), Copies::Noiseless, 0).unwrap();
    let values: Vec<(f64, f64)> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&lambda| {
            let cfg = MlmeConfig {
                lambda,
                ..MlmeConfig::default()
            };
            let e = mlme_solve(&data, &inputs, &pom, &cfg, None).unwrap().estimator;
            (
                normalized_log_likelihood(&e, &data, &inputs, &pom).unwrap(),
                channel_entropy(&e).unwrap(),
            )
        })
        .collect();
    for (ll, s) in &values[1..] {
        assert!((ll - values[0].0).abs() / values[0].0.abs() < 0.01, "{values:?}");
        assert!((s - values[0].1).abs() / values[0].1 < 0.01, "{values:?}");
    }
}

#[test]
fn residual_separates_start_from_solution() {
    let (_, inputs, pom, data) = qubit_setup(3, Copies::Finite(500));
    let cfg = MlmeConfig::default();
    let flat = ChoiOperator::maximally_mixed(2, 2);
    let r0 = extremal_residual(&flat, &data, &inputs, &pom, cfg.lambda).unwrap();
    let rep = mlme_solve(&data, &inputs, &pom, &cfg, None).unwrap();
    assert!(rep.converged);
    let r1 = extremal_residual(&rep.estimator, &data, &inputs, &pom, cfg.lambda).unwrap();
    assert!(r0 > 1e3 * cfg.residual_tol, "start residual {r0}");
    assert!(r1 < cfg.residual_tol);
}
