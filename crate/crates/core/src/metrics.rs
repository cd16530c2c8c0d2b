//! Figures of merit: trace-class distance between Choi operators, the spread
//! of the maximum-likelihood plateau, and the attained information gain.

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ChoiOperator;
use crate::error::{Error, Result};
use crate::operator::{frobenius, hermitian_part, trace_norm, HermitianOperator};
use crate::random::{derive_seed, gaussian_matrix, rng};
use crate::scalar::{re, CMatrix, Real};
use crate::setup::{InputEnsemble, Pom, TomographyData};
use crate::solver::{congruence_update, ser_real, solve_model, LikelihoodModel, MlmeConfig};

/// `(1 / 2D_i) tr|a − b|`.
pub fn trace_distance<T: Real>(a: &ChoiOperator<T>, b: &ChoiOperator<T>) -> Result<T> {
    if a.d_in() != b.d_in() || a.d_out() != b.d_out() {
        return Err(Error::Dimension(format!(
            "{}->{} vs {}->{}",
            a.d_in(),
            a.d_out(),
            b.d_in(),
            b.d_out()
        )));
    }
    let diff = a.matrix().sub(b.matrix());
    Ok(trace_norm(&diff) / (T::lit(2.0) * T::from_usize_lossy(a.d_in())))
}

/// Random interior trace-preserving Choi operator: a Wishart matrix pushed
/// through the partial-trace normalizer.
pub fn random_interior_choi<T: Real>(d_in: usize, d_out: usize, seed: u64) -> Result<ChoiOperator<T>> {
    let n = d_in * d_out;
    let mut r = rng(seed);
    let x = gaussian_matrix::<T, _>(n, n, &mut r);
    let w = hermitian_part(&(&x * x.adjoint()));
    let e = congruence_update(&w, &CMatrix::zeros(n, n), d_in, d_out)?;
    Ok(ChoiOperator::from_parts(HermitianOperator::symmetrized(e), d_in, d_out))
}

/// Settings for sampling the maximum-likelihood plateau.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleConfig {
    pub solver: MlmeConfig,
    /// Extra attempts allowed beyond `n_samples` before giving up.
    pub max_retries: usize,
    /// Accept a run whose residual did not reach tolerance if the ascent
    /// stalled within this factor of it.
    pub stall_factor: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            solver: MlmeConfig::default().ml(),
            max_retries: 50,
            stall_factor: 1.0,
        }
    }
}

/// `n_samples` ML estimators (`λ = 0`) from independent random interior
/// starts. Non-converged runs are replaced up to `max_retries` times.
pub fn ml_sample<T: Real>(
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    pom: &Pom<T>,
    n_samples: usize,
    seed: u64,
    cfg: &SampleConfig,
) -> Result<Vec<ChoiOperator<T>>> {
    if n_samples < 2 {
        return Err(Error::Parameter(format!("n_samples must be >= 2, got {n_samples}")));
    }
    let model = LikelihoodModel::new(data, inputs, pom)?;
    let solver = cfg.solver.ml();
    let attempts = n_samples + cfg.max_retries;
    let mut out = Vec::with_capacity(n_samples);
    let mut next = 0usize;
    while out.len() < n_samples {
        let want = n_samples - out.len();
        if next + want > attempts {
            return Err(Error::Parameter(format!(
                "only {} of {n_samples} ML samples converged after {attempts} attempts",
                out.len()
            )));
        }
        let batch: Vec<Result<Option<ChoiOperator<T>>>> = (next..next + want)
            .into_par_iter()
            .map(|k| {
                let start = random_interior_choi(model.d_in, model.d_out, derive_seed(seed, &[k as u64]))?;
                let report = solve_model(&model, &solver, Some(&start), &mut |_, _, _| {})?;
                let ok = report.converged
                    || report.final_residual.as_f64() < solver.residual_tol * cfg.stall_factor;
                Ok(ok.then_some(report.estimator))
            })
            .collect();
        next += want;
        for r in batch {
            if let Some(e) = r? {
                out.push(e);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "")]
pub struct PlateauReport<T: Real> {
    pub centroid: ChoiOperator<T>,
    #[serde(serialize_with = "ser_real")]
    pub delta: T,
    /// Standard error of `Δ` from the delta method over samples.
    #[serde(serialize_with = "ser_real")]
    pub delta_stderr: T,
    pub n_samples: usize,
    /// Normalized log-likelihood at the samples (filled by the caller when known).
    pub loglik_max: Option<f64>,
}

/// Centroid and normalized Hilbert–Schmidt spread
/// `Δ = (1/D_i) √(Σ_j tr{(E_j − Ē)²} / 2N₀)`.
pub fn plateau_size<T: Real>(samples: &[ChoiOperator<T>]) -> Result<PlateauReport<T>> {
    if samples.len() < 2 {
        return Err(Error::Parameter(format!(
            "plateau needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let (d_in, d_out) = (samples[0].d_in(), samples[0].d_out());
    if samples.iter().any(|s| s.d_in() != d_in || s.d_out() != d_out) {
        return Err(Error::Dimension("samples differ in dimensions".into()));
    }
    let n = samples.len();
    let nf = T::from_usize_lossy(n);
    let dim = d_in * d_out;
    let mean = samples
        .iter()
        .fold(CMatrix::<T>::zeros(dim, dim), |acc, s| acc + s.matrix().matrix())
        * re(T::one() / nf);
    let sq: Vec<T> = samples
        .iter()
        .map(|s| {
            let f = frobenius(&(s.matrix().matrix() - &mean));
            f * f
        })
        .collect();
    let mean_sq = sq.iter().fold(T::zero(), |a, &x| a + x) / nf;
    let var_sq = sq
        .iter()
        .fold(T::zero(), |a, &x| a + (x - mean_sq) * (x - mean_sq))
        / T::from_usize_lossy(n - 1);
    let di = T::from_usize_lossy(d_in);
    let delta = (mean_sq / T::lit(2.0)).sqrt() / di;
    // dΔ/d(mean_sq) = 1 / (4 D_i² Δ)
    let delta_stderr = if delta > T::zero() {
        (var_sq / nf).sqrt() / (T::lit(4.0) * di * di * delta)
    } else {
        T::zero()
    };
    Ok(PlateauReport {
        centroid: ChoiOperator::from_parts(HermitianOperator::symmetrized(mean), d_in, d_out),
        delta,
        delta_stderr,
        n_samples: n,
        loglik_max: None,
    })
}

/// Normalized log-likelihood at an ML solution (`λ = 0`, maximally mixed start).
pub fn loglik_max<T: Real>(
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    pom: &Pom<T>,
    cfg: &MlmeConfig,
) -> Result<T> {
    let model = LikelihoodModel::new(data, inputs, pom)?;
    let report = solve_model(&model, &cfg.ml(), None, &mut |_, _, _| {})?;
    Ok(report.final_information)
}

/// `Σ f_lm log f_lm`, the largest attainable normalized log-likelihood.
pub fn information_bound<T: Real>(data: &TomographyData<T>) -> T {
    data.global_frequencies()
        .iter()
        .flatten()
        .filter(|&&f| f > T::zero())
        .fold(T::zero(), |a, &f| a + f * f.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{builtin_channel, unitary_choi, BuiltinChannel};
    use crate::setup::{probabilities, product_sic_pom, sample_counts, sic_inputs_builtin, Copies};

    #[test]
    fn cnot_to_identity_distance() {
        let a: ChoiOperator<f64> = builtin_channel("cnot").unwrap();
        let b: ChoiOperator<f64> = builtin_channel("identity:4").unwrap();
        // √(1 − |tr U†V|² / D²) with |tr CNOT| = 2
        let expected = (1.0f64 - 4.0 / 16.0).sqrt();
        assert!((trace_distance(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn unitary_to_flat_distance() {
        // E = D|ψ⟩⟨ψ| with tr E = D_i = 4; flat = 1/4. Eigenvalues of E − 1/4:
        // one at 4 − 1/4, fifteen at −1/4; tr|·| = 3.75 + 3.75 = 7.5.
        let a: ChoiOperator<f64> = builtin_channel("cnot").unwrap();
        let b = ChoiOperator::maximally_mixed(4, 4);
        assert!((trace_distance(&a, &b).unwrap() - 7.5 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn distance_rejects_mismatch() {
        let a = ChoiOperator::<f64>::maximally_mixed(2, 2);
        let b = ChoiOperator::<f64>::maximally_mixed(4, 4);
        assert!(trace_distance(&a, &b).is_err());
    }

    #[test]
    fn random_interior_is_valid() {
        for s in 0..5 {
            let e = random_interior_choi::<f64>(2, 3, s).unwrap();
            assert!(ChoiOperator::new(e.matrix().clone(), 2, 3).is_ok());
            assert!(e.matrix().min_eigenvalue().unwrap() > 1e-6);
        }
    }

    #[test]
    fn identical_samples_have_zero_spread() {
        let e = random_interior_choi::<f64>(2, 2, 1).unwrap();
        let rep = plateau_size(&[e.clone(), e.clone(), e]).unwrap();
        assert!(rep.delta < 1e-15);
        assert!(plateau_size(&[ChoiOperator::<f64>::maximally_mixed(2, 2)]).is_err());
    }

    #[test]
    fn two_point_spread_matches_closed_form() {
        // Two samples: Δ = ‖a − b‖_F / (2 √2 D_i).
        let a = random_interior_choi::<f64>(2, 2, 3).unwrap();
        let b = random_interior_choi::<f64>(2, 2, 4).unwrap();
        let f = a.matrix().sub(b.matrix()).frobenius_norm();
        let rep = plateau_size(&[a, b]).unwrap();
        assert!((rep.delta - f / (2.0 * 2f64.sqrt() * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn empty_data_gives_wide_plateau() {
        let inputs = sic_inputs_builtin::<f64>(2).unwrap();
        let pom = product_sic_pom::<f64>(1).unwrap();
        let mut data = TomographyData::new(Copies::Finite(10));
        data.push_counts(0, vec![0; 4]).unwrap();
        let samples = ml_sample(&data, &inputs, &pom, 20, 5, &SampleConfig::default()).unwrap();
        assert!(plateau_size(&samples).unwrap().delta > 0.05);
        assert_eq!(loglik_max(&data, &inputs, &pom, &MlmeConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn complete_qubit_data_collapse_the_plateau() {
        let e: ChoiOperator<f64> = unitary_choi(BuiltinChannel::Identity(2).unitary()).unwrap();
        let inputs = sic_inputs_builtin::<f64>(2).unwrap();
        let pom = product_sic_pom::<f64>(1).unwrap();
        // A slightly mixed truth keeps the ML point interior.
        let mixed = ChoiOperator::from_parts(
            e.matrix().scale(0.9).add(&ChoiOperator::maximally_mixed(2, 2).matrix().scale(0.1)),
            2,
            2,
        );
        let p = probabilities(&mixed, &inputs, &pom).unwrap();
        let data = sample_counts(&p, Copies::Noiseless, 0).unwrap();
        let samples = ml_sample(&data, &inputs, &pom, 10, 1, &SampleConfig::default()).unwrap();
        for s in &samples[1..] {
            assert!(trace_distance(s, &samples[0]).unwrap() < 1e-4);
        }
        let bound = information_bound(&data);
        let max = loglik_max(&data, &inputs, &pom, &MlmeConfig::default()).unwrap();
        assert!((max - bound).abs() < 1e-8, "{max} vs {bound}");
    }
}
