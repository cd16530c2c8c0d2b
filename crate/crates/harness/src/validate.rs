//! Fast invariant checks run by `mlme-qpt validate`.

use mlme_qpt::channel::{apply_channel, builtin_channel, channel_entropy, choi_from_kraus, random_kraus};
use mlme_qpt::metrics::{random_interior_choi, trace_distance};
use mlme_qpt::operator::HermitianOperator;
use mlme_qpt::random::{random_ket, rng};
use mlme_qpt::setup::{probabilities, product_sic_pom, sample_counts, sic_inputs_builtin, Copies};
use mlme_qpt::solver::{information, mlme_step, MlmeConfig};
use mlme_qpt::{Choi, HermitianOp};
use serde::Serialize;

use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn random_state(d: usize, seed: u64) -> HermitianOp {
    let mut r = rng(seed);
    let a = HermitianOperator::projector(&random_ket::<f64, _>(d, &mut r));
    let b = HermitianOperator::projector(&random_ket::<f64, _>(d, &mut r));
    a.scale(0.7).add(&b.scale(0.3))
}

fn kraus_choi_agreement() -> Result<Check> {
    let mut worst = 0.0f64;
    for (seed, (di, d_o, k)) in [(2, 2, 1), (2, 3, 4), (4, 4, 16), (3, 2, 2)].into_iter().enumerate() {
        let kraus = random_kraus::<f64>(di, d_o, k, seed as u64)?;
        let choi = choi_from_kraus(&kraus);
        for s in 0..3 {
            let rho = random_state(di, 100 + s);
            let diff = kraus.apply(&rho).max_abs_diff(&apply_channel(&choi, &rho)?);
            worst = worst.max(diff);
        }
    }
    Ok(check("kraus_choi_agreement", worst < 1e-10, format!("max deviation {worst:.2e}")))
}

fn sic_ensembles() -> Check {
    let results: Vec<String> = [2, 4, 8]
        .into_iter()
        .filter_map(|d| sic_inputs_builtin::<f64>(d).err().map(|e| format!("d={d}: {e}")))
        .collect();
    check("sic_overlap", results.is_empty(), results.join("; "))
}

fn unitary_entropy() -> Result<Check> {
    let e: Choi = builtin_channel("cnot")?;
    let s = channel_entropy(&e)?;
    let rank = e.rank()?;
    Ok(check(
        "unitary_rank_and_entropy",
        rank == 1 && s.abs() < 1e-10,
        format!("rank {rank}, entropy {s:.2e}"),
    ))
}

fn metric_axioms() -> Result<Check> {
    let e: Vec<Choi> = (0..3).map(|s| random_interior_choi(2, 2, s)).collect::<std::result::Result<_, _>>()?;
    let d = |a: usize, b: usize| trace_distance(&e[a], &e[b]);
    let (ab, bc, ac, ba, aa) = (d(0, 1)?, d(1, 2)?, d(0, 2)?, d(1, 0)?, d(0, 0)?);
    let ok = aa.abs() < 1e-12 && (ab - ba).abs() < 1e-12 && ac <= ab + bc + 1e-12 && ab > 0.0 && ab <= 1.0;
    Ok(check("trace_distance_axioms", ok, format!("d01 {ab:.4}, d12 {bc:.4}, d02 {ac:.4}")))
}

fn ascent_preserves_constraints() -> Result<Check> {
    let truth: Choi = builtin_channel("cnot")?;
    let inputs = sic_inputs_builtin::<f64>(4)?.select(&[0, 1, 2, 3, 4, 5]);
    let pom = product_sic_pom::<f64>(2)?;
    let data = sample_counts(&probabilities(&truth, &inputs, &pom)?, Copies::Finite(1000), 7)?;
    let cfg = MlmeConfig::default();
    let mut e = Choi::maximally_mixed(4, 4);
    let mut info = information(&e, &data, &inputs, &pom, cfg.lambda)?;
    let (mut tp, mut neg, mut drop) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        e = mlme_step(&e, &data, &inputs, &pom, &cfg)?;
        let next = information(&e, &data, &inputs, &pom, cfg.lambda)?;
        tp = tp.max(e.tp_residual());
        neg = neg.max(-e.matrix().min_eigenvalue()?);
        drop = drop.max(info - next);
        info = next;
    }
    Ok(check(
        "ascent_constraints",
        tp < 1e-9 && neg < 1e-9 && drop <= 1e-12,
        format!("TP residual {tp:.2e}, negativity {neg:.2e}, largest decrease {drop:.2e}"),
    ))
}

/// Runs every check; the caller decides how to report failures.
pub fn run_checks() -> Result<Vec<Check>> {
    Ok(vec![
        kraus_choi_agreement()?,
        sic_ensembles(),
        unitary_entropy()?,
        metric_axioms()?,
        ascent_preserves_constraints()?,
    ])
}
