//! Maximum projected log-likelihood (MPL): joint ascent over a channel
//! estimator and a prospective input state, where the outcome frequencies
//! of the prospective input are predicted by a prior channel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChoiOperator;
use crate::error::{Error, Result};
use crate::metrics::trace_distance;
use crate::operator::{frobenius, hermitian_part, matmul, trace_norm, HermitianOperator};
use crate::random::{derive_seed, random_ket, rng};
use crate::scalar::{re, CMatrix, Real};
use crate::setup::{InputEnsemble, Pom, TomographyData};
use crate::solver::{
    admissible, backtrack, grown, residual_with, ser_real, Backtracking, Direction, LikelihoodModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MplConfig {
    /// Initial step for the channel update.
    pub step_channel: f64,
    /// Initial step for the state update.
    pub step_state: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub backtracking: Backtracking,
}

impl Default for MplConfig {
    fn default() -> Self {
        Self {
            step_channel: 0.1,
            step_state: 0.1,
            max_iters: 5000,
            residual_tol: 1e-5,
            backtracking: Backtracking::default(),
        }
    }
}

impl MplConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_channel > 0.0 && self.step_state > 0.0) {
            return Err(Error::Parameter("MPL steps must be > 0".into()));
        }
        if !(self.residual_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "MPL residual_tol must be > 0, got {}",
                self.residual_tol
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "")]
pub struct MplReport<T: Real> {
    pub state: HermitianOperator<T>,
    pub estimator: ChoiOperator<T>,
    #[serde(serialize_with = "ser_real")]
    pub projected_log_likelihood: T,
    pub iterations: usize,
    #[serde(serialize_with = "ser_real")]
    pub channel_residual: T,
    #[serde(serialize_with = "ser_real")]
    pub state_residual: T,
    pub converged: bool,
}

/// Augmented model: the recorded rows plus one row for the prospective
/// input, all weighted by `1/(L+1)`.
struct Projected<'a, T: Real> {
    model: LikelihoodModel<T>,
    /// `ρ`-gradients of the prior's predicted frequencies, one per outcome.
    prior_blocks: Vec<CMatrix<T>>,
    pom: &'a [CMatrix<T>],
    scale: T,
}

#[derive(Clone, Debug)]
struct Pair<T: Real> {
    e: CMatrix<T>,
    rho: CMatrix<T>,
    value: T,
    /// Channel gradient `X`.
    x: CMatrix<T>,
    /// `X E`.
    xe: CMatrix<T>,
    /// State gradient `Y`.
    y: CMatrix<T>,
    e_res: T,
    rho_res: T,
}

impl<T: Real> Pair<T> {
    fn residual(&self) -> T {
        self.e_res.max(self.rho_res)
    }
}

/// `tr_K{E (1_H ⊗ Π)}^T`, the gradient of `tr{E (ρ^T ⊗ Π)}` with respect to `ρ`.
fn outcome_block<T: Real>(e: &CMatrix<T>, pi: &CMatrix<T>, d_in: usize, d_out: usize) -> CMatrix<T> {
    CMatrix::from_fn(d_in, d_in, |j, k| {
        let mut acc = re(T::zero());
        for a in 0..d_out {
            for b in 0..d_out {
                acc += pi[(a, b)] * e[(k * d_out + b, j * d_out + a)];
            }
        }
        acc
    })
}

/// `tr{ρ B}` for Hermitian `ρ` and `B`.
fn pair_trace<T: Real>(rho: &CMatrix<T>, block: &CMatrix<T>) -> T {
    let mut acc = T::zero();
    for j in 0..rho.nrows() {
        for k in 0..rho.ncols() {
            acc += (rho[(j, k)] * block[(k, j)]).re;
        }
    }
    acc
}

impl<'a, T: Real> Projected<'a, T> {
    fn new(
        data: &TomographyData<T>,
        inputs: &InputEnsemble<T>,
        e_prior: &ChoiOperator<T>,
        pom: &'a [CMatrix<T>],
    ) -> Result<Self> {
        let d_in = inputs.dim();
        let d_out = e_prior.d_out();
        if e_prior.d_in() != d_in || pom.first().map_or(0, |p| p.nrows()) != d_out {
            return Err(Error::Dimension("prior, inputs and POM disagree in dimension".into()));
        }
        let l = data.num_inputs();
        let scale = T::one() / T::from_usize_lossy(l + 1);
        let mut rho = Vec::with_capacity(l + 1);
        let mut f = Vec::with_capacity(l + 1);
        for row in data.rows() {
            if row.input >= inputs.len() {
                return Err(Error::Dimension(format!("unknown input {}", row.input)));
            }
            if row.frequencies.len() != pom.len() {
                return Err(Error::Dimension("data and POM disagree in outcomes".into()));
            }
            rho.push(inputs.state(row.input).matrix().clone());
            f.push(row.frequencies.iter().map(|&v| v * scale).collect());
        }
        rho.push(CMatrix::identity(d_in, d_in) * re(T::one() / T::from_usize_lossy(d_in)));
        f.push(vec![T::zero(); pom.len()]);
        let model = LikelihoodModel::from_parts(d_in, d_out, rho, pom.to_vec(), f, scale);
        let prior_blocks = pom
            .iter()
            .map(|pi| outcome_block(e_prior.matrix().matrix(), pi, d_in, d_out))
            .collect();
        Ok(Self {
            model,
            prior_blocks,
            pom,
            scale,
        })
    }

    fn set_state(&mut self, rho: &CMatrix<T>) -> Vec<T> {
        let last = self.model.rho.len() - 1;
        let predicted: Vec<T> = self
            .prior_blocks
            .iter()
            .map(|b| pair_trace(rho, b).max(T::zero()))
            .collect();
        self.model.rho[last] = rho.clone();
        self.model.rho_t[last] = rho.transpose();
        self.model.f[last] = predicted.iter().map(|&v| v * self.scale).collect();
        predicted
    }

    fn evaluate(&mut self, e: CMatrix<T>, rho: CMatrix<T>) -> Result<Pair<T>> {
        let (di, d_o) = (self.model.d_in, self.model.d_out);
        let predicted = self.set_state(&rho);
        let p = self.model.probabilities(&e)?;
        let value = self.model.log_likelihood(&p);
        let x = self.model.data_gradient(&p)?;
        let last = p.len() - 1;
        let mut y = CMatrix::<T>::zeros(di, di);
        for (m, pi) in self.pom.iter().enumerate() {
            let pm = p[last][m];
            if pm <= T::zero() {
                if predicted[m] > T::zero() {
                    return Err(Error::ImpossibleData { input: last, outcome: m });
                }
                continue;
            }
            y += &self.prior_blocks[m] * re(pm.ln() * self.scale);
            if predicted[m] > T::zero() {
                y += outcome_block(&e, pi, di, d_o) * re(predicted[m] * self.scale * self.scale / pm);
            }
        }
        let y = hermitian_part(&y);
        let xe = matmul(&x, &e);
        let e_res = residual_with(&xe, &x, &e, di, d_o)?;
        let rho_res = state_residual(&y, &rho);
        Ok(Pair {
            e,
            rho,
            value,
            x,
            xe,
            y,
            e_res,
            rho_res,
        })
    }
}

/// `‖Y ρ − tr{Y ρ} ρ‖_F / ‖Y‖_F`.
fn state_residual<T: Real>(y: &CMatrix<T>, rho: &CMatrix<T>) -> T {
    let yr = matmul(y, rho);
    let t = yr.trace();
    let denom = frobenius(y);
    if denom == T::zero() {
        return T::zero();
    }
    frobenius(&(yr - rho * t)) / denom
}

/// `ρ' ∝ (1 + εΞ) ρ (1 + εΞ)` with `Ξ = Y − tr{Y ρ}`.
fn state_update<T: Real>(y: &CMatrix<T>, rho: &CMatrix<T>, eps: T) -> Result<CMatrix<T>> {
    let n = rho.nrows();
    let t = matmul(y, rho).trace();
    let xi = (y - CMatrix::identity(n, n) * t) * re(eps);
    let g = CMatrix::identity(n, n) + xi;
    let next = hermitian_part(&matmul(&matmul(&g, rho), &g));
    let tr = next.trace().re;
    if !(tr > T::zero()) || !tr.is_finite() {
        return Err(Error::SingularNormalizer(tr.as_f64()));
    }
    Ok(next * re(T::one() / tr))
}

/// Normalized projected log-likelihood of `(e, rho)`.
pub fn projected_log_likelihood<T: Real>(
    e: &ChoiOperator<T>,
    rho: &HermitianOperator<T>,
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    e_prior: &ChoiOperator<T>,
    pom: &Pom<T>,
) -> Result<T> {
    let outcomes = pom.effective_outcomes();
    let mut proj = Projected::new(data, inputs, e_prior, &outcomes)?;
    proj.set_state(rho.matrix());
    let p = proj.model.probabilities(e.matrix().matrix())?;
    Ok(proj.model.log_likelihood(&p))
}

/// Gradients `(X, Y)` of the projected log-likelihood with respect to the
/// channel and the prospective state.
pub fn projected_gradients<T: Real>(
    e: &ChoiOperator<T>,
    rho: &HermitianOperator<T>,
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    e_prior: &ChoiOperator<T>,
    pom: &Pom<T>,
) -> Result<(HermitianOperator<T>, HermitianOperator<T>)> {
    let outcomes = pom.effective_outcomes();
    let mut proj = Projected::new(data, inputs, e_prior, &outcomes)?;
    let pair = proj.evaluate(e.matrix().matrix().clone(), rho.matrix().clone())?;
    Ok((HermitianOperator::symmetrized(pair.x), HermitianOperator::symmetrized(pair.y)))
}

/// Joint ascent from a random pure state (drawn from `seed`) and `e_start`
/// (maximally mixed when absent). Channel and state steps alternate, each
/// with its own backtracking.
pub fn mpl_solve<T: Real>(
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    e_prior: &ChoiOperator<T>,
    pom: &Pom<T>,
    cfg: &MplConfig,
    seed: u64,
    e_start: Option<&ChoiOperator<T>>,
) -> Result<MplReport<T>> {
    let mut r = rng(seed);
    let ket = random_ket::<T, _>(inputs.dim(), &mut r);
    let rho = HermitianOperator::projector(&ket);
    mpl_solve_from(data, inputs, e_prior, pom, cfg, &rho, e_start)
}

/// As [`mpl_solve`] with an explicit starting state.
pub fn mpl_solve_from<T: Real>(
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    e_prior: &ChoiOperator<T>,
    pom: &Pom<T>,
    cfg: &MplConfig,
    rho0: &HermitianOperator<T>,
    e_start: Option<&ChoiOperator<T>>,
) -> Result<MplReport<T>> {
    mpl_solve_traced(data, inputs, e_prior, pom, cfg, rho0, e_start, &mut |_| {})
}

/// As [`mpl_solve_from`], reporting every iterate to `observer`.
#[allow(clippy::too_many_arguments)]
pub fn mpl_solve_traced<T: Real>(
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    e_prior: &ChoiOperator<T>,
    pom: &Pom<T>,
    cfg: &MplConfig,
    rho0: &HermitianOperator<T>,
    e_start: Option<&ChoiOperator<T>>,
    observer: &mut dyn FnMut(&MplIterate<'_, T>),
) -> Result<MplReport<T>> {
    cfg.validate()?;
    let outcomes = pom.effective_outcomes();
    let mut proj = Projected::new(data, inputs, e_prior, &outcomes)?;
    let (di, d_o) = (proj.model.d_in, proj.model.d_out);
    if rho0.dim() != di {
        return Err(Error::Dimension(format!("state has dimension {}, inputs {di}", rho0.dim())));
    }
    let e0 = match e_start {
        Some(e) if e.d_in() == di && e.d_out() == d_o => e.matrix().matrix().clone(),
        Some(e) => {
            return Err(Error::Dimension(format!(
                "start is {}->{}, problem is {di}->{d_o}",
                e.d_in(),
                e.d_out()
            )))
        }
        None => ChoiOperator::<T>::maximally_mixed(di, d_o).matrix().matrix().clone(),
    };
    let mut pair = proj.evaluate(e0, rho0.matrix().clone())?;
    observer(&MplIterate { e: &pair.e, rho: &pair.rho, value: pair.value });
    let tol = T::lit(cfg.residual_tol);
    let bt = &cfg.backtracking;
    let mut eps_e = T::lit(cfg.step_channel);
    let mut eps_rho = T::lit(cfg.step_state);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        if pair.residual() < tol {
            converged = true;
            break;
        }
        let mut moved = false;
        let current = pair.clone();
        let dir = Direction::new(&current.x, &current.xe, &current.e, di, d_o);
        let step = backtrack(current.value, current.residual(), eps_e, bt, |eps| {
            let next = admissible(
                dir.step(&current.e, eps, di, d_o)
                    .and_then(|e| proj.evaluate(e, current.rho.clone())),
            )?;
            Ok(next.map(|n| {
                let (v, r) = (n.value, n.residual());
                (n, v, r)
            }))
        })?;
        if let Some((next, used)) = step {
            pair = next;
            eps_e = grown(used, bt);
            moved = true;
        }
        let current = pair.clone();
        let step = backtrack(current.value, current.residual(), eps_rho, bt, |eps| {
            let next = admissible(
                state_update(&current.y, &current.rho, eps)
                    .and_then(|rho| proj.evaluate(current.e.clone(), rho)),
            )?;
            Ok(next.map(|n| {
                let (v, r) = (n.value, n.residual());
                (n, v, r)
            }))
        })?;
        if let Some((next, used)) = step {
            pair = next;
            eps_rho = grown(used, bt);
            moved = true;
        }
        iterations += 1;
        observer(&MplIterate { e: &pair.e, rho: &pair.rho, value: pair.value });
        if !moved {
            break;
        }
    }
    if pair.residual() < tol {
        converged = true;
    }
    Ok(MplReport {
        state: HermitianOperator::symmetrized(pair.rho),
        estimator: ChoiOperator::from_parts(HermitianOperator::symmetrized(pair.e), di, d_o),
        projected_log_likelihood: pair.value,
        iterations,
        channel_residual: pair.e_res,
        state_residual: pair.rho_res,
        converged,
    })
}

/// One iterate of the joint ascent.
pub struct MplIterate<'a, T: Real> {
    pub e: &'a CMatrix<T>,
    pub rho: &'a CMatrix<T>,
    pub value: T,
}

/// How MPL and fixed-set candidates are ranked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Merit {
    /// Largest distance between the projected estimator and the current one.
    #[default]
    MaximizeStepDistance,
    /// Smallest distance between the projected estimator and the prior.
    MinimizePriorDistance,
}

impl Merit {
    /// Score where larger is better.
    pub(crate) fn score<T: Real>(
        self,
        projected: &ChoiOperator<T>,
        current: &ChoiOperator<T>,
        prior: &ChoiOperator<T>,
    ) -> Result<T> {
        Ok(match self {
            Merit::MaximizeStepDistance => trace_distance(projected, current)?,
            Merit::MinimizePriorDistance => -trace_distance(projected, prior)?,
        })
    }
}

/// Result of an MPL input selection.
#[derive(Clone, Debug)]
pub struct MplChoice<T: Real> {
    pub state: HermitianOperator<T>,
    pub estimator: ChoiOperator<T>,
    pub merit: T,
    /// Starts whose solution repeated an already used input.
    pub repeated: usize,
    /// Starts that converged.
    pub converged: usize,
    pub starts: usize,
}

impl<T: Real> MplChoice<T> {
    pub fn repetition_rate(&self) -> f64 {
        if self.converged == 0 {
            1.0
        } else {
            self.repeated as f64 / self.converged as f64
        }
    }
}

/// Trace distance between two density operators.
pub fn state_distance<T: Real>(a: &HermitianOperator<T>, b: &HermitianOperator<T>) -> T {
    trace_norm(&a.sub(b)) / T::lit(2.0)
}

/// Runs `starts` MPL solves and returns the best non-repeated state.
/// Starts that repeat a used input (within `repetition_tol`) or fail to
/// converge are discarded; [`Error::RepetitionExhausted`] is returned when
/// nothing survives.
#[allow(clippy::too_many_arguments)]
pub fn mpl_next_input<T: Real>(
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    e_prior: &ChoiOperator<T>,
    e_current: &ChoiOperator<T>,
    used: &[HermitianOperator<T>],
    pom: &Pom<T>,
    cfg: &MplConfig,
    starts: usize,
    repetition_tol: f64,
    merit: Merit,
    seed: u64,
) -> Result<MplChoice<T>> {
    if starts == 0 {
        return Err(Error::Parameter("mpl_starts must be >= 1".into()));
    }
    let tol = T::lit(repetition_tol);
    let solved: Vec<Result<MplReport<T>>> = (0..starts)
        .into_par_iter()
        .map(|k| mpl_solve(data, inputs, e_prior, pom, cfg, derive_seed(seed, &[k as u64]), Some(e_current)))
        .collect();
    let mut best: Option<(MplReport<T>, T)> = None;
    let mut repeated = 0;
    let mut converged = 0;
    for report in solved {
        let report = match report {
            Ok(r) if r.converged => r,
            Ok(_) | Err(Error::ImpossibleData { .. }) => continue,
            Err(e) => return Err(e),
        };
        converged += 1;
        if used.iter().any(|u| state_distance(u, &report.state) < tol) {
            repeated += 1;
            continue;
        }
        let score = merit.score(&report.estimator, e_current, e_prior)?;
        if best.as_ref().is_none_or(|(_, s)| score > *s) {
            best = Some((report, score));
        }
    }
    match best {
        Some((r, merit)) => Ok(MplChoice {
            state: r.state,
            estimator: r.estimator,
            merit,
            repeated,
            converged,
            starts,
        }),
        None => Err(Error::RepetitionExhausted),
    }
}
