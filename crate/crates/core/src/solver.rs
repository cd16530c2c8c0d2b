//! Steepest-ascent maximization of `I(λ; E) = λ S(E) + log 𝓛(E) / (L N)` over
//! trace-preserving positive Choi operators.
//!
//! Every update is a congruence `E' = (1 + Z†) E (1 + Z)` with
//! `1 + Z = (1 + δA) [√(tr_K{(1 + δA) E (1 + δA)}) ⊗ 1_K]^{-1}` and
//! `δA = (ε/2) (W − ½ tr_K{W E + E W} ⊗ 1_K)`, so positivity and
//! `tr_K E = 1_H` hold at every iterate by construction.

use serde::{Deserialize, Serialize};

use crate::channel::{output_operator, ChoiOperator};
use crate::error::{Error, Result};
use crate::operator::{
    eig_matrix, frobenius, hermitian_part, kron_identity, kron_identity_mul, kron_identity_sandwich, matmul,
    ptrace_second, trace_product, HermitianOperator, Spectrum, LOG_FLOOR,
};
use crate::scalar::{re, CMatrix, Real};
use crate::setup::{clamp_probability, InputEnsemble, Pom, TomographyData};

/// Step-size control for the ascent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Backtracking {
    pub enabled: bool,
    /// Factor applied to `ε` when a trial step lowers the objective.
    pub shrink: f64,
    pub max_halvings: u32,
    /// Factor applied to `ε` after an accepted step (1 keeps `ε` fixed).
    pub growth: f64,
    /// Upper bound on `ε` when growing.
    pub max_step: f64,
}

impl Default for Backtracking {
    fn default() -> Self {
        Self {
            enabled: true,
            shrink: 0.5,
            max_halvings: 30,
            growth: 1.5,
            max_step: 1e4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmeConfig {
    /// Entropy weight `λ`.
    pub lambda: f64,
    /// Initial step `ε`.
    pub step: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub backtracking: Backtracking,
}

impl Default for MlmeConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            step: 0.1,
            max_iters: 20_000,
            residual_tol: 1e-7,
            backtracking: Backtracking::default(),
        }
    }
}

impl MlmeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.step > 0.0) {
            return Err(Error::Parameter(format!("step must be > 0, got {}", self.step)));
        }
        if !(self.residual_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "residual_tol must be > 0, got {}",
                self.residual_tol
            )));
        }
        let b = &self.backtracking;
        if b.enabled && !(b.shrink > 0.0 && b.shrink < 1.0) {
            return Err(Error::Parameter(format!("shrink must lie in (0, 1), got {}", b.shrink)));
        }
        if b.growth < 1.0 {
            return Err(Error::Parameter(format!("growth must be >= 1, got {}", b.growth)));
        }
        Ok(())
    }

    /// Pure maximum likelihood (`λ = 0`).
    pub fn ml(self) -> Self {
        Self { lambda: 0.0, ..self }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "")]
pub struct SolverReport<T: Real> {
    pub estimator: ChoiOperator<T>,
    pub iterations: usize,
    #[serde(serialize_with = "ser_real")]
    pub final_residual: T,
    #[serde(serialize_with = "ser_real")]
    pub final_information: T,
    pub converged: bool,
}

pub(crate) fn ser_real<T: Real, S: serde::Serializer>(x: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(x.as_f64())
}

/// Measurement model `p_lm = w · tr{E (ρ_l^T ⊗ Π̃_m)}` with weights `f_lm`.
#[derive(Clone, Debug)]
pub(crate) struct LikelihoodModel<T: Real> {
    pub(crate) d_in: usize,
    pub(crate) d_out: usize,
    pub(crate) rho: Vec<CMatrix<T>>,
    pub(crate) rho_t: Vec<CMatrix<T>>,
    pub(crate) outcomes: Vec<CMatrix<T>>,
    pub(crate) f: Vec<Vec<T>>,
    /// Per-row normalization, `1/L`.
    pub(crate) norm: T,
    /// `(Σ_l ρ_l^T, G − 1_K)` when detection is imperfect.
    detection: Option<(CMatrix<T>, CMatrix<T>)>,
}

impl<T: Real> LikelihoodModel<T> {
    pub(crate) fn new(data: &TomographyData<T>, inputs: &InputEnsemble<T>, pom: &Pom<T>) -> Result<Self> {
        let d_in = inputs.dim();
        let d_out = pom.dim();
        if data.num_inputs() > 0 && data.num_outcomes() != pom.len() {
            return Err(Error::Dimension(format!(
                "data has {} outcomes, POM has {}",
                data.num_outcomes(),
                pom.len()
            )));
        }
        let mut rho = Vec::with_capacity(data.num_inputs());
        for row in data.rows() {
            if row.input >= inputs.len() {
                return Err(Error::Dimension(format!(
                    "data refers to input {} of an ensemble of {}",
                    row.input,
                    inputs.len()
                )));
            }
            rho.push(inputs.state(row.input).matrix().clone());
        }
        let l = data.num_inputs().max(1);
        let mut model = Self::from_parts(
            d_in,
            d_out,
            rho,
            pom.effective_outcomes(),
            data.global_frequencies(),
            T::one() / T::from_usize_lossy(l),
        );
        if !pom.is_perfect() && data.num_inputs() > 0 {
            let sum_rho_t = model
                .rho_t
                .iter()
                .fold(CMatrix::zeros(d_in, d_in), |acc, r| acc + r);
            let g = pom.detection_operator().into_matrix() - CMatrix::identity(d_out, d_out);
            model.detection = Some((sum_rho_t, g));
        }
        Ok(model)
    }

    pub(crate) fn from_parts(
        d_in: usize,
        d_out: usize,
        rho: Vec<CMatrix<T>>,
        outcomes: Vec<CMatrix<T>>,
        f: Vec<Vec<T>>,
        norm: T,
    ) -> Self {
        let rho_t = rho.iter().map(|r| r.transpose()).collect();
        Self {
            d_in,
            d_out,
            rho,
            rho_t,
            outcomes,
            f,
            norm,
            detection: None,
        }
    }

    pub(crate) fn probabilities(&self, e: &CMatrix<T>) -> Result<Vec<Vec<T>>> {
        self.rho
            .iter()
            .enumerate()
            .map(|(l, r)| self.row_probabilities(e, r, l))
            .collect()
    }

    pub(crate) fn row_probabilities(&self, e: &CMatrix<T>, rho: &CMatrix<T>, l: usize) -> Result<Vec<T>> {
        let out = output_operator(e, rho, self.d_in, self.d_out);
        self.outcomes
            .iter()
            .enumerate()
            .map(|(m, pi)| clamp_probability(trace_product(&out, pi) * self.norm, l, m))
            .collect()
    }

    /// `Σ f log p`, minus `(Σ f) log(Σ p)` under imperfect detection.
    pub(crate) fn log_likelihood(&self, p: &[Vec<T>]) -> T {
        let mut acc = T::zero();
        for (fl, pl) in self.f.iter().zip(p) {
            for (&f, &q) in fl.iter().zip(pl) {
                if f > T::zero() {
                    if q <= T::zero() {
                        return T::lit(f64::NEG_INFINITY);
                    }
                    acc += f * q.ln();
                }
            }
        }
        if self.detection.is_some() {
            let total_f = self.f.iter().flatten().fold(T::zero(), |a, &x| a + x);
            let total_p = p.iter().flatten().fold(T::zero(), |a, &x| a + x);
            if total_f > T::zero() {
                acc -= total_f * total_p.ln();
            }
        }
        acc
    }

    /// `Σ_lm (f_lm / p_lm) w ρ_l^T ⊗ Π̃_m`.
    pub(crate) fn data_gradient(&self, p: &[Vec<T>]) -> Result<CMatrix<T>> {
        let n = self.d_in * self.d_out;
        let mut w = CMatrix::zeros(n, n);
        for (l, (fl, pl)) in self.f.iter().zip(p).enumerate() {
            let mut r = CMatrix::<T>::zeros(self.d_out, self.d_out);
            let mut any = false;
            for (m, (&f, &q)) in fl.iter().zip(pl).enumerate() {
                if f > T::zero() {
                    if q <= T::zero() {
                        return Err(Error::ImpossibleData { input: l, outcome: m });
                    }
                    r += &self.outcomes[m] * re(f / q * self.norm);
                    any = true;
                }
            }
            if any {
                w += self.rho_t[l].kronecker(&r);
            }
        }
        Ok(w)
    }

    /// `W₀ = (1 / (L Σ_l p'_l)) Σ_l ρ_l^T ⊗ G`, zero under perfect detection.
    pub(crate) fn detection_correction(&self, p: &[Vec<T>]) -> Option<CMatrix<T>> {
        let (sum_rho_t, g_minus_one) = self.detection.as_ref()?;
        let total_p = p.iter().flatten().fold(T::zero(), |a, &x| a + x);
        let g = g_minus_one + CMatrix::identity(self.d_out, self.d_out);
        Some(sum_rho_t.kronecker(&g) * re(self.norm / total_p))
    }

    /// Gradient used by the iteration: `W − W₀` shifted by `c Σρ^T ⊗ 1_K`,
    /// which the projection in `δA` removes, so that it reduces to `W` for
    /// `G = 1_K`.
    fn effective_data_gradient(&self, p: &[Vec<T>]) -> Result<CMatrix<T>> {
        let mut w = self.data_gradient(p)?;
        if let Some((sum_rho_t, g_minus_one)) = &self.detection {
            let total_f = self.f.iter().flatten().fold(T::zero(), |a, &x| a + x);
            let total_p = p.iter().flatten().fold(T::zero(), |a, &x| a + x);
            if total_f > T::zero() {
                w -= sum_rho_t.kronecker(g_minus_one) * re(total_f * self.norm / total_p);
            }
        }
        Ok(w)
    }
}

/// Evaluated iterate: objective, gradient and extremal residual.
#[derive(Clone, Debug)]
struct Point<T: Real> {
    e: CMatrix<T>,
    info: T,
    w: CMatrix<T>,
    /// `W E`.
    we: CMatrix<T>,
    residual: T,
}

pub(crate) struct Mlme<'a, T: Real> {
    model: &'a LikelihoodModel<T>,
    lambda: T,
}

impl<'a, T: Real> Mlme<'a, T> {
    pub(crate) fn new(model: &'a LikelihoodModel<T>, lambda: f64) -> Self {
        Self {
            model,
            lambda: T::lit(lambda),
        }
    }

    fn evaluate(&self, e: CMatrix<T>) -> Result<Point<T>> {
        let p = self.model.probabilities(&e)?;
        let mut info = self.model.log_likelihood(&p);
        let mut w = self.model.effective_data_gradient(&p)?;
        if self.lambda > T::zero() {
            let spec = eig_matrix(&e)?;
            info += self.lambda * entropy(&spec, self.model.d_in);
            w += entropy_gradient(&spec, self.model.d_in, self.lambda);
        }
        let we = matmul(&w, &e);
        let residual = residual_with(&we, &w, &e, self.model.d_in, self.model.d_out)?;
        Ok(Point { e, info, w, we, residual })
    }
}

fn entropy<T: Real>(spec: &Spectrum<T>, d_in: usize) -> T {
    let di = T::from_usize_lossy(d_in);
    spec.eigenvalues.iter().fold(T::zero(), |acc, &l| {
        let mu = l / di;
        if mu > T::zero() {
            acc - mu * mu.ln()
        } else {
            acc
        }
    })
}

/// `−(λ/D_i) [1 + log(E/D_i)]` on the clamped spectrum.
fn entropy_gradient<T: Real>(spec: &Spectrum<T>, d_in: usize, lambda: T) -> CMatrix<T> {
    let di = T::from_usize_lossy(d_in);
    let floor = T::lit(LOG_FLOOR);
    let vals: Vec<T> = spec
        .eigenvalues
        .iter()
        .map(|&l| -(lambda / di) * (T::one() + (l / di).max(floor).ln()))
        .collect();
    spec.with_eigenvalues(&vals)
}

/// `½ tr_K{W E + E W}` from the product `W E`.
fn projection_shift<T: Real>(we: &CMatrix<T>, d_in: usize, d_out: usize) -> CMatrix<T> {
    hermitian_part(&ptrace_second(we, d_in, d_out))
}

/// `E' = (N^{-1/2} ⊗ 1)(1 + δA) E (1 + δA)(N^{-1/2} ⊗ 1)` for Hermitian `δA`,
/// `N = tr_K{(1 + δA) E (1 + δA)}`.
pub(crate) fn congruence_update<T: Real>(
    e: &CMatrix<T>,
    delta_a: &CMatrix<T>,
    d_in: usize,
    d_out: usize,
) -> Result<CMatrix<T>> {
    let x = matmul(delta_a, e);
    let b = hermitian_part(&(e + &x + x.adjoint() + matmul(&x, delta_a)));
    tp_normalize(b, d_in, d_out)
}

/// `(N^{-1/2} ⊗ 1) B (N^{-1/2} ⊗ 1)` with `N = tr_K{B}`.
fn tp_normalize<T: Real>(b: CMatrix<T>, d_in: usize, d_out: usize) -> Result<CMatrix<T>> {
    let normalizer = hermitian_part(&ptrace_second(&b, d_in, d_out));
    let spec = eig_matrix(&normalizer)?;
    let min = *spec.eigenvalues.last().unwrap_or(&T::zero());
    let max = spec.eigenvalues[0];
    if !(min > T::lit(1e-14) * max.max(T::one())) {
        return Err(Error::SingularNormalizer(min.as_f64()));
    }
    let inv_sqrt = spec.map(|l| T::one() / l.sqrt());
    Ok(hermitian_part(&kron_identity_sandwich(&inv_sqrt, &b, d_out)))
}

/// Ascent direction `D = W − ½ tr_K{W E + E W} ⊗ 1_K` at `E`, holding `D E`
/// and `D E D` so that trial steps of any length need no further products.
pub(crate) struct Direction<T: Real> {
    de: CMatrix<T>,
    ded: CMatrix<T>,
}

impl<T: Real> Direction<T> {
    /// `we` is the product `W E`.
    pub(crate) fn new(w: &CMatrix<T>, we: &CMatrix<T>, e: &CMatrix<T>, d_in: usize, d_out: usize) -> Self {
        let h = projection_shift(we, d_in, d_out);
        let d = w - kron_identity(&h, d_out);
        let de = we - kron_identity_mul(&h, e, d_out);
        let ded = matmul(&de, &d);
        Self { de, ded }
    }

    /// The congruence update with `δA = (ε/2) D`.
    pub(crate) fn step(&self, e: &CMatrix<T>, eps: T, d_in: usize, d_out: usize) -> Result<CMatrix<T>> {
        let s = eps * T::lit(0.5);
        let b = e + (&self.de + self.de.adjoint()) * re(s) + &self.ded * re(s * s);
        tp_normalize(hermitian_part(&b), d_in, d_out)
    }
}

/// `‖Λ E Λ − W E W‖_F / ‖W E W‖_F` with `Λ = √(tr_K{W E W}) ⊗ 1_K`, given
/// the product `we = W E`.
pub(crate) fn residual_with<T: Real>(
    we: &CMatrix<T>,
    w: &CMatrix<T>,
    e: &CMatrix<T>,
    d_in: usize,
    d_out: usize,
) -> Result<T> {
    let wew = hermitian_part(&matmul(we, w));
    let denom = frobenius(&wew);
    if denom == T::zero() {
        return Ok(T::zero());
    }
    let pt = hermitian_part(&ptrace_second(&wew, d_in, d_out));
    let spec = eig_matrix(&pt)?;
    let lambda = spec.map(|l| l.max(T::zero()).sqrt());
    let lel = kron_identity_sandwich(&lambda, e, d_out);
    Ok(frobenius(&(lel - wew)) / denom)
}

/// Backtracking line search shared by the ascent loops. `trial(ε)` returns
/// the candidate with its objective and residual, or `None` when the step
/// is numerically inadmissible. A candidate is accepted when it raises the
/// objective; once the objective is flat to round-off it must instead lower
/// the residual. Returns the accepted candidate and the `ε` that produced it.
pub(crate) fn backtrack<T: Real, S>(
    info: T,
    residual: T,
    eps: T,
    bt: &Backtracking,
    mut trial: impl FnMut(T) -> Result<Option<(S, T, T)>>,
) -> Result<Option<(S, T)>> {
    let mut eps = eps;
    let attempts = if bt.enabled { bt.max_halvings + 1 } else { 1 };
    let slack = T::lit(1e-14) * info.abs().max(T::one());
    for _ in 0..attempts {
        if let Some((next, next_info, next_res)) = trial(eps)? {
            if !bt.enabled
                || next_info > info + slack
                || (next_info >= info - slack && next_res < residual)
            {
                return Ok(Some((next, eps)));
            }
        }
        eps *= T::lit(bt.shrink);
    }
    Ok(None)
}

/// Maps numerically inadmissible trial points to `None`.
pub(crate) fn admissible<S>(r: Result<S>) -> Result<Option<S>> {
    match r {
        Ok(s) => Ok(Some(s)),
        Err(Error::SingularNormalizer(_)) | Err(Error::InvalidProbability { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Next `ε` after an accepted step.
pub(crate) fn grown<T: Real>(used: T, bt: &Backtracking) -> T {
    if bt.enabled {
        (used * T::lit(bt.growth)).min(T::lit(bt.max_step))
    } else {
        used
    }
}

fn try_step<T: Real>(
    solver: &Mlme<'_, T>,
    pt: &Point<T>,
    eps: T,
    bt: &Backtracking,
) -> Result<Option<(Point<T>, T)>> {
    let (di, d_o) = (solver.model.d_in, solver.model.d_out);
    let dir = Direction::new(&pt.w, &pt.we, &pt.e, di, d_o);
    backtrack(pt.info, pt.residual, eps, bt, |eps| {
        let next = admissible(dir.step(&pt.e, eps, di, d_o).and_then(|e| solver.evaluate(e)))?;
        Ok(next.map(|n| {
            let (i, r) = (n.info, n.residual);
            (n, i, r)
        }))
    })
}

fn check_start<T: Real>(model: &LikelihoodModel<T>, e: &ChoiOperator<T>) -> Result<()> {
    if e.d_in() != model.d_in || e.d_out() != model.d_out {
        return Err(Error::Dimension(format!(
            "estimator is {}->{}, data are {}->{}",
            e.d_in(),
            e.d_out(),
            model.d_in,
            model.d_out
        )));
    }
    Ok(())
}

/// Iterates the ascent from `e0` (default: maximally mixed) until the
/// extremal residual drops below `residual_tol` or `max_iters` is reached.
pub fn mlme_solve<T: Real>(
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    pom: &Pom<T>,
    cfg: &MlmeConfig,
    e0: Option<&ChoiOperator<T>>,
) -> Result<SolverReport<T>> {
    let model = LikelihoodModel::new(data, inputs, pom)?;
    solve_model(&model, cfg, e0, &mut |_, _, _| {})
}

/// Solver loop with a per-iteration observer `(iteration, estimator, information)`.
pub(crate) fn solve_model<T: Real>(
    model: &LikelihoodModel<T>,
    cfg: &MlmeConfig,
    e0: Option<&ChoiOperator<T>>,
    observer: &mut dyn FnMut(usize, &CMatrix<T>, T),
) -> Result<SolverReport<T>> {
    cfg.validate()?;
    let (di, d_o) = (model.d_in, model.d_out);
    let start = match e0 {
        Some(e) => {
            check_start(model, e)?;
            e.matrix().matrix().clone()
        }
        None => ChoiOperator::<T>::maximally_mixed(di, d_o).matrix().matrix().clone(),
    };
    let solver = Mlme::new(model, cfg.lambda);
    let mut pt = solver.evaluate(start)?;
    observer(0, &pt.e, pt.info);
    let tol = T::lit(cfg.residual_tol);
    let mut eps = T::lit(cfg.step);
    let mut iterations = 0;
    let mut converged = false;
    while iterations <= cfg.max_iters {
        if pt.residual < tol {
            converged = true;
            break;
        }
        if iterations == cfg.max_iters {
            break;
        }
        match try_step(&solver, &pt, eps, &cfg.backtracking)? {
            Some((next, used)) => {
                pt = next;
                eps = grown(used, &cfg.backtracking);
            }
            None => break,
        }
        iterations += 1;
        observer(iterations, &pt.e, pt.info);
    }
    Ok(SolverReport {
        estimator: ChoiOperator::from_parts(HermitianOperator::symmetrized(pt.e), di, d_o),
        iterations,
        final_residual: pt.residual,
        final_information: pt.info,
        converged,
    })
}

/// One ascent step (with backtracking when enabled). Returns `e` unchanged
/// when no trial step increases the objective.
pub fn mlme_step<T: Real>(
    e: &ChoiOperator<T>,
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    pom: &Pom<T>,
    cfg: &MlmeConfig,
) -> Result<ChoiOperator<T>> {
    cfg.validate()?;
    let model = LikelihoodModel::new(data, inputs, pom)?;
    check_start(&model, e)?;
    let solver = Mlme::new(&model, cfg.lambda);
    let pt = solver.evaluate(e.matrix().matrix().clone())?;
    let next = match try_step(&solver, &pt, T::lit(cfg.step), &cfg.backtracking)? {
        Some((next, _)) => next.e,
        None => pt.e,
    };
    Ok(ChoiOperator::from_parts(
        HermitianOperator::symmetrized(next),
        e.d_in(),
        e.d_out(),
    ))
}

/// `Σ_lm n_lm log p_lm` (noiseless data count with `N = 1`); `−∞` when an
/// observed outcome has zero probability.
pub fn log_likelihood<T: Real>(
    e: &ChoiOperator<T>,
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    pom: &Pom<T>,
) -> Result<T> {
    let model = LikelihoodModel::new(data, inputs, pom)?;
    check_start(&model, e)?;
    let p = model.probabilities(e.matrix().matrix())?;
    let n = match data.copies() {
        crate::setup::Copies::Finite(n) => T::lit(n as f64),
        crate::setup::Copies::Noiseless => T::one(),
    };
    let mut acc = T::zero();
    for (row, pl) in data.rows().iter().zip(&p) {
        for (&nu, &q) in row.frequencies.iter().zip(pl) {
            if nu > T::zero() {
                if q <= T::zero() {
                    return Ok(T::lit(f64::NEG_INFINITY));
                }
                acc += nu * n * q.ln();
            }
        }
    }
    Ok(acc)
}

/// Normalized log-likelihood `log 𝓛 / (L N) = Σ f_lm log p_lm`.
pub fn normalized_log_likelihood<T: Real>(
    e: &ChoiOperator<T>,
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    pom: &Pom<T>,
) -> Result<T> {
    let model = LikelihoodModel::new(data, inputs, pom)?;
    check_start(&model, e)?;
    let p = model.probabilities(e.matrix().matrix())?;
    Ok(model.log_likelihood(&p))
}

/// `I(λ; E) = λ S(E) + log 𝓛(E) / (L N)`.
pub fn information<T: Real>(
    e: &ChoiOperator<T>,
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    pom: &Pom<T>,
    lambda: f64,
) -> Result<T> {
    let model = LikelihoodModel::new(data, inputs, pom)?;
    check_start(&model, e)?;
    let p = model.probabilities(e.matrix().matrix())?;
    let mut info = model.log_likelihood(&p);
    if lambda > 0.0 {
        info += T::lit(lambda) * entropy(&eig_matrix(e.matrix().matrix())?, e.d_in());
    }
    Ok(info)
}

/// `W = (1/L) Σ_lm (f_lm / p_lm) ρ_l^T ⊗ Π̃_m − (λ/D_i)[1 + log(E/D_i)]`.
pub fn w_operator<T: Real>(
    e: &ChoiOperator<T>,
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    pom: &Pom<T>,
    lambda: f64,
) -> Result<HermitianOperator<T>> {
    let model = LikelihoodModel::new(data, inputs, pom)?;
    check_start(&model, e)?;
    let p = model.probabilities(e.matrix().matrix())?;
    let mut w = model.data_gradient(&p)?;
    if lambda > 0.0 {
        let spec = eig_matrix(e.matrix().matrix())?;
        w += entropy_gradient(&spec, e.d_in(), T::lit(lambda));
    }
    Ok(HermitianOperator::symmetrized(w))
}

/// Correction `W₀` for copies that escape detection; the zero operator
/// under perfect detection.
pub fn w0_correction<T: Real>(
    e: &ChoiOperator<T>,
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    pom: &Pom<T>,
) -> Result<HermitianOperator<T>> {
    let model = LikelihoodModel::new(data, inputs, pom)?;
    check_start(&model, e)?;
    let p = model.probabilities(e.matrix().matrix())?;
    Ok(match model.detection_correction(&p) {
        Some(w0) => HermitianOperator::symmetrized(w0),
        None => HermitianOperator::zeros(e.dim()),
    })
}

/// Relative violation of the extremal equation `Λ E Λ = W E W`.
pub fn extremal_residual<T: Real>(
    e: &ChoiOperator<T>,
    data: &TomographyData<T>,
    inputs: &InputEnsemble<T>,
    pom: &Pom<T>,
    lambda: f64,
) -> Result<T> {
    let model = LikelihoodModel::new(data, inputs, pom)?;
    check_start(&model, e)?;
    let solver = Mlme::new(&model, lambda);
    Ok(solver.evaluate(e.matrix().matrix().clone())?.residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{builtin_channel, choi_from_kraus, imperfect_cnot, random_channel};
    use crate::operator::HermitianOperator;
    use crate::random::{gaussian_matrix, rng};
    use crate::setup::{probabilities, product_sic_pom, sample_counts, sic_inputs_builtin, Copies};

    type H = HermitianOperator<f64>;

    /// `δA = (ε/2) (W − ½ tr_K{W E + E W} ⊗ 1_K)`.
    fn ascent_direction(w: &CMatrix<f64>, e: &CMatrix<f64>, d_in: usize, d_out: usize, eps: f64) -> CMatrix<f64> {
        let h = projection_shift(&matmul(w, e), d_in, d_out);
        (w - kron_identity(&h, d_out)) * re(eps * 0.5)
    }

    #[test]
    fn cached_direction_matches_explicit_update() {
        let e = crate::metrics::random_interior_choi::<f64>(2, 3, 4).unwrap();
        let em = e.matrix().matrix();
        let g = gaussian_matrix::<f64, _>(6, 6, &mut rng(5));
        let w = hermitian_part(&(&g + g.adjoint()));
        let dir = Direction::new(&w, &matmul(&w, em), em, 2, 3);
        for eps in [0.3, 0.01] {
            let explicit = congruence_update(em, &ascent_direction(&w, em, 2, 3, eps), 2, 3).unwrap();
            let cached = dir.step(em, eps, 2, 3).unwrap();
            assert!(crate::operator::max_abs_diff(&explicit, &cached) < 1e-12);
        }
    }

    fn noiseless(e: &ChoiOperator<f64>, inputs: &InputEnsemble<f64>, pom: &Pom<f64>) -> TomographyData<f64> {
        sample_counts(&probabilities(e, inputs, pom).unwrap(), Copies::Noiseless, 0).unwrap()
    }

    #[test]
    fn zero_counts_give_zero_likelihood_and_gradient() {
        let inputs = sic_inputs_builtin::<f64>(2).unwrap();
        let pom = product_sic_pom::<f64>(1).unwrap();
        let mut data = TomographyData::new(Copies::Finite(10));
        data.push_counts(0, vec![0, 0, 0, 0]).unwrap();
        let e = ChoiOperator::maximally_mixed(2, 2);
        assert_eq!(log_likelihood(&e, &data, &inputs, &pom).unwrap(), 0.0);
        let w = w_operator(&e, &data, &inputs, &pom, 0.0).unwrap();
        assert!(w.max_abs_diff(&H::zeros(4)) < 1e-15);
    }

    #[test]
    fn impossible_event_gives_negative_infinity() {
        let e: ChoiOperator<f64> = builtin_channel("identity").unwrap();
        let inputs = InputEnsemble::new(vec![H::from_diagonal(&[1.0, 0.0])], vec!["0".into()]).unwrap();
        let pom = Pom::new(vec![H::from_diagonal(&[1.0, 0.0]), H::from_diagonal(&[0.0, 1.0])]).unwrap();
        let mut data = TomographyData::new(Copies::Finite(10));
        data.push_counts(0, vec![9, 1]).unwrap();
        let ll = log_likelihood(&e, &data, &inputs, &pom).unwrap();
        assert!(ll.is_infinite() && ll < 0.0);
        assert!(matches!(
            w_operator(&e, &data, &inputs, &pom, 0.0),
            Err(Error::ImpossibleData { input: 0, outcome: 1 })
        ));
    }

    #[test]
    fn plug_in_likelihood_is_negative_shannon_entropy() {
        let e = random_channel::<f64>(2, 2, 3, 1).unwrap();
        let inputs = sic_inputs_builtin::<f64>(2).unwrap();
        let pom = product_sic_pom::<f64>(1).unwrap();
        let p = probabilities(&e, &inputs, &pom).unwrap();
        let data = sample_counts(&p, Copies::Noiseless, 0).unwrap();
        let shannon: f64 = p.iter().flatten().map(|&x| -x * x.ln()).sum();
        let ll = log_likelihood(&e, &data, &inputs, &pom).unwrap();
        assert!((ll + 4.0 * shannon).abs() < 1e-12);
    }

    #[test]
    fn information_of_flat_operator_without_data() {
        let inputs = sic_inputs_builtin::<f64>(2).unwrap();
        let pom = product_sic_pom::<f64>(1).unwrap();
        let mut data = TomographyData::new(Copies::Finite(10));
        data.push_counts(0, vec![0, 0, 0, 0]).unwrap();
        let e = ChoiOperator::maximally_mixed(2, 2);
        let i = information(&e, &data, &inputs, &pom, 0.01).unwrap();
        assert!((i - 0.01 * 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn w_at_truth_has_unit_expectation() {
        let e = choi_from_kraus(&imperfect_cnot::<f64>(0.1).unwrap());
        let inputs = sic_inputs_builtin::<f64>(4).unwrap();
        let pom = product_sic_pom::<f64>(2).unwrap();
        let data = noiseless(&e, &inputs, &pom);
        let w = w_operator(&e, &data, &inputs, &pom, 0.0).unwrap();
        assert!((w.trace_product(e.matrix()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_efficiency_correction_is_scale_invariant() {
        let e = random_channel::<f64>(4, 4, 4, 2).unwrap();
        let inputs = sic_inputs_builtin::<f64>(4).unwrap();
        let pom = product_sic_pom::<f64>(2).unwrap();
        let half = pom.with_uniform_efficiency(0.5).unwrap();
        let data = noiseless(&e, &inputs, &half);
        let w0 = w0_correction(&e, &data, &inputs, &half).unwrap();
        // Σ_l p'_l = η, so W₀ = (1/L) Σ ρ^T ⊗ 1 regardless of η.
        let sum_t = inputs
            .states()
            .iter()
            .fold(H::zeros(4), |a, s| a.add(&s.transpose()));
        let expected = crate::operator::tensor(&sum_t, &H::identity(4)).scale(1.0 / 16.0);
        assert!(w0.max_abs_diff(&expected) < 1e-12);
        let perfect = noiseless(&e, &inputs, &pom);
        assert!(w0_correction(&e, &perfect, &inputs, &pom)
            .unwrap()
            .max_abs_diff(&H::zeros(16))
            < 1e-15);
    }

    #[test]
    fn correction_with_unit_efficiencies_does_not_change_direction() {
        // Any B ⊗ 1_K term is annihilated by the δA projection.
        let e = random_channel::<f64>(4, 4, 6, 3).unwrap();
        let inputs = sic_inputs_builtin::<f64>(4).unwrap();
        let pom = product_sic_pom::<f64>(2).unwrap();
        let data = noiseless(&random_channel::<f64>(4, 4, 2, 4).unwrap(), &inputs, &pom);
        let w = w_operator(&e, &data, &inputs, &pom, 0.0).unwrap();
        let sum_t = inputs
            .states()
            .iter()
            .fold(H::zeros(4), |a, s| a.add(&s.transpose()));
        let w0 = crate::operator::tensor(&sum_t, &H::identity(4)).scale(1.0 / 16.0);
        let em = e.matrix().matrix();
        let a = ascent_direction(w.matrix(), em, 4, 4, 1.0);
        let b = ascent_direction(&(w.matrix() - w0.matrix()), em, 4, 4, 1.0);
        assert!(crate::operator::max_abs_diff(&a, &b) < 1e-13);
    }

    #[test]
    fn stationary_gradient_is_a_fixed_point() {
        let e = random_channel::<f64>(2, 2, 3, 8).unwrap();
        let h = H::from_real_rows(2, &[0.3, 0.1, 0.1, 0.7]).unwrap();
        let w = kron_identity(h.matrix(), 2);
        let da = ascent_direction(&w, e.matrix().matrix(), 2, 2, 0.5);
        let next = congruence_update(e.matrix().matrix(), &da, 2, 2).unwrap();
        assert!(crate::operator::max_abs_diff(&next, e.matrix().matrix()) < 1e-14);
    }

    #[test]
    fn step_preserves_trace_and_positivity_on_random_problems() {
        let inputs = sic_inputs_builtin::<f64>(2).unwrap();
        let pom = product_sic_pom::<f64>(1).unwrap();
        let cfg = MlmeConfig::default();
        for seed in 0..100u64 {
            let truth = random_channel::<f64>(2, 2, 1 + (seed as usize % 4), seed).unwrap();
            let p = probabilities(&truth, &inputs, &pom).unwrap();
            let data = sample_counts(&p, Copies::Finite(200), seed).unwrap();
            let mut r = rng(seed + 1000);
            let x = gaussian_matrix::<f64, _>(4, 4, &mut r);
            let start = congruence_update(&(&x * x.adjoint()), &CMatrix::zeros(4, 4), 2, 2).unwrap();
            let e = ChoiOperator::from_parts(H::symmetrized(start), 2, 2);
            let next = mlme_step(&e, &data, &inputs, &pom, &cfg).unwrap();
            assert!(next.tp_residual() < 1e-10);
            assert!(next.matrix().min_eigenvalue().unwrap() > -1e-10);
        }
    }

    #[test]
    fn singular_normalizer_rejected() {
        let e = CMatrix::<f64>::zeros(4, 4);
        let err = congruence_update(&e, &CMatrix::zeros(4, 4), 2, 2).unwrap_err();
        assert!(matches!(err, Error::SingularNormalizer(_)));
    }

    #[test]
    fn invalid_config_rejected() {
        let inputs = sic_inputs_builtin::<f64>(2).unwrap();
        let pom = product_sic_pom::<f64>(1).unwrap();
        let data = TomographyData::new(Copies::Finite(1));
        let cfg = MlmeConfig {
            lambda: -1.0,
            ..MlmeConfig::default()
        };
        assert!(mlme_solve(&data, &inputs, &pom, &cfg, None).is_err());
    }
}
