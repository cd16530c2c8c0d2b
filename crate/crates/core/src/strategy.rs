//! Input-selection schemes: a fixed order, adaptive choice from a fixed
//! candidate set, MPL choice over all pure states, and the hybrid of the two
//! adaptive schemes.
//!
//! The prior channel only steers which input is measured next. Every
//! reported estimator is a plain MLME solve of the recorded data from the
//! default starting point.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChoiOperator;
use crate::error::{Error, Result};
use crate::metrics::{loglik_max, ml_sample, plateau_size, trace_distance, SampleConfig};
use crate::mpl::{mpl_next_input, state_distance, Merit, MplConfig};
use crate::operator::HermitianOperator;
use crate::random::{derive_seed, random_ket, rng};
use crate::scalar::Real;
use crate::setup::{probabilities, sample_counts, Copies, InputEnsemble, Pom, TomographyData};
use crate::solver::{mlme_solve, MlmeConfig};

const TAG_MEASURE: u64 = 0;
const TAG_SELECT: u64 = 1;
const TAG_PLATEAU: u64 = 2;
const TAG_FIRST: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    NonAdaptive,
    AdaptiveFixed,
    Mpl,
    Hybrid,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::NonAdaptive,
        Scheme::AdaptiveFixed,
        Scheme::Mpl,
        Scheme::Hybrid,
    ];

    /// Stable index used in seed derivation.
    pub fn id(self) -> u64 {
        match self {
            Scheme::NonAdaptive => 0,
            Scheme::AdaptiveFixed => 1,
            Scheme::Mpl => 2,
            Scheme::Hybrid => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::NonAdaptive => "non_adaptive",
            Scheme::AdaptiveFixed => "adaptive_fixed",
            Scheme::Mpl => "mpl",
            Scheme::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown scheme `{s}`")))
    }
}

/// When the hybrid scheme hands over from MPL to the fixed candidate set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridSwitch {
    /// The first `n` inputs come from the MPL phase (the first of them drawn
    /// at random).
    AfterInputs(usize),
    /// Switch once this fraction of MPL starts repeats a used input.
    RepetitionRate(f64),
}

/// Optional per-step diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Recording {
    /// Record the normalized log-likelihood maximum (`λ = 0` solve).
    pub loglik_max: bool,
    /// ML samples per step for the plateau spread; 0 disables it.
    pub plateau_samples: usize,
    /// Residual tolerance for the `λ = 0` solves above.
    pub ml_tol: f64,
}

impl Default for Recording {
    fn default() -> Self {
        Self {
            loglik_max: false,
            plateau_samples: 0,
            ml_tol: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub merit: Merit,
    pub mpl_starts: usize,
    /// Trace distance below which an MPL state counts as a used input.
    pub repetition_tol: f64,
    pub hybrid_switch: HybridSwitch,
    /// Stop once the best step distance falls below this value.
    pub stop_threshold: f64,
    /// Cap on the number of inputs; MPL defaults to `D_i²`.
    pub max_inputs: Option<usize>,
    /// Candidate index for the first input; drawn at random when absent.
    pub first_input: Option<usize>,
    pub mpl: MplConfig,
    pub record: Recording,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            merit: Merit::MaximizeStepDistance,
            mpl_starts: 20,
            repetition_tol: 1e-3,
            hybrid_switch: HybridSwitch::AfterInputs(4),
            stop_threshold: 0.0,
            max_inputs: None,
            first_input: None,
            mpl: MplConfig::default(),
            record: Recording::default(),
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mpl_starts == 0 {
            return Err(Error::Parameter("mpl_starts must be >= 1".into()));
        }
        if !(self.repetition_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "repetition_tol must be > 0, got {}",
                self.repetition_tol
            )));
        }
        if let HybridSwitch::RepetitionRate(r) = self.hybrid_switch {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Parameter(format!("repetition rate must lie in [0, 1], got {r}")));
            }
        }
        self.mpl.validate()
    }
}

/// Fixed inputs of a simulated experiment.
#[derive(Clone, Debug)]
pub struct Experiment<'a, T: Real> {
    pub channel: &'a ChoiOperator<T>,
    pub pom: &'a Pom<T>,
    pub copies: Copies,
    pub e_prior: &'a ChoiOperator<T>,
    pub solver: MlmeConfig,
    pub strategy: StrategyConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Candidates or the input budget ran out.
    Exhausted,
    /// The best step distance fell below the stopping threshold.
    Threshold,
    /// Every MPL start repeated a used input.
    RepetitionExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    /// Number of inputs measured so far.
    pub step: usize,
    /// Index of the chosen input in the trajectory's ensemble.
    pub input: usize,
    pub label: String,
    pub selected_by: Scheme,
    pub trace_distance: f64,
    pub converged: bool,
    pub merit: Option<f64>,
    pub repetition_rate: Option<f64>,
    pub loglik_max: Option<f64>,
    pub delta: Option<f64>,
    pub delta_stderr: Option<f64>,
}

/// One CSV row of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub scheme: String,
    pub run_seed: u64,
    #[serde(rename = "L")]
    pub l: usize,
    pub chosen_input_label: String,
    pub trace_distance_to_true: f64,
    pub loglik_max: Option<f64>,
    pub delta: Option<f64>,
}

/// An MPL-selected input, for the JSON sidecar.
#[derive(Clone, Debug, Serialize)]
#[serde(bound = "")]
pub struct SelectedState<T: Real> {
    pub step: usize,
    pub label: String,
    pub state: HermitianOperator<T>,
}

#[derive(Clone, Debug)]
pub struct Trajectory<T: Real> {
    pub scheme: Scheme,
    pub run_seed: u64,
    /// Candidates followed by any MPL-selected states.
    pub ensemble: InputEnsemble<T>,
    pub data: TomographyData<T>,
    pub estimators: Vec<ChoiOperator<T>>,
    pub steps: Vec<StepRecord>,
    pub stop: StopReason,
}

impl<T: Real> Trajectory<T> {
    /// Data recorded after the first `l` inputs.
    pub fn data_prefix(&self, l: usize) -> TomographyData<T> {
        self.data.truncated(l)
    }

    pub fn inputs_used(&self) -> Vec<usize> {
        self.data.inputs_used()
    }

    pub fn rows(&self) -> Vec<TrajectoryRow> {
        self.steps
            .iter()
            .map(|s| TrajectoryRow {
                scheme: self.scheme.to_string(),
                run_seed: self.run_seed,
                l: s.step,
                chosen_input_label: s.label.clone(),
                trace_distance_to_true: s.trace_distance,
                loglik_max: s.loglik_max,
                delta: s.delta,
            })
            .collect()
    }

    pub fn mpl_states(&self) -> Vec<SelectedState<T>> {
        self.steps
            .iter()
            .filter(|s| s.label.starts_with("mpl"))
            .map(|s| SelectedState {
                step: s.step,
                label: s.label.clone(),
                state: self.ensemble.state(s.input).clone(),
            })
            .collect()
    }
}

/// Winner of a fixed-set selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub merit: f64,
}

/// Scores every available candidate by solving on the recorded data plus the
/// prior's predicted frequencies for that candidate; ties go to the lowest
/// index. Returns `None` when nothing is available.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_next_fixed<T: Real>(
    ensemble: &InputEnsemble<T>,
    available: &[usize],
    data: &TomographyData<T>,
    pom: &Pom<T>,
    e_prior: &ChoiOperator<T>,
    e_current: &ChoiOperator<T>,
    solver: &MlmeConfig,
    merit: Merit,
) -> Result<Option<Selection>> {
    let scored: Vec<Result<(usize, T)>> = available
        .par_iter()
        .map(|&k| {
            let projected = projected_data(ensemble, k, data, pom, e_prior)?;
            let report = mlme_solve(&projected, ensemble, pom, solver, Some(e_current))?;
            Ok((k, merit.score(&report.estimator, e_current, e_prior)?))
        })
        .collect();
    let mut best: Option<(usize, T)> = None;
    for r in scored {
        let (k, score) = r?;
        let better = match best {
            None => true,
            Some((bk, bs)) => score > bs || (score == bs && k < bk),
        };
        if better {
            best = Some((k, score));
        }
    }
    Ok(best.map(|(index, s)| Selection {
        index,
        merit: match merit {
            Merit::MaximizeStepDistance => s.as_f64(),
            Merit::MinimizePriorDistance => -s.as_f64(),
        },
    }))
}

/// Recorded data with one more row holding `tr{E_prior ρ_k^T ⊗ Π̃_m}`.
pub fn projected_data<T: Real>(
    ensemble: &InputEnsemble<T>,
    k: usize,
    data: &TomographyData<T>,
    pom: &Pom<T>,
    e_prior: &ChoiOperator<T>,
) -> Result<TomographyData<T>> {
    let one = ensemble.select(&[k]);
    let predicted = probabilities(e_prior, &one, pom)?.remove(0);
    let mut out = data.clone();
    out.push_frequencies(k, predicted)?;
    Ok(out)
}

/// Shared bookkeeping of a single run.
struct Run<'a, T: Real> {
    exp: &'a Experiment<'a, T>,
    scheme: Scheme,
    seed: u64,
    ensemble: InputEnsemble<T>,
    data: TomographyData<T>,
    estimators: Vec<ChoiOperator<T>>,
    steps: Vec<StepRecord>,
}

impl<'a, T: Real> Run<'a, T> {
    fn new(exp: &'a Experiment<'a, T>, scheme: Scheme, seed: u64, ensemble: InputEnsemble<T>) -> Result<Self> {
        exp.solver.validate()?;
        exp.strategy.validate()?;
        if exp.channel.d_in() != exp.e_prior.d_in() || exp.channel.d_out() != exp.e_prior.d_out() {
            return Err(Error::Dimension("prior and channel differ in dimensions".into()));
        }
        if exp.pom.dim() != exp.channel.d_out() {
            return Err(Error::Dimension("POM does not act on the channel output".into()));
        }
        if !ensemble.is_empty() && ensemble.dim() != exp.channel.d_in() {
            return Err(Error::Dimension("inputs do not match the channel input".into()));
        }
        Ok(Self {
            exp,
            scheme,
            seed,
            ensemble,
            data: TomographyData::new(exp.copies),
            estimators: Vec::new(),
            steps: Vec::new(),
        })
    }

    fn step(&self) -> usize {
        self.data.num_inputs()
    }

    fn current(&self) -> &ChoiOperator<T> {
        self.estimators.last().expect("a measured input")
    }

    fn used_states(&self) -> Vec<HermitianOperator<T>> {
        self.data
            .inputs_used()
            .into_iter()
            .map(|i| self.ensemble.state(i).clone())
            .collect()
    }

    fn budget(&self, default: usize) -> usize {
        self.exp.strategy.max_inputs.unwrap_or(default)
    }

    /// Random first candidate, or the configured one.
    fn first_candidate(&self, n_candidates: usize) -> Result<usize> {
        match self.exp.strategy.first_input {
            Some(i) if i < n_candidates => Ok(i),
            Some(i) => Err(Error::Parameter(format!(
                "first input {i} out of range for {n_candidates} candidates"
            ))),
            None => {
                use rand::Rng;
                let mut r = rng(derive_seed(self.seed, &[TAG_FIRST]));
                Ok(r.random_range(0..n_candidates))
            }
        }
    }

    /// Simulates measuring input `index`, re-solves and records the step.
    fn measure(&mut self, index: usize, selected_by: Scheme, merit: Option<f64>, repetition_rate: Option<f64>) -> Result<()> {
        let exp = self.exp;
        let step = self.step() + 1;
        let one = self.ensemble.select(&[index]);
        let p = probabilities(exp.channel, &one, exp.pom)?;
        let sampled = sample_counts(&p, exp.copies, derive_seed(self.seed, &[TAG_MEASURE, step as u64]))?;
        let row = sampled.rows()[0].clone();
        match row.counts {
            Some(c) => self.data.push_counts(index, c)?,
            None => self.data.push_frequencies(index, row.frequencies)?,
        }
        let report = mlme_solve(&self.data, &self.ensemble, exp.pom, &exp.solver, None)?;
        let td = trace_distance(&report.estimator, exp.channel)?.as_f64();
        let rec = &exp.strategy.record;
        let ml = MlmeConfig {
            residual_tol: rec.ml_tol,
            ..exp.solver.ml()
        };
        let loglik = if rec.loglik_max {
            Some(loglik_max(&self.data, &self.ensemble, exp.pom, &ml)?.as_f64())
        } else {
            None
        };
        let (delta, delta_stderr) = if rec.plateau_samples >= 2 {
            let cfg = SampleConfig {
                solver: ml,
                ..SampleConfig::default()
            };
            let samples = ml_sample(
                &self.data,
                &self.ensemble,
                exp.pom,
                rec.plateau_samples,
                derive_seed(self.seed, &[TAG_PLATEAU, step as u64]),
                &cfg,
            )?;
            let rep = plateau_size(&samples)?;
            (Some(rep.delta.as_f64()), Some(rep.delta_stderr.as_f64()))
        } else {
            (None, None)
        };
        self.steps.push(StepRecord {
            step,
            input: index,
            label: self.ensemble.label(index).to_string(),
            selected_by,
            trace_distance: td,
            converged: report.converged,
            merit,
            repetition_rate,
            loglik_max: loglik,
            delta,
            delta_stderr,
        });
        self.estimators.push(report.estimator);
        Ok(())
    }

    fn finish(self, stop: StopReason) -> Trajectory<T> {
        Trajectory {
            scheme: self.scheme,
            run_seed: self.seed,
            ensemble: self.ensemble,
            data: self.data,
            estimators: self.estimators,
            steps: self.steps,
            stop,
        }
    }

    /// One fixed-set selection; `Ok(None)` means stop for the given reason.
    fn fixed_step(&mut self, available: &mut Vec<usize>) -> Result<std::result::Result<(), StopReason>> {
        let exp = self.exp;
        let sel = adaptive_next_fixed(
            &self.ensemble,
            available,
            &self.data,
            exp.pom,
            exp.e_prior,
            self.current(),
            &exp.solver,
            exp.strategy.merit,
        )?;
        let Some(sel) = sel else {
            return Ok(Err(StopReason::Exhausted));
        };
        if exp.strategy.merit == Merit::MaximizeStepDistance && sel.merit < exp.strategy.stop_threshold {
            return Ok(Err(StopReason::Threshold));
        }
        available.retain(|&k| k != sel.index);
        self.measure(sel.index, Scheme::AdaptiveFixed, Some(sel.merit), None)?;
        Ok(Ok(()))
    }

    /// One MPL selection: pushes the chosen state onto the ensemble.
    fn mpl_step(&mut self) -> Result<std::result::Result<(), (StopReason, Option<f64>)>> {
        let exp = self.exp;
        let st = &exp.strategy;
        let step = self.step() + 1;
        let choice = mpl_next_input(
            &self.data,
            &self.ensemble,
            exp.e_prior,
            self.current(),
            &self.used_states(),
            exp.pom,
            &st.mpl,
            st.mpl_starts,
            st.repetition_tol,
            st.merit,
            derive_seed(self.seed, &[TAG_SELECT, step as u64]),
        );
        let choice = match choice {
            Ok(c) => c,
            Err(Error::RepetitionExhausted) => return Ok(Err((StopReason::RepetitionExhausted, Some(1.0)))),
            Err(e) => return Err(e),
        };
        let rate = choice.repetition_rate();
        if self.scheme == Scheme::Hybrid {
            if let HybridSwitch::RepetitionRate(r) = st.hybrid_switch {
                if rate >= r {
                    return Ok(Err((StopReason::RepetitionExhausted, Some(rate))));
                }
            }
        }
        let merit = choice.merit.as_f64();
        if st.merit == Merit::MaximizeStepDistance && merit < st.stop_threshold {
            return Ok(Err((StopReason::Threshold, Some(rate))));
        }
        let index = self.ensemble.push(choice.state, format!("mpl{step}"))?;
        self.measure(index, Scheme::Mpl, Some(merit), Some(rate))?;
        Ok(Ok(()))
    }
}

/// Measures the ensemble in the given order.
pub fn run_non_adaptive<T: Real>(
    exp: &Experiment<'_, T>,
    ensemble: &InputEnsemble<T>,
    order: &[usize],
    seed: u64,
) -> Result<Trajectory<T>> {
    let mut seen = vec![false; ensemble.len()];
    for &i in order {
        if i >= ensemble.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Parameter("order must list distinct ensemble indices".into()));
        }
    }
    let mut run = Run::new(exp, Scheme::NonAdaptive, seed, ensemble.clone())?;
    let budget = run.budget(order.len());
    for &i in order.iter().take(budget) {
        run.measure(i, Scheme::NonAdaptive, None, None)?;
    }
    Ok(run.finish(StopReason::Exhausted))
}

/// A random permutation of `0..n` drawn from `seed`.
pub fn random_order(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed));
    order
}

/// Adaptive selection from a fixed candidate set.
pub fn run_adaptive_fixed<T: Real>(
    exp: &Experiment<'_, T>,
    candidates: &InputEnsemble<T>,
    seed: u64,
) -> Result<Trajectory<T>> {
    let mut run = Run::new(exp, Scheme::AdaptiveFixed, seed, candidates.clone())?;
    if candidates.is_empty() {
        return Err(Error::Parameter("empty candidate set".into()));
    }
    let budget = run.budget(candidates.len());
    let first = run.first_candidate(candidates.len())?;
    let mut available: Vec<usize> = (0..candidates.len()).filter(|&k| k != first).collect();
    run.measure(first, Scheme::AdaptiveFixed, None, None)?;
    while run.step() < budget {
        if let Err(reason) = run.fixed_step(&mut available)? {
            return Ok(run.finish(reason));
        }
    }
    Ok(run.finish(StopReason::Exhausted))
}

/// MPL selection over all pure states. The first input is drawn from
/// `candidates` when given (as for the other schemes) and is a random pure
/// state otherwise.
pub fn run_mpl_mlme<T: Real>(
    exp: &Experiment<'_, T>,
    candidates: Option<&InputEnsemble<T>>,
    seed: u64,
) -> Result<Trajectory<T>> {
    let d = exp.channel.d_in();
    let ensemble = candidates.cloned().unwrap_or_else(InputEnsemble::empty);
    let mut run = Run::new(exp, Scheme::Mpl, seed, ensemble)?;
    let budget = run.budget(d * d);
    let first = match candidates {
        Some(c) if !c.is_empty() => run.first_candidate(c.len())?,
        _ => {
            let mut r = rng(derive_seed(seed, &[TAG_FIRST]));
            let ket = random_ket::<T, _>(d, &mut r);
            run.ensemble.push(HermitianOperator::projector(&ket), "mpl1")?
        }
    };
    run.measure(first, Scheme::Mpl, None, None)?;
    while run.step() < budget {
        if let Err((reason, _)) = run.mpl_step()? {
            return Ok(run.finish(reason));
        }
    }
    Ok(run.finish(StopReason::Exhausted))
}

/// MPL selection until the switch condition, then fixed-set selection over
/// the candidates not yet used.
pub fn run_hybrid<T: Real>(
    exp: &Experiment<'_, T>,
    candidates: &InputEnsemble<T>,
    seed: u64,
) -> Result<Trajectory<T>> {
    if candidates.is_empty() {
        return Err(Error::Parameter("empty candidate set".into()));
    }
    let st = exp.strategy;
    let mut run = Run::new(exp, Scheme::Hybrid, seed, candidates.clone())?;
    let budget = run.budget(candidates.len());
    let first = run.first_candidate(candidates.len())?;
    let mut available: Vec<usize> = (0..candidates.len()).filter(|&k| k != first).collect();
    let first_by = match st.hybrid_switch {
        HybridSwitch::AfterInputs(n) if n <= 1 => Scheme::AdaptiveFixed,
        _ => Scheme::Mpl,
    };
    run.measure(first, first_by, None, None)?;
    let tol = T::lit(st.repetition_tol);
    let mut in_mpl = first_by == Scheme::Mpl;
    while run.step() < budget {
        if in_mpl {
            if let HybridSwitch::AfterInputs(n) = st.hybrid_switch {
                if run.step() >= n {
                    in_mpl = false;
                }
            }
        }
        if in_mpl {
            match run.mpl_step()? {
                Ok(()) => continue,
                Err((StopReason::Threshold, _)) => return Ok(run.finish(StopReason::Threshold)),
                Err(_) => in_mpl = false,
            }
        }
        let used = run.used_states();
        available.retain(|&k| used.iter().all(|u| state_distance(u, candidates.state(k)) >= tol));
        if let Err(reason) = run.fixed_step(&mut available)? {
            return Ok(run.finish(reason));
        }
    }
    Ok(run.finish(StopReason::Exhausted))
}

/// Dispatches on `scheme`. `order` is only used by the non-adaptive scheme.
pub fn run_scheme<T: Real>(
    scheme: Scheme,
    exp: &Experiment<'_, T>,
    candidates: &InputEnsemble<T>,
    order: &[usize],
    seed: u64,
) -> Result<Trajectory<T>> {
    match scheme {
        Scheme::NonAdaptive => run_non_adaptive(exp, candidates, order, seed),
        Scheme::AdaptiveFixed => run_adaptive_fixed(exp, candidates, seed),
        Scheme::Mpl => run_mpl_mlme(exp, Some(candidates), seed),
        Scheme::Hybrid => run_hybrid(exp, candidates, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{builtin_channel, choi_from_kraus, imperfect_cnot};
    use crate::setup::{product_sic_pom, sic_inputs_builtin, standard_product_inputs};

    fn qubit_setup() -> (ChoiOperator<f64>, Pom<f64>, InputEnsemble<f64>) {
        let truth = crate::channel::random_channel::<f64>(2, 2, 2, 5).unwrap();
        (truth, product_sic_pom(1).unwrap(), sic_inputs_builtin(2).unwrap())
    }

    fn experiment<'a>(truth: &'a ChoiOperator<f64>, pom: &'a Pom<f64>, prior: &'a ChoiOperator<f64>) -> Experiment<'a, f64> {
        Experiment {
            channel: truth,
            pom,
            copies: Copies::Finite(500),
            e_prior: prior,
            solver: MlmeConfig::default(),
            strategy: StrategyConfig {
                mpl_starts: 4,
                ..StrategyConfig::default()
            },
        }
    }

    fn assert_prior_isolated(t: &Trajectory<f64>, pom: &Pom<f64>, solver: &MlmeConfig) {
        for (l, e) in t.estimators.iter().enumerate() {
            let data = t.data_prefix(l + 1);
            let again = mlme_solve(&data, &t.ensemble, pom, solver, None).unwrap();
            assert_eq!(again.estimator.matrix().matrix(), e.matrix().matrix());
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("greedy".parse::<Scheme>().is_err());
    }

    #[test]
    fn projected_frequencies_keep_unit_sum() {
        let (truth, pom, inputs) = qubit_setup();
        let prior = ChoiOperator::maximally_mixed(2, 2);
        let exp = experiment(&truth, &pom, &prior);
        let t = run_non_adaptive(&exp, &inputs, &[2, 0], 1).unwrap();
        let projected = projected_data(&inputs, 3, &t.data, &pom, &prior).unwrap();
        let total: f64 = projected.global_frequencies().iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(projected.num_inputs(), 3);
    }

    #[test]
    fn single_candidate_wins_by_default() {
        let (truth, pom, inputs) = qubit_setup();
        let prior = truth.clone();
        let exp = experiment(&truth, &pom, &prior);
        let t = run_non_adaptive(&exp, &inputs, &[0], 1).unwrap();
        let sel = adaptive_next_fixed(&inputs, &[2], &t.data, &pom, &prior, &t.estimators[0], &exp.solver, Merit::default())
            .unwrap()
            .unwrap();
        assert_eq!(sel.index, 2);
        assert!(adaptive_next_fixed(&inputs, &[], &t.data, &pom, &prior, &t.estimators[0], &exp.solver, Merit::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn adaptive_fixed_uses_each_candidate_once_and_isolates_prior() {
        let (truth, pom, inputs) = qubit_setup();
        let prior: ChoiOperator<f64> = builtin_channel("identity").unwrap();
        let exp = experiment(&truth, &pom, &prior);
        let t = run_adaptive_fixed(&exp, &inputs, 7).unwrap();
        let mut used = t.inputs_used();
        assert_eq!(used.len(), 4);
        used.sort();
        used.dedup();
        assert_eq!(used.len(), 4);
        assert_eq!(t.stop, StopReason::Exhausted);
        assert_prior_isolated(&t, &pom, &exp.solver);
        for (i, s) in t.steps.iter().enumerate() {
            assert_eq!(s.step, i + 1);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let (truth, pom, inputs) = qubit_setup();
        let prior: ChoiOperator<f64> = builtin_channel("identity").unwrap();
        let exp = experiment(&truth, &pom, &prior);
        let a = run_hybrid(&exp, &inputs, 3).unwrap();
        let b = run_hybrid(&exp, &inputs, 3).unwrap();
        assert_eq!(a.rows(), b.rows());
    }

    #[test]
    fn mpl_trajectory_isolates_prior() {
        let (truth, pom, _) = qubit_setup();
        let prior: ChoiOperator<f64> = builtin_channel("identity").unwrap();
        let mut exp = experiment(&truth, &pom, &prior);
        exp.strategy.max_inputs = Some(3);
        let t = run_mpl_mlme(&exp, None, 2).unwrap();
        assert!(!t.steps.is_empty());
        assert_prior_isolated(&t, &pom, &exp.solver);
        // Without candidates the random first state joins the MPL states.
        assert_eq!(t.mpl_states().len(), t.steps.len());
    }

    #[test]
    fn degenerate_hybrid_switches() {
        let (truth, pom, inputs) = qubit_setup();
        let prior: ChoiOperator<f64> = builtin_channel("identity").unwrap();
        let mut exp = experiment(&truth, &pom, &prior);
        exp.strategy.hybrid_switch = HybridSwitch::AfterInputs(1);
        let h = run_hybrid(&exp, &inputs, 4).unwrap();
        let a = run_adaptive_fixed(&exp, &inputs, 4).unwrap();
        assert_eq!(h.inputs_used(), a.inputs_used());
        assert_eq!(h.estimators.last().unwrap().matrix(), a.estimators.last().unwrap().matrix());

        exp.strategy.hybrid_switch = HybridSwitch::AfterInputs(usize::MAX);
        exp.strategy.max_inputs = Some(3);
        let h = run_hybrid(&exp, &inputs, 4).unwrap();
        let m = run_mpl_mlme(&exp, Some(&inputs), 4).unwrap();
        assert_eq!(h.inputs_used(), m.inputs_used());
        assert_eq!(h.estimators.last().unwrap().matrix(), m.estimators.last().unwrap().matrix());
    }

    #[test]
    fn invalid_order_rejected() {
        let (truth, pom, inputs) = qubit_setup();
        let exp = experiment(&truth, &pom, &truth);
        assert!(run_non_adaptive(&exp, &inputs, &[0, 0], 1).is_err());
        assert!(run_non_adaptive(&exp, &inputs, &[9], 1).is_err());
    }

    #[test]
    fn random_order_is_a_seeded_permutation() {
        let a = random_order(16, 5);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..16).collect::<Vec<_>>());
        assert_eq!(a, random_order(16, 5));
        assert_ne!(a, random_order(16, 6));
    }

    #[test]
    fn adaptivity_departs_from_lexicographic_order() {
        let truth = choi_from_kraus(&imperfect_cnot::<f64>(0.1).unwrap());
        let prior: ChoiOperator<f64> = builtin_channel("cnot").unwrap();
        let pom = product_sic_pom(2).unwrap();
        let inputs = standard_product_inputs(2).unwrap();
        let mut exp = experiment(&truth, &pom, &prior);
        exp.copies = Copies::Finite(10_000);
        exp.strategy.max_inputs = Some(4);
        exp.strategy.first_input = Some(0);
        let departed = (0..50u64).any(|s| {
            let t = run_adaptive_fixed(&exp, &inputs, s).unwrap();
            t.inputs_used() != vec![0, 1, 2, 3]
        });
        assert!(departed);
    }
}
