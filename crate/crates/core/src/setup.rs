//! Input ensembles, POMs, outcome probabilities and simulated measurement data.

use std::path::Path;

use nalgebra::Complex;
use rand_distr::{Binomial, Distribution};

use crate::channel::{output_operator, ChoiOperator};
use crate::error::{Error, Result};
use crate::operator::{eig_matrix, tensor, trace_product, HermitianOperator, PSD_TOL};
use crate::random::{gaussian_matrix, rng};
use crate::scalar::{re, CMatrix, Real, C};

pub const STATE_TOL: f64 = 1e-10;
pub const POM_TOL: f64 = 1e-10;
pub const SIC_TOL: f64 = 1e-8;
/// Probabilities in `[-PROB_CLAMP, 0)` are rounded to zero.
pub const PROB_CLAMP: f64 = 1e-12;

/// Ordered list of input density operators.
#[derive(Clone, Debug)]
pub struct InputEnsemble<T: Real> {
    states: Vec<HermitianOperator<T>>,
    labels: Vec<String>,
}

impl<T: Real> InputEnsemble<T> {
    pub fn new(states: Vec<HermitianOperator<T>>, labels: Vec<String>) -> Result<Self> {
        if states.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} states but {} labels",
                states.len(),
                labels.len()
            )));
        }
        let mut ens = Self {
            states: Vec::with_capacity(states.len()),
            labels: Vec::with_capacity(labels.len()),
        };
        for (s, l) in states.into_iter().zip(labels) {
            ens.push(s, l)?;
        }
        Ok(ens)
    }

    pub fn empty() -> Self {
        Self {
            states: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Appends a state after checking unit trace and positivity.
    pub fn push(&mut self, state: HermitianOperator<T>, label: impl Into<String>) -> Result<usize> {
        if let Some(first) = self.states.first() {
            if first.dim() != state.dim() {
                return Err(Error::Dimension(format!(
                    "state dim {} in ensemble of dim {}",
                    state.dim(),
                    first.dim()
                )));
            }
        }
        validate_state(&state)?;
        self.states.push(state);
        self.labels.push(label.into());
        Ok(self.states.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.dim())
    }

    pub fn states(&self) -> &[HermitianOperator<T>] {
        &self.states
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn state(&self, i: usize) -> &HermitianOperator<T> {
        &self.states[i]
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// Sub-ensemble in the given order.
    pub fn select(&self, order: &[usize]) -> Self {
        Self {
            states: order.iter().map(|&i| self.states[i].clone()).collect(),
            labels: order.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }
}

pub fn validate_state<T: Real>(state: &HermitianOperator<T>) -> Result<()> {
    let tr = state.trace();
    if (tr - T::one()).abs() > T::lit(STATE_TOL) {
        return Err(Error::Parameter(format!(
            "input state trace {} != 1",
            tr.as_f64()
        )));
    }
    let min = state.min_eigenvalue()?;
    if min < -T::lit(STATE_TOL) {
        return Err(Error::NotPositive(min.as_f64()));
    }
    Ok(())
}

/// Probability operator measurement with optional per-outcome detection efficiencies.
#[derive(Clone, Debug)]
pub struct Pom<T: Real> {
    outcomes: Vec<HermitianOperator<T>>,
    efficiencies: Vec<T>,
}

impl<T: Real> Pom<T> {
    /// Perfect-detection POM; outcomes must be positive and sum to the identity.
    pub fn new(outcomes: Vec<HermitianOperator<T>>) -> Result<Self> {
        let n = outcomes.len();
        Self::with_efficiencies(outcomes, vec![T::one(); n])
    }

    pub fn with_efficiencies(outcomes: Vec<HermitianOperator<T>>, efficiencies: Vec<T>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Parameter("POM needs at least one outcome".into()));
        }
        if efficiencies.len() != outcomes.len() {
            return Err(Error::Dimension(format!(
                "{} outcomes but {} efficiencies",
                outcomes.len(),
                efficiencies.len()
            )));
        }
        if let Some(e) = efficiencies
            .iter()
            .find(|&&e| !(e > T::zero() && e <= T::one()))
        {
            return Err(Error::Parameter(format!(
                "detection efficiency {} outside (0, 1]",
                e.as_f64()
            )));
        }
        let d = outcomes[0].dim();
        let mut sum = CMatrix::<T>::zeros(d, d);
        for o in &outcomes {
            if o.dim() != d {
                return Err(Error::Dimension(format!("outcome dim {} != {d}", o.dim())));
            }
            let min = o.min_eigenvalue()?;
            if min < -T::lit(PSD_TOL) {
                return Err(Error::NotPositive(min.as_f64()));
            }
            sum += o.matrix();
        }
        let dev = crate::operator::max_abs_diff(&sum, &CMatrix::identity(d, d));
        if dev > T::lit(POM_TOL) {
            return Err(Error::Parameter(format!(
                "POM outcomes do not sum to the identity (max deviation {:.3e})",
                dev.as_f64()
            )));
        }
        Ok(Self {
            outcomes,
            efficiencies,
        })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.outcomes[0].dim()
    }

    pub fn outcomes(&self) -> &[HermitianOperator<T>] {
        &self.outcomes
    }

    pub fn efficiencies(&self) -> &[T] {
        &self.efficiencies
    }

    pub fn is_perfect(&self) -> bool {
        self.efficiencies.iter().all(|&e| e == T::one())
    }

    /// `Π̃_m = η_m Π_m`.
    pub fn effective_outcomes(&self) -> Vec<CMatrix<T>> {
        self.outcomes
            .iter()
            .zip(&self.efficiencies)
            .map(|(o, &e)| o.matrix().map(|z| z * e))
            .collect()
    }

    /// `G = Σ_m η_m Π_m`.
    pub fn detection_operator(&self) -> HermitianOperator<T> {
        let d = self.dim();
        let sum = self
            .effective_outcomes()
            .into_iter()
            .fold(CMatrix::zeros(d, d), |acc, o| acc + o);
        HermitianOperator::symmetrized(sum)
    }

    pub fn with_uniform_efficiency(&self, eta: T) -> Result<Self> {
        Self::with_efficiencies(self.outcomes.clone(), vec![eta; self.len()])
    }
}

fn bloch_state<T: Real>(r: [f64; 3]) -> HermitianOperator<T> {
    let h = |x: f64| T::lit(0.5 * x);
    let m = CMatrix::from_row_slice(
        2,
        2,
        &[
            re(h(1.0 + r[2])),
            Complex::new(h(r[0]), h(-r[1])),
            Complex::new(h(r[0]), h(r[1])),
            re(h(1.0 - r[2])),
        ],
    );
    HermitianOperator::symmetrized(m)
}

/// Bloch vectors of the regular tetrahedron used by the qubit SIC.
pub fn tetrahedron_bloch_vectors() -> [[f64; 3]; 4] {
    let s2 = 2f64.sqrt();
    let s23 = (2.0 / 3.0f64).sqrt();
    [
        [0.0, 0.0, 1.0],
        [2.0 * s2 / 3.0, 0.0, -1.0 / 3.0],
        [-s2 / 3.0, s23, -1.0 / 3.0],
        [-s2 / 3.0, -s23, -1.0 / 3.0],
    ]
}

/// Four tetrahedron states and the qubit SIC POM `{|t_k⟩⟨t_k| / 2}`.
pub fn qubit_tetrahedron<T: Real>() -> (InputEnsemble<T>, Pom<T>) {
    let states: Vec<HermitianOperator<T>> = tetrahedron_bloch_vectors()
        .iter()
        .map(|&r| bloch_state(r))
        .collect();
    let labels = (0..4).map(|k| format!("t{k}")).collect();
    let outcomes = states.iter().map(|s| s.scale(T::lit(0.5))).collect();
    (
        InputEnsemble::new(states, labels).expect("tetrahedron states are valid"),
        Pom::new(outcomes).expect("tetrahedron POM is complete"),
    )
}

/// `4^n` tensor products of qubit tetrahedron outcomes (first qubit slowest).
pub fn product_sic_pom<T: Real>(n_qubits: usize) -> Result<Pom<T>> {
    if n_qubits == 0 {
        return Err(Error::Parameter("n_qubits must be at least 1".into()));
    }
    let (_, qubit) = qubit_tetrahedron::<T>();
    let mut outcomes: Vec<HermitianOperator<T>> = qubit.outcomes().to_vec();
    for _ in 1..n_qubits {
        outcomes = outcomes
            .iter()
            .flat_map(|a| qubit.outcomes().iter().map(move |b| tensor(a, b)))
            .collect();
    }
    Pom::new(outcomes)
}

/// `4^n` product projectors over `|0⟩, |1⟩, (|0⟩+|1⟩)/√2, (|0⟩+i|1⟩)/√2`.
pub fn standard_product_inputs<T: Real>(n_qubits: usize) -> Result<InputEnsemble<T>> {
    if n_qubits == 0 {
        return Err(Error::Parameter("n_qubits must be at least 1".into()));
    }
    let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let z = T::zero();
    let kets: [(&str, [C<T>; 2]); 4] = [
        ("0", [re(T::one()), re(z)]),
        ("1", [re(z), re(T::one())]),
        ("+", [re(s), re(s)]),
        ("+i", [re(s), Complex::new(z, s)]),
    ];
    let singles: Vec<(String, HermitianOperator<T>)> = kets
        .iter()
        .map(|(l, k)| (l.to_string(), HermitianOperator::projector(k)))
        .collect();
    let mut acc = singles.clone();
    for _ in 1..n_qubits {
        acc = acc
            .iter()
            .flat_map(|(la, a)| {
                singles
                    .iter()
                    .map(move |(lb, b)| (format!("{la}_{lb}"), tensor(a, b)))
            })
            .collect();
    }
    let (labels, states) = acc.into_iter().unzip();
    InputEnsemble::new(states, labels)
}

/// Parses the plaintext fiducial format: `#` comments, a line holding `d`,
/// then `d` lines of `re im`.
pub fn parse_fiducial<T: Real>(text: &str) -> Result<Vec<C<T>>> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let d: usize = lines
        .next()
        .ok_or_else(|| Error::Fiducial("missing dimension header".into()))?
        .parse()
        .map_err(|e| Error::Fiducial(format!("bad dimension header: {e}")))?;
    let mut amps = Vec::with_capacity(d);
    for (i, line) in lines.enumerate() {
        let mut parts = line.split_whitespace();
        let mut next = || -> Result<f64> {
            parts
                .next()
                .ok_or_else(|| Error::Fiducial(format!("line {} needs `re im`", i + 2)))?
                .parse()
                .map_err(|e| Error::Fiducial(format!("line {}: {e}", i + 2)))
        };
        let (r, im) = (next()?, next()?);
        amps.push(Complex::new(T::lit(r), T::lit(im)));
    }
    if amps.len() != d {
        return Err(Error::Fiducial(format!(
            "header says d = {d}, found {} amplitudes",
            amps.len()
        )));
    }
    let norm = amps.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt();
    Ok(amps.into_iter().map(|z| z / re(norm)).collect())
}

/// Weyl–Heisenberg orbit `X^a Z^b |ψ⟩`, verified against the SIC overlap relation.
pub fn sic_from_fiducial<T: Real>(fiducial: &[C<T>]) -> Result<InputEnsemble<T>> {
    let d = fiducial.len();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut kets = Vec::with_capacity(d * d);
    let mut labels = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            // (X^a Z^b ψ)[(j + a) mod d] = ω^{b j} ψ[j]
            let mut k = vec![Complex::new(T::zero(), T::zero()); d];
            for (j, &amp) in fiducial.iter().enumerate() {
                let ph = two_pi * ((b * j) % d) as f64 / d as f64;
                k[(j + a) % d] = amp * Complex::new(T::lit(ph.cos()), T::lit(ph.sin()));
            }
            kets.push(k);
            labels.push(format!("sic{a}.{b}"));
        }
    }
    let dev = sic_overlap_deviation(&kets);
    if dev > T::lit(SIC_TOL) {
        return Err(Error::SicOverlap(dev.as_f64()));
    }
    let states = kets.iter().map(|k| HermitianOperator::projector(k)).collect();
    InputEnsemble::new(states, labels)
}

/// Max deviation of `|⟨ψ_j|ψ_k⟩|²` from `(d δ_jk + 1)/(d + 1)`.
pub fn sic_overlap_deviation<T: Real>(kets: &[Vec<C<T>>]) -> T {
    let d = kets.first().map_or(1, |k| k.len());
    let off = T::one() / T::from_usize_lossy(d + 1);
    let mut dev = T::zero();
    for (j, kj) in kets.iter().enumerate() {
        for (k, kk) in kets.iter().enumerate() {
            let ip = kj
                .iter()
                .zip(kk)
                .fold(Complex::new(T::zero(), T::zero()), |a, (x, y)| a + x.conj() * y);
            let target = if j == k { T::one() } else { off };
            dev = dev.max((ip.norm_sqr() - target).abs());
        }
    }
    dev
}

/// Loads a fiducial file for dimension `d` and builds the SIC input ensemble.
pub fn sic_inputs<T: Real>(d: usize, fiducial_source: &Path) -> Result<InputEnsemble<T>> {
    let text = std::fs::read_to_string(fiducial_source)?;
    let fid = parse_fiducial::<T>(&text)?;
    if fid.len() != d {
        return Err(Error::Fiducial(format!(
            "{} holds a d = {} fiducial, requested d = {d}",
            fiducial_source.display(),
            fid.len()
        )));
    }
    sic_from_fiducial(&fid)
}

/// SIC ensembles for `d ∈ {2, 4, 8}` from the fiducials shipped in `data/`.
pub fn sic_inputs_builtin<T: Real>(d: usize) -> Result<InputEnsemble<T>> {
    let text = match d {
        2 => include_str!("../data/sic_d2.txt"),
        4 => include_str!("../data/sic_d4.txt"),
        8 => include_str!("../data/sic_d8.txt"),
        _ => {
            return Err(Error::Parameter(format!(
                "no bundled SIC fiducial for d = {d} (available: 2, 4, 8)"
            )))
        }
    };
    sic_from_fiducial(&parse_fiducial::<T>(text)?)
}

/// `m` Wishart operators `A_j` normalized as `S^{-1/2} A_j S^{-1/2}`, `S = Σ A_j`.
pub fn random_pom<T: Real>(d: usize, m: usize, seed: u64) -> Result<Pom<T>> {
    if m < d * d {
        return Err(Error::Parameter(format!(
            "random POM needs at least d^2 = {} outcomes, got {m}",
            d * d
        )));
    }
    let mut r = rng(seed);
    let raw: Vec<CMatrix<T>> = (0..m)
        .map(|_| {
            let x = gaussian_matrix::<T, _>(d, d, &mut r);
            &x * x.adjoint()
        })
        .collect();
    let s = raw.iter().fold(CMatrix::zeros(d, d), |acc, a| acc + a);
    let spec = eig_matrix(&s)?;
    let s_inv_sqrt = spec.map(|l| T::one() / l.sqrt());
    let mut outcomes: Vec<HermitianOperator<T>> = raw
        .iter()
        .map(|a| HermitianOperator::symmetrized(&s_inv_sqrt * a * &s_inv_sqrt))
        .collect();
    // Fold the round-off residual into the last outcome so the sum is exact.
    let sum = outcomes
        .iter()
        .fold(CMatrix::zeros(d, d), |acc, o| acc + o.matrix());
    let fix = CMatrix::<T>::identity(d, d) - sum;
    let last = outcomes.pop().expect("m >= 1");
    outcomes.push(HermitianOperator::symmetrized(last.into_matrix() + fix));
    Pom::new(outcomes)
}

/// `p_lm = tr{E (ρ_l^T ⊗ η_m Π_m)} / L`.
pub fn probabilities<T: Real>(
    e: &ChoiOperator<T>,
    inputs: &InputEnsemble<T>,
    pom: &Pom<T>,
) -> Result<Vec<Vec<T>>> {
    if inputs.dim() != e.d_in() || pom.dim() != e.d_out() {
        return Err(Error::Dimension(format!(
            "channel {}->{}, inputs dim {}, POM dim {}",
            e.d_in(),
            e.d_out(),
            inputs.dim(),
            pom.dim()
        )));
    }
    let l = T::from_usize_lossy(inputs.len());
    let outcomes = pom.effective_outcomes();
    inputs
        .states()
        .iter()
        .enumerate()
        .map(|(li, rho)| {
            let out = output_operator(e.matrix().matrix(), rho.matrix(), e.d_in(), e.d_out());
            outcomes
                .iter()
                .enumerate()
                .map(|(mi, pi)| clamp_probability(trace_product(&out, pi) / l, li, mi))
                .collect()
        })
        .collect()
}

pub(crate) fn clamp_probability<T: Real>(p: T, input: usize, outcome: usize) -> Result<T> {
    if p >= T::zero() {
        Ok(p)
    } else if p >= -T::lit(PROB_CLAMP) {
        Ok(T::zero())
    } else {
        Err(Error::InvalidProbability {
            input,
            outcome,
            value: p.as_f64(),
        })
    }
}

/// Number of copies per input state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Copies {
    Finite(u64),
    /// Exact probabilities stand in for frequencies.
    Noiseless,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataRow<T: Real> {
    /// Index of the input state in the ensemble the data refers to.
    pub input: usize,
    /// Detected counts per outcome; `None` for noiseless rows.
    pub counts: Option<Vec<u64>>,
    /// Per-input frequencies `ν_m` (detected outcomes only, so `Σ ν_m ≤ 1`).
    pub frequencies: Vec<T>,
}

/// Accumulated measurement record, one row per input state sent.
#[derive(Clone, Debug, PartialEq)]
pub struct TomographyData<T: Real> {
    rows: Vec<DataRow<T>>,
    copies: Copies,
}

impl<T: Real> TomographyData<T> {
    pub fn new(copies: Copies) -> Self {
        Self {
            rows: Vec::new(),
            copies,
        }
    }

    pub fn copies(&self) -> Copies {
        self.copies
    }

    pub fn rows(&self) -> &[DataRow<T>] {
        &self.rows
    }

    pub fn num_inputs(&self) -> usize {
        self.rows.len()
    }

    pub fn num_outcomes(&self) -> usize {
        self.rows.first().map_or(0, |r| r.frequencies.len())
    }

    pub fn inputs_used(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.input).collect()
    }

    pub fn push_counts(&mut self, input: usize, counts: Vec<u64>) -> Result<()> {
        let n = match self.copies {
            Copies::Finite(n) => n,
            Copies::Noiseless => {
                return Err(Error::Parameter("count row pushed onto noiseless data".into()))
            }
        };
        let total: u64 = counts.iter().sum();
        if total > n {
            return Err(Error::Parameter(format!(
                "{total} detections exceed {n} copies"
            )));
        }
        let nf = T::lit(n as f64);
        let frequencies = counts.iter().map(|&c| T::lit(c as f64) / nf).collect();
        self.check_width(&counts)?;
        self.rows.push(DataRow {
            input,
            counts: Some(counts),
            frequencies,
        });
        Ok(())
    }

    /// Appends a frequency row; counts are left empty.
    pub fn push_frequencies(&mut self, input: usize, frequencies: Vec<T>) -> Result<()> {
        self.check_width(&frequencies)?;
        self.rows.push(DataRow {
            input,
            counts: None,
            frequencies,
        });
        Ok(())
    }

    fn check_width<U>(&self, row: &[U]) -> Result<()> {
        if !self.rows.is_empty() && row.len() != self.num_outcomes() {
            return Err(Error::Dimension(format!(
                "row has {} outcomes, data has {}",
                row.len(),
                self.num_outcomes()
            )));
        }
        Ok(())
    }

    /// The first `n` rows.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            rows: self.rows[..n.min(self.rows.len())].to_vec(),
            copies: self.copies,
        }
    }

    /// `f_lm`: frequencies normalized over all detected events. Under perfect
    /// detection this is `n_lm / (L N)` (equivalently `ν_lm / L`).
    pub fn global_frequencies(&self) -> Vec<Vec<T>> {
        let total = self
            .rows
            .iter()
            .flat_map(|r| r.frequencies.iter())
            .fold(T::zero(), |a, &x| a + x);
        if total <= T::zero() {
            return self
                .rows
                .iter()
                .map(|r| vec![T::zero(); r.frequencies.len()])
                .collect();
        }
        self.rows
            .iter()
            .map(|r| r.frequencies.iter().map(|&x| x / total).collect())
            .collect()
    }

    /// Normalization `L·N` turning `Σ n log p` into the normalized log-likelihood.
    /// Noiseless data use `N = 1`.
    pub fn count_scale(&self) -> T {
        let n = match self.copies {
            Copies::Finite(n) => n as f64,
            Copies::Noiseless => 1.0,
        };
        T::lit(n * self.rows.len() as f64)
    }
}

/// Multinomial draw of `N` copies per input, with a no-detection bin when
/// the row sums to less than `1/L`. Noiseless mode rescales probabilities to
/// frequencies `ν_lm = L p_lm`.
pub fn sample_counts<T: Real>(p: &[Vec<T>], copies: Copies, seed: u64) -> Result<TomographyData<T>> {
    let l = p.len() as f64;
    let mut data = TomographyData::new(copies);
    let mut r = rng(seed);
    for (li, row) in p.iter().enumerate() {
        let probs: Vec<f64> = row.iter().map(|x| (x.as_f64() * l).max(0.0)).collect();
        let total: f64 = probs.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(Error::Parameter(format!(
                "row {li} probabilities sum to {} > 1/L",
                total / l
            )));
        }
        match copies {
            Copies::Noiseless => {
                data.push_frequencies(li, probs.iter().map(|&x| T::lit(x)).collect())?;
            }
            Copies::Finite(n) => {
                let mut remaining = n;
                let mut mass = 1.0f64;
                let mut counts = Vec::with_capacity(probs.len());
                for &q in &probs {
                    let c = if remaining == 0 || q <= 0.0 {
                        0
                    } else if q >= mass {
                        remaining
                    } else {
                        let b = Binomial::new(remaining, (q / mass).clamp(0.0, 1.0))
                            .map_err(|e| Error::Parameter(e.to_string()))?;
                        b.sample(&mut r)
                    };
                    counts.push(c);
                    remaining -= c;
                    mass = (mass - q).max(0.0);
                }
                data.push_counts(li, counts)?;
            }
        }
    }
    Ok(data)
}
