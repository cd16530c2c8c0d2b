//! Quantum channels as Choi–Jamiołkowski operators.
//!
//! A channel `ρ ↦ Σ_m K_m ρ K_m†` from a `d_in`-dimensional input space `H`
//! to a `d_out`-dimensional output space `K` is stored as
//! `E = Σ_{jk} |j⟩⟨k| ⊗ M(|j⟩⟨k|)` on `H ⊗ K`, so that `tr E = d_in` and
//! `tr_K E = 1_H` for trace-preserving maps.

use std::fmt;
use std::str::FromStr;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{eig_hermitian, ptrace_second, HermitianOperator, PSD_TOL};
use crate::random::{haar_isometry, rng};
use crate::scalar::{re, CMatrix, Real};

pub const COMPLETENESS_TOL: f64 = 1e-10;
pub const TP_TOL: f64 = 1e-8;
/// Eigenvalues below this fraction of `tr E` count as zero when computing rank.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct KrausSet<T: Real> {
    operators: Vec<CMatrix<T>>,
    d_in: usize,
    d_out: usize,
}

impl<T: Real> KrausSet<T> {
    /// Validates shapes and `Σ K†K = 1`.
    pub fn new(operators: Vec<CMatrix<T>>) -> Result<Self> {
        let first = operators
            .first()
            .ok_or_else(|| Error::Parameter("empty Kraus set".into()))?;
        let (d_out, d_in) = first.shape();
        if let Some(bad) = operators.iter().find(|k| k.shape() != (d_out, d_in)) {
            return Err(Error::Dimension(format!(
                "Kraus operator {}x{} in a {}x{} set",
                bad.nrows(),
                bad.ncols(),
                d_out,
                d_in
            )));
        }
        let set = Self {
            operators,
            d_in,
            d_out,
        };
        let res = set.completeness_residual();
        if res > T::lit(COMPLETENESS_TOL) {
            return Err(Error::Incomplete(res.as_f64()));
        }
        Ok(set)
    }

    pub fn operators(&self) -> &[CMatrix<T>] {
        &self.operators
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// Max-entry deviation of `Σ K†K` from the identity.
    pub fn completeness_residual(&self) -> T {
        let mut acc = CMatrix::<T>::zeros(self.d_in, self.d_in);
        for k in &self.operators {
            acc += k.adjoint() * k;
        }
        acc -= CMatrix::identity(self.d_in, self.d_in);
        acc.iter().fold(T::zero(), |m, z| m.max(z.norm_sqr().sqrt()))
    }

    /// Direct Kraus-sum evaluation `Σ K ρ K†`.
    pub fn apply(&self, rho: &HermitianOperator<T>) -> HermitianOperator<T> {
        let mut out = CMatrix::<T>::zeros(self.d_out, self.d_out);
        for k in &self.operators {
            out += k * rho.matrix() * k.adjoint();
        }
        HermitianOperator::symmetrized(out)
    }

    /// `K'_m = Σ_{m'} u_{m'm} K_{m'}` for a unitary mixing matrix `u`.
    pub fn remix(&self, u: &CMatrix<T>) -> Result<Self> {
        let n = self.operators.len();
        if u.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "mixing matrix must be {n}x{n}, got {}x{}",
                u.nrows(),
                u.ncols()
            )));
        }
        let ops = (0..n)
            .map(|m| {
                let mut k = CMatrix::<T>::zeros(self.d_out, self.d_in);
                for (mp, op) in self.operators.iter().enumerate() {
                    k += op * u[(mp, m)];
                }
                k
            })
            .collect();
        Self::new(ops)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChoiOperator<T: Real> {
    matrix: HermitianOperator<T>,
    d_in: usize,
    d_out: usize,
}

impl<T: Real> ChoiOperator<T> {
    /// Validates positivity, `tr_K E = 1_H` and `tr E = d_in`.
    pub fn new(matrix: HermitianOperator<T>, d_in: usize, d_out: usize) -> Result<Self> {
        if matrix.dim() != d_in * d_out {
            return Err(Error::Dimension(format!(
                "Choi matrix dim {} != {} x {}",
                matrix.dim(),
                d_in,
                d_out
            )));
        }
        let e = Self::from_parts(matrix, d_in, d_out);
        let tp = e.tp_residual();
        if tp > T::lit(TP_TOL) {
            return Err(Error::NotTracePreserving(tp.as_f64()));
        }
        let min = e.matrix.min_eigenvalue()?;
        if min < -T::lit(PSD_TOL) {
            return Err(Error::NotPositive(min.as_f64()));
        }
        Ok(e)
    }

    /// Skips validation; callers guarantee the invariants by construction.
    pub fn from_parts(matrix: HermitianOperator<T>, d_in: usize, d_out: usize) -> Self {
        debug_assert_eq!(matrix.dim(), d_in * d_out);
        Self {
            matrix,
            d_in,
            d_out,
        }
    }

    /// The maximally mixed trace-preserving operator `1_{HK} / d_out`.
    pub fn maximally_mixed(d_in: usize, d_out: usize) -> Self {
        Self::from_parts(
            HermitianOperator::identity(d_in * d_out).scale(T::one() / T::from_usize_lossy(d_out)),
            d_in,
            d_out,
        )
    }

    pub fn matrix(&self) -> &HermitianOperator<T> {
        &self.matrix
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn dim(&self) -> usize {
        self.d_in * self.d_out
    }

    /// Max-entry deviation of `tr_K E` from `1_H`.
    pub fn tp_residual(&self) -> T {
        let pt = ptrace_second(self.matrix.matrix(), self.d_in, self.d_out);
        let id = CMatrix::<T>::identity(self.d_in, self.d_in);
        pt.iter()
            .zip(id.iter())
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).norm_sqr().sqrt()))
    }

    /// Numerical rank: eigenvalues above `RANK_TOL · tr E`.
    pub fn rank(&self) -> Result<usize> {
        let spec = eig_hermitian(&self.matrix)?;
        let cut = T::lit(RANK_TOL) * self.matrix.trace();
        Ok(spec.eigenvalues.iter().filter(|&&l| l > cut).count())
    }

    /// Eigenvalues of `E / d_in`, descending.
    pub fn normalized_spectrum(&self) -> Result<Vec<T>> {
        let di = T::from_usize_lossy(self.d_in);
        Ok(eig_hermitian(&self.matrix)?
            .eigenvalues
            .into_iter()
            .map(|l| l / di)
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct ChoiJson<T: Real> {
    d_in: usize,
    d_out: usize,
    matrix: HermitianOperator<T>,
}

impl<T: Real> Serialize for ChoiOperator<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ChoiJson {
            d_in: self.d_in,
            d_out: self.d_out,
            matrix: self.matrix.clone(),
        }
        .serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for ChoiOperator<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ChoiJson::<T>::deserialize(d)?;
        ChoiOperator::new(raw.matrix, raw.d_in, raw.d_out).map_err(serde::de::Error::custom)
    }
}

/// `E = Σ_m |ψ_m⟩⟨ψ_m|` with `|ψ_m⟩ = Σ_j |j⟩ ⊗ K_m|j⟩`.
pub fn choi_from_kraus<T: Real>(k: &KrausSet<T>) -> ChoiOperator<T> {
    let (di, d_o) = (k.d_in, k.d_out);
    let n = di * d_o;
    let mut e = CMatrix::<T>::zeros(n, n);
    for op in &k.operators {
        // ψ[(j, a)] = K[a, j]
        let psi: Vec<Complex<T>> = (0..n).map(|r| op[(r % d_o, r / d_o)]).collect();
        for r in 0..n {
            for c in 0..n {
                e[(r, c)] += psi[r] * psi[c].conj();
            }
        }
    }
    ChoiOperator::from_parts(HermitianOperator::symmetrized(e), di, d_o)
}

/// `ρ_o = tr_H{E (ρ_i^T ⊗ 1_K)}`.
pub fn apply_channel<T: Real>(
    e: &ChoiOperator<T>,
    rho_in: &HermitianOperator<T>,
) -> Result<HermitianOperator<T>> {
    if rho_in.dim() != e.d_in {
        return Err(Error::Dimension(format!(
            "input state dim {} != channel input dim {}",
            rho_in.dim(),
            e.d_in
        )));
    }
    Ok(HermitianOperator::symmetrized(output_operator(
        e.matrix.matrix(),
        rho_in.matrix(),
        e.d_in,
        e.d_out,
    )))
}

/// `tr_H{E (ρ^T ⊗ 1)}` on raw matrices; `ρ` given untransposed.
pub(crate) fn output_operator<T: Real>(
    e: &CMatrix<T>,
    rho: &CMatrix<T>,
    di: usize,
    d_o: usize,
) -> CMatrix<T> {
    // out[a, b] = Σ_{jk} E[(j,a),(k,b)] ρ[j,k]
    let mut out = CMatrix::<T>::zeros(d_o, d_o);
    for j in 0..di {
        for k in 0..di {
            let w = rho[(j, k)];
            if w.re == T::zero() && w.im == T::zero() {
                continue;
            }
            for a in 0..d_o {
                for b in 0..d_o {
                    out[(a, b)] += e[(j * d_o + a, k * d_o + b)] * w;
                }
            }
        }
    }
    out
}

pub fn cnot_matrix<T: Real>() -> CMatrix<T> {
    permutation_matrix(&[0, 1, 3, 2])
}

pub fn toffoli_matrix<T: Real>() -> CMatrix<T> {
    permutation_matrix(&[0, 1, 2, 3, 4, 5, 7, 6])
}

/// Unitary with `U|j⟩ = |perm[j]⟩`.
fn permutation_matrix<T: Real>(perm: &[usize]) -> CMatrix<T> {
    let n = perm.len();
    let mut u = CMatrix::zeros(n, n);
    for (j, &p) in perm.iter().enumerate() {
        u[(p, j)] = re(T::one());
    }
    u
}

/// Named unitary benchmark channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinChannel {
    Cnot,
    Toffoli,
    /// Identity channel on a space of the given dimension.
    Identity(usize),
}

impl BuiltinChannel {
    pub fn unitary<T: Real>(self) -> CMatrix<T> {
        match self {
            BuiltinChannel::Cnot => cnot_matrix(),
            BuiltinChannel::Toffoli => toffoli_matrix(),
            BuiltinChannel::Identity(d) => CMatrix::identity(d, d),
        }
    }
}

impl FromStr for BuiltinChannel {
    type Err = Error;

    /// Accepts `cnot`, `toffoli`, `identity` (qubit) and `identity:<d>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cnot" => Ok(BuiltinChannel::Cnot),
            "toffoli" => Ok(BuiltinChannel::Toffoli),
            "identity" => Ok(BuiltinChannel::Identity(2)),
            other => other
                .strip_prefix("identity:")
                .and_then(|d| d.parse().ok())
                .filter(|&d: &usize| d > 0)
                .map(BuiltinChannel::Identity)
                .ok_or_else(|| Error::UnknownChannel(s.to_string())),
        }
    }
}

impl fmt::Display for BuiltinChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuiltinChannel::Cnot => write!(f, "cnot"),
            BuiltinChannel::Toffoli => write!(f, "toffoli"),
            BuiltinChannel::Identity(d) => write!(f, "identity:{d}"),
        }
    }
}

pub fn unitary_choi<T: Real>(u: CMatrix<T>) -> Result<ChoiOperator<T>> {
    Ok(choi_from_kraus(&KrausSet::new(vec![u])?))
}

pub fn builtin_channel<T: Real>(name: &str) -> Result<ChoiOperator<T>> {
    let b: BuiltinChannel = name.parse()?;
    unitary_choi(b.unitary())
}

fn check_probability(epsilon: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Parameter(format!(
            "channel error probability must lie in [0, 1], got {epsilon}"
        )));
    }
    Ok(())
}

/// CNOT with probability `1 − ε`, identity with probability `ε`.
pub fn imperfect_cnot<T: Real>(epsilon: f64) -> Result<KrausSet<T>> {
    check_probability(epsilon)?;
    let u: CMatrix<T> = cnot_matrix();
    let a = T::lit((1.0 - epsilon).sqrt());
    let b = T::lit(epsilon.sqrt());
    KrausSet::new(vec![u.map(|z| z * a), CMatrix::identity(4, 4).map(|z| z * b)])
}

/// CNOT with probability `1 − ε`, otherwise `n_noise` random operators `B_j`
/// sliced from a Haar isometry so that `Σ B_j†B_j = 1` exactly.
pub fn noisy_cnot<T: Real>(epsilon: f64, n_noise: usize, seed: u64) -> Result<KrausSet<T>> {
    check_probability(epsilon)?;
    if n_noise == 0 {
        return Err(Error::Parameter("n_noise must be at least 1".into()));
    }
    let u: CMatrix<T> = cnot_matrix();
    let a = T::lit((1.0 - epsilon).sqrt());
    let b = T::lit(epsilon.sqrt());
    let mut r = rng(seed);
    let v: CMatrix<T> = haar_isometry(n_noise * 4, 4, &mut r);
    let mut ops = vec![u.map(|z| z * a)];
    for j in 0..n_noise {
        ops.push(v.rows(j * 4, 4).into_owned().map(|z| z * b));
    }
    KrausSet::new(ops)
}

/// Kraus set of a random channel of Kraus rank `rank`, from a Haar isometry
/// `H → K ⊗ A` with `dim A = rank`.
pub fn random_kraus<T: Real>(d_in: usize, d_out: usize, rank: usize, seed: u64) -> Result<KrausSet<T>> {
    // Σ K†K = 1 on d_in dimensions needs rank · d_out >= d_in.
    let min_rank = d_in.div_ceil(d_out.max(1));
    if d_in == 0 || d_out == 0 || rank < min_rank || rank > d_in * d_out {
        return Err(Error::Parameter(format!(
            "rank must lie in {min_rank}..={}, got {rank}",
            d_in * d_out
        )));
    }
    let mut r = rng(seed);
    let v: CMatrix<T> = haar_isometry(rank * d_out, d_in, &mut r);
    let ops = (0..rank)
        .map(|mu| v.rows(mu * d_out, d_out).into_owned())
        .collect();
    KrausSet::new(ops)
}

pub fn random_channel<T: Real>(d_in: usize, d_out: usize, rank: usize, seed: u64) -> Result<ChoiOperator<T>> {
    Ok(choi_from_kraus(&random_kraus(d_in, d_out, rank, seed)?))
}

/// `S(E) = −tr{(E/d_in) log(E/d_in)}` with `0 log 0 = 0`.
pub fn channel_entropy<T: Real>(e: &ChoiOperator<T>) -> Result<T> {
    Ok(entropy_of_spectrum(&e.normalized_spectrum()?))
}

pub(crate) fn entropy_of_spectrum<T: Real>(mu: &[T]) -> T {
    mu.iter().fold(T::zero(), |acc, &m| {
        if m > T::zero() {
            acc - m * m.ln()
        } else {
            acc
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{partial_trace, Subsystem};

    type H = HermitianOperator<f64>;

    fn basis_projector(d: usize, i: usize) -> H {
        let mut diag = vec![0.0; d];
        diag[i] = 1.0;
        H::from_diagonal(&diag)
    }

    #[test]
    fn identity_channel_is_scaled_bell_projector() {
        let e: ChoiOperator<f64> = builtin_channel("identity").unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = H::projector(&[re(s), re(0.0), re(0.0), re(s)]).scale(2.0);
        assert!(e.matrix().max_abs_diff(&bell) < 1e-14);
        assert_eq!(e.rank().unwrap(), 1);
    }

    #[test]
    fn depolarizing_channel_choi_is_flat() {
        let i = CMatrix::<f64>::identity(2, 2);
        let x = CMatrix::from_row_slice(2, 2, &[re(0.0), re(1.0), re(1.0), re(0.0)]);
        let y = CMatrix::from_row_slice(
            2,
            2,
            &[re(0.0), Complex::new(0.0, -1.0), Complex::new(0.0, 1.0), re(0.0)],
        );
        let z = CMatrix::from_row_slice(2, 2, &[re(1.0), re(0.0), re(0.0), re(-1.0)]);
        let ops = [i, x, y, z].into_iter().map(|p| p.map(|v| v * 0.5)).collect();
        let e = choi_from_kraus(&KrausSet::new(ops).unwrap());
        assert!(e.matrix().max_abs_diff(&H::identity(4).scale(0.5)) < 1e-14);
        let rho = H::from_real_rows(2, &[0.7, 0.2, 0.2, 0.3]).unwrap();
        let out = apply_channel(&e, &rho).unwrap();
        assert!(out.max_abs_diff(&H::identity(2).scale(0.5)) < 1e-14);
        let s = channel_entropy(&e).unwrap();
        assert!((s - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cnot_maps_10_to_11() {
        let e: ChoiOperator<f64> = builtin_channel("cnot").unwrap();
        let out = apply_channel(&e, &basis_projector(4, 2)).unwrap();
        assert!(out.max_abs_diff(&basis_projector(4, 3)) < 1e-14);
    }

    #[test]
    fn cnot_and_toffoli_are_rank_one_trace_preserving() {
        let c: ChoiOperator<f64> = builtin_channel("cnot").unwrap();
        assert_eq!(c.dim(), 16);
        assert_eq!(c.rank().unwrap(), 1);
        assert!((c.matrix().trace() - 4.0).abs() < 1e-14);
        let pt = partial_trace(c.matrix(), (4, 4), Subsystem::Second).unwrap();
        assert!(pt.max_abs_diff(&H::identity(4)) < 1e-14);
        let spec = c.normalized_spectrum().unwrap();
        assert!((spec[0] - 1.0).abs() < 1e-12);
        assert!(spec[1..].iter().all(|l| l.abs() < 1e-12));

        let t: ChoiOperator<f64> = builtin_channel("toffoli").unwrap();
        assert_eq!(t.dim(), 64);
        assert_eq!(t.rank().unwrap(), 1);
        assert!((t.matrix().trace() - 8.0).abs() < 1e-13);
        assert!(channel_entropy(&t).unwrap().abs() < 1e-10);
    }

    #[test]
    fn unknown_builtin_rejected() {
        assert!(matches!(
            builtin_channel::<f64>("swap"),
            Err(Error::UnknownChannel(_))
        ));
        assert_eq!(
            "identity:3".parse::<BuiltinChannel>().unwrap(),
            BuiltinChannel::Identity(3)
        );
    }

    #[test]
    fn incomplete_kraus_rejected() {
        let k = CMatrix::<f64>::identity(2, 2).map(|z| z * 0.9);
        assert!(matches!(KrausSet::new(vec![k]), Err(Error::Incomplete(_))));
    }

    #[test]
    fn imperfect_cnot_limits_and_rank() {
        assert!(imperfect_cnot::<f64>(1.5).is_err());
        let e0 = choi_from_kraus(&imperfect_cnot::<f64>(0.0).unwrap());
        assert_eq!(e0.rank().unwrap(), 1);
        let e1 = choi_from_kraus(&imperfect_cnot::<f64>(1.0).unwrap());
        let id: ChoiOperator<f64> = builtin_channel("identity:4").unwrap();
        assert!(e1.matrix().max_abs_diff(id.matrix()) < 1e-14);
        let e = choi_from_kraus(&imperfect_cnot::<f64>(0.1).unwrap());
        assert_eq!(e.rank().unwrap(), 2);
    }

    /// Oracle: the two Choi vectors √(1−ε)|U⟩, √ε|1⟩ (each of norm² 4) have
    /// Gram matrix [[4(1−ε), 4c√(ε(1−ε))], [·, 4ε]] with c = tr(U_CNOT)/4 = 1/2;
    /// its eigenvalues are the nonzero eigenvalues of E.
    fn gram_eigenvalues(eps: f64) -> (f64, f64) {
        let a = 1.0 - eps;
        let b = eps;
        let off = 0.5 * (eps * (1.0 - eps)).sqrt();
        let tr = a + b;
        let det = a * b - off * off;
        let disc = (tr * tr / 4.0 - det).sqrt();
        (tr / 2.0 + disc, tr / 2.0 - disc)
    }

    #[test]
    fn imperfect_cnot_spectrum_matches_gram_oracle() {
        let (g1, g2) = gram_eigenvalues(0.1);
        let e = choi_from_kraus(&imperfect_cnot::<f64>(0.1).unwrap());
        let mu = e.normalized_spectrum().unwrap();
        assert!((mu[0] - g1).abs() < 1e-12);
        assert!((mu[1] - g2).abs() < 1e-12);
        let s = channel_entropy(&e).unwrap();
        assert!((s - (-g1 * g1.ln() - g2 * g2.ln())).abs() < 1e-12);
    }

    #[test]
    fn noisy_cnot_full_rank_and_complete() {
        let k = noisy_cnot::<f64>(0.1, 15, 11).unwrap();
        assert_eq!(k.operators().len(), 16);
        assert_eq!(choi_from_kraus(&k).rank().unwrap(), 16);
        let pure = choi_from_kraus(&noisy_cnot::<f64>(0.0, 15, 99).unwrap());
        let cnot: ChoiOperator<f64> = builtin_channel("cnot").unwrap();
        assert!(pure.matrix().max_abs_diff(cnot.matrix()) < 1e-14);
        for seed in 0..100 {
            let k = noisy_cnot::<f64>(0.1, 15, seed).unwrap();
            assert!(k.completeness_residual() < 1e-10);
        }
    }

    #[test]
    fn random_channel_ranks() {
        let u = random_channel::<f64>(2, 2, 1, 5).unwrap();
        assert_eq!(u.rank().unwrap(), 1);
        assert!(channel_entropy(&u).unwrap().abs() < 1e-10);
        let full = random_channel::<f64>(4, 4, 16, 5).unwrap();
        let spec = full.normalized_spectrum().unwrap();
        assert!(spec.iter().all(|&l| l > 0.0));
        for seed in 0..100 {
            let e = random_channel::<f64>(2, 3, 4, seed).unwrap();
            assert!(e.tp_residual() < 1e-10);
        }
        assert!(random_channel::<f64>(2, 2, 5, 0).is_err());
    }

    #[test]
    fn choi_json_round_trip_validates() {
        let e = choi_from_kraus(&imperfect_cnot::<f64>(0.1).unwrap());
        let s = serde_json::to_string(&e).unwrap();
        let back: ChoiOperator<f64> = serde_json::from_str(&s).unwrap();
        assert!(back.matrix().max_abs_diff(e.matrix()) < 1e-15);
        let bad = s.replace("\"d_in\":4", "\"d_in\":2").replace("\"d_out\":4", "\"d_out\":8");
        assert!(serde_json::from_str::<ChoiOperator<f64>>(&bad).is_err());
    }
}
