//! Dense complex operators with a Hermiticity contract.
//!
//! Composite spaces are ordered `H ⊗ K` with the first factor as the slow
//! index: entry `((j, a), (k, b))` of an operator on `H ⊗ K` lives at row
//! `j * d_k + a`, column `k * d_k + b`.

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::{re, CMatrix, Real, C};

/// Absolute entry-wise tolerance for the Hermiticity check.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues above `-PSD_TOL` count as non-negative.
pub const PSD_TOL: f64 = 1e-10;
/// Clamp floor applied to eigenvalues before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator<T: Real> {
    m: CMatrix<T>,
}

impl<T: Real> HermitianOperator<T> {
    /// Validates squareness and Hermiticity.
    pub fn new(m: CMatrix<T>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension(format!(
                "operator must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let dev = hermitian_deviation(&m);
        if dev > T::lit(HERMITIAN_TOL) {
            return Err(Error::NotHermitian(dev.as_f64()));
        }
        Ok(Self::symmetrized(m))
    }

    /// Projects onto the Hermitian part, `(m + m†) / 2`.
    pub fn symmetrized(m: CMatrix<T>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "operator must be square");
        Self { m: hermitian_part(&m) }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: CMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            m: CMatrix::zeros(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = CMatrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = re(d);
        }
        Self { m }
    }

    /// `|ψ⟩⟨ψ|` for the given (not necessarily normalized) ket.
    pub fn projector(ket: &[C<T>]) -> Self {
        let n = ket.len();
        let m = CMatrix::from_fn(n, n, |i, j| ket[i] * ket[j].conj());
        Self { m }
    }

    /// Builds from real row-major entries; convenient for tests and fixtures.
    pub fn from_real_rows(dim: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "expected {} entries, got {}",
                dim * dim,
                rows.len()
            )));
        }
        Self::new(CMatrix::from_row_iterator(
            dim,
            dim,
            rows.iter().map(|&x| re(T::lit(x))),
        ))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix<T> {
        self.m
    }

    pub fn trace(&self) -> T {
        (0..self.dim()).fold(T::zero(), |acc, i| acc + self.m[(i, i)].re)
    }

    /// Transpose in the computational basis (equal to entry-wise conjugation).
    pub fn transpose(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            m: self.m.map(|z| z * s),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            m: &self.m + &other.m,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            m: &self.m - &other.m,
        }
    }

    /// `tr{self · other}`, real for Hermitian arguments.
    pub fn trace_product(&self, other: &Self) -> T {
        trace_product(&self.m, &other.m)
    }

    pub fn frobenius_norm(&self) -> T {
        frobenius(&self.m)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        max_abs_diff(&self.m, &other.m)
    }

    /// Unitary conjugation `u · self · u†`.
    pub fn conjugate_by(&self, u: &CMatrix<T>) -> Self {
        Self::symmetrized(u * &self.m * u.adjoint())
    }

    pub fn min_eigenvalue(&self) -> Result<T> {
        let spec = eig_hermitian(self)?;
        Ok(*spec.eigenvalues.last().unwrap_or(&T::zero()))
    }
}

/// Eigen-decomposition with eigenvalues sorted in descending order.
#[derive(Clone, Debug)]
pub struct Spectrum<T: Real> {
    pub eigenvalues: Vec<T>,
    /// Column `i` is the eigenvector for `eigenvalues[i]`.
    pub eigenvectors: CMatrix<T>,
}

impl<T: Real> Spectrum<T> {
    /// `V · diag(f(λ)) · V†`.
    pub fn map(&self, f: impl Fn(T) -> T) -> CMatrix<T> {
        let fl: Vec<T> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        self.with_eigenvalues(&fl)
    }

    /// `V · diag(values) · V†`.
    pub fn with_eigenvalues(&self, fl: &[T]) -> CMatrix<T> {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &w) in fl.iter().enumerate() {
            scaled.column_mut(j).iter_mut().for_each(|z| *z = *z * w);
        }
        let out = matmul(&scaled, &v.adjoint());
        debug_assert_eq!(out.nrows(), n);
        hermitian_part(&out)
    }

    pub fn reconstruct(&self) -> CMatrix<T> {
        self.map(|l| l)
    }
}

/// Which tensor factor a partial trace removes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    /// The slow (input, `H`) factor.
    First,
    /// The fast (output, `K`) factor.
    Second,
}

/// Kronecker product; block `(j, k)` equals `a[j, k] · b`.
pub fn tensor<T: Real>(a: &HermitianOperator<T>, b: &HermitianOperator<T>) -> HermitianOperator<T> {
    HermitianOperator {
        m: a.m.kronecker(&b.m),
    }
}

/// Traces out one factor of an operator on `H ⊗ K` with `dims = (d_H, d_K)`.
pub fn partial_trace<T: Real>(
    a: &HermitianOperator<T>,
    dims: (usize, usize),
    over: Subsystem,
) -> Result<HermitianOperator<T>> {
    let (dh, dk) = dims;
    if a.dim() != dh * dk {
        return Err(Error::Dimension(format!(
            "partial trace: operator dim {} != {} x {}",
            a.dim(),
            dh,
            dk
        )));
    }
    let m = match over {
        Subsystem::Second => ptrace_second(&a.m, dh, dk),
        Subsystem::First => ptrace_first(&a.m, dh, dk),
    };
    Ok(HermitianOperator::symmetrized(m))
}

/// `tr_K{m}` for `m` on `H ⊗ K`.
pub fn ptrace_second<T: Real>(m: &CMatrix<T>, dh: usize, dk: usize) -> CMatrix<T> {
    CMatrix::from_fn(dh, dh, |j, k| {
        (0..dk).fold(Complex::new(T::zero(), T::zero()), |acc, a| {
            acc + m[(j * dk + a, k * dk + a)]
        })
    })
}

/// `tr_H{m}` for `m` on `H ⊗ K`.
pub fn ptrace_first<T: Real>(m: &CMatrix<T>, dh: usize, dk: usize) -> CMatrix<T> {
    CMatrix::from_fn(dk, dk, |a, b| {
        (0..dh).fold(Complex::new(T::zero(), T::zero()), |acc, j| {
            acc + m[(j * dk + a, j * dk + b)]
        })
    })
}

/// `h ⊗ 1_K`.
pub fn kron_identity<T: Real>(h: &CMatrix<T>, dk: usize) -> CMatrix<T> {
    let dh = h.nrows();
    let mut out = CMatrix::zeros(dh * dk, dh * dk);
    for j in 0..dh {
        for k in 0..dh {
            let v = h[(j, k)];
            for a in 0..dk {
                out[(j * dk + a, k * dk + a)] = v;
            }
        }
    }
    out
}

/// `(h ⊗ 1_K) · m` without forming the Kronecker product.
pub(crate) fn kron_identity_mul<T: Real>(h: &CMatrix<T>, m: &CMatrix<T>, dk: usize) -> CMatrix<T> {
    let dh = h.nrows();
    let n = dh * dk;
    assert_eq!(m.nrows(), n, "kron_identity_mul: dimension mismatch");
    let mut out = CMatrix::zeros(n, m.ncols());
    if n == 0 {
        return out;
    }
    for (oc, mc) in out.as_mut_slice().chunks_exact_mut(n).zip(m.as_slice().chunks_exact(n)) {
        for (j, ob) in oc.chunks_exact_mut(dk).enumerate() {
            for (jp, mb) in mc.chunks_exact(dk).enumerate() {
                let v = h[(j, jp)];
                for (x, &y) in ob.iter_mut().zip(mb) {
                    *x += v * y;
                }
            }
        }
    }
    out
}

/// `(h ⊗ 1_K) m (h ⊗ 1_K)` for Hermitian `h` and `m`.
pub(crate) fn kron_identity_sandwich<T: Real>(h: &CMatrix<T>, m: &CMatrix<T>, dk: usize) -> CMatrix<T> {
    let left = kron_identity_mul(h, m, dk);
    kron_identity_mul(h, &left.adjoint(), dk)
}

/// Dense product `a · b` as column axpys over the column-major storage.
/// Faster than the generic `Mul` for small complex matrices.
pub fn matmul<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimensions differ");
    let (m, k) = (a.nrows(), a.ncols());
    let mut c = CMatrix::zeros(m, b.ncols());
    if m == 0 || k == 0 {
        return c;
    }
    let av = a.as_slice();
    for (cc, bc) in c.as_mut_slice().chunks_exact_mut(m).zip(b.as_slice().chunks_exact(k)) {
        for (ac, &s) in av.chunks_exact(m).zip(bc) {
            for (x, &y) in cc.iter_mut().zip(ac) {
                *x += y * s;
            }
        }
    }
    c
}

pub fn eig_hermitian<T: Real>(a: &HermitianOperator<T>) -> Result<Spectrum<T>> {
    eig_matrix(&a.m)
}

pub(crate) fn eig_matrix<T: Real>(m: &CMatrix<T>) -> Result<Spectrum<T>> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), T::default_epsilon(), 100_000).ok_or_else(|| {
        Error::EigenFailure {
            dim: n,
            dump: format!("{m:.6}"),
        }
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::EigenFailure {
            dim: n,
            dump: format!("{m:.6}"),
        });
    }
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Applies `f` to the spectrum of a positive operator after clamping
/// eigenvalues below at `zero_floor`.
pub fn spectral_map<T: Real>(
    a: &HermitianOperator<T>,
    f: impl Fn(T) -> T,
    zero_floor: T,
) -> Result<HermitianOperator<T>> {
    let spec = eig_hermitian(a)?;
    spectral_map_from(&spec, f, zero_floor).map(HermitianOperator::symmetrized)
}

pub(crate) fn spectral_map_from<T: Real>(
    spec: &Spectrum<T>,
    f: impl Fn(T) -> T,
    zero_floor: T,
) -> Result<CMatrix<T>> {
    let scale = spec
        .eigenvalues
        .iter()
        .fold(T::one(), |acc, l| acc.max(l.abs()));
    if let Some(&min) = spec.eigenvalues.last() {
        if min < -T::lit(PSD_TOL) * scale {
            return Err(Error::NotPositive(min.as_f64()));
        }
    }
    let mut mapped = Vec::with_capacity(spec.eigenvalues.len());
    for &l in &spec.eigenvalues {
        let v = f(l.max(zero_floor));
        if !v.is_finite() {
            return Err(Error::SpectralDomain(l.as_f64()));
        }
        mapped.push(v);
    }
    Ok(spec.with_eigenvalues(&mapped))
}

/// Sum of absolute eigenvalues.
pub fn trace_norm<T: Real>(a: &HermitianOperator<T>) -> T {
    match eig_hermitian(a) {
        Ok(spec) => spec.eigenvalues.iter().fold(T::zero(), |acc, l| acc + l.abs()),
        Err(_) => {
            // Fall back to the singular values of the raw matrix.
            a.m.clone()
                .singular_values()
                .iter()
                .fold(T::zero(), |acc, &s| acc + s)
        }
    }
}

pub(crate) fn hermitian_part<T: Real>(m: &CMatrix<T>) -> CMatrix<T> {
    let half = T::lit(0.5);
    let n = m.nrows();
    CMatrix::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * half)
}

pub(crate) fn hermitian_deviation<T: Real>(m: &CMatrix<T>) -> T {
    let n = m.nrows();
    let mut dev = T::zero();
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm_sqr().sqrt());
        }
    }
    dev
}

pub(crate) fn trace_product<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> T {
    // tr{ab} = Σ_ij a_ij b_ji
    let n = a.nrows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            let x = a[(i, j)] * b[(j, i)];
            acc += x.re;
        }
    }
    acc
}

pub(crate) fn frobenius<T: Real>(m: &CMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
}

pub(crate) fn max_abs_diff<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (x, y)| acc.max((*x - *y).norm_sqr().sqrt()))
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    dim: usize,
    entries: Vec<[f64; 2]>,
}

impl<T: Real> Serialize for HermitianOperator<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let z = self.m[(i, j)];
                entries.push([z.re.as_f64(), z.im.as_f64()]);
            }
        }
        MatrixJson { dim: n, entries }.serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for HermitianOperator<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = MatrixJson::deserialize(d)?;
        if raw.entries.len() != raw.dim * raw.dim {
            return Err(D::Error::custom(format!(
                "expected {} entries for dim {}, got {}",
                raw.dim * raw.dim,
                raw.dim,
                raw.entries.len()
            )));
        }
        let m = CMatrix::from_row_iterator(
            raw.dim,
            raw.dim,
            raw.entries
                .iter()
                .map(|[r, i]| Complex::new(T::lit(*r), T::lit(*i))),
        );
        HermitianOperator::new(m).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{gaussian_matrix, rng};

    type H = HermitianOperator<f64>;

    #[test]
    fn matmul_agrees_with_generic_product() {
        let a = gaussian_matrix::<f64, _>(5, 3, &mut rng(1));
        let b = gaussian_matrix::<f64, _>(3, 4, &mut rng(2));
        assert!(max_abs_diff(&matmul(&a, &b), &(&a * &b)) < 1e-13);
        let h = gaussian_matrix::<f64, _>(2, 2, &mut rng(3));
        let m = gaussian_matrix::<f64, _>(6, 6, &mut rng(4));
        assert!(max_abs_diff(&kron_identity_mul(&h, &m, 3), &(kron_identity(&h, 3) * &m)) < 1e-13);
    }

    fn sigma_x() -> H {
        H::from_real_rows(2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    fn sigma_z() -> H {
        H::from_diagonal(&[1.0, -1.0])
    }

    #[test]
    fn tensor_identity_and_diagonal() {
        let i4 = tensor(&H::identity(2), &H::identity(2));
        assert_eq!(i4, H::identity(4));
        let zz = tensor(&sigma_z(), &sigma_z());
        assert!(zz.max_abs_diff(&H::from_diagonal(&[1.0, -1.0, -1.0, 1.0])) < 1e-15);
    }

    #[test]
    fn tensor_projector_with_sigma_x_fills_upper_left_block() {
        let p0 = H::from_diagonal(&[1.0, 0.0]);
        let t = tensor(&p0, &sigma_x());
        #[rustfmt::skip]
        let expected = H::from_real_rows(4, &[
            0.0, 1.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ]).unwrap();
        assert!(t.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn partial_trace_of_identity() {
        let r = partial_trace(&H::identity(4), (2, 2), Subsystem::Second).unwrap();
        assert!(r.max_abs_diff(&H::identity(2).scale(2.0)) < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_bad_dims() {
        let err = partial_trace(&H::identity(4), (3, 2), Subsystem::Second).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn eig_sorted_descending() {
        let s = eig_hermitian(&H::from_diagonal(&[1.0, 3.0])).unwrap();
        assert!((s.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_pauli_x() {
        let s = eig_hermitian(&sigma_x()).unwrap();
        assert!((s.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((s.eigenvalues[1] + 1.0).abs() < 1e-14);
        let v = s.eigenvectors.column(0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // (|0⟩ + |1⟩)/√2 up to a global phase
        let overlap = (v[0] * r + v[1] * r).norm();
        assert!((overlap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_map_log_of_identity_is_zero() {
        let l = spectral_map(&H::identity(4), f64::ln, 1e-14).unwrap();
        assert!(l.max_abs_diff(&H::zeros(4)) < 1e-14);
    }

    #[test]
    fn spectral_map_sqrt() {
        let s = spectral_map(&H::from_diagonal(&[4.0, 0.0]), f64::sqrt, 0.0).unwrap();
        assert!(s.max_abs_diff(&H::from_diagonal(&[2.0, 0.0])) < 1e-14);
    }

    #[test]
    fn spectral_map_rejects_negative_operator() {
        let err = spectral_map(&sigma_z(), f64::sqrt, 0.0).unwrap_err();
        assert!(matches!(err, Error::NotPositive(_)));
    }

    #[test]
    fn spectral_map_rejects_undefined_value() {
        let err = spectral_map(&H::from_diagonal(&[1.0, 0.0]), f64::ln, 0.0).unwrap_err();
        assert!(matches!(err, Error::SpectralDomain(_)));
    }

    #[test]
    fn abs_of_projector_difference() {
        // P = |0⟩⟨0|, Q = |ψ⟩⟨ψ| with ⟨0|ψ⟩ = c. |P − Q| has eigenvalues ±√(1−c²).
        let c: f64 = 0.6;
        let s = (1.0 - c * c).sqrt();
        let p = H::projector(&[Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)]);
        let q = H::projector(&[Complex::new(c, 0.0), Complex::new(0.0, s)]);
        let diff = p.sub(&q);
        let spec = eig_hermitian(&diff).unwrap();
        assert!((spec.eigenvalues[0] - s).abs() < 1e-12);
        assert!((spec.eigenvalues[1] + s).abs() < 1e-12);
        assert!((trace_norm(&diff) - 2.0 * s).abs() < 1e-12);
    }

    #[test]
    fn trace_norm_basics() {
        assert_eq!(trace_norm(&H::zeros(3)), 0.0);
        assert!((trace_norm(&sigma_z()) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex::new(1.0, 0.0),
                Complex::new(1.0, 0.0),
                Complex::new(0.0, 0.0),
                Complex::new(1.0, 0.0),
            ],
        );
        assert!(matches!(H::new(m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn json_round_trip() {
        let a = H::new(CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex::new(1.0, 0.0),
                Complex::new(0.5, -0.25),
                Complex::new(0.5, 0.25),
                Complex::new(-2.0, 0.0),
            ],
        ))
        .unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert!(s.starts_with("{\"dim\":2,\"entries\":[[1.0,0.0],[0.5,-0.25]"));
        let b: H = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_precision_instantiation() {
        let a = HermitianOperator::<f32>::from_diagonal(&[2.0, 1.0]);
        let t = tensor(&a, &a);
        assert!((t.trace() - 9.0).abs() < 1e-5);
        assert!((trace_norm(&t) - 9.0).abs() < 1e-4);
    }
}
