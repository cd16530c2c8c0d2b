//! Seeded randomness: counter-based seed derivation and random matrix ensembles.

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::{CMatrix, Real};

pub type SimRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed from a master seed and a path of counters,
/// e.g. `(run, scheme, step, candidate)`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Matrix with i.i.d. standard complex Gaussian entries.
pub fn gaussian_matrix<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix<T> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(rows, cols, |_, _| {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        Complex::new(T::lit(a * s), T::lit(b * s))
    })
}

/// Haar-random isometry `rows x cols` (`rows >= cols`) from the phase-corrected
/// QR decomposition of a Gaussian matrix.
pub fn haar_isometry<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix<T> {
    assert!(rows >= cols, "isometry needs rows >= cols");
    let g = gaussian_matrix::<T, R>(rows, cols, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        let d = r[(j, j)];
        let n = d.norm_sqr().sqrt();
        if n > T::zero() {
            let phase = d / Complex::new(n, T::zero());
            q.column_mut(j).iter_mut().for_each(|z| *z *= phase);
        }
    }
    q
}

/// Random normalized ket drawn uniformly from the unit sphere.
pub fn random_ket<T: Real, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<Complex<T>> {
    let g = gaussian_matrix::<T, R>(dim, 1, rng);
    let n = g.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt();
    g.iter().map(|z| *z / Complex::new(n, T::zero())).collect()
}
