//! Seeded random operators for property checks and generated observable families.

use crate::kernel::{c, hermitize, trace, CMatrix, CVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex_normal<R: Rng>(r: &mut R) -> Complex64 {
    Complex64::new(r.sample(StandardNormal), r.sample(StandardNormal))
}

pub fn random_complex<R: Rng>(r: &mut R, n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |_, _| complex_normal(r))
}

/// Hermitian matrix with Frobenius norm `scale`.
pub fn random_hermitian<R: Rng>(r: &mut R, n: usize, scale: f64) -> CMatrix {
    let h = hermitize(&random_complex(r, n));
    let norm = crate::kernel::frobenius(&h);
    if norm == 0.0 {
        return h;
    }
    h * c(scale / norm)
}

/// Full-rank density matrix G G^dagger / Tr.
pub fn random_density<R: Rng>(r: &mut R, n: usize) -> CMatrix {
    let g = random_complex(r, n);
    let m = &g * g.adjoint() + CMatrix::identity(n, n) * c(0.05);
    let tr = trace(&m).re;
    hermitize(&(m * c(1.0 / tr)))
}

/// Random PSD matrix (not normalised).
pub fn random_psd<R: Rng>(r: &mut R, n: usize, rank: usize) -> CMatrix {
    let g = CMatrix::from_fn(n, rank.max(1), |_, _| complex_normal(r));
    hermitize(&(&g * g.adjoint()))
}

pub fn random_unit_vector<R: Rng>(r: &mut R, n: usize) -> CVector {
    let v = CVector::from_fn(n, |_, _| complex_normal(r));
    let norm = v.norm();
    v / c(norm)
}
