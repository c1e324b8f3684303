//! Dense complex linear algebra shared by every other module.
//!
//! Every matrix function in this crate goes through a Hermitian
//! eigendecomposition: all operators that get exponentiated or raised to a
//! fractional power are Hermitian, and one decomposition serves `exp`,
//! `R^u` and the Duhamel integrands alike.

mod duhamel;
mod quadrature;
mod tensor;

pub use duhamel::{duhamel_factors, first_order_duhamel, DuhamelFactors};
pub use quadrature::QuadratureRule;
pub use tensor::{kron, kron_with_limit, partial_trace, Keep};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Dense complex square matrix.
pub type CMatrix = DMatrix<Complex64>;
/// Dense complex column vector.
pub type CVector = DVector<Complex64>;

/// Max |H - H^dagger| entry tolerated by Hermitian-only routines.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Largest eigenvalue accepted by [`hermitian_exp`].
pub const EXP_BOUND: f64 = 700.0;
/// Smallest eigenvalue accepted by [`psd_power`].
pub const SPECTRAL_FLOOR: f64 = 1e-12;
/// Largest dimension [`kron`] will produce.
pub const MAX_KRON_DIM: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not Hermitian: max asymmetry {asymmetry:.3e}")]
    NotHermitian { asymmetry: f64 },
    #[error("exponent overflow: eigenvalue {eigenvalue} exceeds bound {bound}")]
    ExpOverflow { eigenvalue: f64, bound: f64 },
    #[error("eigenvalue {eigenvalue:.3e} below spectral floor {floor:.1e}")]
    BelowSpectralFloor { eigenvalue: f64, floor: f64 },
    #[error("power {0} outside [-1/2, 1/2]")]
    PowerOutOfRange(f64),
    #[error("dimension {dim} exceeds limit {limit}")]
    DimensionOverflow { dim: usize, limit: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid quadrature rule: {0}")]
    InvalidQuadrature(String),
}

pub type Result<T> = std::result::Result<T, KernelError>;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn diag_real(values: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(values.len(), values.iter().map(|&v| c(v))))
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// `Tr[a b]` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    a.transpose()
        .zip_fold(b, Complex64::new(0.0, 0.0), |acc, x, y| acc + x * y)
}

pub fn dagger(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Max |M - M^dagger| entry.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// (M + M^dagger) / 2.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5)
}

/// Checks the `ComplexMatrix` invariants: square with finite entries.
pub fn validate(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(KernelError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(KernelError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

pub fn validate_hermitian(m: &CMatrix) -> Result<()> {
    validate(m)?;
    let asymmetry = hermitian_defect(m);
    if asymmetry > HERMITIAN_TOL {
        return Err(KernelError::NotHermitian { asymmetry });
    }
    Ok(())
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Unitary matrix whose columns are the eigenvectors.
    pub eigenvectors: CMatrix,
}

impl HermitianSpectrum {
    /// V f(diag) V^dagger.
    pub fn apply<F: Fn(f64) -> Complex64>(&self, f: F) -> CMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &lambda) in self.eigenvalues.iter().enumerate() {
            let fj = f(lambda);
            for i in 0..scaled.nrows() {
                scaled[(i, j)] *= fj;
            }
        }
        scaled * v.adjoint()
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.apply(c)
    }

    /// max |V diag V^dagger - H| entry.
    pub fn reconstruction_residual(&self, h: &CMatrix) -> f64 {
        max_abs(&(self.reconstruct() - h))
    }

    /// max |V^dagger V - I| entry.
    pub fn orthonormality_residual(&self) -> f64 {
        let n = self.eigenvectors.ncols();
        max_abs(&(self.eigenvectors.adjoint() * &self.eigenvectors - identity(n)))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

pub fn hermitian_eig(h: &CMatrix) -> Result<HermitianSpectrum> {
    validate_hermitian(h)?;
    let n = h.nrows();
    if n == 0 {
        return Ok(HermitianSpectrum {
            eigenvalues: vec![],
            eigenvectors: CMatrix::zeros(0, 0),
        });
    }
    // the solver only reads the lower triangle; feed it the exact Hermitian part
    let eig = hermitize(h).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(HermitianSpectrum {
        eigenvalues,
        eigenvectors,
    })
}

pub fn hermitian_exp(h: &CMatrix) -> Result<CMatrix> {
    hermitian_exp_bounded(h, EXP_BOUND)
}

pub fn hermitian_exp_bounded(h: &CMatrix, bound: f64) -> Result<CMatrix> {
    let spec = hermitian_eig(h)?;
    let top = spec.max_eigenvalue();
    if top > bound {
        return Err(KernelError::ExpOverflow { eigenvalue: top, bound });
    }
    Ok(spec.apply(|l| c(l.exp())))
}

/// exp(-i H t / hbar) for Hermitian H.
pub fn unitary_propagator(h: &CMatrix, t: f64, hbar: f64) -> Result<CMatrix> {
    let spec = hermitian_eig(h)?;
    Ok(spec.apply(|l| Complex64::from_polar(1.0, -l * t / hbar)))
}

/// Fractional powers R^u of one positive-definite matrix, sharing a single
/// eigendecomposition.
#[derive(Debug, Clone)]
pub struct PsdPowers {
    spectrum: HermitianSpectrum,
}

impl PsdPowers {
    pub fn new(r: &CMatrix) -> Result<Self> {
        Self::with_floor(r, SPECTRAL_FLOOR)
    }

    pub fn with_floor(r: &CMatrix, floor: f64) -> Result<Self> {
        let spectrum = hermitian_eig(r)?;
        let low = spectrum.min_eigenvalue();
        if spectrum.eigenvalues.is_empty() || low <= floor {
            return Err(KernelError::BelowSpectralFloor { eigenvalue: low, floor });
        }
        Ok(Self { spectrum })
    }

    pub fn spectrum(&self) -> &HermitianSpectrum {
        &self.spectrum
    }

    pub fn power(&self, u: f64) -> Result<CMatrix> {
        if !(u.abs() <= 0.5) {
            return Err(KernelError::PowerOutOfRange(u));
        }
        Ok(self.spectrum.apply(|l| c(l.powf(u))))
    }
}

/// R^u for positive-definite R and |u| <= 1/2.
pub fn psd_power(r: &CMatrix, u: f64) -> Result<CMatrix> {
    if !(u.abs() <= 0.5) {
        return Err(KernelError::PowerOutOfRange(u));
    }
    PsdPowers::new(r)?.power(u)
}
