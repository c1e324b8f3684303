//! The one-particle picture carried by the microsystem branch: effective
//! state, transferred observables, the sigma factor, dressed observables,
//! free evolution and Lindblad-type decoherence.

use crate::demix::{check_admissible, check_local_admissible, CorrelationTerm, DemixError};
use crate::fock::{annihilator, mode_annihilator, number_op, FockBasis, FockError, NumberScope, Region};
use crate::kernel::{
    c, frobenius, hermitian_defect, hermitian_eig, hermitize, max_abs, trace, trace_product, unitary_propagator,
    CMatrix, CVector, KernelError,
};
use crate::modes::ModeSet;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::cell::OnceCell;
use thiserror::Error;

pub const STATE_TOL: f64 = 1e-12;
pub const DEFAULT_DEPLETION_THRESHOLD: f64 = 0.05;
/// Bound on `dt * (2 |H|/hbar + 2 sum gamma |L|^2)` for the RK4 stepper.
pub const RK4_STABILITY_LIMIT: f64 = 2.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicroError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Demix(#[from] DemixError),
    #[error("no emission channel is populated")]
    NoEmission,
    #[error("not a one-particle state: {0}")]
    InvalidState(String),
    #[error("step too large: dt-scaled generator norm {value:.3e} exceeds {limit}")]
    StepTooLarge { value: f64, limit: f64 },
    #[error("invalid Lindblad model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, MicroError>;

/// Density matrix `w` on the region-1 mode space.
#[derive(Debug, Clone, PartialEq)]
pub struct OneParticleState {
    pub w: CMatrix,
}

impl OneParticleState {
    pub fn new(w: CMatrix) -> Result<Self> {
        let defect = hermitian_defect(&w);
        if defect > STATE_TOL {
            return Err(MicroError::InvalidState(format!("hermiticity defect {defect:.3e}")));
        }
        let w = hermitize(&w);
        let tr = trace(&w).re;
        if (tr - 1.0).abs() > STATE_TOL {
            return Err(MicroError::InvalidState(format!("trace {tr}")));
        }
        let lo = hermitian_eig(&w)?.min_eigenvalue();
        if lo < -STATE_TOL {
            return Err(MicroError::InvalidState(format!("eigenvalue {lo:.3e}")));
        }
        Ok(Self { w })
    }

    pub fn pure(psi: &CVector) -> Result<Self> {
        Self::new(psi * psi.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn purity(&self) -> f64 {
        trace(&(&self.w * &self.w)).re
    }

    /// Sum of absolute off-diagonal entries.
    pub fn coherence(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| self.w[(i, j)].norm())
            .sum()
    }
}

/// Region-local lowering operators `D_h` on the region-2 basis.
#[derive(Debug, Clone)]
pub struct LocalTransfer {
    /// One entry per region-1 mode; `None` for modes with no channel.
    pub lowering: Vec<Option<CMatrix>>,
}

impl LocalTransfer {
    /// `D_h = sum_n d[h, n] a_n` on the region-2 basis `b2`.
    pub fn from_amplitudes(b2: &FockBasis, d: &CMatrix) -> Result<Self> {
        let m2 = b2.mode_count(Region::One);
        if d.ncols() != m2 {
            return Err(MicroError::DimensionMismatch(format!(
                "amplitudes have {} columns, region 2 has {m2} modes",
                d.ncols()
            )));
        }
        let ops: Vec<CMatrix> = (0..m2)
            .map(|n| annihilator(b2, Region::One, n))
            .collect::<std::result::Result<_, _>>()?;
        let lowering = (0..d.nrows())
            .map(|h| {
                if d.row(h).iter().all(|z| z.norm() == 0.0) {
                    return None;
                }
                let mut dh = CMatrix::zeros(b2.dim(), b2.dim());
                for (n, a) in ops.iter().enumerate() {
                    dh += a * d[(h, n)];
                }
                Some(dh)
            })
            .collect();
        Ok(Self { lowering })
    }

    pub fn mode_count(&self) -> usize {
        self.lowering.len()
    }

    /// `Tr[D_h rho2 D_k^dagger]`.
    pub fn emission_matrix(&self, rho2: &CMatrix) -> CMatrix {
        let m = self.lowering.len();
        let mut out = CMatrix::zeros(m, m);
        for h in 0..m {
            let Some(dh) = &self.lowering[h] else { continue };
            let left = dh * rho2;
            for k in 0..m {
                if let Some(dk) = &self.lowering[k] {
                    out[(h, k)] = trace(&(&left * dk.adjoint()));
                }
            }
        }
        out
    }
}

/// `w_hk = Tr[D_h rho2 D_k^dagger] / sum_h Tr[D_h^dagger D_h rho2]`.
pub fn effective_w(transfer: &LocalTransfer, rho2: &CMatrix) -> Result<OneParticleState> {
    let e = transfer.emission_matrix(rho2);
    let norm: f64 = transfer
        .lowering
        .iter()
        .flatten()
        .map(|d| trace(&(d.adjoint() * d * rho2)).re)
        .sum();
    if !(norm > 0.0) {
        return Err(MicroError::NoEmission);
    }
    OneParticleState::new(e / c(norm))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferredObservable {
    /// Indexed `[k, h]`.
    pub matrix: CMatrix,
    pub time: f64,
}

/// `A_kh(t) = Tr[A U a_h^dagger U^dagger rho1_t U a_k U^dagger]` with
/// `rho1_t = U rho1 U^dagger`.
pub fn transferred_observable(
    b1: &FockBasis,
    a1: &CMatrix,
    rho1: &CMatrix,
    h1: &CMatrix,
    t: f64,
    hbar: f64,
) -> Result<TransferredObservable> {
    check_local_admissible(b1, "A1", a1, Region::One)?;
    let m = b1.mode_count(Region::One);
    let u = unitary_propagator(h1, t, hbar)?;
    let a_heis = u.adjoint() * a1 * &u;
    let lowering: Vec<CMatrix> = (0..m)
        .map(|k| annihilator(b1, Region::One, k))
        .collect::<std::result::Result<_, _>>()?;
    let mut out = CMatrix::zeros(m, m);
    for h in 0..m {
        let right = &a_heis * lowering[h].adjoint() * rho1;
        for k in 0..m {
            out[(k, h)] = trace(&(&lowering[k] * &right));
        }
    }
    Ok(TransferredObservable { matrix: out, time: t })
}

/// `sum_h Tr[D_h^dagger D_h rho2] / sum_hk Tr[a_h^dagger rho1 a_k] Tr[D_h rho2 D_k^dagger]`.
pub fn sigma(b1: &FockBasis, transfer: &LocalTransfer, rho1: &CMatrix, rho2: &CMatrix) -> Result<f64> {
    let e = transfer.emission_matrix(rho2);
    let num: f64 = (0..e.nrows()).map(|h| e[(h, h)].re).sum();
    if !(num > 0.0) {
        return Err(MicroError::NoEmission);
    }
    Ok(num / detection_weight(b1, &e, rho1)?)
}

/// `sum_hk Tr[a_h^dagger rho1 a_k] e_hk`.
fn detection_weight(b1: &FockBasis, e: &CMatrix, rho1: &CMatrix) -> Result<f64> {
    let m = b1.mode_count(Region::One);
    if e.nrows() != m {
        return Err(MicroError::DimensionMismatch(format!(
            "{} channels, region 1 has {m} modes",
            e.nrows()
        )));
    }
    let lowering: Vec<CMatrix> = (0..m)
        .map(|k| annihilator(b1, Region::One, k))
        .collect::<std::result::Result<_, _>>()?;
    let mut s = Complex64::new(0.0, 0.0);
    for h in 0..m {
        let left = lowering[h].adjoint() * rho1;
        for k in 0..m {
            if e[(h, k)].norm() != 0.0 {
                s += trace(&(&left * &lowering[k])) * e[(h, k)];
            }
        }
    }
    Ok(s.re)
}

/// `1 +/- sum_alpha lambda_alpha Tr[a_psi^dagger a_psi rho1]` from the
/// spectral decomposition of `w`.
pub fn sigma_spectral(b1: &FockBasis, w: &OneParticleState, rho1: &CMatrix) -> Result<f64> {
    let spec = diagonalize_w(w)?;
    let sign = b1.statistics().sign();
    let mut s = 0.0;
    for (lambda, psi) in spec.weights.iter().zip(&spec.vectors) {
        if *lambda > 0.0 {
            s += lambda * depletion(b1, rho1, psi)?;
        }
    }
    Ok(1.0 / (1.0 + sign * s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedExpectation {
    pub value: f64,
    pub sigma: f64,
    pub oracle: Option<f64>,
}

/// `sigma sum_hk A_kh(t) w_hk`.
#[allow(clippy::too_many_arguments)]
pub fn reduced_expectation(
    b1: &FockBasis,
    a1: &CMatrix,
    rho1: &CMatrix,
    rho2: &CMatrix,
    transfer: &LocalTransfer,
    h1: &CMatrix,
    t: f64,
    hbar: f64,
) -> Result<ReducedExpectation> {
    let w = effective_w(transfer, rho2)?;
    let s = sigma(b1, transfer, rho1, rho2)?;
    let a = transferred_observable(b1, a1, rho1, h1, t, hbar)?;
    let m = w.dim();
    let mut v = Complex64::new(0.0, 0.0);
    for h in 0..m {
        for k in 0..m {
            v += a.matrix[(k, h)] * w.w[(h, k)];
        }
    }
    Ok(ReducedExpectation {
        value: s * v.re,
        sigma: s,
        oracle: None,
    })
}

/// The normalised microsystem branch `C R C^dagger / Tr` held in the
/// eigenbasis of a number-conserving joint Hamiltonian, so it can be
/// evolved to many times at the cost of two products each.
#[derive(Debug, Clone)]
pub struct BranchEvolution<'a> {
    basis: &'a FockBasis,
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
    rotated: CMatrix,
    hbar: f64,
    /// Rows of the N1 = 1 sector and `a_k^dagger a_h` restricted to it.
    one_particle_blocks: OnceCell<(Vec<usize>, Vec<Vec<CMatrix>>)>,
}

impl<'a> BranchEvolution<'a> {
    pub fn new(
        basis: &'a FockBasis,
        term: &CorrelationTerm,
        rho1: &CMatrix,
        rho2: &CMatrix,
        h: &CMatrix,
        hbar: f64,
    ) -> Result<Self> {
        let n = number_op(basis, NumberScope::Total);
        let defect = max_abs(&(h * &n - &n * h));
        if defect > 1e-10 {
            return Err(MicroError::InvalidModel(format!(
                "Hamiltonian does not conserve N (defect {defect:.3e})"
            )));
        }
        let r = basis.embed_product(rho1, rho2)?;
        let branch = &term.operator * r * term.operator.adjoint();
        let tr = trace(&branch).re;
        if !(tr > 0.0) {
            return Err(MicroError::NoEmission);
        }
        let spec = hermitian_eig(h)?;
        let rotated = spec.eigenvectors.adjoint() * branch * &spec.eigenvectors / c(tr);
        Ok(Self {
            basis,
            eigenvalues: spec.eigenvalues,
            eigenvectors: spec.eigenvectors,
            rotated,
            hbar,
            one_particle_blocks: OnceCell::new(),
        })
    }

    /// Product dynamics `H1 + H2`; the two must commute.
    #[allow(clippy::too_many_arguments)]
    pub fn product(
        basis: &'a FockBasis,
        term: &CorrelationTerm,
        rho1: &CMatrix,
        rho2: &CMatrix,
        h1: &CMatrix,
        h2: &CMatrix,
        hbar: f64,
    ) -> Result<Self> {
        let defect = max_abs(&(h1 * h2 - h2 * h1));
        if defect > crate::demix::ADMISSIBILITY_TOL {
            return Err(DemixError::NonCommutingHamiltonians(defect).into());
        }
        Self::new(basis, term, rho1, rho2, &(h1 + h2), hbar)
    }

    fn phased(&self, t: f64) -> CMatrix {
        let l = &self.eigenvalues;
        CMatrix::from_fn(l.len(), l.len(), |m, n| {
            self.rotated[(m, n)] * Complex64::from_polar(1.0, -(l[m] - l[n]) * t / self.hbar)
        })
    }

    pub fn state(&self, t: f64) -> CMatrix {
        &self.eigenvectors * self.phased(t) * self.eigenvectors.adjoint()
    }

    /// `Tr[A rho_t]` for joint-basis observables.
    pub fn expectations(&self, ops: &[&CMatrix], t: f64) -> Vec<f64> {
        let s = self.state(t);
        ops.iter().map(|a| trace_product(a, &s).re).collect()
    }

    /// Same as [`single_particle_state`] of [`Self::state`], evaluated on
    /// the one-particle block only.
    pub fn one_particle(&self, t: f64) -> Result<OneParticleState> {
        let (rows, hops) = match self.one_particle_blocks.get() {
            Some(b) => b,
            None => {
                let b = self.blocks()?;
                self.one_particle_blocks.get_or_init(|| b)
            }
        };
        let v = CMatrix::from_fn(rows.len(), self.eigenvectors.ncols(), |r, k| {
            self.eigenvectors[(rows[r], k)]
        });
        let block = &v * self.phased(t) * v.adjoint();
        let tr = trace(&block).re;
        if !(tr > 0.0) {
            return Err(MicroError::InvalidState("no weight in the one-particle sector".into()));
        }
        let m = hops.len();
        let w = CMatrix::from_fn(m, m, |h, k| trace_product(&hops[k][h], &block) / tr);
        OneParticleState::new(hermitize(&w))
    }

    fn blocks(&self) -> Result<(Vec<usize>, Vec<Vec<CMatrix>>)> {
        let basis = self.basis;
        let rows: Vec<usize> = (0..basis.dim()).filter(|&i| basis.sector(i).0 == 1).collect();
        let m = basis.mode_count(Region::One);
        let lowering: Vec<CMatrix> = (0..m)
            .map(|k| annihilator(basis, Region::One, k))
            .collect::<std::result::Result<_, _>>()?;
        let hops = (0..m)
            .map(|k| {
                (0..m)
                    .map(|h| {
                        let full = lowering[k].adjoint() * &lowering[h];
                        CMatrix::from_fn(rows.len(), rows.len(), |i, j| full[(rows[i], rows[j])])
                    })
                    .collect()
            })
            .collect();
        Ok((rows, hops))
    }
}

/// `Tr[(A1 (x) 1) U C R C^dagger U^dagger] / Tr[C R C^dagger]` on the joint basis.
#[allow(clippy::too_many_arguments)]
pub fn full_space_expectation(
    basis: &FockBasis,
    a1: &CMatrix,
    rho1: &CMatrix,
    rho2: &CMatrix,
    term: &CorrelationTerm,
    h1: &CMatrix,
    h2: &CMatrix,
    t: f64,
    hbar: f64,
) -> Result<f64> {
    let obs = basis.embed_local(a1, Region::One)?;
    let branch = BranchEvolution::product(basis, term, rho1, rho2, h1, h2, hbar)?;
    Ok(branch.expectations(&[&obs], t)[0])
}

#[derive(Debug, Clone)]
pub struct WSpectrum {
    /// Descending, clipped at zero.
    pub weights: Vec<f64>,
    pub vectors: Vec<CVector>,
}

impl WSpectrum {
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.vectors.first().map(|v| v.len()).unwrap_or(0);
        let mut w = CMatrix::zeros(n, n);
        for (l, v) in self.weights.iter().zip(&self.vectors) {
            w += v * v.adjoint() * c(*l);
        }
        w
    }
}

pub fn diagonalize_w(w: &OneParticleState) -> Result<WSpectrum> {
    let spec = hermitian_eig(&w.w)?;
    let n = spec.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| spec.eigenvalues[b].total_cmp(&spec.eigenvalues[a]));
    Ok(WSpectrum {
        weights: order.iter().map(|&i| spec.eigenvalues[i].max(0.0)).collect(),
        vectors: order
            .iter()
            .map(|&i| spec.eigenvectors.column(i).into_owned())
            .collect(),
    })
}

/// `Tr[a_psi^dagger a_psi rho1]` on a region-1 basis.
pub fn depletion(b1: &FockBasis, rho1: &CMatrix, psi: &CVector) -> Result<f64> {
    let a = mode_annihilator(b1, Region::One, psi)?;
    Ok(trace(&(a.adjoint() * a * rho1)).re)
}

/// Mode coefficients after free evolution: `psi_h e^{-i W_h t / hbar}`.
pub fn free_evolve_energies(psi0: &CVector, energies: &[f64], hbar: f64, t: f64) -> Result<CVector> {
    if psi0.len() != energies.len() {
        return Err(MicroError::DimensionMismatch(format!(
            "{} coefficients for {} modes",
            psi0.len(),
            energies.len()
        )));
    }
    let norm = psi0.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(MicroError::InvalidState(format!("coefficient norm {norm}")));
    }
    Ok(CVector::from_fn(psi0.len(), |h, _| {
        psi0[h] * Complex64::from_polar(1.0, -energies[h] * t / hbar)
    }))
}

pub fn free_evolve(psi0: &CVector, modes: &ModeSet, t: f64) -> Result<CVector> {
    free_evolve_energies(psi0, &modes.energies, modes.hbar, t)
}

/// `|U a_psi0^dagger U^dagger - a_psit^dagger|_F` with `U = exp(-i H t/hbar)`
/// and `psi_t` the free evolution under `energies`.
pub fn heisenberg_equivalence(
    basis: &FockBasis,
    psi0: &CVector,
    energies: &[f64],
    h: &CMatrix,
    t: f64,
    hbar: f64,
) -> Result<f64> {
    let a0 = mode_annihilator(basis, Region::One, psi0)?;
    let psit = free_evolve_energies(psi0, energies, hbar, t)?;
    let at = mode_annihilator(basis, Region::One, &psit)?;
    let u = unitary_propagator(h, t, hbar)?;
    Ok(frobenius(&(&u * a0.adjoint() * u.adjoint() - at.adjoint())))
}

#[derive(Debug, Clone)]
pub struct DressedObservable {
    /// `a_psi A a_psi^dagger`.
    pub direct: CMatrix,
    /// `A + [a_psi, A] a_psi^dagger +/- A a_psi^dagger a_psi`.
    pub decomposed: CMatrix,
    /// Projector onto the states where the two forms must agree.
    pub safe: CMatrix,
}

impl DressedObservable {
    pub fn decomposition_defect(&self) -> f64 {
        max_abs(&((&self.direct - &self.decomposed) * &self.safe))
    }

    pub fn expectation(&self, rho: &CMatrix) -> f64 {
        trace(&(&self.direct * rho)).re
    }
}

/// Dressed version of an admissible region-1 observable on `basis`.
pub fn dressed_observable(basis: &FockBasis, a: &CMatrix, psi: &CVector) -> Result<DressedObservable> {
    check_admissible(basis, "A", a)?;
    let b = mode_annihilator(basis, Region::One, psi)?;
    let bd = b.adjoint();
    let direct = &b * a * &bd;
    let sign = basis.statistics().sign();
    let decomposed = a + (&b * a - a * &b) * &bd + a * &bd * &b * c(sign);
    Ok(DressedObservable {
        direct,
        decomposed,
        safe: basis.cutoff_safe_projector(Region::One),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Rk4,
    Exact,
}

#[derive(Debug, Clone)]
pub struct JumpOperator {
    pub rate: f64,
    pub operator: CMatrix,
}

#[derive(Debug, Clone)]
pub struct LindbladModel {
    pub h_eff: CMatrix,
    pub jumps: Vec<JumpOperator>,
    pub hbar: f64,
}

impl LindbladModel {
    pub fn new(h_eff: CMatrix, jumps: Vec<JumpOperator>, hbar: f64) -> Result<Self> {
        let model = Self { h_eff, jumps, hbar };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.h_eff.nrows();
        if self.h_eff.ncols() != n {
            return Err(MicroError::InvalidModel("H_eff not square".into()));
        }
        if hermitian_defect(&self.h_eff) > 1e-10 {
            return Err(MicroError::InvalidModel("H_eff not Hermitian".into()));
        }
        if !(self.hbar > 0.0) {
            return Err(MicroError::InvalidModel("hbar must be positive".into()));
        }
        for (i, j) in self.jumps.iter().enumerate() {
            if !(j.rate >= 0.0) || !j.rate.is_finite() {
                return Err(MicroError::InvalidModel(format!("jump {i} has rate {}", j.rate)));
            }
            if j.operator.nrows() != n || j.operator.ncols() != n {
                return Err(MicroError::InvalidModel(format!("jump {i} has wrong shape")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.h_eff.nrows()
    }

    /// Mode-basis dephasing with `L_i = e_i e_i^dagger`, all at rate `gamma`.
    pub fn dephasing(h_eff: CMatrix, gamma: f64, hbar: f64) -> Result<Self> {
        let n = h_eff.nrows();
        let jumps = (0..n)
            .map(|i| {
                let mut l = CMatrix::zeros(n, n);
                l[(i, i)] = c(1.0);
                JumpOperator {
                    rate: gamma,
                    operator: l,
                }
            })
            .collect();
        Self::new(h_eff, jumps, hbar)
    }

    /// Relaxation between mode pairs obeying detailed balance at inverse
    /// temperature `beta`, on top of `H_eff = diag(energies)`.
    pub fn thermal_damping(energies: &[f64], gamma: f64, beta: f64, hbar: f64) -> Result<Self> {
        let n = energies.len();
        let mut jumps = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let gap = energies[j] - energies[i];
                // j -> i; upward moves are Boltzmann suppressed
                let rate = if gap >= 0.0 { gamma } else { gamma * (beta * gap).exp() };
                let mut l = CMatrix::zeros(n, n);
                l[(i, j)] = c(1.0);
                jumps.push(JumpOperator { rate, operator: l });
            }
        }
        Self::new(crate::kernel::diag_real(energies), jumps, hbar)
    }

    pub fn generator(&self, w: &CMatrix) -> CMatrix {
        let i_over_hbar = Complex64::new(0.0, 1.0 / self.hbar);
        let mut out = (&self.h_eff * w - w * &self.h_eff) * -i_over_hbar;
        for j in &self.jumps {
            if j.rate == 0.0 {
                continue;
            }
            let l = &j.operator;
            let ldl = l.adjoint() * l;
            out += (l * w * l.adjoint() - (&ldl * w + w * &ldl) * c(0.5)) * c(j.rate);
        }
        out
    }

    /// Matrix of the generator acting on column-stacked `vec(w)`.
    pub fn superoperator(&self) -> CMatrix {
        let n = self.dim();
        let mut out = CMatrix::zeros(n * n, n * n);
        for col in 0..n * n {
            let mut e = CMatrix::zeros(n, n);
            e[(col % n, col / n)] = c(1.0);
            let image = self.generator(&e);
            for row in 0..n * n {
                out[(row, col)] = image[(row % n, row / n)];
            }
        }
        out
    }

    /// `dt (2 |H|_F / hbar + 2 sum gamma |L|_F^2)`.
    pub fn step_norm(&self, dt: f64) -> f64 {
        let jumps: f64 = self.jumps.iter().map(|j| j.rate * frobenius(&j.operator).powi(2)).sum();
        dt * (2.0 * frobenius(&self.h_eff) / self.hbar + 2.0 * jumps)
    }

    /// Exact map `exp(L dt)` as a superoperator.
    pub fn exact_step(&self, dt: f64) -> CMatrix {
        (self.superoperator() * c(dt)).exp()
    }
}

fn apply_super(s: &CMatrix, w: &CMatrix) -> CMatrix {
    let n = w.nrows();
    let v = CVector::from_fn(n * n, |k, _| w[(k % n, k / n)]);
    let out = s * v;
    CMatrix::from_fn(n, n, |i, j| out[i + j * n])
}

/// Choi matrix `sum_ij |i><j| (x) Phi(|i><j|)` of a superoperator.
pub fn choi_matrix(s: &CMatrix) -> CMatrix {
    let n = (s.nrows() as f64).sqrt().round() as usize;
    let mut choi = CMatrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let mut e = CMatrix::zeros(n, n);
            e[(i, j)] = c(1.0);
            let image = apply_super(s, &e);
            for a in 0..n {
                for b in 0..n {
                    choi[(i * n + a, j * n + b)] = image[(a, b)];
                }
            }
        }
    }
    choi
}

/// Minimum eigenvalue of the Choi matrix of the exact one-step map.
pub fn choi_min_eigenvalue(model: &LindbladModel, dt: f64) -> Result<f64> {
    let choi = hermitize(&choi_matrix(&model.exact_step(dt)));
    Ok(hermitian_eig(&choi)?.min_eigenvalue())
}

pub fn lindblad_evolve(
    w0: &OneParticleState,
    model: &LindbladModel,
    dt: f64,
    steps: usize,
    integrator: Integrator,
) -> Result<Vec<CMatrix>> {
    model.validate()?;
    if w0.dim() != model.dim() {
        return Err(MicroError::DimensionMismatch(format!(
            "state has dim {}, model has dim {}",
            w0.dim(),
            model.dim()
        )));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(w0.w.clone());
    match integrator {
        Integrator::Rk4 => {
            let value = model.step_norm(dt);
            if value > RK4_STABILITY_LIMIT {
                return Err(MicroError::StepTooLarge {
                    value,
                    limit: RK4_STABILITY_LIMIT,
                });
            }
            let mut w = w0.w.clone();
            for _ in 0..steps {
                let k1 = model.generator(&w);
                let k2 = model.generator(&(&w + &k1 * c(dt / 2.0)));
                let k3 = model.generator(&(&w + &k2 * c(dt / 2.0)));
                let k4 = model.generator(&(&w + &k3 * c(dt)));
                w += (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(dt / 6.0);
                w = hermitize(&w);
                out.push(w.clone());
            }
        }
        Integrator::Exact => {
            let step = model.exact_step(dt);
            let mut w = w0.w.clone();
            for _ in 0..steps {
                w = hermitize(&apply_super(&step, &w));
                out.push(w.clone());
            }
        }
    }
    Ok(out)
}

/// One-particle density matrix `<a_k^dagger a_h>` of the N1 = 1 part of a
/// joint state.
pub fn single_particle_state(basis: &FockBasis, rho: &CMatrix) -> Result<OneParticleState> {
    if rho.nrows() != basis.dim() || rho.ncols() != basis.dim() {
        return Err(MicroError::DimensionMismatch(format!(
            "state is {}x{}, basis has dim {}",
            rho.nrows(),
            rho.ncols(),
            basis.dim()
        )));
    }
    let inside = |i: usize| basis.sector(i).0 == 1;
    let proj = CMatrix::from_fn(rho.nrows(), rho.ncols(), |i, j| {
        if inside(i) && inside(j) {
            rho[(i, j)]
        } else {
            c(0.0)
        }
    });
    let tr = trace(&proj).re;
    if !(tr > 0.0) {
        return Err(MicroError::InvalidState("no weight in the one-particle sector".into()));
    }
    let m = basis.mode_count(Region::One);
    let lowering: Vec<CMatrix> = (0..m)
        .map(|k| annihilator(basis, Region::One, k))
        .collect::<std::result::Result<_, _>>()?;
    // Tr[a_k^dagger a_h P rho P] = sum_ij (a_h P rho P)_ij conj((a_k)_ij)
    let moved: Vec<CMatrix> = lowering.iter().map(|a| a * &proj).collect();
    let w = CMatrix::from_fn(m, m, |h, k| {
        moved[h].zip_fold(&lowering[k], c(0.0), |acc, x, y| acc + x * y.conj()) / tr
    });
    OneParticleState::new(hermitize(&w))
}

/// Evolves the microsystem branch under a full (possibly coupled)
/// Hamiltonian and re-extracts the one-particle state.
#[allow(clippy::too_many_arguments)]
pub fn reduced_dynamics_oracle(
    basis: &FockBasis,
    term: &CorrelationTerm,
    rho1: &CMatrix,
    rho2: &CMatrix,
    h_full: &CMatrix,
    t: f64,
    hbar: f64,
) -> Result<OneParticleState> {
    BranchEvolution::new(basis, term, rho1, rho2, h_full, hbar)?.one_particle(t)
}

/// `V w V^dagger` with `V = diag(e^{-i W t / hbar})`.
pub fn free_evolve_state(w: &OneParticleState, energies: &[f64], hbar: f64, t: f64) -> Result<OneParticleState> {
    let n = w.dim();
    if energies.len() != n {
        return Err(MicroError::DimensionMismatch(format!(
            "{} energies for dim {n}",
            energies.len()
        )));
    }
    let phase = |h: usize| Complex64::from_polar(1.0, -energies[h] * t / hbar);
    OneParticleState::new(CMatrix::from_fn(n, n, |h, k| w.w[(h, k)] * phase(h) * phase(k).conj()))
}
