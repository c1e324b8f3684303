//! Generalized Gibbs states, parameter fitting, and the prepared statistical
//! operator with its first-order cross-region expansion.

use crate::fock::{FockBasis, FockError, Region, Statistics};
use crate::kernel::{
    c, hermitian_defect, hermitian_eig, identity, max_abs, trace, validate_hermitian, CMatrix, HermitianSpectrum,
    KernelError, QuadratureRule, EXP_BOUND, HERMITIAN_TOL,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrepError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error("variable `{label}` does not commute with the total number operator (defect {defect:.3e})")]
    NotNumberConserving { label: String, defect: f64 },
    #[error("variable `{label}` is not Hermitian (defect {defect:.3e})")]
    NotHermitian { label: String, defect: f64 },
    #[error("covariance matrix is singular (eigenvalues {min:.3e} .. {max:.3e})")]
    SingularCovariance { min: f64, max: f64 },
    #[error("fit did not converge after {iterations} iterations, residual {residual:.3e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("variable `{0}` has no current operator")]
    MissingCurrent(String),
    #[error("invalid preparation: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("normalization trace {0} is not positive")]
    ZeroTrace(f64),
}

pub type Result<T> = std::result::Result<T, PrepError>;

#[derive(Debug, Clone)]
pub struct RelevantVariable {
    pub label: String,
    pub operator: CMatrix,
    /// Associated current density, used by current preparation channels.
    pub current: Option<CMatrix>,
}

impl RelevantVariable {
    pub fn new(label: impl Into<String>, operator: CMatrix) -> Self {
        Self {
            label: label.into(),
            operator,
            current: None,
        }
    }

    pub fn with_current(mut self, current: CMatrix) -> Self {
        self.current = Some(current);
        self
    }
}

/// Hermitian, number-conserving relevant variables on a common space.
#[derive(Debug, Clone)]
pub struct RelevantVariableSet {
    vars: Vec<RelevantVariable>,
    dim: usize,
}

impl RelevantVariableSet {
    /// Checks hermiticity and `[A_j, N] = 0` against the given number operator.
    pub fn new(vars: Vec<RelevantVariable>, number: &CMatrix) -> Result<Self> {
        let set = Self::unchecked(vars)?;
        if number.nrows() != set.dim {
            return Err(PrepError::DimensionMismatch(format!(
                "number operator has dim {}, variables have dim {}",
                number.nrows(),
                set.dim
            )));
        }
        for v in &set.vars {
            for op in std::iter::once(&v.operator).chain(v.current.as_ref()) {
                let defect = max_abs(&(op * number - number * op));
                if defect > HERMITIAN_TOL {
                    return Err(PrepError::NotNumberConserving {
                        label: v.label.clone(),
                        defect,
                    });
                }
            }
        }
        Ok(set)
    }

    /// Only checks shapes and hermiticity.
    pub fn unchecked(vars: Vec<RelevantVariable>) -> Result<Self> {
        let dim = vars.first().map(|v| v.operator.nrows()).unwrap_or(0);
        for v in &vars {
            for op in std::iter::once(&v.operator).chain(v.current.as_ref()) {
                if op.nrows() != dim || op.ncols() != dim {
                    return Err(PrepError::DimensionMismatch(format!(
                        "variable `{}` is {}x{}, expected {dim}x{dim}",
                        v.label,
                        op.nrows(),
                        op.ncols()
                    )));
                }
                crate::kernel::validate(op)?;
                let defect = hermitian_defect(op);
                if defect > HERMITIAN_TOL {
                    return Err(PrepError::NotHermitian {
                        label: v.label.clone(),
                        defect,
                    });
                }
            }
        }
        Ok(Self { vars, dim })
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize) -> &RelevantVariable {
        &self.vars[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelevantVariable> {
        self.vars.iter()
    }

    /// `sum_j zeta_j A_j`.
    pub fn combine(&self, zeta: &StateParams) -> Result<CMatrix> {
        if zeta.zeta.len() != self.vars.len() {
            return Err(PrepError::DimensionMismatch(format!(
                "{} parameters for {} variables",
                zeta.zeta.len(),
                self.vars.len()
            )));
        }
        let mut x = CMatrix::zeros(self.dim, self.dim);
        for (v, &z) in self.vars.iter().zip(&zeta.zeta) {
            if !z.is_finite() {
                return Err(PrepError::InvalidSpec(format!(
                    "non-finite parameter for `{}`",
                    v.label
                )));
            }
            x += &v.operator * c(z);
        }
        Ok(x)
    }

    pub fn expectations(&self, rho: &CMatrix) -> Vec<f64> {
        self.vars.iter().map(|v| trace(&(&v.operator * rho)).re).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    pub zeta: Vec<f64>,
}

impl StateParams {
    pub fn new(zeta: Vec<f64>) -> Self {
        Self { zeta }
    }

    pub fn zeros(n: usize) -> Self {
        Self { zeta: vec![0.0; n] }
    }
}

/// `exp(-S) / Tr exp(-S)` together with its spectral data.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub rho: CMatrix,
    pub log_partition: f64,
    /// Eigen-decomposition of the exponent `S`.
    pub exponent: HermitianSpectrum,
    /// Populations in the exponent eigenbasis.
    pub populations: Vec<f64>,
}

impl GibbsState {
    /// Builds the state from a Hermitian exponent with a shifted spectrum.
    pub fn from_exponent(s: &CMatrix) -> Result<Self> {
        validate_hermitian(s)?;
        let spec = hermitian_eig(s)?;
        let lo = spec.min_eigenvalue();
        let spread = spec.max_eigenvalue() - lo;
        if spread > EXP_BOUND {
            return Err(KernelError::ExpOverflow {
                eigenvalue: spread,
                bound: EXP_BOUND,
            }
            .into());
        }
        let weights: Vec<f64> = spec.eigenvalues.iter().map(|&x| (-(x - lo)).exp()).collect();
        let z: f64 = weights.iter().sum();
        let populations: Vec<f64> = weights.iter().map(|w| w / z).collect();
        let v = &spec.eigenvectors;
        let mut scaled = v.clone();
        for (j, &p) in populations.iter().enumerate() {
            scaled.column_mut(j).scale_mut(p);
        }
        let rho = crate::kernel::hermitize(&(scaled * v.adjoint()));
        Ok(Self {
            rho,
            log_partition: z.ln() - lo,
            exponent: spec,
            populations,
        })
    }

    /// Canonical (Kubo-Mori) covariance of the given operators, which is
    /// the exact derivative `-d<A_i>/d zeta_j` of a Gibbs family.
    pub fn canonical_covariance(&self, ops: &[&CMatrix]) -> DMatrix<f64> {
        let v = &self.exponent.eigenvectors;
        let x = &self.exponent.eigenvalues;
        let p = &self.populations;
        let n = x.len();
        let mut kernel = DMatrix::<f64>::zeros(n, n);
        for m in 0..n {
            for k in 0..n {
                let d = x[k] - x[m];
                kernel[(m, k)] = if d.abs() < 1e-12 {
                    0.5 * (p[m] + p[k])
                } else if d > 0.0 {
                    p[m] * -(-d).exp_m1() / d
                } else {
                    p[k] * -(d).exp_m1() / -d
                };
            }
        }
        let rotated: Vec<CMatrix> = ops.iter().map(|a| v.adjoint() * *a * v).collect();
        let means: Vec<f64> = rotated
            .iter()
            .map(|a| (0..n).map(|m| a[(m, m)].re * p[m]).sum())
            .collect();
        let q = ops.len();
        let mut cov = DMatrix::<f64>::zeros(q, q);
        for i in 0..q {
            for j in i..q {
                let mut s = 0.0;
                for m in 0..n {
                    for k in 0..n {
                        s += (rotated[i][(m, k)] * rotated[j][(k, m)]).re * kernel[(m, k)];
                    }
                }
                let value = s - means[i] * means[j];
                cov[(i, j)] = value;
                cov[(j, i)] = value;
            }
        }
        cov
    }
}

/// `exp(-sum zeta_j A_j) / Tr`.
pub fn gibbs_state(vars: &RelevantVariableSet, zeta: &StateParams) -> Result<CMatrix> {
    Ok(GibbsState::from_exponent(&vars.combine(zeta)?)?.rho)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: StateParams,
    pub iterations: usize,
    /// Max-norm of `<A_j> - target_j` at the returned parameters.
    pub residual: f64,
    /// Smallest covariance eigenvalue seen over the iterates.
    pub min_covariance_eigenvalue: f64,
}

/// Damped Newton on the convex dual `log Z(zeta) + zeta . target`.
pub fn fit_state_parameters(
    vars: &RelevantVariableSet,
    targets: &[f64],
    zeta0: &StateParams,
    options: FitOptions,
) -> Result<FitReport> {
    if targets.len() != vars.len() || zeta0.zeta.len() != vars.len() {
        return Err(PrepError::DimensionMismatch(format!(
            "{} variables, {} targets, {} initial parameters",
            vars.len(),
            targets.len(),
            zeta0.zeta.len()
        )));
    }
    let ops: Vec<&CMatrix> = vars.iter().map(|v| &v.operator).collect();
    let t = DVector::from_column_slice(targets);
    let dual = |z: &DVector<f64>| -> Result<(GibbsState, f64)> {
        let g = GibbsState::from_exponent(&vars.combine(&StateParams::new(z.as_slice().to_vec()))?)?;
        let phi = g.log_partition + z.dot(&t);
        Ok((g, phi))
    };
    let mut zeta = DVector::from_column_slice(&zeta0.zeta);
    let (mut state, mut phi) = dual(&zeta)?;
    let mut min_cov = f64::INFINITY;
    for iteration in 0..=options.max_iterations {
        let mean = DVector::from_vec(vars.expectations(&state.rho));
        let gap = &mean - &t;
        let residual = gap.amax();
        if residual < options.tolerance {
            return Ok(FitReport {
                params: StateParams::new(zeta.as_slice().to_vec()),
                iterations: iteration,
                residual,
                min_covariance_eigenvalue: min_cov,
            });
        }
        if iteration == options.max_iterations {
            return Err(PrepError::NotConverged {
                iterations: iteration,
                residual,
            });
        }
        let cov = state.canonical_covariance(&ops);
        let eig = cov.clone().symmetric_eigen();
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        min_cov = min_cov.min(lo);
        if !(hi > 0.0) || lo <= 1e-12 * hi {
            // dependent variables are singular everywhere; later on it means
            // the iterate ran off towards an unattainable boundary
            return Err(if iteration == 0 {
                PrepError::SingularCovariance { min: lo, max: hi }
            } else {
                PrepError::NotConverged {
                    iterations: iteration,
                    residual,
                }
            });
        }
        let step = cov
            .cholesky()
            .ok_or(PrepError::SingularCovariance { min: lo, max: hi })?
            .solve(&gap);
        // gradient of the dual is target - mean = -gap
        let slope = -gap.dot(&step);
        let mut alpha = 1.0;
        loop {
            let trial = &zeta + &step * alpha;
            match dual(&trial) {
                Ok((s, p)) if p <= phi + 1e-4 * alpha * slope => {
                    zeta = trial;
                    state = s;
                    phi = p;
                    break;
                }
                _ if alpha < 1e-10 => {
                    return Err(PrepError::NotConverged {
                        iterations: iteration,
                        residual,
                    });
                }
                _ => alpha *= 0.5,
            }
        }
    }
    unreachable!("loop returns on its last iteration")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Density,
    Current,
}

/// One preparation coupling: a variable (or its current) driven by `h(t')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepChannel {
    pub variable: usize,
    pub kind: ChannelKind,
    pub gamma: f64,
    /// Samples of `h` on the preparation grid (`steps + 1` values).
    pub amplitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparationSpec {
    pub t_start: f64,
    pub t0: f64,
    pub steps: usize,
    pub zeta_t0: Vec<f64>,
    pub zeta_start: Vec<f64>,
    pub channels: Vec<PrepChannel>,
    pub hbar: f64,
}

pub const DEFAULT_PREP_STEPS: usize = 16;

impl PreparationSpec {
    pub fn grid(&self) -> Vec<f64> {
        let dt = (self.t0 - self.t_start) / self.steps as f64;
        (0..=self.steps).map(|k| self.t_start + dt * k as f64).collect()
    }

    pub fn validate(&self, vars: &RelevantVariableSet) -> Result<()> {
        if self.steps < 1 {
            return Err(PrepError::InvalidSpec("at least one step is required".into()));
        }
        if !(self.t0 > self.t_start) || !self.t0.is_finite() || !self.t_start.is_finite() {
            return Err(PrepError::InvalidSpec("need T < t0, both finite".into()));
        }
        if !(self.hbar > 0.0) {
            return Err(PrepError::InvalidSpec("hbar must be positive".into()));
        }
        for (name, z) in [("zeta_t0", &self.zeta_t0), ("zeta_start", &self.zeta_start)] {
            if z.len() != vars.len() || z.iter().any(|x| !x.is_finite()) {
                return Err(PrepError::InvalidSpec(format!(
                    "{name} needs {} finite entries",
                    vars.len()
                )));
            }
        }
        for (i, ch) in self.channels.iter().enumerate() {
            if ch.variable >= vars.len() {
                return Err(PrepError::InvalidSpec(format!(
                    "channel {i} references variable {} of {}",
                    ch.variable,
                    vars.len()
                )));
            }
            if ch.amplitudes.len() != self.steps + 1 {
                return Err(PrepError::InvalidSpec(format!(
                    "channel {i} has {} amplitudes, expected {}",
                    ch.amplitudes.len(),
                    self.steps + 1
                )));
            }
            if !ch.gamma.is_finite() || ch.amplitudes.iter().any(|h| !h.is_finite()) {
                return Err(PrepError::InvalidSpec(format!("channel {i} is not finite")));
            }
            if ch.kind == ChannelKind::Current && vars.get(ch.variable).current.is_none() {
                return Err(PrepError::MissingCurrent(vars.get(ch.variable).label.clone()));
            }
        }
        Ok(())
    }
}

/// Exponent `S` of the prepared state `exp(-S)/Tr`, with the preparation
/// integrals done by the trapezoid rule and Heisenberg-evolved variables.
pub fn prepared_exponent(vars: &RelevantVariableSet, prep: &PreparationSpec, hamiltonian: &CMatrix) -> Result<CMatrix> {
    prep.validate(vars)?;
    validate_hermitian(hamiltonian)?;
    if hamiltonian.nrows() != vars.dim() {
        return Err(PrepError::DimensionMismatch(format!(
            "Hamiltonian has dim {}, variables have dim {}",
            hamiltonian.nrows(),
            vars.dim()
        )));
    }
    let spec = hermitian_eig(hamiltonian)?;
    let v = &spec.eigenvectors;
    // A(tau) = e^{iH tau/hbar} A e^{-iH tau/hbar}, in the eigenbasis of H
    let evolve = |op: &CMatrix, tau: f64| -> CMatrix {
        let rotated = v.adjoint() * op * v;
        let l = &spec.eigenvalues;
        let phased = CMatrix::from_fn(rotated.nrows(), rotated.ncols(), |m, n| {
            rotated[(m, n)] * Complex64::from_polar(1.0, (l[m] - l[n]) * tau / prep.hbar)
        });
        v * phased * v.adjoint()
    };

    let mut s = vars.combine(&StateParams::new(prep.zeta_t0.clone()))?;
    let grid = prep.grid();
    let dt = (prep.t0 - prep.t_start) / prep.steps as f64;
    for (k, &t) in grid.iter().enumerate() {
        let tau = -(prep.t0 - t);
        let w = if k == 0 || k == prep.steps { 0.5 * dt } else { dt };
        // group channels by operator so each is evolved once per node
        let mut weights: BTreeMap<(usize, bool), f64> = BTreeMap::new();
        for ch in &prep.channels {
            *weights
                .entry((ch.variable, ch.kind == ChannelKind::Current))
                .or_insert(0.0) += ch.gamma * ch.amplitudes[k] * w;
        }
        for ((j, current), weight) in weights {
            if weight == 0.0 {
                continue;
            }
            let var = vars.get(j);
            let op = if current {
                var.current.as_ref().expect("validated")
            } else {
                &var.operator
            };
            s -= evolve(op, tau) * c(weight);
        }
    }
    let boundary_tau = -(prep.t0 - prep.t_start);
    for (var, &z) in vars.iter().zip(&prep.zeta_start) {
        if z != 0.0 {
            s += evolve(&var.operator, boundary_tau) * c(z);
        }
    }
    Ok(crate::kernel::hermitize(&s))
}

/// `S = S1 + S2 + C12` with `S1`, `S2` region-local.
#[derive(Debug, Clone)]
pub struct ExponentSplit {
    /// Region-1 part on the region-1 basis.
    pub s1_local: CMatrix,
    /// Region-2 part on the region-2 basis, traceless.
    pub s2_local: CMatrix,
    pub s1: CMatrix,
    pub s2: CMatrix,
    pub c12: CMatrix,
}

impl ExponentSplit {
    pub fn reconstruction_residual(&self, s: &CMatrix) -> f64 {
        max_abs(&(&self.s1 + &self.s2 + &self.c12 - s))
    }

    /// Region Gibbs states `exp(-S_r)/Tr` on the region bases.
    pub fn region_states(&self) -> Result<(CMatrix, CMatrix)> {
        Ok((
            GibbsState::from_exponent(&self.s1_local)?.rho,
            GibbsState::from_exponent(&self.s2_local)?.rho,
        ))
    }
}

/// Splits `S` by orthogonal (Hilbert-Schmidt) projection onto the operators
/// acting on a single region; the remainder is the cross-region part.
pub fn split_exponent(s: &CMatrix, basis: &FockBasis) -> Result<ExponentSplit> {
    validate_hermitian(s)?;
    let n = basis.dim();
    if s.nrows() != n {
        return Err(PrepError::DimensionMismatch(format!(
            "exponent has dim {}, basis has dim {n}",
            s.nrows()
        )));
    }
    let d1 = basis.region_dim(Region::One);
    let d2 = basis.region_dim(Region::Two);
    let fermion = basis.statistics() == Statistics::Fermion;

    let mut sum1 = CMatrix::zeros(d1, d1);
    let mut cnt1 = DMatrix::<u32>::zeros(d1, d1);
    let mut sum2 = CMatrix::zeros(d2, d2);
    let mut cnt2 = DMatrix::<u32>::zeros(d2, d2);
    for j in 0..n {
        let (j1, j2) = basis.parts(j);
        for i in 0..n {
            if i == j {
                continue;
            }
            let (i1, i2) = basis.parts(i);
            if i2 == j2 {
                sum1[(i1, j1)] += s[(i, j)];
                cnt1[(i1, j1)] += 1;
            } else if i1 == j1 {
                let (si, sj) = (basis.sector(i), basis.sector(j));
                let odd = (si.1 + sj.1) % 2 == 1 && sj.0 % 2 == 1;
                let v = if fermion && odd { -s[(i, j)] } else { s[(i, j)] };
                sum2[(i2, j2)] += v;
                cnt2[(i2, j2)] += 1;
            }
        }
    }
    let mut x1 = CMatrix::from_fn(d1, d1, |i, j| match cnt1[(i, j)] {
        0 => Complex64::new(0.0, 0.0),
        k => sum1[(i, j)] / k as f64,
    });
    let mut x2 = CMatrix::from_fn(d2, d2, |i, j| match cnt2[(i, j)] {
        0 => Complex64::new(0.0, 0.0),
        k => sum2[(i, j)] / k as f64,
    });

    // diagonal: least-squares fit of S_ii by x1[i1] + x2[i2]
    let mut design = DMatrix::<f64>::zeros(n, d1 + d2);
    let mut rhs = DVector::<f64>::zeros(n);
    for i in 0..n {
        let (i1, i2) = basis.parts(i);
        design[(i, i1)] = 1.0;
        design[(i, d1 + i2)] = 1.0;
        rhs[i] = s[(i, i)].re;
    }
    let diag = design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| PrepError::InvalidSpec(format!("diagonal fit failed: {e}")))?;
    let shift = diag.rows(d1, d2).sum() / d2 as f64;
    for i in 0..d1 {
        x1[(i, i)] = c(diag[i] + shift);
    }
    for i in 0..d2 {
        x2[(i, i)] = c(diag[d1 + i] - shift);
    }
    let x1 = crate::kernel::hermitize(&x1);
    let x2 = crate::kernel::hermitize(&x2);
    let s1 = basis.embed_local(&x1, Region::One)?;
    let s2 = basis.embed_local(&x2, Region::Two)?;
    let c12 = s - &s1 - &s2;
    Ok(ExponentSplit {
        s1_local: x1,
        s2_local: x2,
        s1,
        s2,
        c12,
    })
}

fn product_state(basis: &FockBasis, rho1: &CMatrix, rho2: &CMatrix) -> Result<CMatrix> {
    Ok(basis.embed_product(rho1, rho2)?)
}

/// `int_0^{1/2} R^u C R^{-u} du` with `R = rho1 (x) rho2`.
pub fn curly_c(
    basis: &FockBasis,
    rho1: &CMatrix,
    rho2: &CMatrix,
    c12: &CMatrix,
    rule: &QuadratureRule,
) -> Result<CMatrix> {
    let r = product_state(basis, rho1, rho2)?;
    if c12.nrows() != r.nrows() || c12.ncols() != r.ncols() {
        return Err(PrepError::DimensionMismatch(format!(
            "C12 is {}x{}, basis has dim {}",
            c12.nrows(),
            c12.ncols(),
            r.nrows()
        )));
    }
    crate::kernel::validate(c12)?;
    let powers = crate::kernel::PsdPowers::new(&r)?;
    let spec = powers.spectrum();
    let logs: Vec<f64> = spec.eigenvalues.iter().map(|p| p.ln()).collect();
    Ok(conjugation_integral(&spec.eigenvectors, &logs, c12, rule))
}

/// Same integral with `R = exp(-s0)/Tr` given through its exponent, which
/// stays well defined when populations underflow.
pub fn curly_c_from_exponent(s0: &CMatrix, c12: &CMatrix, rule: &QuadratureRule) -> Result<CMatrix> {
    if c12.nrows() != s0.nrows() || c12.ncols() != s0.ncols() {
        return Err(PrepError::DimensionMismatch(format!(
            "C12 is {}x{}, exponent has dim {}",
            c12.nrows(),
            c12.ncols(),
            s0.nrows()
        )));
    }
    crate::kernel::validate(c12)?;
    let spec = hermitian_eig(s0)?;
    let logs: Vec<f64> = spec.eigenvalues.iter().map(|x| -x).collect();
    Ok(conjugation_integral(&spec.eigenvectors, &logs, c12, rule))
}

fn conjugation_integral(v: &CMatrix, logs: &[f64], c12: &CMatrix, rule: &QuadratureRule) -> CMatrix {
    let rotated = v.adjoint() * c12 * v;
    let n = logs.len();
    let mut out = CMatrix::zeros(n, n);
    for m in 0..n {
        for k in 0..n {
            let log_ratio = logs[m] - logs[k];
            let factor: f64 = rule.iter().map(|(u, w)| w * (u * log_ratio).exp()).sum();
            out[(m, k)] = rotated[(m, k)] * factor;
        }
    }
    v * out * v.adjoint()
}

/// First-order correlation operator for `exp{-(S1 + S2 + C12)}`: the
/// expansion of `exp(A + B)` around `exp(A)` has `B = -C12`.
pub fn correlation_operator(
    basis: &FockBasis,
    rho1: &CMatrix,
    rho2: &CMatrix,
    c12: &CMatrix,
    rule: &QuadratureRule,
) -> Result<CMatrix> {
    curly_c(basis, rho1, rho2, &(-c12), rule)
}

/// `(1 + C) rho1 (x) rho2 (1 + C^dagger) / Tr`.
pub fn expanded_state(basis: &FockBasis, rho1: &CMatrix, rho2: &CMatrix, curly: &CMatrix) -> Result<CMatrix> {
    let r = product_state(basis, rho1, rho2)?;
    if curly.nrows() != r.nrows() {
        return Err(PrepError::DimensionMismatch(format!(
            "correlation operator has dim {}, basis has dim {}",
            curly.nrows(),
            r.nrows()
        )));
    }
    let one_plus = identity(r.nrows()) + curly;
    let x = &one_plus * r * one_plus.adjoint();
    let tr = trace(&x).re;
    if !(tr > 0.0) {
        return Err(PrepError::ZeroTrace(tr));
    }
    Ok(crate::kernel::hermitize(&(x / c(tr))))
}

/// `d_{hn} = <1_h (region 1)| C |1_n (region 2)>`, the one-particle
/// transfer amplitudes contained in a correlation operator.
pub fn transfer_amplitudes(basis: &FockBasis, curly: &CMatrix) -> Result<CMatrix> {
    let m1 = basis.mode_count(Region::One);
    let m2 = basis.mode_count(Region::Two);
    let single = |region: Region, k: usize| -> Result<usize> {
        let mut s = vec![0u8; m1 + m2];
        s[if region == Region::One { k } else { m1 + k }] = 1;
        basis
            .index_of(&s)
            .ok_or_else(|| PrepError::InvalidSpec("basis holds no single-particle states".into()))
    };
    let mut d = CMatrix::zeros(m1, m2);
    for h in 0..m1 {
        let i = single(Region::One, h)?;
        for k in 0..m2 {
            d[(h, k)] = curly[(i, single(Region::Two, k)?)];
        }
    }
    Ok(d)
}
