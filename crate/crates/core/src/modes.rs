//! Normal modes of a one-dimensional box with Dirichlet walls, and the
//! one-body kernels (density, energy, current) of sub-cells of the box.

use crate::kernel::{c, hermitize, CMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const DEFAULT_GRID_POINTS: usize = 2048;
const MIN_GRID_POINTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("grid of {grid_points} points cannot resolve {modes} modes (need modes <= grid_points / 4)")]
    UnderResolved { modes: usize, grid_points: usize },
    #[error("grid mismatch: expected {expected} samples, got {got}")]
    GridMismatch { expected: usize, got: usize },
    #[error("invalid cell [{a}, {b}] for box of length {length}")]
    InvalidCell { a: f64, b: f64, length: f64 },
}

/// Geometry and constants of one confining region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub length: f64,
    pub mass: f64,
    pub hbar: f64,
    pub mode_count: usize,
    /// V(x) sampled on the same uniform grid the modes are built on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Vec<f64>>,
}

impl BoxSpec {
    pub fn new(length: f64, mass: f64, hbar: f64, mode_count: usize) -> Self {
        Self {
            length,
            mass,
            hbar,
            mode_count,
            potential: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModeError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.length) {
            return Err(ModeError::InvalidBox(format!("length {} must be > 0", self.length)));
        }
        if !positive(self.mass) {
            return Err(ModeError::InvalidBox(format!("mass {} must be > 0", self.mass)));
        }
        if !positive(self.hbar) {
            return Err(ModeError::InvalidBox(format!("hbar {} must be > 0", self.hbar)));
        }
        if self.mode_count == 0 {
            return Err(ModeError::InvalidBox("mode_count must be >= 1".into()));
        }
        Ok(())
    }

    /// hbar^2 pi^2 n^2 / (2 m L^2), n starting at 1.
    pub fn analytic_energy(&self, n: usize) -> f64 {
        let k = n as f64 * PI / self.length;
        self.hbar * self.hbar * k * k / (2.0 * self.mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Density,
    Energy,
    Current,
}

#[derive(Debug, Clone)]
pub struct ModeSet {
    pub energies: Vec<f64>,
    /// `samples[n][g]` = u_n(x_g).
    pub samples: Vec<Vec<f64>>,
    /// `derivatives[n][g]` = u_n'(x_g).
    pub derivatives: Vec<Vec<f64>>,
    pub grid: Vec<f64>,
    pub spacing: f64,
    pub potential: Vec<f64>,
    pub length: f64,
    pub mass: f64,
    pub hbar: f64,
}

#[derive(Debug, Clone)]
pub struct CellKernel {
    pub matrix: CMatrix,
    pub kind: KernelKind,
    pub cell: (f64, f64),
}

impl ModeSet {
    pub fn mode_count(&self) -> usize {
        self.energies.len()
    }

    pub fn grid_points(&self) -> usize {
        self.grid.len()
    }

    /// Trapezoid weights on the uniform grid.
    fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.grid.len();
        (0..n).map(move |g| {
            if g == 0 || g + 1 == n {
                0.5 * self.spacing
            } else {
                self.spacing
            }
        })
    }

    /// Max |int u_n u_m dx - delta_nm| over all mode pairs.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.mode_count();
        let w: Vec<f64> = self.weights().collect();
        let mut worst = 0.0_f64;
        for a in 0..m {
            for b in a..m {
                let s: f64 = (0..self.grid.len())
                    .map(|g| w[g] * self.samples[a][g] * self.samples[b][g])
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    /// Sum_h coeffs[h] u_h(x) on the grid.
    pub fn synthesize(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        (0..self.grid.len())
            .map(|g| coeffs.iter().zip(&self.samples).map(|(ch, u)| ch * u[g]).sum())
            .collect()
    }
}

/// Normal modes of the box: analytic sine basis when no potential is
/// given, otherwise the lowest Dirichlet eigenpairs of the finite-difference
/// Hamiltonian on `grid_points` points (walls included).
pub fn box_eigenmodes(spec: &BoxSpec, grid_points: usize) -> Result<ModeSet, ModeError> {
    spec.validate()?;
    if grid_points < MIN_GRID_POINTS {
        return Err(ModeError::InvalidBox(format!(
            "grid_points {grid_points} below minimum {MIN_GRID_POINTS}"
        )));
    }
    if spec.mode_count > grid_points / 4 {
        return Err(ModeError::UnderResolved {
            modes: spec.mode_count,
            grid_points,
        });
    }
    let spacing = spec.length / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|g| g as f64 * spacing).collect();
    match &spec.potential {
        None => Ok(analytic_modes(spec, grid, spacing)),
        Some(v) => {
            if v.len() != grid_points {
                return Err(ModeError::GridMismatch {
                    expected: grid_points,
                    got: v.len(),
                });
            }
            Ok(finite_difference_modes(spec, grid, spacing, v.clone()))
        }
    }
}

fn analytic_modes(spec: &BoxSpec, grid: Vec<f64>, spacing: f64) -> ModeSet {
    let l = spec.length;
    let norm = (2.0 / l).sqrt();
    let last = grid.len() - 1;
    let mut samples = Vec::with_capacity(spec.mode_count);
    let mut derivatives = Vec::with_capacity(spec.mode_count);
    for n in 1..=spec.mode_count {
        let k = n as f64 * PI / l;
        let mut u: Vec<f64> = grid.iter().map(|&x| norm * (k * x).sin()).collect();
        // pin the walls exactly
        u[0] = 0.0;
        u[last] = 0.0;
        samples.push(u);
        derivatives.push(grid.iter().map(|&x| norm * k * (k * x).cos()).collect());
    }
    ModeSet {
        energies: (1..=spec.mode_count).map(|n| spec.analytic_energy(n)).collect(),
        samples,
        derivatives,
        potential: vec![0.0; grid.len()],
        grid,
        spacing,
        length: l,
        mass: spec.mass,
        hbar: spec.hbar,
    }
}

fn finite_difference_modes(spec: &BoxSpec, grid: Vec<f64>, spacing: f64, potential: Vec<f64>) -> ModeSet {
    let n_int = grid.len() - 2;
    let kin = spec.hbar * spec.hbar / (2.0 * spec.mass * spacing * spacing);
    let diag: Vec<f64> = (0..n_int).map(|i| 2.0 * kin + potential[i + 1]).collect();
    let off = -kin;
    let tri = Tridiagonal { diag, off };
    let mut energies = Vec::with_capacity(spec.mode_count);
    let mut samples = Vec::with_capacity(spec.mode_count);
    let mut derivatives = Vec::with_capacity(spec.mode_count);
    for k in 0..spec.mode_count {
        let lambda = tri.kth_eigenvalue(k);
        let interior = tri.eigenvector(lambda);
        let mut u = Vec::with_capacity(grid.len());
        u.push(0.0);
        u.extend(interior);
        u.push(0.0);
        let norm = (u.iter().map(|x| x * x).sum::<f64>() * spacing).sqrt();
        let sign = if u[1] < 0.0 { -1.0 } else { 1.0 };
        for x in u.iter_mut() {
            *x *= sign / norm;
        }
        derivatives.push(finite_difference_derivative(&u, spacing));
        samples.push(u);
        energies.push(lambda);
    }
    ModeSet {
        energies,
        samples,
        derivatives,
        potential,
        grid,
        spacing,
        length: spec.length,
        mass: spec.mass,
        hbar: spec.hbar,
    }
}

fn finite_difference_derivative(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|g| {
            if g == 0 {
                (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
            } else if g + 1 == n {
                (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h)
            } else {
                (u[g + 1] - u[g - 1]) / (2.0 * h)
            }
        })
        .collect()
}

/// Symmetric tridiagonal matrix with constant off-diagonal.
struct Tridiagonal {
    diag: Vec<f64>,
    off: f64,
}

impl Tridiagonal {
    /// Number of eigenvalues strictly below `x` (Sturm sequence).
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = 1.0_f64;
        for (i, &d) in self.diag.iter().enumerate() {
            let prev = if i == 0 { 0.0 } else { self.off * self.off / q };
            q = d - x - prev;
            if q == 0.0 {
                q = -1e-300;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn kth_eigenvalue(&self, k: usize) -> f64 {
        let radius = 2.0 * self.off.abs();
        let mut lo = self.diag.iter().cloned().fold(f64::INFINITY, f64::min) - radius;
        let mut hi = self.diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + radius;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Inverse iteration at a converged eigenvalue.
    fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let n = self.diag.len();
        let shift = lambda + 1e-10 * lambda.abs().max(1.0);
        let mut v = vec![1.0; n];
        for _ in 0..4 {
            v = self.solve_shifted(shift, &v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        v
    }

    /// Solve (T - shift) x = rhs by the Thomas algorithm.
    fn solve_shifted(&self, shift: f64, rhs: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        let mut denom = self.diag[0] - shift;
        if denom == 0.0 {
            denom = 1e-300;
        }
        cp[0] = self.off / denom;
        dp[0] = rhs[0] / denom;
        for i in 1..n {
            let mut m = self.diag[i] - shift - self.off * cp[i - 1];
            if m == 0.0 {
                m = 1e-300;
            }
            cp[i] = self.off / m;
            dp[i] = (rhs[i] - self.off * dp[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        x
    }
}

/// Trapezoid projection c_h = int u_h(x) f(x) dx of a sampled function.
pub fn mode_overlap(modes: &ModeSet, f: &[Complex64]) -> Result<Vec<Complex64>, ModeError> {
    if f.len() != modes.grid_points() {
        return Err(ModeError::GridMismatch {
            expected: modes.grid_points(),
            got: f.len(),
        });
    }
    let w: Vec<f64> = modes.weights().collect();
    Ok(modes
        .samples
        .iter()
        .map(|u| (0..f.len()).map(|g| f[g] * (w[g] * u[g])).sum())
        .collect())
}

/// Integral over [a, b] of the piecewise-linear interpolant of `values`.
fn cell_integral(modes: &ModeSet, a: f64, b: f64, values: &[f64]) -> f64 {
    let h = modes.spacing;
    let n = modes.grid.len();
    let first = ((a / h).floor() as usize).min(n - 2);
    let last = ((b / h).ceil() as usize).min(n - 1);
    let mut total = 0.0;
    for i in first..last {
        let (x0, x1) = (modes.grid[i], modes.grid[i + 1]);
        let lo = a.max(x0);
        let hi = b.min(x1);
        if hi <= lo {
            continue;
        }
        let interp = |x: f64| values[i] + (values[i + 1] - values[i]) * (x - x0) / (x1 - x0);
        total += 0.5 * (hi - lo) * (interp(lo) + interp(hi));
    }
    total
}

pub fn cell_kernel(modes: &ModeSet, cell: (f64, f64), kind: KernelKind) -> Result<CellKernel, ModeError> {
    let (a, b) = cell;
    let tol = 1e-12 * modes.length;
    if !(a.is_finite() && b.is_finite()) || a < -tol || b > modes.length + tol || a >= b {
        return Err(ModeError::InvalidCell {
            a,
            b,
            length: modes.length,
        });
    }
    let (a, b) = (a.max(0.0), b.min(modes.length));
    let m = modes.mode_count();
    let g = modes.grid_points();
    let kin = modes.hbar * modes.hbar / (2.0 * modes.mass);
    let mut matrix = CMatrix::zeros(m, m);
    let mut integrand = vec![0.0; g];
    for h in 0..m {
        for k in 0..m {
            let (uh, uk) = (&modes.samples[h], &modes.samples[k]);
            let (dh, dk) = (&modes.derivatives[h], &modes.derivatives[k]);
            for x in 0..g {
                integrand[x] = match kind {
                    KernelKind::Density => uh[x] * uk[x],
                    KernelKind::Energy => kin * dh[x] * dk[x] + modes.potential[x] * uh[x] * uk[x],
                    KernelKind::Current => uh[x] * dk[x] - dh[x] * uk[x],
                };
            }
            let value = cell_integral(modes, a, b, &integrand);
            matrix[(h, k)] = match kind {
                // (hbar / 2 m i) * value
                KernelKind::Current => Complex64::new(0.0, -modes.hbar / (2.0 * modes.mass) * value),
                _ => c(value),
            };
        }
    }
    Ok(CellKernel {
        matrix: hermitize(&matrix),
        kind,
        cell: (a, b),
    })
}

/// Density kernels of `cells` equal-width cells partitioning the box.
pub fn partition_kernels(modes: &ModeSet, cells: usize, kind: KernelKind) -> Result<Vec<CellKernel>, ModeError> {
    let width = modes.length / cells as f64;
    (0..cells)
        .map(|i| {
            let b = if i + 1 == cells {
                modes.length
            } else {
                (i + 1) as f64 * width
            };
            cell_kernel(modes, (i as f64 * width, b), kind)
        })
        .collect()
}
