//! Truncated occupation-number space over the modes of two regions.
//!
//! Modes are ordered region 1 first, then region 2. Fermionic signs follow
//! the Jordan-Wigner convention in that order, so a region-2 ladder carries
//! the parity of the whole region-1 occupation.
//!
//! Basis states are sorted by total particle number, then by descending
//! region-1 number (which groups the (N1, N2) sectors), then by descending
//! lexicographic occupation vector.

use crate::kernel::{c, CMatrix, CVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::HashMap;
use thiserror::Error;

pub const DEFAULT_MAX_DIM: usize = 4096;
/// Environment variable overriding [`DEFAULT_MAX_DIM`].
pub const MAX_DIM_ENV: &str = "DEMIX_MAX_DIM";

/// Dimension cap from the environment, falling back to the default.
pub fn max_dim_from_env() -> usize {
    std::env::var(MAX_DIM_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_DIM)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistics {
    Boson,
    Fermion,
}

impl Statistics {
    /// +1 for bosons, -1 for fermions: `[a, a^dagger]_sign = 1`.
    pub fn sign(self) -> f64 {
        match self {
            Statistics::Boson => 1.0,
            Statistics::Fermion => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Region {
    pub fn index(self) -> usize {
        match self {
            Region::One => 0,
            Region::Two => 1,
        }
    }

    pub fn other(self) -> Region {
        match self {
            Region::One => Region::Two,
            Region::Two => Region::One,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumberScope {
    Region(Region),
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Create,
    Annihilate,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FockError {
    #[error("basis dimension {dim} exceeds cap {cap}")]
    DimensionOverflow { dim: u128, cap: usize },
    #[error("mode {mode} out of range for region with {count} modes")]
    ModeOutOfRange { mode: usize, count: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coefficient vector has norm {norm}, expected 1")]
    NotNormalized { norm: f64 },
    #[error("operator is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
}

/// Parameters of a truncated basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub m1: usize,
    pub m2: usize,
    pub statistics: Statistics,
    pub n_total: usize,
    /// Per-mode occupation cap; bosons default to `n_total`, fermions are fixed at 1.
    #[serde(default)]
    pub n_max: Option<usize>,
    /// Optional caps on N1 and N2 separately.
    #[serde(default)]
    pub region_caps: [Option<usize>; 2],
    #[serde(default = "default_max_dim")]
    pub max_dim: usize,
}

fn default_max_dim() -> usize {
    DEFAULT_MAX_DIM
}

impl BasisSpec {
    pub fn new(m1: usize, m2: usize, statistics: Statistics, n_total: usize) -> Self {
        Self {
            m1,
            m2,
            statistics,
            n_total,
            n_max: None,
            region_caps: [None, None],
            max_dim: DEFAULT_MAX_DIM,
        }
    }

    /// Exact tensor product of a region-1 space with at most `cap1`
    /// particles and a region-2 space with at most `cap2`.
    pub fn product(m1: usize, m2: usize, statistics: Statistics, cap1: usize, cap2: usize) -> Self {
        Self {
            m1,
            m2,
            statistics,
            n_total: cap1 + cap2,
            n_max: None,
            region_caps: [Some(cap1), Some(cap2)],
            max_dim: DEFAULT_MAX_DIM,
        }
    }

    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = Some(n_max);
        self
    }

    pub fn with_max_dim(mut self, max_dim: usize) -> Self {
        self.max_dim = max_dim;
        self
    }

    fn resolved(&self) -> Resolved {
        let n_max = match self.statistics {
            Statistics::Fermion => 1,
            Statistics::Boson => self.n_max.unwrap_or(self.n_total),
        };
        let cap = |r: usize| self.region_caps[r].unwrap_or(self.n_total).min(self.n_total);
        Resolved {
            modes: [self.m1, self.m2],
            n_max,
            n_total: self.n_total,
            caps: [cap(0), cap(1)],
        }
    }

    /// Dimension the spec would produce, computed without enumerating states.
    pub fn dimension(&self) -> u128 {
        let r = self.resolved();
        let c1 = region_counts(r.modes[0], r.n_max, r.caps[0]);
        let c2 = region_counts(r.modes[1], r.n_max, r.caps[1]);
        let mut total = 0u128;
        for (n1, a) in c1.iter().enumerate() {
            for (n2, b) in c2.iter().enumerate() {
                if n1 + n2 <= r.n_total {
                    total = total.saturating_add(a.saturating_mul(*b));
                }
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Resolved {
    modes: [usize; 2],
    n_max: usize,
    n_total: usize,
    caps: [usize; 2],
}

/// Number of occupation vectors of `modes` modes (each <= n_max) per total N <= cap.
fn region_counts(modes: usize, n_max: usize, cap: usize) -> Vec<u128> {
    let mut counts = vec![0u128; cap + 1];
    counts[0] = 1;
    for _ in 0..modes {
        let mut next = vec![0u128; cap + 1];
        for (n, &v) in counts.iter().enumerate() {
            if v == 0 {
                continue;
            }
            for k in 0..=n_max.min(cap - n) {
                next[n + k] = next[n + k].saturating_add(v);
            }
        }
        counts = next;
    }
    counts
}

fn enumerate(r: &Resolved) -> Vec<Vec<u8>> {
    let m = r.modes[0] + r.modes[1];
    let mut out = Vec::new();
    let mut current = vec![0u8; m];
    fn rec(pos: usize, m: usize, n1: usize, n2: usize, r: &Resolved, current: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if pos == m {
            out.push(current.clone());
            return;
        }
        let in_one = pos < r.modes[0];
        for k in 0..=r.n_max {
            let (a, b) = if in_one { (n1 + k, n2) } else { (n1, n2 + k) };
            if a > r.caps[0] || b > r.caps[1] || a + b > r.n_total {
                break;
            }
            current[pos] = k as u8;
            rec(pos + 1, m, a, b, r, current, out);
        }
        current[pos] = 0;
    }
    rec(0, m, 0, 0, r, &mut current, &mut out);
    let m1 = r.modes[0];
    out.sort_by_key(|s| {
        let n1: usize = s[..m1].iter().map(|&x| x as usize).sum();
        let n: usize = s.iter().map(|&x| x as usize).sum();
        (n, Reverse(n1), Reverse(s.clone()))
    });
    out
}

/// Enumerated, immutable occupation-number basis.
#[derive(Debug, Clone)]
pub struct FockBasis {
    spec: BasisSpec,
    resolved: Resolved,
    states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    sectors: Vec<(usize, usize)>,
    /// Index of each state's region-1 and region-2 parts in the region bases.
    parts: Vec<(usize, usize)>,
    region_states: [Vec<Vec<u8>>; 2],
}

pub fn build_basis(
    m1: usize,
    m2: usize,
    statistics: Statistics,
    n_total: usize,
    n_max: Option<usize>,
) -> Result<FockBasis, FockError> {
    let mut spec = BasisSpec::new(m1, m2, statistics, n_total);
    spec.n_max = n_max;
    FockBasis::new(spec)
}

impl FockBasis {
    pub fn new(spec: BasisSpec) -> Result<Self, FockError> {
        if spec.statistics == Statistics::Boson && spec.n_max == Some(0) {
            return Err(FockError::InvalidBasis("boson n_max must be >= 1".into()));
        }
        if spec.m1 + spec.m2 > u8::MAX as usize {
            return Err(FockError::InvalidBasis("too many modes".into()));
        }
        let dim = spec.dimension();
        if dim > spec.max_dim as u128 {
            return Err(FockError::DimensionOverflow { dim, cap: spec.max_dim });
        }
        let resolved = spec.resolved();
        let states = enumerate(&resolved);
        let index: HashMap<Vec<u8>, usize> = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let m1 = resolved.modes[0];
        let sectors = states
            .iter()
            .map(|s| {
                let n1 = s[..m1].iter().map(|&x| x as usize).sum();
                let n2 = s[m1..].iter().map(|&x| x as usize).sum();
                (n1, n2)
            })
            .collect();
        let region_states = [Region::One, Region::Two].map(|r| {
            let mut modes = [0, 0];
            modes[0] = resolved.modes[r.index()];
            enumerate(&Resolved {
                modes,
                n_max: resolved.n_max,
                n_total: resolved.caps[r.index()],
                caps: [resolved.caps[r.index()], 0],
            })
        });
        let lookups: Vec<HashMap<&[u8], usize>> = region_states
            .iter()
            .map(|list| list.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect())
            .collect();
        let parts = states
            .iter()
            .map(|s| (lookups[0][&s[..m1]], lookups[1][&s[m1..]]))
            .collect();
        Ok(Self {
            spec,
            resolved,
            states,
            index,
            sectors,
            parts,
            region_states,
        })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn statistics(&self) -> Statistics {
        self.spec.statistics
    }

    pub fn mode_count(&self, region: Region) -> usize {
        self.resolved.modes[region.index()]
    }

    pub fn n_max(&self) -> usize {
        self.resolved.n_max
    }

    pub fn n_total(&self) -> usize {
        self.resolved.n_total
    }

    pub fn region_cap(&self, region: Region) -> usize {
        self.resolved.caps[region.index()]
    }

    pub fn states(&self) -> &[Vec<u8>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    pub fn index_of(&self, occupation: &[u8]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    /// (N1, N2) of state `i`.
    pub fn sector(&self, i: usize) -> (usize, usize) {
        self.sectors[i]
    }

    pub fn sectors(&self) -> &[(usize, usize)] {
        &self.sectors
    }

    /// Indices of the region-1 and region-2 parts of state `i` in the region bases.
    pub fn parts(&self, i: usize) -> (usize, usize) {
        self.parts[i]
    }

    pub fn region_dim(&self, region: Region) -> usize {
        self.region_states[region.index()].len()
    }

    /// The basis of one region alone (its modes as region 1, no region 2).
    pub fn region_basis(&self, region: Region) -> FockBasis {
        let r = region.index();
        let mut spec = BasisSpec::new(self.resolved.modes[r], 0, self.spec.statistics, self.resolved.caps[r]);
        spec.n_max = Some(self.resolved.n_max);
        spec.max_dim = usize::MAX;
        FockBasis::new(spec).expect("region basis of a valid basis is valid")
    }

    /// Whether every pair of region states appears, i.e. the basis is the
    /// full tensor product of the two region bases.
    pub fn is_product(&self) -> bool {
        self.dim() == self.region_dim(Region::One) * self.region_dim(Region::Two)
    }

    fn global_mode(&self, region: Region, mode: usize) -> Result<usize, FockError> {
        let count = self.mode_count(region);
        if mode >= count {
            return Err(FockError::ModeOutOfRange { mode, count });
        }
        Ok(match region {
            Region::One => mode,
            Region::Two => self.resolved.modes[0] + mode,
        })
    }

    /// Applies a_g to a state: target index and amplitude.
    fn annihilate(&self, s: &[u8], g: usize) -> Option<(usize, f64)> {
        let n = s[g];
        if n == 0 {
            return None;
        }
        let mut t = s.to_vec();
        t[g] -= 1;
        let target = self.index_of(&t)?;
        let amp = match self.spec.statistics {
            Statistics::Boson => (n as f64).sqrt(),
            Statistics::Fermion => jw_sign(s, g),
        };
        Some((target, amp))
    }

    /// Applies a_h^dagger a_k to a state.
    fn hop(&self, s: &[u8], h: usize, k: usize) -> Option<(usize, f64)> {
        let nk = s[k];
        if nk == 0 {
            return None;
        }
        let mut t = s.to_vec();
        t[k] -= 1;
        let (mut amp, after) = match self.spec.statistics {
            Statistics::Boson => ((nk as f64).sqrt(), t),
            Statistics::Fermion => (jw_sign(s, k), t),
        };
        let nh = after[h];
        if self.spec.statistics == Statistics::Fermion && nh == 1 {
            return None;
        }
        let mut u = after.clone();
        u[h] += 1;
        if self.spec.statistics == Statistics::Boson && u[h] as usize > self.resolved.n_max {
            return None;
        }
        let target = self.index_of(&u)?;
        amp *= match self.spec.statistics {
            Statistics::Boson => ((nh + 1) as f64).sqrt(),
            Statistics::Fermion => jw_sign(&after, h),
        };
        Some((target, amp))
    }

    /// Whether one more particle can be added in `region` without leaving the basis.
    pub fn is_cutoff_safe(&self, i: usize, region: Region) -> bool {
        let (n1, n2) = self.sectors[i];
        let nr = if region == Region::One { n1 } else { n2 };
        if nr + 1 > self.region_cap(region) || n1 + n2 + 1 > self.n_total() {
            return false;
        }
        if self.spec.statistics == Statistics::Boson {
            let (lo, hi) = match region {
                Region::One => (0, self.resolved.modes[0]),
                Region::Two => (self.resolved.modes[0], self.states[i].len()),
            };
            return self.states[i][lo..hi]
                .iter()
                .all(|&x| (x as usize) < self.resolved.n_max);
        }
        true
    }

    /// Diagonal projector onto cutoff-safe states of `region`.
    pub fn cutoff_safe_projector(&self, region: Region) -> CMatrix {
        diag_projector(self.dim(), |i| self.is_cutoff_safe(i, region))
    }

    /// Projector onto the states with exactly `n` particles in `region`.
    pub fn sector_projector(&self, region: Region, n: usize) -> CMatrix {
        diag_projector(self.dim(), |i| {
            let (n1, n2) = self.sectors[i];
            (if region == Region::One { n1 } else { n2 }) == n
        })
    }

    /// Embeds a region-local operator, acting as identity on the other region.
    ///
    /// Fermionic entries that change the region-2 parity pick up the
    /// region-1 parity string.
    pub fn embed_local(&self, op: &CMatrix, region: Region) -> Result<CMatrix, FockError> {
        let identity_other = CMatrix::identity(self.region_dim(region.other()), self.region_dim(region.other()));
        match region {
            Region::One => self.embed_product(op, &identity_other),
            Region::Two => self.embed_product(&identity_other, op),
        }
    }

    /// Restriction of `A1 (x) A2` to this basis.
    pub fn embed_product(&self, a1: &CMatrix, a2: &CMatrix) -> Result<CMatrix, FockError> {
        for (r, a) in [(Region::One, a1), (Region::Two, a2)] {
            if a.nrows() != self.region_dim(r) || a.ncols() != self.region_dim(r) {
                return Err(FockError::DimensionMismatch(format!(
                    "region {} operator is {}x{}, region dimension is {}",
                    r.index() + 1,
                    a.nrows(),
                    a.ncols(),
                    self.region_dim(r)
                )));
            }
        }
        let fermion = self.spec.statistics == Statistics::Fermion;
        let n = self.dim();
        let mut out = CMatrix::zeros(n, n);
        for j in 0..n {
            let (j1, j2) = self.parts[j];
            for i in 0..n {
                let (i1, i2) = self.parts[i];
                let x = a1[(i1, j1)];
                if x == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let y = a2[(i2, j2)];
                if y == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let mut v = x * y;
                if fermion && (self.sectors[i].1 + self.sectors[j].1) % 2 == 1 && self.sectors[j].0 % 2 == 1 {
                    v = -v;
                }
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }

    /// Partial trace over the region not kept, for operators that conserve
    /// the traced region's particle number.
    pub fn reduce(&self, m: &CMatrix, keep: Region) -> Result<CMatrix, FockError> {
        if m.nrows() != self.dim() || m.ncols() != self.dim() {
            return Err(FockError::DimensionMismatch(format!(
                "operator is {}x{}, basis dimension is {}",
                m.nrows(),
                m.ncols(),
                self.dim()
            )));
        }
        let d = self.region_dim(keep);
        let mut out = CMatrix::zeros(d, d);
        let key = |i: usize| -> (usize, usize) {
            let (a, b) = self.parts[i];
            if keep == Region::One {
                (a, b)
            } else {
                (b, a)
            }
        };
        // group states by their traced part
        let mut by_other: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
        for i in 0..self.dim() {
            let (kept, other) = key(i);
            by_other.entry(other).or_default().push((kept, i));
        }
        for members in by_other.values() {
            for &(ka, ia) in members {
                for &(kb, ib) in members {
                    out[(ka, kb)] += m[(ia, ib)];
                }
            }
        }
        Ok(out)
    }
}

/// Zero-pads an operator on `from` into the basis `to`, matching states by
/// occupation. Every state of `from` must exist in `to`.
pub fn pad_operator(op: &CMatrix, from: &FockBasis, to: &FockBasis) -> Result<CMatrix, FockError> {
    if op.nrows() != from.dim() || op.ncols() != from.dim() {
        return Err(FockError::DimensionMismatch(format!(
            "operator is {}x{}, source basis has dim {}",
            op.nrows(),
            op.ncols(),
            from.dim()
        )));
    }
    if from.statistics() != to.statistics() {
        return Err(FockError::InvalidBasis("statistics differ".into()));
    }
    let map: Vec<usize> = from
        .states()
        .iter()
        .map(|s| {
            to.index_of(s)
                .ok_or_else(|| FockError::InvalidBasis(format!("state {s:?} missing from target basis")))
        })
        .collect::<Result<_, _>>()?;
    let mut out = CMatrix::zeros(to.dim(), to.dim());
    for (j, &tj) in map.iter().enumerate() {
        for (i, &ti) in map.iter().enumerate() {
            out[(ti, tj)] = op[(i, j)];
        }
    }
    Ok(out)
}

fn diag_projector(n: usize, keep: impl Fn(usize) -> bool) -> CMatrix {
    let mut p = CMatrix::zeros(n, n);
    for i in 0..n {
        if keep(i) {
            p[(i, i)] = c(1.0);
        }
    }
    p
}

/// (-1)^(occupations of modes before g).
fn jw_sign(s: &[u8], g: usize) -> f64 {
    let before: usize = s[..g].iter().map(|&x| x as usize).sum();
    if before.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone)]
pub struct LadderOp {
    pub region: Region,
    pub mode: usize,
    pub direction: Direction,
    pub matrix: CMatrix,
}

pub fn ladder(basis: &FockBasis, region: Region, mode: usize, direction: Direction) -> Result<LadderOp, FockError> {
    let g = basis.global_mode(region, mode)?;
    let n = basis.dim();
    let mut a = CMatrix::zeros(n, n);
    for (j, s) in basis.states.iter().enumerate() {
        if let Some((i, amp)) = basis.annihilate(s, g) {
            a[(i, j)] = c(amp);
        }
    }
    let matrix = match direction {
        Direction::Annihilate => a,
        Direction::Create => a.adjoint(),
    };
    Ok(LadderOp {
        region,
        mode,
        direction,
        matrix,
    })
}

pub fn annihilator(basis: &FockBasis, region: Region, mode: usize) -> Result<CMatrix, FockError> {
    Ok(ladder(basis, region, mode, Direction::Annihilate)?.matrix)
}

pub fn creator(basis: &FockBasis, region: Region, mode: usize) -> Result<CMatrix, FockError> {
    Ok(ladder(basis, region, mode, Direction::Create)?.matrix)
}

pub fn number_op(basis: &FockBasis, scope: NumberScope) -> CMatrix {
    let n = basis.dim();
    let mut out = CMatrix::zeros(n, n);
    for i in 0..n {
        let (n1, n2) = basis.sectors[i];
        out[(i, i)] = c(match scope {
            NumberScope::Region(Region::One) => n1,
            NumberScope::Region(Region::Two) => n2,
            NumberScope::Total => n1 + n2,
        } as f64);
    }
    out
}

/// Second quantisation of a one-body kernel: sum_hk K_hk a_h^dagger a_k.
pub fn one_body(basis: &FockBasis, kernel: &CMatrix, region: Region) -> Result<CMatrix, FockError> {
    let m = basis.mode_count(region);
    if kernel.nrows() != m || kernel.ncols() != m {
        return Err(FockError::DimensionMismatch(format!(
            "kernel is {}x{}, region has {m} modes",
            kernel.nrows(),
            kernel.ncols()
        )));
    }
    let defect = crate::kernel::hermitian_defect(kernel);
    if defect > crate::kernel::HERMITIAN_TOL {
        return Err(FockError::NotHermitian(defect));
    }
    let offset = if region == Region::One {
        0
    } else {
        basis.resolved.modes[0]
    };
    let n = basis.dim();
    let mut out = CMatrix::zeros(n, n);
    for (j, s) in basis.states.iter().enumerate() {
        for k in 0..m {
            if s[offset + k] == 0 {
                continue;
            }
            for h in 0..m {
                let khk = kernel[(h, k)];
                if khk == Complex64::new(0.0, 0.0) {
                    continue;
                }
                if let Some((i, amp)) = basis.hop(s, offset + h, offset + k) {
                    out[(i, j)] += khk * amp;
                }
            }
        }
    }
    Ok(out)
}

/// a_psi = sum_k <psi|k> a_k for a normalised coefficient vector psi.
pub fn mode_annihilator(basis: &FockBasis, region: Region, psi: &CVector) -> Result<CMatrix, FockError> {
    let m = basis.mode_count(region);
    if psi.len() != m {
        return Err(FockError::DimensionMismatch(format!(
            "coefficient vector has {} entries, region has {m} modes",
            psi.len()
        )));
    }
    let norm = psi.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(FockError::NotNormalized { norm });
    }
    let mut out = CMatrix::zeros(basis.dim(), basis.dim());
    for k in 0..m {
        if psi[k] == Complex64::new(0.0, 0.0) {
            continue;
        }
        out += annihilator(basis, region, k)? * psi[k].conj();
    }
    Ok(out)
}

/// Max violation of `[a_n, a_m^dagger]_pm = delta_nm` on the cutoff-safe
/// states of `region`, over all mode pairs.
pub fn commutation_defect(basis: &FockBasis, region: Region) -> Result<f64, FockError> {
    let m = basis.mode_count(region);
    let safe = basis.cutoff_safe_projector(region);
    let sign = basis.statistics().sign();
    let mut worst = 0.0_f64;
    let ops: Vec<CMatrix> = (0..m)
        .map(|k| annihilator(basis, region, k))
        .collect::<Result<_, _>>()?;
    for a in 0..m {
        for b in 0..m {
            let ad = ops[b].adjoint();
            let mut comm = &ops[a] * &ad - &ad * &ops[a] * c(sign);
            if a == b {
                comm -= CMatrix::identity(basis.dim(), basis.dim());
            }
            worst = worst.max(crate::kernel::max_abs(&(comm * &safe)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{anticommutator, commutator, diag_real, max_abs};
    use crate::random::{random_hermitian, random_unit_vector, rng};

    fn occ(b: &FockBasis) -> Vec<Vec<u8>> {
        b.states().to_vec()
    }

    #[test]
    fn basis_dimensions() {
        let b = build_basis(1, 0, Statistics::Fermion, 1, None).unwrap();
        assert_eq!(occ(&b), vec![vec![0], vec![1]]);
        let b = build_basis(1, 1, Statistics::Boson, 2, Some(2)).unwrap();
        assert_eq!(
            occ(&b),
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        let b = build_basis(2, 2, Statistics::Fermion, 4, None).unwrap();
        assert_eq!(b.dim(), 16);
        assert!(b.is_product());
    }

    #[test]
    fn dimension_formula_matches_enumeration() {
        for (m1, m2, stat, n, caps) in [
            (3, 3, Statistics::Boson, 3, [None, None]),
            (3, 2, Statistics::Fermion, 4, [Some(2), Some(1)]),
            (2, 3, Statistics::Boson, 5, [Some(2), Some(3)]),
        ] {
            let mut spec = BasisSpec::new(m1, m2, stat, n);
            spec.region_caps = caps;
            let b = FockBasis::new(spec.clone()).unwrap();
            assert_eq!(b.dim() as u128, spec.dimension());
        }
    }

    #[test]
    fn dimension_overflow_reports_size() {
        let spec = BasisSpec::new(8, 8, Statistics::Boson, 8).with_max_dim(100);
        match FockBasis::new(spec) {
            Err(FockError::DimensionOverflow { dim, cap }) => {
                assert_eq!(cap, 100);
                assert_eq!(dim, 735471); // C(24, 8)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sectors_are_grouped_and_index_is_bijective() {
        let b = build_basis(2, 2, Statistics::Boson, 3, None).unwrap();
        let mut seen = Vec::new();
        for w in b.sectors().windows(2) {
            if w[0] != w[1] {
                assert!(!seen.contains(&w[1]), "sector {:?} split", w[1]);
                seen.push(w[0]);
            }
        }
        for (i, s) in b.states().iter().enumerate() {
            assert_eq!(b.index_of(s), Some(i));
        }
        let again = build_basis(2, 2, Statistics::Boson, 3, None).unwrap();
        assert_eq!(occ(&b), occ(&again));
    }

    #[test]
    fn boson_ladder_amplitudes() {
        let b = build_basis(1, 0, Statistics::Boson, 3, None).unwrap();
        let ad = creator(&b, Region::One, 0).unwrap();
        assert_eq!(ad[(1, 0)], c(1.0));
        assert!((ad[(2, 1)] - c(2f64.sqrt())).norm() < 1e-15);
        // pushed above the cutoff: nothing
        assert!(ad.column(3).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn fermion_creation_squares_to_zero_and_anticommutes() {
        let b = build_basis(2, 2, Statistics::Fermion, 4, None).unwrap();
        let mut ops = Vec::new();
        for r in [Region::One, Region::Two] {
            for k in 0..2 {
                ops.push(annihilator(&b, r, k).unwrap());
            }
        }
        for a in &ops {
            let ad = a.adjoint();
            assert_eq!(max_abs(&(&ad * &ad)), 0.0);
        }
        for a in &ops {
            for bb in &ops {
                assert_eq!(max_abs(&anticommutator(a, bb)), 0.0);
            }
        }
        assert_eq!(commutation_defect(&b, Region::One).unwrap(), 0.0);
        assert_eq!(commutation_defect(&b, Region::Two).unwrap(), 0.0);
    }

    #[test]
    fn boson_commutator_on_safe_states() {
        let b = build_basis(2, 2, Statistics::Boson, 3, None).unwrap();
        assert!(commutation_defect(&b, Region::One).unwrap() < 1e-14);
        assert!(commutation_defect(&b, Region::Two).unwrap() < 1e-14);
        // and the violation off the safe subspace is real
        let a = annihilator(&b, Region::One, 0).unwrap();
        let full = &a * a.adjoint() - a.adjoint() * &a - CMatrix::identity(b.dim(), b.dim());
        assert!(max_abs(&full) > 0.5);
    }

    #[test]
    fn create_is_exact_adjoint() {
        let b = build_basis(2, 1, Statistics::Boson, 3, None).unwrap();
        for k in 0..2 {
            let a = ladder(&b, Region::One, k, Direction::Annihilate).unwrap().matrix;
            let ad = ladder(&b, Region::One, k, Direction::Create).unwrap().matrix;
            assert_eq!(ad, a.adjoint());
        }
        assert!(matches!(
            ladder(&b, Region::Two, 1, Direction::Create),
            Err(FockError::ModeOutOfRange { .. })
        ));
    }

    #[test]
    fn ladders_shift_one_sector_label() {
        let b = build_basis(2, 2, Statistics::Boson, 3, None).unwrap();
        let a = annihilator(&b, Region::Two, 1).unwrap();
        for j in 0..b.dim() {
            for i in 0..b.dim() {
                if a[(i, j)].norm() > 0.0 {
                    let (s, t) = (b.sector(j), b.sector(i));
                    assert_eq!((t.0, t.1 + 1), s);
                }
            }
        }
    }

    #[test]
    fn number_operators() {
        let b = build_basis(2, 2, Statistics::Fermion, 4, None).unwrap();
        let n1 = number_op(&b, NumberScope::Region(Region::One));
        let n2 = number_op(&b, NumberScope::Region(Region::Two));
        let n = number_op(&b, NumberScope::Total);
        assert_eq!(n1[(0, 0)], c(0.0));
        let i = b.index_of(&[1, 0, 0, 1]).unwrap();
        assert_eq!((n1[(i, i)], n2[(i, i)]), (c(1.0), c(1.0)));
        assert_eq!(&n1 + &n2, n);
    }

    #[test]
    fn one_body_examples() {
        for stat in [Statistics::Boson, Statistics::Fermion] {
            let b = build_basis(3, 2, stat, 3, None).unwrap();
            let id = CMatrix::identity(3, 3);
            assert!(
                max_abs(&(one_body(&b, &id, Region::One).unwrap() - number_op(&b, NumberScope::Region(Region::One))))
                    < 1e-14
            );
            let h1 = one_body(&b, &diag_real(&[1.0, 4.0, 9.0]), Region::One).unwrap();
            let h2 = one_body(&b, &diag_real(&[2.0, 3.0]), Region::Two).unwrap();
            assert_eq!(max_abs(&commutator(&h1, &h2)), 0.0);
        }
    }

    #[test]
    fn one_body_single_particle_sector_is_kernel() {
        let mut r = rng(4);
        for stat in [Statistics::Boson, Statistics::Fermion] {
            let b = build_basis(3, 2, stat, 2, None).unwrap();
            let k = random_hermitian(&mut r, 3, 1.0);
            let op = one_body(&b, &k, Region::One).unwrap();
            // single-particle region-1 states with region 2 empty
            let idx: Vec<usize> = (0..3)
                .map(|h| {
                    let mut s = vec![0u8; 5];
                    s[h] = 1;
                    b.index_of(&s).unwrap()
                })
                .collect();
            for h in 0..3 {
                for kk in 0..3 {
                    assert!((op[(idx[h], idx[kk])] - k[(h, kk)]).norm() < 1e-14);
                }
            }
            assert!(crate::kernel::hermitian_defect(&op) < 1e-14);
            let n1 = number_op(&b, NumberScope::Region(Region::One));
            assert!(max_abs(&commutator(&op, &n1)) < 1e-14);
        }
    }

    #[test]
    fn one_body_rejects_wrong_shape() {
        let b = build_basis(2, 2, Statistics::Boson, 2, None).unwrap();
        assert!(one_body(&b, &CMatrix::identity(3, 3), Region::One).is_err());
    }

    #[test]
    fn mode_annihilator_properties() {
        let b = build_basis(3, 1, Statistics::Boson, 2, None).unwrap();
        let mut e1 = CVector::zeros(3);
        e1[0] = c(1.0);
        assert_eq!(
            mode_annihilator(&b, Region::One, &e1).unwrap(),
            annihilator(&b, Region::One, 0).unwrap()
        );

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = CVector::from_vec(vec![c(s), c(s), c(0.0)]);
        let a = mode_annihilator(&b, Region::One, &psi).unwrap();
        let mut vac = CVector::zeros(b.dim());
        vac[0] = c(1.0);
        assert!(((a.adjoint() * &vac).norm() - 1.0).abs() < 1e-14);

        let phi = CVector::from_vec(vec![c(s), c(-s), c(0.0)]);
        let bphi = mode_annihilator(&b, Region::One, &phi).unwrap();
        let safe = b.cutoff_safe_projector(Region::One);
        let comm = &a * bphi.adjoint() - bphi.adjoint() * &a;
        assert!(max_abs(&(comm * &safe)) < 1e-14);

        let bad = CVector::from_vec(vec![c(1.0), c(1.0), c(0.0)]);
        assert!(matches!(
            mode_annihilator(&b, Region::One, &bad),
            Err(FockError::NotNormalized { .. })
        ));
    }

    #[test]
    fn mode_annihilator_ccr_random() {
        let mut r = rng(9);
        for stat in [Statistics::Boson, Statistics::Fermion] {
            let b = build_basis(3, 1, stat, 3, None).unwrap();
            let psi = random_unit_vector(&mut r, 3);
            let phi = random_unit_vector(&mut r, 3);
            let a = mode_annihilator(&b, Region::One, &psi).unwrap();
            let f = mode_annihilator(&b, Region::One, &phi).unwrap();
            let overlap = psi.dotc(&phi);
            let comm =
                &a * f.adjoint() - f.adjoint() * &a * c(stat.sign()) - CMatrix::identity(b.dim(), b.dim()) * overlap;
            assert!(max_abs(&(comm * b.cutoff_safe_projector(Region::One))) < 1e-13);
        }
    }

    #[test]
    fn region_embedding_matches_joint_operators() {
        let mut r = rng(12);
        for stat in [Statistics::Boson, Statistics::Fermion] {
            let b = FockBasis::new(BasisSpec::product(2, 2, stat, 2, 2)).unwrap();
            assert!(b.is_product());
            let r1 = b.region_basis(Region::One);
            let r2 = b.region_basis(Region::Two);
            let k1 = random_hermitian(&mut r, 2, 1.0);
            let k2 = random_hermitian(&mut r, 2, 1.0);
            let joint1 = one_body(&b, &k1, Region::One).unwrap();
            let local1 = one_body(&r1, &k1, Region::One).unwrap();
            assert!(max_abs(&(b.embed_local(&local1, Region::One).unwrap() - &joint1)) < 1e-14);
            let joint2 = one_body(&b, &k2, Region::Two).unwrap();
            let local2 = one_body(&r2, &k2, Region::One).unwrap();
            assert!(max_abs(&(b.embed_local(&local2, Region::Two).unwrap() - &joint2)) < 1e-14);
            // odd region-2 operators carry the region-1 parity string
            let a2 = annihilator(&b, Region::Two, 1).unwrap();
            let a2_local = annihilator(&r2, Region::One, 1).unwrap();
            assert!(max_abs(&(b.embed_local(&a2_local, Region::Two).unwrap() - a2)) < 1e-14);
            // product and partial trace
            let prod = b.embed_product(&local1, &local2).unwrap();
            assert!(max_abs(&(&prod - &joint1 * &joint2)) < 1e-12);
            let red = b.reduce(&prod, Region::One).unwrap();
            let tr2 = crate::kernel::trace(&local2);
            assert!(max_abs(&(red - &local1 * tr2)) < 1e-12);
        }
    }

    #[test]
    fn padding_keeps_small_cap_states_in_front() {
        let small = build_basis(2, 0, Statistics::Boson, 1, None).unwrap();
        let large = build_basis(2, 0, Statistics::Boson, 2, None).unwrap();
        assert_eq!(&large.states()[..small.dim()], small.states());
        let n = number_op(&small, NumberScope::Total);
        let padded = pad_operator(&n, &small, &large).unwrap();
        let expected = number_op(&large, NumberScope::Total) * large.sector_projector(Region::One, 1);
        assert_eq!(padded, expected);
        assert!(pad_operator(&number_op(&large, NumberScope::Total), &large, &small).is_err());
    }

    #[test]
    fn reduce_on_total_capped_basis() {
        let b = build_basis(2, 2, Statistics::Boson, 2, None).unwrap();
        assert!(!b.is_product());
        let n1 = number_op(&b, NumberScope::Region(Region::One));
        let red = b.reduce(&n1, Region::One).unwrap();
        // region-1 state with N1 particles pairs with region-2 states of N2 <= 2 - N1
        let r1 = b.region_basis(Region::One);
        for i in 0..r1.dim() {
            let n = r1.sector(i).0;
            let partners = match n {
                0 => 6,
                1 => 3,
                _ => 1,
            };
            assert!((red[(i, i)] - c((n * partners) as f64)).norm() < 1e-14);
        }
    }
}
