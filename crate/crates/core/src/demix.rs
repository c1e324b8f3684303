//! Single-particle transfer terms, the two-branch mixture they induce, and
//! observable-level equivalence checks under product dynamics.

use crate::fock::{annihilator, creator, number_op, FockBasis, FockError, NumberScope, Region};
use crate::kernel::{c, max_abs, trace, trace_product, unitary_propagator, CMatrix, KernelError};
use crate::prep::{expanded_state, PrepError};
use crate::random::{random_hermitian, rng};
use thiserror::Error;

pub const ADMISSIBILITY_TOL: f64 = 1e-10;
pub const STRUCTURE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemixError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error("all transfer amplitudes are zero")]
    ZeroAmplitudes,
    #[error("channel {channel} does not lower N2 by one (defect {defect:.3e})")]
    NotLowering { channel: usize, defect: f64 },
    #[error("correlation term does not conserve N (defect {0:.3e})")]
    NotConserving(f64),
    #[error("observable `{label}` is inadmissible: {commutator} = {defect:.3e}")]
    Inadmissible {
        label: String,
        commutator: &'static str,
        defect: f64,
    },
    #[error("microsystem branch has zero weight; the state is already factorized")]
    ZeroBranch,
    #[error("region Hamiltonians do not commute (defect {0:.3e})")]
    NonCommutingHamiltonians(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, DemixError>;

/// `C = sum_h a_h^dagger(1) D_h(2)` on the joint basis.
#[derive(Debug, Clone)]
pub struct CorrelationTerm {
    pub channels: Vec<(usize, CMatrix)>,
    pub operator: CMatrix,
}

impl CorrelationTerm {
    /// Assembles the term from joint-space lowering operators, checking that
    /// each lowers N2 by one and that the sum conserves N.
    pub fn from_lowering(basis: &FockBasis, channels: Vec<(usize, CMatrix)>) -> Result<Self> {
        let n2 = number_op(basis, NumberScope::Region(Region::Two));
        let n = number_op(basis, NumberScope::Total);
        let dim = basis.dim();
        let mut operator = CMatrix::zeros(dim, dim);
        for (channel, (h, d)) in channels.iter().enumerate() {
            if d.nrows() != dim || d.ncols() != dim {
                return Err(DemixError::DimensionMismatch(format!(
                    "channel {channel} is {}x{}, basis has dim {dim}",
                    d.nrows(),
                    d.ncols()
                )));
            }
            let defect = max_abs(&(&n2 * d - d * &n2 + d));
            if defect > STRUCTURE_TOL {
                return Err(DemixError::NotLowering { channel, defect });
            }
            operator += creator(basis, Region::One, *h)? * d;
        }
        let defect = max_abs(&(&operator * &n - &n * &operator));
        if defect > STRUCTURE_TOL {
            return Err(DemixError::NotConserving(defect));
        }
        Ok(Self { channels, operator })
    }

    /// Largest entry of the operator connecting sectors other than
    /// `(N1, N2) -> (N1 + 1, N2 - 1)`.
    pub fn sector_defect(&self, basis: &FockBasis) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..basis.dim() {
            let (a, b) = basis.sector(j);
            for i in 0..basis.dim() {
                let v = self.operator[(i, j)].norm();
                if v == 0.0 {
                    continue;
                }
                if b == 0 || basis.sector(i) != (a + 1, b - 1) {
                    worst = worst.max(v);
                }
            }
        }
        worst
    }
}

/// `D_h = sum_n d[h, n] a_n(2)` on the joint basis, one channel per row of `d`.
pub fn build_transfer_term(basis: &FockBasis, d: &CMatrix) -> Result<CorrelationTerm> {
    let m1 = basis.mode_count(Region::One);
    let m2 = basis.mode_count(Region::Two);
    if d.nrows() != m1 || d.ncols() != m2 {
        return Err(DemixError::DimensionMismatch(format!(
            "amplitudes are {}x{}, expected {m1}x{m2}",
            d.nrows(),
            d.ncols()
        )));
    }
    if d.iter().all(|z| z.norm() == 0.0) {
        return Err(DemixError::ZeroAmplitudes);
    }
    let lowering: Vec<CMatrix> = (0..m2)
        .map(|n| annihilator(basis, Region::Two, n))
        .collect::<std::result::Result<_, _>>()?;
    let mut channels = Vec::new();
    for h in 0..m1 {
        if d.row(h).iter().all(|z| z.norm() == 0.0) {
            continue;
        }
        let mut dh = CMatrix::zeros(basis.dim(), basis.dim());
        for (n, a) in lowering.iter().enumerate() {
            if d[(h, n)].norm() != 0.0 {
                dh += a * d[(h, n)];
            }
        }
        channels.push((h, dh));
    }
    CorrelationTerm::from_lowering(basis, channels)
}

fn commutator_defect(a: &CMatrix, b: &CMatrix) -> f64 {
    max_abs(&(a * b - b * a))
}

/// Rejects a region-local observable that does not commute with its
/// region's number operator.
pub fn check_local_admissible(basis: &FockBasis, label: &str, op: &CMatrix, region: Region) -> Result<()> {
    let rb = basis.region_basis(region);
    if op.nrows() != rb.dim() {
        return Err(DemixError::DimensionMismatch(format!(
            "`{label}` has dim {}, region has dim {}",
            op.nrows(),
            rb.dim()
        )));
    }
    let defect = commutator_defect(op, &number_op(&rb, NumberScope::Total));
    if defect > ADMISSIBILITY_TOL {
        return Err(DemixError::Inadmissible {
            label: label.to_string(),
            commutator: if region == Region::One { "[A1, N1]" } else { "[A2, N2]" },
            defect,
        });
    }
    Ok(())
}

/// Rejects a joint observable that does not commute with both N1 and N2.
pub fn check_admissible(basis: &FockBasis, label: &str, op: &CMatrix) -> Result<()> {
    for (region, name) in [(Region::One, "[O, N1]"), (Region::Two, "[O, N2]")] {
        let defect = commutator_defect(op, &number_op(basis, NumberScope::Region(region)));
        if defect > ADMISSIBILITY_TOL {
            return Err(DemixError::Inadmissible {
                label: label.to_string(),
                commutator: name,
                defect,
            });
        }
    }
    Ok(())
}

/// `|Tr[(A1 (x) A2) C rho1 (x) rho2]|` without admissibility checks.
pub fn cross_term_unguarded(
    basis: &FockBasis,
    a1: &CMatrix,
    a2: &CMatrix,
    term: &CorrelationTerm,
    rho1: &CMatrix,
    rho2: &CMatrix,
) -> Result<f64> {
    let obs = basis.embed_product(a1, a2)?;
    let r = basis.embed_product(rho1, rho2)?;
    Ok(trace_product(&obs, &(&term.operator * r)).norm())
}

pub fn cross_term_residual(
    basis: &FockBasis,
    a1: &CMatrix,
    a2: &CMatrix,
    term: &CorrelationTerm,
    rho1: &CMatrix,
    rho2: &CMatrix,
) -> Result<f64> {
    check_local_admissible(basis, "A1", a1, Region::One)?;
    check_local_admissible(basis, "A2", a2, Region::Two)?;
    cross_term_unguarded(basis, a1, a2, term, rho1, rho2)
}

/// `lambda A + (1 - lambda) B` with `A` the product state and `B` the
/// normalised microsystem branch.
#[derive(Debug, Clone)]
pub struct MixtureDecomposition {
    pub lambda: f64,
    pub component_a: CMatrix,
    pub component_b: CMatrix,
    /// `Tr[C R C^dagger] / Tr R`.
    pub branch_weight: f64,
}

impl MixtureDecomposition {
    pub fn state(&self) -> CMatrix {
        &self.component_a * c(self.lambda) + &self.component_b * c(1.0 - self.lambda)
    }
}

pub fn mixture_decompose(
    basis: &FockBasis,
    rho1: &CMatrix,
    rho2: &CMatrix,
    term: &CorrelationTerm,
) -> Result<MixtureDecomposition> {
    let r = basis.embed_product(rho1, rho2)?;
    let tr_r = trace(&r).re;
    let branch = &term.operator * &r * term.operator.adjoint();
    let tr_b = trace(&branch).re;
    if !(tr_b > f64::MIN_POSITIVE * tr_r.max(1.0)) {
        return Err(DemixError::ZeroBranch);
    }
    let weight = tr_b / tr_r;
    Ok(MixtureDecomposition {
        lambda: 1.0 / (1.0 + weight),
        component_a: crate::kernel::hermitize(&(r / c(tr_r))),
        component_b: crate::kernel::hermitize(&(branch / c(tr_b))),
        branch_weight: weight,
    })
}

/// The correlated state `(1 + C) R (1 + C^dagger) / Tr` for a transfer term.
pub fn correlated_state(basis: &FockBasis, rho1: &CMatrix, rho2: &CMatrix, term: &CorrelationTerm) -> Result<CMatrix> {
    Ok(expanded_state(basis, rho1, rho2, &term.operator)?)
}

/// Product-dynamics propagator `exp(-i (H1 + H2) t / hbar)`.
pub fn product_propagator(h1: &CMatrix, h2: &CMatrix, t: f64, hbar: f64) -> Result<CMatrix> {
    let defect = commutator_defect(h1, h2);
    if defect > ADMISSIBILITY_TOL {
        return Err(DemixError::NonCommutingHamiltonians(defect));
    }
    Ok(unitary_propagator(&(h1 + h2), t, hbar)?)
}

pub fn evolve_product(rho: &CMatrix, h1: &CMatrix, h2: &CMatrix, t: f64, hbar: f64) -> Result<CMatrix> {
    let u = product_propagator(h1, h2, t, hbar)?;
    Ok(&u * rho * u.adjoint())
}

#[derive(Debug, Clone)]
pub struct NamedOperator {
    pub label: String,
    pub operator: CMatrix,
}

impl NamedOperator {
    pub fn new(label: impl Into<String>, operator: CMatrix) -> Self {
        Self {
            label: label.into(),
            operator,
        }
    }
}

/// Generated admissible observables: region-local ones (kept in local form
/// for pairing) and their joint embeddings plus genuinely joint ones.
#[derive(Debug, Clone, Default)]
pub struct ObservableFamily {
    pub region1: Vec<NamedOperator>,
    pub region2: Vec<NamedOperator>,
    pub joint: Vec<NamedOperator>,
}

impl ObservableFamily {
    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct FamilySpec {
    /// One-body kernels to second-quantise, per region.
    pub kernels: Vec<(String, Region, CMatrix)>,
    /// Random N_r-conserving Hermitians per region.
    pub random_local: usize,
    /// Random Hermitians block-diagonal in (N1, N2).
    pub random_joint: usize,
    pub seed: u64,
}

fn project_blocks(m: &CMatrix, label: impl Fn(usize) -> (usize, usize)) -> CMatrix {
    CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if label(i) == label(j) {
            m[(i, j)]
        } else {
            c(0.0)
        }
    })
}

pub fn admissible_family(basis: &FockBasis, spec: &FamilySpec) -> Result<ObservableFamily> {
    let mut family = ObservableFamily::default();
    let bases = [basis.region_basis(Region::One), basis.region_basis(Region::Two)];
    for (r, region) in [Region::One, Region::Two].into_iter().enumerate() {
        let rb = &bases[r];
        let list = if region == Region::One {
            &mut family.region1
        } else {
            &mut family.region2
        };
        list.push(NamedOperator::new(
            format!("N{}", r + 1),
            number_op(rb, NumberScope::Total),
        ));
        for (label, kr, k) in &spec.kernels {
            if *kr == region {
                list.push(NamedOperator::new(
                    label.clone(),
                    crate::fock::one_body(rb, k, Region::One)?,
                ));
            }
        }
    }
    let mut rand = rng(spec.seed);
    for k in 0..spec.random_local {
        let r = k % 2;
        let rb = &bases[r];
        let x = random_hermitian(&mut rand, rb.dim(), 1.0);
        let op = project_blocks(&x, |i| (rb.sector(i).0, 0));
        let list = if r == 0 {
            &mut family.region1
        } else {
            &mut family.region2
        };
        list.push(NamedOperator::new(format!("random{}_{}", r + 1, k / 2), op));
    }
    for o in &family.region1 {
        family.joint.push(NamedOperator::new(
            o.label.clone(),
            basis.embed_local(&o.operator, Region::One)?,
        ));
    }
    for o in &family.region2 {
        family.joint.push(NamedOperator::new(
            o.label.clone(),
            basis.embed_local(&o.operator, Region::Two)?,
        ));
    }
    for k in 0..spec.random_joint {
        let x = random_hermitian(&mut rand, basis.dim(), 1.0);
        family.joint.push(NamedOperator::new(
            format!("joint_{k}"),
            project_blocks(&x, |i| basis.sector(i)),
        ));
    }
    for o in &family.joint {
        check_admissible(basis, &o.label, &o.operator)?;
    }
    Ok(family)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub max_deviation: f64,
    /// Max deviation at each requested time.
    pub per_time: Vec<f64>,
}

/// Evolves the full state and both mixture components under the product
/// dynamics and compares every observable's expectation.
#[allow(clippy::too_many_arguments)]
pub fn equivalence_test(
    basis: &FockBasis,
    rho_full: &CMatrix,
    mix: &MixtureDecomposition,
    observables: &[NamedOperator],
    h1: &CMatrix,
    h2: &CMatrix,
    times: &[f64],
    hbar: f64,
) -> Result<EquivalenceReport> {
    for o in observables {
        check_admissible(basis, &o.label, &o.operator)?;
    }
    let mut per_time = Vec::with_capacity(times.len());
    for &t in times {
        let u = product_propagator(h1, h2, t, hbar)?;
        let evolve = |m: &CMatrix| &u * m * u.adjoint();
        let full = evolve(rho_full);
        let a = evolve(&mix.component_a);
        let b = evolve(&mix.component_b);
        let mut worst = 0.0_f64;
        for o in observables {
            let lhs = trace_product(&o.operator, &full);
            let rhs = trace_product(&o.operator, &a) * mix.lambda + trace_product(&o.operator, &b) * (1.0 - mix.lambda);
            worst = worst.max((lhs - rhs).norm());
        }
        per_time.push(worst);
    }
    Ok(EquivalenceReport {
        max_deviation: per_time.iter().copied().fold(0.0, f64::max),
        per_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_basis, one_body, BasisSpec, Statistics};
    use crate::kernel::{diag_real, hermitian_eig, identity};
    use crate::prep::GibbsState;
    use crate::random::random_complex;
    use approx::assert_abs_diff_eq;

    fn region_gibbs(basis: &FockBasis, region: Region, energies: &[f64], beta: f64) -> CMatrix {
        let rb = basis.region_basis(region);
        let h = one_body(&rb, &diag_real(energies), Region::One).unwrap();
        GibbsState::from_exponent(&(h * c(beta))).unwrap().rho
    }

    fn setup(stat: Statistics) -> (FockBasis, CMatrix, CMatrix, CorrelationTerm) {
        let b = FockBasis::new(BasisSpec::product(3, 3, stat, 1, 2)).unwrap();
        let rho1 = region_gibbs(&b, Region::One, &[0.5, 1.0, 1.7], 1.2);
        let rho2 = region_gibbs(&b, Region::Two, &[0.3, 0.8, 1.1], 0.7);
        let d = random_complex(&mut rng(3), 3) * c(0.4);
        let term = build_transfer_term(&b, &d).unwrap();
        (b, rho1, rho2, term)
    }

    #[test]
    fn single_channel_is_a_hop() {
        let b = build_basis(2, 2, Statistics::Fermion, 3, None).unwrap();
        let mut d = CMatrix::zeros(2, 2);
        d[(0, 0)] = c(1.0);
        let term = build_transfer_term(&b, &d).unwrap();
        let hop = creator(&b, Region::One, 0).unwrap() * annihilator(&b, Region::Two, 0).unwrap();
        assert_eq!(term.operator, hop);
        assert!(matches!(
            build_transfer_term(&b, &CMatrix::zeros(2, 2)),
            Err(DemixError::ZeroAmplitudes)
        ));
    }

    #[test]
    fn transfer_term_shifts_one_particle() {
        for stat in [Statistics::Boson, Statistics::Fermion] {
            let b = build_basis(3, 3, stat, 3, None).unwrap();
            let d = random_complex(&mut rng(5), 3);
            let term = build_transfer_term(&b, &d).unwrap();
            assert_eq!(term.sector_defect(&b), 0.0);
            let n = number_op(&b, NumberScope::Total);
            assert!(max_abs(&(&term.operator * &n - &n * &term.operator)) < 1e-12);
        }
    }

    #[test]
    fn raising_channel_is_rejected() {
        let b = build_basis(2, 2, Statistics::Boson, 2, None).unwrap();
        let raise = creator(&b, Region::Two, 0).unwrap();
        assert!(matches!(
            CorrelationTerm::from_lowering(&b, vec![(0, raise)]),
            Err(DemixError::NotLowering { channel: 0, .. })
        ));
    }

    #[test]
    fn cross_terms_vanish_for_admissible_pairs() {
        for stat in [Statistics::Boson, Statistics::Fermion] {
            let (b, rho1, rho2, term) = setup(stat);
            let r1 = b.region_basis(Region::One);
            let r2 = b.region_basis(Region::Two);
            let n1 = number_op(&r1, NumberScope::Total);
            let h2 = one_body(&r2, &diag_real(&[0.3, 0.8, 1.1]), Region::One).unwrap();
            let id1 = identity(r1.dim());
            let id2 = identity(r2.dim());
            assert!(cross_term_residual(&b, &n1, &id2, &term, &rho1, &rho2).unwrap() < 1e-12);
            assert!(cross_term_residual(&b, &id1, &h2, &term, &rho1, &rho2).unwrap() < 1e-12);

            let a = annihilator(&r1, Region::One, 0).unwrap();
            let x = &a + a.adjoint();
            match cross_term_residual(&b, &x, &id2, &term, &rho1, &rho2) {
                Err(DemixError::Inadmissible { commutator, .. }) => assert_eq!(commutator, "[A1, N1]"),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn inadmissible_cross_term_is_nonzero() {
        // needs a state with coherence between N2 sectors to be visible
        let b = FockBasis::new(BasisSpec::product(1, 1, Statistics::Boson, 1, 1)).unwrap();
        let mut d = CMatrix::zeros(1, 1);
        d[(0, 0)] = c(1.0);
        let term = build_transfer_term(&b, &d).unwrap();
        let rho1 = diag_real(&[0.6, 0.4]);
        let rho2 = diag_real(&[0.3, 0.7]);
        let a1 = creator(&b.region_basis(Region::One), Region::One, 0).unwrap();
        let a1 = &a1 + a1.adjoint();
        let a2 = annihilator(&b.region_basis(Region::Two), Region::One, 0).unwrap();
        let a2 = &a2 + a2.adjoint();
        let v = cross_term_unguarded(&b, &a1, &a2, &term, &rho1, &rho2).unwrap();
        assert!(v > 0.1, "{v}");
    }

    #[test]
    fn mixture_limits() {
        let b = FockBasis::new(BasisSpec::product(1, 1, Statistics::Boson, 1, 1)).unwrap();
        let vac1 = diag_real(&[1.0, 0.0]);
        let one2 = diag_real(&[0.0, 1.0]);
        let mut d = CMatrix::zeros(1, 1);
        d[(0, 0)] = c(1.0);
        let term = build_transfer_term(&b, &d).unwrap();
        let mix = mixture_decompose(&b, &vac1, &one2, &term).unwrap();
        assert_abs_diff_eq!(mix.branch_weight, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mix.lambda, 0.5, epsilon = 1e-15);
        let target = b.index_of(&[1, 0]).unwrap();
        assert_abs_diff_eq!(mix.component_b[(target, target)].re, 1.0, epsilon = 1e-15);

        let (b, rho1, rho2, term) = setup(Statistics::Boson);
        let small = CorrelationTerm {
            channels: vec![],
            operator: &term.operator * c(1e-6),
        };
        let mix = mixture_decompose(&b, &rho1, &rho2, &small).unwrap();
        assert!(1.0 - mix.lambda < 1e-10);
        let empty = CorrelationTerm {
            channels: vec![],
            operator: CMatrix::zeros(b.dim(), b.dim()),
        };
        assert!(matches!(
            mixture_decompose(&b, &rho1, &rho2, &empty),
            Err(DemixError::ZeroBranch)
        ));
    }

    #[test]
    fn mixture_components_are_states() {
        for stat in [Statistics::Boson, Statistics::Fermion] {
            let (b, rho1, rho2, term) = setup(stat);
            let mix = mixture_decompose(&b, &rho1, &rho2, &term).unwrap();
            for m in [&mix.component_a, &mix.component_b] {
                assert_abs_diff_eq!(trace(m).re, 1.0, epsilon = 1e-12);
                assert!(hermitian_eig(m).unwrap().min_eigenvalue() > -1e-12);
            }
        }
    }

    fn family(b: &FockBasis) -> ObservableFamily {
        let cell = diag_real(&[1.0, 0.0, 0.0]);
        admissible_family(
            b,
            &FamilySpec {
                kernels: vec![
                    ("H1".into(), Region::One, diag_real(&[0.5, 1.0, 1.7])),
                    ("H2".into(), Region::Two, diag_real(&[0.3, 0.8, 1.1])),
                    ("cell1".into(), Region::One, cell.clone()),
                    ("cell2".into(), Region::Two, cell),
                ],
                random_local: 4,
                random_joint: 3,
                seed: 7,
            },
        )
        .unwrap()
    }

    #[test]
    fn mixture_equivalence_over_time() {
        for stat in [Statistics::Boson, Statistics::Fermion] {
            for b in [
                FockBasis::new(BasisSpec::product(3, 3, stat, 1, 2)).unwrap(),
                build_basis(3, 3, stat, 3, None).unwrap(),
            ] {
                let rho1 = region_gibbs(&b, Region::One, &[0.5, 1.0, 1.7], 1.2);
                let rho2 = region_gibbs(&b, Region::Two, &[0.3, 0.8, 1.1], 0.7);
                let term = build_transfer_term(&b, &(random_complex(&mut rng(3), 3) * c(0.4))).unwrap();
                let fam = family(&b);
                assert_eq!(fam.len(), 13);
                let full = correlated_state(&b, &rho1, &rho2, &term).unwrap();
                let mix = mixture_decompose(&b, &rho1, &rho2, &term).unwrap();
                let h1 = one_body(&b, &diag_real(&[0.5, 1.0, 1.7]), Region::One).unwrap();
                let h2 = one_body(&b, &diag_real(&[0.3, 0.8, 1.1]), Region::Two).unwrap();
                let report = equivalence_test(&b, &full, &mix, &fam.joint, &h1, &h2, &[0.0, 1.0, 10.0], 1.0).unwrap();
                assert!(report.max_deviation < 1e-10, "{stat:?} {report:?}");
                assert_eq!(
                    equivalence_test(&b, &full, &mix, &[], &h1, &h2, &[1.0], 1.0)
                        .unwrap()
                        .max_deviation,
                    0.0
                );
            }
        }
    }

    #[test]
    fn equivalence_rejects_inadmissible() {
        let (b, rho1, rho2, term) = setup(Statistics::Boson);
        let full = correlated_state(&b, &rho1, &rho2, &term).unwrap();
        let mix = mixture_decompose(&b, &rho1, &rho2, &term).unwrap();
        let h = one_body(&b, &diag_real(&[0.5, 1.0, 1.7]), Region::One).unwrap();
        let bad = NamedOperator::new("hop", term.operator.clone() + term.operator.adjoint());
        assert!(matches!(
            equivalence_test(&b, &full, &mix, &[bad], &h, &h, &[0.0], 1.0),
            Err(DemixError::Inadmissible { .. })
        ));
    }

    #[test]
    fn product_evolution_properties() {
        let (b, rho1, rho2, term) = setup(Statistics::Fermion);
        let h1 = one_body(&b, &diag_real(&[0.5, 1.0, 1.7]), Region::One).unwrap();
        let h2 = one_body(&b, &diag_real(&[0.3, 0.8, 1.1]), Region::Two).unwrap();
        let full = correlated_state(&b, &rho1, &rho2, &term).unwrap();
        assert!(max_abs(&(evolve_product(&full, &h1, &h2, 0.0, 1.0).unwrap() - &full)) < 1e-15);
        let gibbs = GibbsState::from_exponent(&(&h1 + &h2)).unwrap().rho;
        let purity = |m: &CMatrix| trace(&(m * m)).re;
        let mut r = rng(41);
        for _ in 0..5 {
            let t = rand::Rng::random_range(&mut r, 0.0..20.0);
            assert!(max_abs(&(evolve_product(&gibbs, &h1, &h2, t, 1.0).unwrap() - &gibbs)) < 1e-10);
            let ev = evolve_product(&full, &h1, &h2, t, 1.0).unwrap();
            assert_abs_diff_eq!(purity(&ev), purity(&full), epsilon = 1e-12);
            assert_abs_diff_eq!(trace(&ev).re, 1.0, epsilon = 1e-12);
        }
        let hop = &term.operator + term.operator.adjoint();
        assert!(matches!(
            evolve_product(&full, &h1, &hop, 1.0, 1.0),
            Err(DemixError::NonCommutingHamiltonians(_))
        ));
    }
}
