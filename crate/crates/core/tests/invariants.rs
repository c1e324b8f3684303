//! Property tests for the structural invariants of the main types.

use demix::demix::{build_transfer_term, mixture_decompose};
use demix::fock::{
    build_basis, ladder, number_op, one_body, BasisSpec, Direction, FockBasis, NumberScope, Region, Statistics,
};
use demix::kernel::{
    c, commutator, diag_real, hermitian_defect, hermitian_eig, hermitize, identity, max_abs, trace, CMatrix,
};
use demix::micro::{effective_w, transferred_observable, LocalTransfer};
use demix::modes::{box_eigenmodes, partition_kernels, BoxSpec, KernelKind};
use demix::prep::{split_exponent, GibbsState};
use demix::random::{random_complex, random_hermitian, rng};
use proptest::prelude::*;
use std::collections::HashSet;

fn statistics() -> impl Strategy<Value = Statistics> {
    prop_oneof![Just(Statistics::Boson), Just(Statistics::Fermion)]
}

fn sector_blocks(basis: &FockBasis, m: &CMatrix) -> CMatrix {
    CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if basis.sector(i) == basis.sector(j) {
            m[(i, j)]
        } else {
            c(0.0)
        }
    })
}

fn region_gibbs(basis: &FockBasis, region: Region, seed: u64) -> CMatrix {
    let rb = basis.region_basis(region);
    let m = rb.mode_count(Region::One);
    let k = random_hermitian(&mut rng(seed), m, 1.0) + identity(m) * c(1.0);
    GibbsState::from_exponent(&one_body(&rb, &k, Region::One).unwrap())
        .unwrap()
        .rho
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn basis_respects_caps_and_groups_sectors(
        m1 in 1usize..4, m2 in 0usize..4, stat in statistics(), n_total in 0usize..5, n_max in 1usize..4,
    ) {
        let b = build_basis(m1, m2, stat, n_total, Some(n_max)).unwrap();
        let cap = if stat == Statistics::Fermion { 1 } else { n_max };
        let mut seen = HashSet::new();
        for (i, s) in b.states().iter().enumerate() {
            prop_assert!(s.iter().all(|&n| n as usize <= cap));
            prop_assert!(s.iter().map(|&n| n as usize).sum::<usize>() <= n_total);
            prop_assert_eq!(b.index_of(s), Some(i));
            prop_assert!(seen.insert(s.clone()));
        }
        // each sector label occupies one contiguous run
        let mut runs = HashSet::new();
        for i in 0..b.dim() {
            if i == 0 || b.sector(i) != b.sector(i - 1) {
                prop_assert!(runs.insert(b.sector(i)), "sector {:?} split", b.sector(i));
            }
        }
    }

    #[test]
    fn ladder_pairs_are_adjoint_and_shift_one_sector(
        m1 in 1usize..3, m2 in 1usize..3, stat in statistics(), n_total in 1usize..4, mode in 0usize..2, second in any::<bool>(),
    ) {
        let b = build_basis(m1, m2, stat, n_total, None).unwrap();
        let region = if second { Region::Two } else { Region::One };
        prop_assume!(mode < b.mode_count(region));
        let a = ladder(&b, region, mode, Direction::Annihilate).unwrap();
        let ad = ladder(&b, region, mode, Direction::Create).unwrap();
        prop_assert_eq!(&ad.matrix, &a.matrix.adjoint());
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                if a.matrix[(i, j)].norm() != 0.0 {
                    let (from, to) = (b.sector(j), b.sector(i));
                    let expected = if second { (from.0, from.1 - 1) } else { (from.0 - 1, from.1) };
                    prop_assert_eq!(to, expected);
                }
            }
        }
    }

    #[test]
    fn modes_are_orthonormal_with_dirichlet_walls(length in 0.5f64..5.0, count in 1usize..6, mass in 0.5f64..2.0) {
        let modes = box_eigenmodes(&BoxSpec::new(length, mass, 1.0, count), 1024).unwrap();
        prop_assert!(modes.orthonormality_defect() < 1e-6);
        prop_assert!(modes.energies.windows(2).all(|w| w[0] < w[1]));
        for u in &modes.samples {
            prop_assert!(u[0].abs() < 1e-12 && u[u.len() - 1].abs() < 1e-12);
        }
    }

    #[test]
    fn density_cells_partition_the_identity(count in 1usize..5, cells in 1usize..6) {
        let modes = box_eigenmodes(&BoxSpec::new(2.0, 1.0, 1.0, count), 1024).unwrap();
        let mut sum = CMatrix::zeros(count, count);
        for kind in [KernelKind::Density, KernelKind::Energy, KernelKind::Current] {
            for k in partition_kernels(&modes, cells, kind).unwrap() {
                prop_assert!(hermitian_defect(&k.matrix) < 1e-12);
                if kind == KernelKind::Density {
                    sum += k.matrix;
                }
            }
        }
        prop_assert!(max_abs(&(sum - identity(count))) < 1e-6);
    }

    #[test]
    fn split_reconstructs_and_leaves_no_local_part(stat in statistics(), seed in any::<u64>()) {
        let b = FockBasis::new(BasisSpec::product(2, 2, stat, 2, 2)).unwrap();
        let x = random_hermitian(&mut rng(seed), b.dim(), 1.0);
        let s = sector_blocks(&b, &x);
        let split = split_exponent(&s, &b).unwrap();
        prop_assert!(split.reconstruction_residual(&s) < 1e-12);
        prop_assert!(hermitian_defect(&split.s1) < 1e-12 && hermitian_defect(&split.s2) < 1e-12);
        prop_assert!(max_abs(&b.reduce(&split.c12, Region::One).unwrap()) < 1e-12);
        prop_assert!(max_abs(&b.reduce(&split.c12, Region::Two).unwrap()) < 1e-12);
    }

    #[test]
    fn transfer_term_lowers_region_two_and_conserves_number(stat in statistics(), seed in any::<u64>()) {
        let b = build_basis(2, 3, stat, 3, None).unwrap();
        let term = build_transfer_term(&b, &random_complex(&mut rng(seed), 3).rows(0, 2).into_owned()).unwrap();
        let n2 = number_op(&b, NumberScope::Region(Region::Two));
        let one = identity(b.dim());
        for (_, d) in &term.channels {
            prop_assert!(max_abs(&(&n2 * d - d * (&n2 - &one))) < 1e-12);
        }
        prop_assert!(max_abs(&commutator(&term.operator, &number_op(&b, NumberScope::Total))) < 1e-12);
    }

    #[test]
    fn mixture_components_and_one_particle_state_are_states(stat in statistics(), seed in 0u64..1000) {
        let b = FockBasis::new(BasisSpec::product(2, 2, stat, 1, 2)).unwrap();
        let rho1 = region_gibbs(&b, Region::One, seed);
        let rho2 = region_gibbs(&b, Region::Two, seed + 1);
        let d = random_complex(&mut rng(seed + 2), 2);
        let term = build_transfer_term(&b, &d).unwrap();
        let mix = mixture_decompose(&b, &rho1, &rho2, &term).unwrap();
        prop_assert!(mix.lambda > 0.0 && mix.lambda <= 1.0);
        for m in [&mix.component_a, &mix.component_b] {
            prop_assert!((trace(m).re - 1.0).abs() < 1e-12);
            prop_assert!(hermitian_eig(m).unwrap().min_eigenvalue() >= -1e-12);
        }
        let w = effective_w(&LocalTransfer::from_amplitudes(&b.region_basis(Region::Two), &d).unwrap(), &rho2).unwrap();
        prop_assert!(hermitian_defect(&w.w) < 1e-12);
        prop_assert!((trace(&w.w).re - 1.0).abs() < 1e-12);
        prop_assert!(hermitian_eig(&w.w).unwrap().min_eigenvalue() >= -1e-12);
    }

    #[test]
    fn transferred_observables_stay_hermitian(stat in statistics(), seed in any::<u64>(), t in 0.0f64..20.0) {
        let b1 = build_basis(3, 0, stat, 2, None).unwrap();
        let mut r = rng(seed);
        let a = hermitize(&sector_blocks(&b1, &random_hermitian(&mut r, b1.dim(), 1.0)));
        let h1 = one_body(&b1, &diag_real(&[0.5, 1.0, 1.7]), Region::One).unwrap();
        let rho1 = region_gibbs(&b1, Region::One, seed);
        let out = transferred_observable(&b1, &a, &rho1, &h1, t, 1.0).unwrap();
        prop_assert!(hermitian_defect(&out.matrix) < 1e-10);
    }
}
