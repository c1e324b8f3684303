//! modes -> Fock space -> region states -> correlation -> demixing ->
//! microsystem -> dynamics.

use super::scenario::{scenario_hash, CorrelationConfig, LindbladKind, RegionConfig, RegionState, Scenario};
use super::HarnessError;
use crate::demix::{
    admissible_family, build_transfer_term, correlated_state, cross_term_residual, equivalence_test, mixture_decompose,
    FamilySpec,
};
use crate::fock::{
    annihilator, commutation_defect, max_dim_from_env, number_op, one_body, pad_operator, FockBasis, NumberScope,
    Region,
};
use crate::kernel::{
    c, diag_real, duhamel_factors, frobenius, hermitian_eig, hermitian_exp, hermitize, identity, max_abs, trace,
    unitary_propagator, CMatrix, CVector, QuadratureRule,
};
use crate::micro::{
    choi_min_eigenvalue, depletion, diagonalize_w, dressed_observable, effective_w, free_evolve_energies,
    free_evolve_state, heisenberg_equivalence, lindblad_evolve, reduced_expectation, sigma, sigma_spectral,
    transferred_observable, BranchEvolution, LindbladModel, LocalTransfer,
};
use crate::modes::{box_eigenmodes, partition_kernels, BoxSpec, KernelKind, ModeSet};
use crate::prep::{
    curly_c_from_exponent, expanded_state, fit_state_parameters, prepared_exponent, split_exponent,
    transfer_amplitudes, ChannelKind, FitOptions, GibbsState, PrepChannel, PreparationSpec, RelevantVariable,
    RelevantVariableSet, StateParams,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Display;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Recompute reduced quantities by full-space traces.
    pub oracle: bool,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    pub max_dim: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            oracle: false,
            seed: None,
            max_dim: max_dim_from_env(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Depends on seeded random observables.
    pub randomized: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Series {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultManifest {
    pub scenario_hash: String,
    pub version: String,
    pub seed: u64,
    pub oracle: bool,
    pub scenario: Scenario,
    pub dimensions: BTreeMap<String, usize>,
    pub results: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub checks: Vec<CheckRecord>,
    pub series: BTreeMap<String, Series>,
}

impl ResultManifest {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, HarnessError>;
}

impl<T, E: Display> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError::Stage {
            stage,
            message: e.to_string(),
        })
    }
}

struct Recorder<'a> {
    scenario: &'a Scenario,
    checks: Vec<CheckRecord>,
}

impl Recorder<'_> {
    fn record(&mut self, name: &str, value: f64, randomized: bool) {
        let tolerance = self.scenario.tolerance(name);
        self.checks.push(CheckRecord {
            name: name.to_string(),
            value,
            tolerance,
            pass: value <= tolerance,
            randomized,
        });
    }
}

fn region_modes(s: &Scenario, r: &RegionConfig) -> Result<ModeSet, HarnessError> {
    let spec = BoxSpec {
        potential: r.potential.clone(),
        ..BoxSpec::new(r.length, s.mass, s.hbar, r.modes)
    };
    box_eigenmodes(&spec, s.grid_points).stage("modes")
}

struct PreparedRegion {
    rho: CMatrix,
    /// Gibbs parameters in `(H, N)`, absent for the vacuum.
    zeta: Option<[f64; 2]>,
    fit_residual: Option<f64>,
}

/// Region state on its region basis.
fn region_state(
    rb: &FockBasis,
    h: &CMatrix,
    state: &RegionState,
    name: &str,
    results: &mut BTreeMap<String, f64>,
) -> Result<PreparedRegion, HarnessError> {
    let n = number_op(rb, NumberScope::Total);
    match *state {
        RegionState::Vacuum => {
            let mut rho = CMatrix::zeros(rb.dim(), rb.dim());
            let vac = rb
                .index_of(&vec![0; rb.mode_count(Region::One)])
                .expect("vacuum is in every basis");
            rho[(vac, vac)] = c(1.0);
            Ok(PreparedRegion {
                rho,
                zeta: None,
                fit_residual: None,
            })
        }
        RegionState::Thermal { beta, mu } => {
            let s = (h - &n * c(mu)) * c(beta);
            let rho = GibbsState::from_exponent(&s).stage("state")?.rho;
            Ok(PreparedRegion {
                rho,
                zeta: Some([beta, -beta * mu]),
                fit_residual: None,
            })
        }
        RegionState::Fitted { energy, number } => {
            let vars = RelevantVariableSet::new(
                vec![
                    RelevantVariable::new("H", h.clone()),
                    RelevantVariable::new("N", n.clone()),
                ],
                &n,
            )
            .stage("state")?;
            let report = fit_state_parameters(
                &vars,
                &[energy, number],
                &StateParams::new(vec![1.0, 0.0]),
                FitOptions::default(),
            )
            .stage("state")?;
            let rho = crate::prep::gibbs_state(&vars, &report.params).stage("state")?;
            results.insert(format!("{name}.fit_iterations"), report.iterations as f64);
            let z = &report.params.zeta;
            Ok(PreparedRegion {
                rho,
                zeta: Some([z[0], z[1]]),
                fit_residual: Some(report.residual),
            })
        }
    }
}

/// Hopping kernel `t_hn` between region-1 and region-2 modes.
fn hopping_kernel(modes: Option<[usize; 2]>, m1: &ModeSet, m2: &ModeSet) -> CMatrix {
    let (k1, k2) = (m1.energies.len(), m2.energies.len());
    match modes {
        Some([h, n]) => CMatrix::from_fn(k1, k2, |i, j| c(if i == h && j == n { 1.0 } else { 0.0 })),
        None => {
            let out = CMatrix::from_fn(k1, k2, |i, j| {
                let right_wall = *m1.derivatives[i].last().expect("non-empty grid");
                let left_wall = m2.derivatives[j][0];
                c(right_wall * left_wall)
            });
            let scale = max_abs(&out);
            out / c(scale)
        }
    }
}

struct Prepared {
    rho1: CMatrix,
    rho2: CMatrix,
    d: CMatrix,
}

#[allow(clippy::too_many_arguments)]
fn prepare(
    s: &Scenario,
    basis: &FockBasis,
    h1: &CMatrix,
    h2: &CMatrix,
    zeta: [[f64; 2]; 2],
    hop_kernel: &CMatrix,
    rec: &mut Recorder,
    results: &mut BTreeMap<String, f64>,
) -> Result<Prepared, HarnessError> {
    let CorrelationConfig::Preparation {
        coupling,
        duration,
        steps,
        frequency,
        ..
    } = s.correlation
    else {
        unreachable!("only called for preparation scenarios")
    };
    let h1j = basis.embed_local(h1, Region::One).stage("preparation")?;
    let h2j = basis.embed_local(h2, Region::Two).stage("preparation")?;
    let n1j = number_op(basis, NumberScope::Region(Region::One));
    let n2j = number_op(basis, NumberScope::Region(Region::Two));
    let mut hop = CMatrix::zeros(basis.dim(), basis.dim());
    for i in 0..hop_kernel.nrows() {
        let a1 = annihilator(basis, Region::One, i).stage("preparation")?;
        for j in 0..hop_kernel.ncols() {
            let t = hop_kernel[(i, j)];
            if t.norm() == 0.0 {
                continue;
            }
            let a2 = annihilator(basis, Region::Two, j).stage("preparation")?;
            hop += a1.adjoint() * &a2 * t;
        }
    }
    let hop = hermitize(&(&hop + hop.adjoint()));
    let vars = RelevantVariableSet::new(
        vec![
            RelevantVariable::new("H1", h1j.clone()),
            RelevantVariable::new("N1", n1j),
            RelevantVariable::new("H2", h2j.clone()),
            RelevantVariable::new("N2", n2j),
            RelevantVariable::new("hop", hop),
        ],
        &number_op(basis, NumberScope::Total),
    )
    .stage("preparation")?;
    let t_start = -duration;
    let dt = duration / steps as f64;
    let amplitudes = (0..=steps).map(|k| (frequency * dt * k as f64).cos()).collect();
    let spec = PreparationSpec {
        t_start,
        t0: 0.0,
        steps,
        zeta_t0: vec![zeta[0][0], zeta[0][1], zeta[1][0], zeta[1][1], 0.0],
        zeta_start: vec![0.0; 5],
        channels: vec![PrepChannel {
            variable: 4,
            kind: ChannelKind::Density,
            gamma: coupling,
            amplitudes,
        }],
        hbar: s.hbar,
    };
    let exponent = prepared_exponent(&vars, &spec, &(h1j + h2j)).stage("preparation")?;
    let split = split_exponent(&exponent, basis).stage("preparation")?;
    rec.record(
        "prep.split_reconstruction",
        split.reconstruction_residual(&exponent),
        false,
    );
    let (rho1, rho2) = split.region_states().stage("preparation")?;

    let rule = QuadratureRule::default();
    let s0 = &split.s1 + &split.s2;
    let b = -&split.c12;
    let curly = curly_c_from_exponent(&s0, &b, &rule).stage("preparation")?;
    let d = transfer_amplitudes(basis, &curly).stage("preparation")?;

    // Duhamel identity on exp(-S), shifted so the largest eigenvalue is 0
    let shift = hermitian_eig(&exponent).stage("preparation")?.min_eigenvalue();
    let a = -&s0 + identity(basis.dim()) * c(shift);
    let factors = duhamel_factors(&a, &b, &rule).stage("preparation")?;
    let exact = hermitian_exp(&(&a + &b)).stage("preparation")?;
    let recombined = factors.recombine(&a).stage("preparation")?;
    rec.record(
        "prep.duhamel_identity",
        frobenius(&(recombined - &exact)) / frobenius(&exact),
        false,
    );

    let expanded = expanded_state(basis, &rho1, &rho2, &curly).stage("preparation")?;
    let min_eig = hermitian_eig(&expanded).stage("preparation")?.min_eigenvalue();
    rec.record("prep.expansion_positivity", (-min_eig).max(0.0), false);
    let exact_state = GibbsState::from_exponent(&exponent).stage("preparation")?.rho;
    results.insert("prep.expansion_error".into(), frobenius(&(exact_state - expanded)));
    results.insert("prep.c12_norm".into(), frobenius(&split.c12));
    Ok(Prepared { rho1, rho2, d })
}

fn lindblad_model(s: &Scenario, energies: &[f64]) -> Result<Option<LindbladModel>, HarnessError> {
    let l = &s.lindblad;
    let model = match l.model {
        LindbladKind::None => return Ok(None),
        LindbladKind::Dephasing => LindbladModel::dephasing(diag_real(energies), l.gamma, s.hbar),
        LindbladKind::Thermal => LindbladModel::thermal_damping(energies, l.gamma, l.beta, s.hbar),
    };
    model.map(Some).stage("lindblad")
}

fn min_eigenvalue(m: &CMatrix) -> Result<f64, HarnessError> {
    Ok(hermitian_eig(&hermitize(m)).stage("microsystem")?.min_eigenvalue())
}

pub fn run(scenario: &Scenario, options: &RunOptions) -> Result<ResultManifest, HarnessError> {
    scenario.validate_with_cap(options.max_dim)?;
    let oracle = options.oracle || scenario.oracle;
    let seed = options.seed.unwrap_or(scenario.seed);
    let hbar = scenario.hbar;
    let mut rec = Recorder {
        scenario,
        checks: Vec::new(),
    };
    let mut results = BTreeMap::new();
    let mut dimensions = BTreeMap::new();
    let mut series = BTreeMap::new();
    let mut warnings = Vec::new();

    let modes1 = region_modes(scenario, &scenario.region1)?;
    let modes2 = region_modes(scenario, &scenario.region2)?;
    let (w1, w2) = (modes1.energies.clone(), modes2.energies.clone());

    let state_basis = FockBasis::new(scenario.state_basis_spec().with_max_dim(options.max_dim)).stage("fock")?;
    let basis = FockBasis::new(scenario.dynamics_basis_spec().with_max_dim(options.max_dim)).stage("fock")?;
    let (b1s, b2s) = (
        state_basis.region_basis(Region::One),
        state_basis.region_basis(Region::Two),
    );
    let (b1, b2) = (basis.region_basis(Region::One), basis.region_basis(Region::Two));
    dimensions.insert("state".to_string(), state_basis.dim());
    dimensions.insert("dynamics".to_string(), basis.dim());
    dimensions.insert("region1".to_string(), b1.dim());
    dimensions.insert("region2".to_string(), b2.dim());
    let commutation = commutation_defect(&basis, Region::One)
        .stage("fock")?
        .max(commutation_defect(&basis, Region::Two).stage("fock")?);
    rec.record("fock.commutation", commutation, false);

    let h1s = one_body(&b1s, &diag_real(&w1), Region::One).stage("fock")?;
    let h2s = one_body(&b2s, &diag_real(&w2), Region::One).stage("fock")?;
    let PreparedRegion {
        rho: rho1s,
        zeta: zeta1,
        fit_residual: fit1,
    } = region_state(&b1s, &h1s, &scenario.region1.state, "region1", &mut results)?;
    let PreparedRegion {
        rho: rho2s,
        zeta: zeta2,
        fit_residual: fit2,
    } = region_state(&b2s, &h2s, &scenario.region2.state, "region2", &mut results)?;
    if fit1.is_some() || fit2.is_some() {
        rec.record("prep.fit_residual", fit1.unwrap_or(0.0).max(fit2.unwrap_or(0.0)), false);
    }

    let (rho1s, rho2s, d) = match &scenario.correlation {
        CorrelationConfig::Amplitudes { re, im } => {
            let d = CMatrix::from_fn(re.len(), re[0].len(), |h, n| {
                Complex64::new(re[h][n], im.get(h).map_or(0.0, |row| row[n]))
            });
            (rho1s, rho2s, d)
        }
        CorrelationConfig::Preparation { modes, .. } => {
            let zeta = [
                zeta1.expect("validated: region 1 has Gibbs parameters"),
                zeta2.expect("validated: region 2 has Gibbs parameters"),
            ];
            let kernel = hopping_kernel(*modes, &modes1, &modes2);
            let p = prepare(
                scenario,
                &state_basis,
                &h1s,
                &h2s,
                zeta,
                &kernel,
                &mut rec,
                &mut results,
            )?;
            (p.rho1, p.rho2, p.d)
        }
    };
    let rho1 = pad_operator(&rho1s, &b1s, &b1).stage("fock")?;
    let rho2 = pad_operator(&rho2s, &b2s, &b2).stage("fock")?;
    let h1 = one_body(&b1, &diag_real(&w1), Region::One).stage("fock")?;
    let h2 = one_body(&b2, &diag_real(&w2), Region::One).stage("fock")?;

    // demixing
    let term = build_transfer_term(&basis, &d).stage("demixing")?;
    rec.record("demix.sector_defect", term.sector_defect(&basis), false);
    let mut kernels = vec![
        ("H1".to_string(), Region::One, diag_real(&w1)),
        ("H2".to_string(), Region::Two, diag_real(&w2)),
    ];
    for (name, region, modes) in [("n1", Region::One, &modes1), ("n2", Region::Two, &modes2)] {
        let cells = partition_kernels(modes, scenario.observables.cells, KernelKind::Density).stage("demixing")?;
        for (k, cell) in cells.into_iter().enumerate() {
            kernels.push((format!("{name}_cell{k}"), region, cell.matrix));
        }
    }
    let family = admissible_family(
        &basis,
        &FamilySpec {
            kernels,
            random_local: scenario.observables.random_local,
            random_joint: scenario.observables.random_joint,
            seed,
        },
    )
    .stage("demixing")?;
    let randomized = scenario.observables.random_local > 0;
    let mut cross = 0.0_f64;
    for a1 in &family.region1 {
        for a2 in &family.region2 {
            let v = cross_term_residual(&basis, &a1.operator, &a2.operator, &term, &rho1, &rho2).stage("demixing")?;
            cross = cross.max(v);
        }
    }
    rec.record("demix.cross_term", cross, randomized);
    let mix = mixture_decompose(&basis, &rho1, &rho2, &term).stage("demixing")?;
    let full = correlated_state(&basis, &rho1, &rho2, &term).stage("demixing")?;
    let h1j = basis.embed_local(&h1, Region::One).stage("demixing")?;
    let h2j = basis.embed_local(&h2, Region::Two).stage("demixing")?;
    let eq = equivalence_test(
        &basis,
        &full,
        &mix,
        &family.joint,
        &h1j,
        &h2j,
        &scenario.evolution.times,
        hbar,
    )
    .stage("demixing")?;
    rec.record(
        "demix.mixture_equivalence",
        eq.max_deviation,
        randomized || scenario.observables.random_joint > 0,
    );
    results.insert("lambda".into(), mix.lambda);
    results.insert("branch_weight".into(), mix.branch_weight);

    // microsystem
    let transfer = LocalTransfer::from_amplitudes(&b2, &d).stage("microsystem")?;
    let w = effective_w(&transfer, &rho2).stage("microsystem")?;
    rec.record("micro.w_trace", (trace(&w.w).re - 1.0).abs(), false);
    let sig = sigma(&b1, &transfer, &rho1, &rho2).stage("microsystem")?;
    let sig_spec = sigma_spectral(&b1, &w, &rho1).stage("microsystem")?;
    rec.record("micro.sigma_spectral", (sig - sig_spec).abs(), false);
    if oracle {
        let num: f64 = transfer
            .lowering
            .iter()
            .flatten()
            .map(|dh| trace(&(dh.adjoint() * dh * &rho2)).re)
            .sum();
        rec.record("micro.sigma_vs_full", (sig - num / mix.branch_weight).abs(), false);
    }
    results.insert("sigma".into(), sig);
    results.insert("w_purity".into(), w.purity());
    results.insert("w_coherence".into(), w.coherence());
    results.insert("w_energy".into(), trace(&(diag_real(&w1) * &w.w)).re);

    let spectrum = diagonalize_w(&w).stage("microsystem")?;
    let psi0 = spectrum.vectors[0].clone();
    let mut spec_series = Series::new(&["index", "weight", "depletion"]);
    for (k, (lambda, v)) in spectrum.weights.iter().zip(&spectrum.vectors).enumerate() {
        spec_series
            .rows
            .push(vec![k as f64, *lambda, depletion(&b1, &rho1, v).stage("microsystem")?]);
    }
    series.insert("w_spectrum".to_string(), spec_series);
    let dep0 = depletion(&b1, &rho1, &psi0).stage("microsystem")?;
    results.insert("depletion".into(), dep0);
    if dep0 > scenario.microsystem.depletion_threshold {
        warnings.push(format!(
            "depletion {dep0:.3e} of the leading one-particle state exceeds {}",
            scenario.microsystem.depletion_threshold
        ));
    }

    let m1 = b1.mode_count(Region::One);
    let occupation_bound = (0..m1)
        .map(|k| {
            let e = CVector::from_fn(m1, |i, _| c(if i == k { 1.0 } else { 0.0 }));
            depletion(&b1, &rho1, &e)
        })
        .collect::<Result<Vec<_>, _>>()
        .stage("microsystem")?
        .into_iter()
        .fold(0.0, f64::max);
    let id = transferred_observable(&b1, &identity(b1.dim()), &rho1, &h1, 0.0, hbar).stage("microsystem")?;
    let id_dev = max_abs(&(id.matrix - identity(m1)));
    rec.record("micro.identity_transfer", (id_dev - occupation_bound).max(0.0), false);

    let mut povm = 0.0_f64;
    for &t in &scenario.evolution.times {
        for n in 0..=b1.region_cap(Region::One) {
            let p = b1.sector_projector(Region::One, n);
            let a = transferred_observable(&b1, &p, &rho1, &h1, t, hbar).stage("microsystem")?;
            povm = povm.max(-min_eigenvalue(&a.matrix)?);
        }
    }
    rec.record("micro.povm_positivity", povm.max(0.0), false);

    let mut heis = 0.0_f64;
    for &t in &scenario.evolution.times {
        heis = heis.max(heisenberg_equivalence(&b1, &psi0, &w1, &h1, t, hbar).stage("microsystem")?);
    }
    rec.record("micro.heisenberg", heis, false);

    let mut dressed = 0.0_f64;
    for a in &family.region1 {
        let dobs = dressed_observable(&b1, &a.operator, &psi0).stage("microsystem")?;
        dressed = dressed.max(dobs.decomposition_defect());
    }
    rec.record("micro.dressed_decomposition", dressed, randomized);

    let complement = identity(m1) - &psi0 * psi0.adjoint();
    let a_perp = one_body(&b1, &complement, Region::One).stage("microsystem")?;
    let dobs = dressed_observable(&b1, &a_perp, &psi0).stage("microsystem")?;
    let shift = (dobs.expectation(&rho1) - trace(&(&a_perp * &rho1)).re).abs();
    let a_norm = hermitian_eig(&a_perp)
        .stage("microsystem")?
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, x| m.max(x.abs()));
    results.insert("no_signal_shift".into(), shift);
    rec.record("micro.no_signal", (shift - dep0 * a_norm).max(0.0), false);

    let det: Vec<usize> = (0..family.region1.len())
        .filter(|&i| !family.region1[i].label.starts_with("random"))
        .collect();
    let mut columns = vec!["time".to_string()];
    for &i in &det {
        columns.push(family.region1[i].label.clone());
        if oracle {
            columns.push(format!("{}_oracle", family.region1[i].label));
        }
    }
    let mut expectations = Series {
        columns,
        rows: Vec::new(),
    };
    // region-1 members come first in the joint family
    let joint1: Vec<&CMatrix> = family.joint[..family.region1.len()]
        .iter()
        .map(|o| &o.operator)
        .collect();
    let branch = if oracle {
        Some(BranchEvolution::product(&basis, &term, &rho1, &rho2, &h1j, &h2j, hbar).stage("microsystem")?)
    } else {
        None
    };
    let mut worst_oracle = 0.0_f64;
    let mut evaluate = |t: f64| -> Result<(Vec<f64>, Vec<f64>), HarnessError> {
        let reduced = family
            .region1
            .iter()
            .map(|o| reduced_expectation(&b1, &o.operator, &rho1, &rho2, &transfer, &h1, t, hbar).map(|r| r.value))
            .collect::<Result<Vec<_>, _>>()
            .stage("microsystem")?;
        let full = branch.as_ref().map(|b| b.expectations(&joint1, t)).unwrap_or_default();
        for (r, f) in reduced.iter().zip(&full) {
            worst_oracle = worst_oracle.max((r - f).abs());
        }
        Ok((reduced, full))
    };
    let series_times = scenario.evolution.series_times();
    let mut micro_series = Series::new(&["time", "sigma", "depletion", "purity", "coherence", "survival"]);
    for &t in &series_times {
        let (reduced, full) = evaluate(t)?;
        let mut row = vec![t];
        for &i in &det {
            row.push(reduced[i]);
            if oracle {
                row.push(full[i]);
            }
        }
        expectations.rows.push(row);
        let psit = free_evolve_energies(&psi0, &w1, hbar, t).stage("microsystem")?;
        let u = unitary_propagator(&h1, t, hbar).stage("microsystem")?;
        let rho1t = &u * &rho1 * u.adjoint();
        let wt = free_evolve_state(&w, &w1, hbar, t).stage("microsystem")?;
        micro_series.rows.push(vec![
            t,
            sig,
            depletion(&b1, &rho1t, &psit).stage("microsystem")?,
            wt.purity(),
            wt.coherence(),
            psi0.dotc(&psit).norm_sqr(),
        ]);
    }
    for &t in &scenario.evolution.times {
        evaluate(t)?;
    }
    if oracle {
        rec.record("micro.reduced_vs_full", worst_oracle, randomized);
    }
    series.insert("expectations".to_string(), expectations);
    series.insert("microsystem".to_string(), micro_series);

    // dynamics
    if let Some(model) = lindblad_model(scenario, &w1)? {
        let l = &scenario.lindblad;
        let traj = lindblad_evolve(&w, &model, l.dt, l.steps, l.integrator).stage("lindblad")?;
        let mut s = Series::new(&["time", "trace", "purity", "coherence", "min_eigenvalue"]);
        let (mut drift, mut floor, mut rise, mut decay) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        let mut last_purity = f64::INFINITY;
        for (k, wk) in traj.iter().enumerate() {
            let t = l.dt * k as f64;
            let tr = trace(wk).re;
            let purity = trace(&(wk * wk)).re;
            let coherence = frobenius(&CMatrix::from_fn(
                m1,
                m1,
                |i, j| if i == j { c(0.0) } else { wk[(i, j)] },
            ));
            let low = hermitian_eig(wk).stage("lindblad")?.min_eigenvalue();
            drift = drift.max((tr - 1.0).abs());
            floor = floor.max(-low);
            rise = rise.max(purity - last_purity);
            last_purity = purity;
            if l.model == LindbladKind::Dephasing {
                let damp = (-l.gamma * t).exp();
                for i in 0..m1 {
                    for j in 0..m1 {
                        if i != j {
                            decay = decay.max((wk[(i, j)].norm() - w.w[(i, j)].norm() * damp).abs());
                        }
                    }
                }
            }
            s.rows.push(vec![t, tr, purity, coherence, low]);
        }
        rec.record("lindblad.trace_drift", drift, false);
        rec.record("lindblad.positivity", floor.max(0.0), false);
        let choi = choi_min_eigenvalue(&model, l.choi_dt).stage("lindblad")?;
        rec.record("lindblad.choi", (-choi).max(0.0), false);
        if l.model == LindbladKind::Dephasing {
            rec.record("lindblad.purity_monotone", rise.max(0.0), false);
            rec.record("lindblad.dephasing_decay", decay, false);
        }
        series.insert("lindblad".to_string(), s);
    }

    let dec = &scenario.decoherence;
    if dec.enabled {
        let a1 = annihilator(&basis, Region::One, dec.system_mode).stage("decoherence")?;
        let a2 = annihilator(&basis, Region::Two, dec.bath_mode).stage("decoherence")?;
        let hop = a1.adjoint() * &a2;
        let h_full = &h1j + &h2j + (&hop + hop.adjoint()) * c(dec.coupling);
        let coupled = BranchEvolution::new(&basis, &term, &rho1, &rho2, &h_full, hbar).stage("decoherence")?;
        let mut s = Series::new(&["time", "purity", "coherence"]);
        for &t in &series_times {
            let wt = coupled.one_particle(t).stage("decoherence")?;
            s.rows.push(vec![t, wt.purity(), wt.coherence()]);
        }
        series.insert("decoherence".to_string(), s);
    }

    Ok(ResultManifest {
        scenario_hash: scenario_hash(scenario),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        oracle,
        scenario: scenario.clone(),
        dimensions,
        results,
        warnings,
        checks: rec.checks,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_scenario;

    fn quick() -> Scenario {
        parse_scenario("[lindblad]\nsteps = 200\n[evolution]\npoints = 6\n").unwrap()
    }

    #[test]
    fn default_scenario_passes_every_check() {
        let m = run(
            &quick(),
            &RunOptions {
                oracle: true,
                ..Default::default()
            },
        )
        .unwrap();
        for c in &m.checks {
            eprintln!("{:32} {:.3e} <= {:.1e} {}", c.name, c.value, c.tolerance, c.pass);
        }
        eprintln!("{:?}", m.results);
        assert!(m.all_pass());
        assert!(m.warnings.is_empty(), "{:?}", m.warnings);
        assert!(m.check("micro.reduced_vs_full").is_some());
    }
}
