//! Python bindings: Fock bases, one-particle states, Lindblad evolution and
//! the scenario harness.

use demix_core::fock::{self, BasisSpec, NumberScope, Region, Statistics};
use demix_core::harness::{self, RunOptions};
use demix_core::kernel::CMatrix;
use demix_core::micro::{self, Integrator, LindbladModel};
use demix_core::modes::{box_eigenmodes, BoxSpec};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

type Matrix = Vec<Vec<Complex64>>;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &Matrix) -> PyResult<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn from_matrix(m: &CMatrix) -> Matrix {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn parse_statistics(s: &str) -> PyResult<Statistics> {
    match s {
        "boson" => Ok(Statistics::Boson),
        "fermion" => Ok(Statistics::Fermion),
        other => Err(PyValueError::new_err(format!("unknown statistics `{other}`"))),
    }
}

fn parse_region(r: u8) -> PyResult<Region> {
    match r {
        1 => Ok(Region::One),
        2 => Ok(Region::Two),
        _ => Err(PyValueError::new_err("region must be 1 or 2")),
    }
}

/// Two-region Fock basis with a product cutoff on each region.
#[pyclass(name = "FockBasis", frozen)]
struct PyFockBasis(fock::FockBasis);

#[pymethods]
impl PyFockBasis {
    #[new]
    #[pyo3(signature = (m1, m2, statistics, cap1, cap2, n_max=None))]
    fn new(m1: usize, m2: usize, statistics: &str, cap1: usize, cap2: usize, n_max: Option<usize>) -> PyResult<Self> {
        let mut spec = BasisSpec::product(m1, m2, parse_statistics(statistics)?, cap1, cap2)
            .with_max_dim(fock::max_dim_from_env());
        if let Some(n) = n_max {
            spec = spec.with_n_max(n);
        }
        fock::FockBasis::new(spec).map(Self).map_err(value_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn states(&self) -> Vec<Vec<u8>> {
        self.0.states().to_vec()
    }

    fn sector(&self, i: usize) -> PyResult<(usize, usize)> {
        if i >= self.0.dim() {
            return Err(PyValueError::new_err("state index out of range"));
        }
        Ok(self.0.sector(i))
    }

    fn annihilator(&self, region: u8, mode: usize) -> PyResult<Matrix> {
        let a = fock::annihilator(&self.0, parse_region(region)?, mode).map_err(value_err)?;
        Ok(from_matrix(&a))
    }

    /// Total number operator, or the one of a single region.
    #[pyo3(signature = (region=None))]
    fn number(&self, region: Option<u8>) -> PyResult<Matrix> {
        let scope = match region {
            None => NumberScope::Total,
            Some(r) => NumberScope::Region(parse_region(r)?),
        };
        Ok(from_matrix(&fock::number_op(&self.0, scope)))
    }

    fn commutation_defect(&self, region: u8) -> PyResult<f64> {
        fock::commutation_defect(&self.0, parse_region(region)?).map_err(value_err)
    }
}

/// Density matrix of the transferred particle on the region-1 modes.
#[pyclass(name = "OneParticleState", frozen)]
struct PyOneParticleState(micro::OneParticleState);

#[pymethods]
impl PyOneParticleState {
    #[new]
    fn new(w: Matrix) -> PyResult<Self> {
        micro::OneParticleState::new(to_matrix(&w)?)
            .map(Self)
            .map_err(value_err)
    }

    #[getter]
    fn matrix(&self) -> Matrix {
        from_matrix(&self.0.w)
    }

    fn purity(&self) -> f64 {
        self.0.purity()
    }

    fn coherence(&self) -> f64 {
        self.0.coherence()
    }

    /// Eigenvalues in descending order.
    fn weights(&self) -> PyResult<Vec<f64>> {
        Ok(micro::diagonalize_w(&self.0).map_err(value_err)?.weights)
    }

    /// Trajectory under pure dephasing at rate `gamma` with `H_eff = diag(energies)`.
    #[pyo3(signature = (energies, gamma, dt, steps, hbar=1.0, exact=false))]
    fn dephase(
        &self,
        energies: Vec<f64>,
        gamma: f64,
        dt: f64,
        steps: usize,
        hbar: f64,
        exact: bool,
    ) -> PyResult<Vec<Matrix>> {
        let h = CMatrix::from_diagonal(
            &energies
                .iter()
                .map(|&e| Complex64::new(e, 0.0))
                .collect::<Vec<_>>()
                .into(),
        );
        let model = LindbladModel::dephasing(h, gamma, hbar).map_err(value_err)?;
        let integrator = if exact { Integrator::Exact } else { Integrator::Rk4 };
        let path = micro::lindblad_evolve(&self.0, &model, dt, steps, integrator).map_err(value_err)?;
        Ok(path.iter().map(from_matrix).collect())
    }
}

/// Outcome of a scenario run.
#[pyclass(name = "Manifest", frozen)]
struct PyManifest(harness::ResultManifest);

#[pymethods]
impl PyManifest {
    #[getter]
    fn scenario_hash(&self) -> &str {
        &self.0.scenario_hash
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    fn all_pass(&self) -> bool {
        self.0.all_pass()
    }

    /// `(name, value, tolerance, pass)` per check.
    fn checks(&self) -> Vec<(String, f64, f64, bool)> {
        self.0
            .checks
            .iter()
            .map(|c| (c.name.clone(), c.value, c.tolerance, c.pass))
            .collect()
    }

    fn results(&self) -> Vec<(String, f64)> {
        self.0.results.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    fn series_names(&self) -> Vec<String> {
        self.0.series.keys().cloned().collect()
    }

    /// Column names and rows of one series.
    fn series(&self, name: &str) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
        let s = self
            .0
            .series
            .get(name)
            .ok_or_else(|| PyValueError::new_err(format!("no series `{name}`")))?;
        Ok((s.columns.clone(), s.rows.clone()))
    }

    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }

    /// Writes `manifest.json` and the series tables into `out`.
    #[pyo3(signature = (out, format="both"))]
    fn emit(&self, out: &str, format: &str) -> PyResult<Vec<String>> {
        let format = format.parse().map_err(PyValueError::new_err)?;
        let paths = harness::emit(&self.0, out.as_ref(), format).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(paths.iter().map(|p| p.display().to_string()).collect())
    }
}

fn harness_err(e: harness::HarnessError) -> PyErr {
    if e.is_config_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Loads a scenario file (or TOML text with `text=True`) and runs it.
#[pyfunction]
#[pyo3(signature = (scenario, oracle=false, seed=None, text=false))]
fn run_scenario(py: Python<'_>, scenario: &str, oracle: bool, seed: Option<u64>, text: bool) -> PyResult<PyManifest> {
    let scenario = if text {
        let s = harness::parse_scenario(scenario).map_err(harness_err)?;
        s.validate().map_err(harness_err)?;
        s
    } else {
        harness::load_scenario(scenario).map_err(harness_err)?
    };
    let options = RunOptions {
        oracle,
        seed,
        ..RunOptions::default()
    };
    py.detach(|| harness::run(&scenario, &options))
        .map(PyManifest)
        .map_err(harness_err)
}

/// Validates a scenario file and returns its estimated Fock dimension.
#[pyfunction]
fn validate_scenario(path: &str) -> PyResult<u128> {
    Ok(harness::load_scenario(path).map_err(harness_err)?.dimension_estimate())
}

/// `(name, tolerance, description)` for every harness check.
#[pyfunction]
fn list_checks() -> Vec<(&'static str, f64, &'static str)> {
    harness::CHECKS
        .iter()
        .map(|c| (c.name, c.tolerance, c.description))
        .collect()
}

/// Lowest single-particle energies of a hard-wall box.
#[pyfunction]
#[pyo3(signature = (length, count, mass=1.0, hbar=1.0, grid_points=1024))]
fn box_energies(length: f64, count: usize, mass: f64, hbar: f64, grid_points: usize) -> PyResult<Vec<f64>> {
    let modes = box_eigenmodes(&BoxSpec::new(length, mass, hbar, count), grid_points).map_err(value_err)?;
    Ok(modes.energies)
}

#[pymodule]
fn demix(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFockBasis>()?;
    m.add_class::<PyOneParticleState>()?;
    m.add_class::<PyManifest>()?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(list_checks, m)?)?;
    m.add_function(wrap_pyfunction!(box_energies, m)?)?;
    Ok(())
}
