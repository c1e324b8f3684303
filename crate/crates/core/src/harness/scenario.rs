//! Declarative scenario files.

use super::{check_info, HarnessError};
use crate::fock::{BasisSpec, Statistics};
use crate::micro::{Integrator, DEFAULT_DEPLETION_THRESHOLD};
use crate::modes::DEFAULT_GRID_POINTS;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub oracle: bool,
    pub statistics: Statistics,
    pub hbar: f64,
    pub mass: f64,
    pub grid_points: usize,
    /// Per-mode occupation cap (bosons only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    pub region1: RegionConfig,
    pub region2: RegionConfig,
    pub correlation: CorrelationConfig,
    pub evolution: EvolutionConfig,
    pub observables: ObservableConfig,
    pub microsystem: MicroConfig,
    pub lindblad: LindbladConfig,
    pub decoherence: DecoherenceConfig,
    /// Per-check tolerance overrides, keyed by check name.
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 7,
            oracle: false,
            statistics: Statistics::Boson,
            hbar: 1.0,
            mass: 1.0,
            grid_points: DEFAULT_GRID_POINTS,
            n_max: None,
            region1: RegionConfig {
                length: 2.0,
                modes: 3,
                occupancy: 1,
                potential: None,
                state: RegionState::Thermal { beta: 1.5, mu: -1.0 },
            },
            region2: RegionConfig {
                length: 2.5,
                modes: 3,
                occupancy: 2,
                potential: None,
                state: RegionState::Thermal { beta: 1.0, mu: 0.0 },
            },
            correlation: CorrelationConfig::default(),
            evolution: EvolutionConfig::default(),
            observables: ObservableConfig::default(),
            microsystem: MicroConfig::default(),
            lindblad: LindbladConfig::default(),
            decoherence: DecoherenceConfig::default(),
            tolerances: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub length: f64,
    pub modes: usize,
    /// Cap on the particle number of this region's state.
    pub occupancy: usize,
    /// `V(x)` sampled on the mode grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Vec<f64>>,
    pub state: RegionState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RegionState {
    Vacuum,
    /// `exp{-beta (H - mu N)}`.
    Thermal {
        beta: f64,
        mu: f64,
    },
    /// Gibbs state in `(H, N)` matching the given expectations.
    Fitted {
        energy: f64,
        number: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CorrelationConfig {
    /// Transfer amplitudes `d[h][n]` given directly.
    Amplitudes {
        re: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        im: Vec<Vec<f64>>,
    },
    /// A hopping term between the regions, switched on with amplitude
    /// `cos(frequency (t - T))` during `[T, T + duration]`. Without `modes`
    /// the hopping is contact tunnelling, `t_hn ~ phi_h'(L1) phi_n'(0)`.
    Preparation {
        coupling: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        modes: Option<[usize; 2]>,
        duration: f64,
        #[serde(default = "default_prep_steps")]
        steps: usize,
        #[serde(default)]
        frequency: f64,
    },
}

fn default_prep_steps() -> usize {
    crate::prep::DEFAULT_PREP_STEPS
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig::Preparation {
            coupling: 0.3,
            modes: None,
            duration: 2.0,
            steps: default_prep_steps(),
            frequency: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    /// Times at which equivalence and oracle checks are evaluated.
    pub times: Vec<f64>,
    /// Uniform series grid on `[0, t_max]`.
    pub t_max: f64,
    pub points: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            times: vec![0.0, 1.0, 10.0],
            t_max: 10.0,
            points: 41,
        }
    }
}

impl EvolutionConfig {
    pub fn series_times(&self) -> Vec<f64> {
        let n = self.points.max(2);
        (0..n).map(|k| self.t_max * k as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservableConfig {
    /// Number of equal density cells per region.
    pub cells: usize,
    pub random_local: usize,
    pub random_joint: usize,
}

impl Default for ObservableConfig {
    fn default() -> Self {
        Self {
            cells: 2,
            random_local: 4,
            random_joint: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicroConfig {
    pub depletion_threshold: f64,
}

impl Default for MicroConfig {
    fn default() -> Self {
        Self {
            depletion_threshold: DEFAULT_DEPLETION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LindbladKind {
    None,
    Dephasing,
    Thermal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LindbladConfig {
    pub model: LindbladKind,
    pub gamma: f64,
    /// Inverse temperature of the thermal model.
    pub beta: f64,
    pub dt: f64,
    pub steps: usize,
    pub integrator: Integrator,
    /// Step of the exact map whose Choi matrix is checked.
    pub choi_dt: f64,
}

impl Default for LindbladConfig {
    fn default() -> Self {
        Self {
            model: LindbladKind::Dephasing,
            gamma: 0.1,
            beta: 1.0,
            dt: 0.01,
            steps: 1000,
            integrator: Integrator::Rk4,
            choi_dt: 0.1,
        }
    }
}

/// Couples one region-1 mode to one region-2 mode during the evolution and
/// tracks the microsystem branch by full-space propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoherenceConfig {
    pub enabled: bool,
    pub system_mode: usize,
    pub bath_mode: usize,
    pub coupling: f64,
}

impl Default for DecoherenceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            system_mode: 0,
            bath_mode: 1,
            coupling: 0.2,
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, HarnessError> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        HarnessError::Parse {
            line,
            message: e.message().to_string(),
        }
    })
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let scenario = parse_scenario(&text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// SHA-256 of the canonical JSON form, defaults included.
pub fn scenario_hash(s: &Scenario) -> String {
    let bytes = serde_json::to_vec(s).expect("scenario serializes");
    hex::encode(Sha256::digest(&bytes))
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> HarnessError {
    HarnessError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), HarnessError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must be finite and > 0")))
    }
}

fn finite(field: &str, v: f64) -> Result<(), HarnessError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} is not finite")))
    }
}

fn in_range(field: &str, index: usize, count: usize) -> Result<(), HarnessError> {
    if index < count {
        Ok(())
    } else {
        Err(invalid(
            field,
            format!("mode index {index} out of range (region has {count} modes)"),
        ))
    }
}

impl Scenario {
    /// Basis holding the region states.
    pub fn state_basis_spec(&self) -> BasisSpec {
        let mut spec = BasisSpec::product(
            self.region1.modes,
            self.region2.modes,
            self.statistics,
            self.region1.occupancy,
            self.region2.occupancy,
        );
        if let Some(n) = self.n_max {
            spec = spec.with_n_max(n);
        }
        spec
    }

    /// Basis for the dynamics: one more particle fits in region 1, so the
    /// transferred particle never meets the cutoff.
    pub fn dynamics_basis_spec(&self) -> BasisSpec {
        let mut spec = BasisSpec::product(
            self.region1.modes,
            self.region2.modes,
            self.statistics,
            self.region1.occupancy + 1,
            self.region2.occupancy,
        );
        if let Some(n) = self.n_max {
            spec = spec.with_n_max(n + 1);
        }
        spec
    }

    pub fn dimension_estimate(&self) -> u128 {
        self.dynamics_basis_spec().dimension()
    }

    pub fn tolerance(&self, check: &str) -> f64 {
        self.tolerances
            .get(check)
            .copied()
            .or_else(|| check_info(check).map(|c| c.tolerance))
            .unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.validate_with_cap(crate::fock::max_dim_from_env())
    }

    pub fn validate_with_cap(&self, max_dim: usize) -> Result<(), HarnessError> {
        positive("hbar", self.hbar)?;
        positive("mass", self.mass)?;
        if self.grid_points < 16 {
            return Err(invalid("grid_points", format!("{} is below 16", self.grid_points)));
        }
        for (name, r) in [("region1", &self.region1), ("region2", &self.region2)] {
            positive(&format!("{name}.length"), r.length)?;
            if r.modes == 0 {
                return Err(invalid(format!("{name}.modes"), "at least one mode is required"));
            }
            if r.modes > self.grid_points / 4 {
                return Err(invalid(
                    format!("{name}.modes"),
                    format!("{} modes need at least {} grid points", r.modes, 4 * r.modes),
                ));
            }
            if let Some(v) = &r.potential {
                if v.len() != self.grid_points {
                    return Err(invalid(
                        format!("{name}.potential"),
                        format!("{} samples, grid has {}", v.len(), self.grid_points),
                    ));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid(format!("{name}.potential"), "samples must be finite"));
                }
            }
            match r.state {
                RegionState::Vacuum => {}
                RegionState::Thermal { beta, mu } => {
                    positive(&format!("{name}.state.beta"), beta)?;
                    finite(&format!("{name}.state.mu"), mu)?;
                }
                RegionState::Fitted { energy, number } => {
                    finite(&format!("{name}.state.energy"), energy)?;
                    if !(number.is_finite() && number > 0.0 && number < r.occupancy as f64) {
                        return Err(invalid(
                            format!("{name}.state.number"),
                            format!("{number} must lie strictly between 0 and the occupancy {}", r.occupancy),
                        ));
                    }
                }
            }
        }
        if self.region2.occupancy == 0 {
            return Err(invalid("region2.occupancy", "region 2 must hold at least one particle"));
        }
        if self.region2.state == RegionState::Vacuum {
            return Err(invalid("region2.state", "a vacuum region 2 has nothing to transfer"));
        }
        if let Some(n) = self.n_max {
            if self.statistics == Statistics::Fermion {
                return Err(invalid("n_max", "only meaningful for bosons"));
            }
            if n == 0 {
                return Err(invalid("n_max", "must be >= 1"));
            }
        }
        let (m1, m2) = (self.region1.modes, self.region2.modes);
        match &self.correlation {
            CorrelationConfig::Amplitudes { re, im } => {
                let shape_ok = |m: &Vec<Vec<f64>>| m.len() == m1 && m.iter().all(|row| row.len() == m2);
                if !shape_ok(re) {
                    return Err(invalid("correlation.re", format!("expected {m1} rows of {m2} entries")));
                }
                if !im.is_empty() && !shape_ok(im) {
                    return Err(invalid("correlation.im", format!("expected {m1} rows of {m2} entries")));
                }
                if re.iter().chain(im.iter()).flatten().any(|x| !x.is_finite()) {
                    return Err(invalid("correlation", "amplitudes must be finite"));
                }
                if re.iter().chain(im.iter()).flatten().all(|x| *x == 0.0) {
                    return Err(invalid("correlation", "all amplitudes are zero"));
                }
            }
            CorrelationConfig::Preparation {
                coupling,
                modes,
                duration,
                steps,
                frequency,
            } => {
                finite("correlation.coupling", *coupling)?;
                if *coupling == 0.0 {
                    return Err(invalid(
                        "correlation.coupling",
                        "a zero coupling prepares no correlation",
                    ));
                }
                if let Some([h, n]) = modes {
                    in_range("correlation.modes[0]", *h, m1)?;
                    in_range("correlation.modes[1]", *n, m2)?;
                }
                positive("correlation.duration", *duration)?;
                finite("correlation.frequency", *frequency)?;
                if *steps == 0 {
                    return Err(invalid("correlation.steps", "must be >= 1"));
                }
                if self.region1.occupancy == 0 {
                    return Err(invalid(
                        "region1.occupancy",
                        "preparation needs region 1 to hold a particle",
                    ));
                }
                if self.region1.state == RegionState::Vacuum {
                    return Err(invalid(
                        "region1.state",
                        "preparation needs Gibbs parameters for region 1",
                    ));
                }
            }
        }
        let ev = &self.evolution;
        for (i, t) in ev.times.iter().enumerate() {
            finite(&format!("evolution.times[{i}]"), *t)?;
        }
        positive("evolution.t_max", ev.t_max)?;
        if ev.points < 2 {
            return Err(invalid("evolution.points", "need at least 2 points"));
        }
        if self.observables.cells == 0 {
            return Err(invalid("observables.cells", "need at least one cell"));
        }
        positive("microsystem.depletion_threshold", self.microsystem.depletion_threshold)?;
        let l = &self.lindblad;
        if l.model != LindbladKind::None {
            if !(l.gamma.is_finite() && l.gamma >= 0.0) {
                return Err(invalid(
                    "lindblad.gamma",
                    format!("{} must be finite and >= 0", l.gamma),
                ));
            }
            finite("lindblad.beta", l.beta)?;
            positive("lindblad.dt", l.dt)?;
            positive("lindblad.choi_dt", l.choi_dt)?;
            if l.steps == 0 {
                return Err(invalid("lindblad.steps", "must be >= 1"));
            }
        }
        let d = &self.decoherence;
        if d.enabled {
            in_range("decoherence.system_mode", d.system_mode, m1)?;
            in_range("decoherence.bath_mode", d.bath_mode, m2)?;
            finite("decoherence.coupling", d.coupling)?;
        }
        for (name, tol) in &self.tolerances {
            if check_info(name).is_none() {
                return Err(invalid(format!("tolerances.{name}"), "unknown check"));
            }
            positive(&format!("tolerances.{name}"), *tol)?;
        }
        let dim = self.dimension_estimate();
        if dim > max_dim as u128 {
            return Err(invalid(
                "dimension",
                format!("estimated Fock dimension {dim} exceeds cap {max_dim}"),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let s = parse_scenario("").unwrap();
        assert_eq!(s, Scenario::default());
        s.validate_with_cap(4096).unwrap();
        assert_eq!(s.dimension_estimate(), 100);
    }

    #[test]
    fn round_trips_through_toml() {
        let s = Scenario::default();
        let text = toml::to_string(&s).unwrap();
        assert_eq!(parse_scenario(&text).unwrap(), s);
    }

    #[test]
    fn parse_errors_carry_a_line() {
        let err = parse_scenario("seed = 3\n\n[region1]\nlength = \"wide\"\n").unwrap_err();
        match err {
            HarnessError::Parse { line, .. } => assert_eq!(line, Some(4)),
            other => panic!("{other}"),
        }
        assert!(matches!(
            parse_scenario("bogus = 1").unwrap_err(),
            HarnessError::Parse { line: Some(1), .. }
        ));
    }

    #[test]
    fn out_of_range_mode_is_named() {
        let s =
            parse_scenario("[correlation]\nkind = \"preparation\"\ncoupling = 0.2\nmodes = [0, 5]\nduration = 1.0\n")
                .unwrap();
        match s.validate_with_cap(4096).unwrap_err() {
            HarnessError::Invalid { field, .. } => assert_eq!(field, "correlation.modes[1]"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let s = Scenario::default();
        assert!(matches!(
            s.validate_with_cap(50).unwrap_err(),
            HarnessError::Invalid { ref field, .. } if field == "dimension"
        ));
    }

    #[test]
    fn unknown_tolerance_key_is_rejected() {
        let s = parse_scenario("[tolerances]\n\"no.such.check\" = 1e-3\n").unwrap();
        assert!(matches!(
            s.validate_with_cap(4096).unwrap_err(),
            HarnessError::Invalid { ref field, .. } if field == "tolerances.no.such.check"
        ));
        let s = parse_scenario("[tolerances]\n\"demix.cross_term\" = 1e-9\n").unwrap();
        assert_eq!(s.tolerance("demix.cross_term"), 1e-9);
    }

    #[test]
    fn hash_depends_on_content_only() {
        let a = parse_scenario("seed = 7").unwrap();
        let b = parse_scenario("# comment\nseed=7\n").unwrap();
        assert_eq!(scenario_hash(&a), scenario_hash(&b));
        let c = parse_scenario("seed = 8").unwrap();
        assert_ne!(scenario_hash(&a), scenario_hash(&c));
    }
}
