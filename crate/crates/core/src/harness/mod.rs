//! Scenario runner: parses a declarative scenario, drives the whole pipeline
//! and writes a manifest plus plot-ready tables.

mod output;
mod pipeline;
mod scenario;

pub use output::{emit, format_f64, read_table, write_manifest, write_table, Format};
pub use pipeline::{run, CheckRecord, ResultManifest, RunOptions, Series};
pub use scenario::{
    load_scenario, parse_scenario, scenario_hash, CorrelationConfig, DecoherenceConfig, EvolutionConfig,
    LindbladConfig, LindbladKind, MicroConfig, ObservableConfig, RegionConfig, RegionState, Scenario,
};

use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// Configuration problems, as opposed to failures while running.
    pub fn is_config_error(&self) -> bool {
        matches!(self, HarnessError::Parse { .. } | HarnessError::Invalid { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckInfo {
    pub name: &'static str,
    pub tolerance: f64,
    /// Only evaluated with the oracle flag.
    pub oracle: bool,
    pub description: &'static str,
}

const fn check(name: &'static str, tolerance: f64, oracle: bool, description: &'static str) -> CheckInfo {
    CheckInfo {
        name,
        tolerance,
        oracle,
        description,
    }
}

pub const CHECKS: &[CheckInfo] = &[
    check(
        "fock.commutation",
        1e-12,
        false,
        "canonical (anti)commutators on cutoff-safe states",
    ),
    check(
        "prep.fit_residual",
        1e-8,
        false,
        "fitted Gibbs state reproduces the target expectations",
    ),
    check(
        "prep.split_reconstruction",
        1e-10,
        false,
        "S1 + S2 + C12 reassembles the prepared exponent",
    ),
    check(
        "prep.duhamel_identity",
        1e-8,
        false,
        "quadrature factors reproduce exp(A + B)",
    ),
    check(
        "prep.expansion_positivity",
        1e-12,
        false,
        "negative part of the expanded state",
    ),
    check(
        "demix.sector_defect",
        1e-12,
        false,
        "transfer term moves exactly one particle 2 -> 1",
    ),
    check(
        "demix.cross_term",
        1e-12,
        false,
        "largest cross term over admissible local pairs",
    ),
    check(
        "demix.mixture_equivalence",
        1e-10,
        false,
        "correlated state vs demixed mixture on the family",
    ),
    check(
        "micro.w_trace",
        1e-12,
        false,
        "trace of the one-particle state minus one",
    ),
    check(
        "micro.sigma_spectral",
        1e-10,
        false,
        "sigma from traces vs from the spectrum of w",
    ),
    check(
        "micro.identity_transfer",
        1e-12,
        false,
        "identity transfer beyond the occupation bound",
    ),
    check(
        "micro.povm_positivity",
        1e-10,
        false,
        "negative part of transferred sector projectors",
    ),
    check(
        "micro.heisenberg",
        1e-10,
        false,
        "evolved creation operator vs creation of the evolved mode",
    ),
    check(
        "micro.dressed_decomposition",
        1e-10,
        false,
        "dressed observable vs its commutator expansion",
    ),
    check(
        "micro.no_signal",
        1e-12,
        false,
        "commuting observable shift beyond the depletion bound",
    ),
    check(
        "micro.reduced_vs_full",
        1e-10,
        true,
        "one-particle formula vs full-space traces",
    ),
    check("micro.sigma_vs_full", 1e-10, true, "sigma vs full-space branch trace"),
    check(
        "lindblad.trace_drift",
        1e-9,
        false,
        "largest |Tr w - 1| along the trajectory",
    ),
    check(
        "lindblad.positivity",
        1e-10,
        false,
        "negative part of w along the trajectory",
    ),
    check(
        "lindblad.choi",
        1e-8,
        false,
        "negative part of the Choi matrix of the exact step",
    ),
    check(
        "lindblad.purity_monotone",
        1e-12,
        false,
        "largest purity increase for a unital model",
    ),
    check(
        "lindblad.dephasing_decay",
        1e-6,
        false,
        "coherence vs exp(-gamma t) for dephasing",
    ),
];

pub fn check_info(name: &str) -> Option<&'static CheckInfo> {
    CHECKS.iter().find(|c| c.name == name)
}
