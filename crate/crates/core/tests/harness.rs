use demix::harness::{
    emit, load_scenario, parse_scenario, read_table, run, scenario_hash, Format, HarnessError, ResultManifest,
    RunOptions, Scenario,
};
use std::path::PathBuf;

const GOLDEN_DIGEST: &str = "246ab427a5574139fdde61f21caa5f703756f2cd94e9b59e47054318799dc439";

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn options(oracle: bool, seed: Option<u64>) -> RunOptions {
    RunOptions {
        oracle,
        seed,
        max_dim: 4096,
    }
}

fn small() -> Scenario {
    parse_scenario("[lindblad]\nsteps = 100\n[evolution]\npoints = 5\n").unwrap()
}

fn strip_randomized(m: &ResultManifest) -> Vec<(String, u64)> {
    m.checks
        .iter()
        .filter(|c| !c.randomized)
        .map(|c| (c.name.clone(), c.value.to_bits()))
        .collect()
}

#[test]
fn golden_scenario_hashes_to_recorded_digest() {
    let s = load_scenario(scenario_dir().join("golden.toml")).unwrap();
    assert_eq!(scenario_hash(&s), GOLDEN_DIGEST);
}

#[test]
fn shipped_scenarios_run_clean() {
    for name in ["default.toml", "golden.toml", "amplitudes.toml"] {
        let s = load_scenario(scenario_dir().join(name)).unwrap();
        let m = run(&s, &options(true, None)).unwrap();
        if let Some(c) = m.failures().next() {
            panic!("{name}: {} = {:.3e} > {:.1e}", c.name, c.value, c.tolerance);
        }
        assert!(m.warnings.is_empty(), "{name}: {:?}", m.warnings);
        assert_eq!(m.scenario_hash, scenario_hash(&s));
    }
}

#[test]
fn manifest_is_bit_identical_across_runs() {
    let s = small();
    let a = run(&s, &options(true, None)).unwrap();
    let b = run(&s, &options(true, None)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit(&a, &dir.path().join("a"), Format::Both).unwrap();
    emit(&b, &dir.path().join("b"), Format::Both).unwrap();
    for file in [
        "manifest.json",
        "expectations.csv",
        "microsystem.csv",
        "lindblad.csv",
        "decoherence.csv",
    ] {
        let x = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
}

#[test]
fn seed_only_touches_randomized_checks() {
    let s = small();
    let a = run(&s, &options(false, Some(1))).unwrap();
    let b = run(&s, &options(false, Some(2))).unwrap();
    assert_eq!(a.seed, 1);
    assert_eq!(a.results, b.results);
    assert_eq!(a.series, b.series);
    assert_eq!(strip_randomized(&a), strip_randomized(&b));
}

#[test]
fn oracle_only_adds_columns_and_checks() {
    let s = small();
    let plain = run(&s, &options(false, None)).unwrap();
    let oracle = run(&s, &options(true, None)).unwrap();
    assert_eq!(plain.results, oracle.results);
    for (name, series) in &plain.series {
        let with = &oracle.series[name];
        for (j, col) in series.columns.iter().enumerate() {
            let k = with.columns.iter().position(|c| c == col).unwrap();
            for (r, row) in series.rows.iter().enumerate() {
                assert_eq!(row[j].to_bits(), with.rows[r][k].to_bits(), "{name}.{col}");
            }
        }
    }
    for c in &plain.checks {
        assert_eq!(oracle.check(&c.name), Some(c));
    }
    assert!(oracle.checks.len() > plain.checks.len());
    assert!(plain.series["expectations"]
        .columns
        .iter()
        .all(|c| !c.ends_with("_oracle")));
    assert!(oracle.series["expectations"]
        .columns
        .iter()
        .any(|c| c.ends_with("_oracle")));
}

#[test]
fn emitted_files_round_trip() {
    let s = small();
    let m = run(&s, &options(true, None)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = emit(&m, dir.path(), Format::Both).unwrap();
    assert_eq!(written.len(), 1 + m.series.len());
    for (name, series) in &m.series {
        let back = read_table(&dir.path().join(format!("{name}.csv"))).unwrap();
        assert_eq!(&back.columns, &series.columns);
        assert_eq!(back.rows.len(), series.rows.len());
        for (x, y) in back.rows.iter().flatten().zip(series.rows.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits(), "{name}");
        }
    }
    let text = std::fs::read(dir.path().join("manifest.json")).unwrap();
    let parsed: ResultManifest = serde_json::from_slice(&text).unwrap();
    assert_eq!(parsed, m);
    assert_eq!(parsed.scenario_hash, scenario_hash(&s));
}

#[test]
fn formats_select_outputs() {
    let m = run(&small(), &options(false, None)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let tables = emit(&m, &dir.path().join("t"), Format::Table).unwrap();
    assert!(tables.iter().all(|p| p.extension().unwrap() == "csv"));
    let summary = emit(&m, &dir.path().join("s"), Format::Summary).unwrap();
    assert_eq!(summary.len(), 1);
    assert!(summary[0].ends_with("manifest.json"));
}

#[test]
fn io_errors_name_the_path() {
    let m = run(&small(), &options(false, None)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    match emit(&m, &blocker.join("out"), Format::Both).unwrap_err() {
        HarnessError::Io { path, .. } => assert!(path.starts_with(&blocker)),
        other => panic!("{other}"),
    }
    assert!(matches!(
        load_scenario(dir.path().join("missing.toml")).unwrap_err(),
        HarnessError::Io { .. }
    ));
}

#[test]
fn stage_failures_name_the_stage() {
    // below the single-particle ground energy: no state reaches this target
    let s = parse_scenario("[region2]\nlength = 2.5\nmodes = 3\noccupancy = 2\nstate = { kind = \"fitted\", energy = 0.01, number = 1.0 }\n")
        .unwrap();
    match run(&s, &options(false, None)).unwrap_err() {
        HarnessError::Stage { stage, .. } => assert_eq!(stage, "state"),
        other => panic!("{other}"),
    }
}

#[test]
fn dimension_cap_is_a_config_error() {
    let err = run(
        &small(),
        &RunOptions {
            max_dim: 10,
            ..options(false, None)
        },
    )
    .unwrap_err();
    assert!(err.is_config_error());
}
