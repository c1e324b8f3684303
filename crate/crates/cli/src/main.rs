use clap::{Parser, Subcommand};
use demix::fock::{max_dim_from_env, MAX_DIM_ENV};
use demix::harness::{self, format_f64, Format, HarnessError, ResultManifest, RunOptions, CHECKS};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const CHECK_FAILURE: u8 = 1;
const CONFIG_ERROR: u8 = 2;

#[derive(Parser)]
#[command(
    name = "demix",
    version,
    about = "Run demixing scenarios and report their consistency checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the manifest and tables.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate full-space oracle checks.
        #[arg(long)]
        oracle: bool,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "both")]
        format: Format,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
    /// Print the check catalogue with default tolerances.
    ListChecks,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            out,
            oracle,
            seed,
            format,
        } => run(&scenario, &out, oracle, seed, format),
        Command::Validate { scenario } => validate(&scenario),
        Command::ListChecks => {
            let mut text = String::new();
            for c in CHECKS {
                let tag = if c.oracle { " [oracle]" } else { "" };
                let _ = writeln!(text, "{:<28} {:>8.0e}  {}{}", c.name, c.tolerance, c.description, tag);
            }
            print(&text);
            ExitCode::SUCCESS
        }
    }
}

/// Writes to stdout, tolerating a closed pipe.
fn print(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn fail(e: &HarnessError, code: u8) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

/// Anything wrong with the scenario file itself is a configuration error.
fn load(path: &Path) -> Result<harness::Scenario, ExitCode> {
    harness::load_scenario(path).map_err(|e| fail(&e, CONFIG_ERROR))
}

fn validate(path: &Path) -> ExitCode {
    let scenario = match load(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    print(&format!(
        "{}: ok\ndimension {} (cap {} from {MAX_DIM_ENV})\n",
        path.display(),
        scenario.dimension_estimate(),
        max_dim_from_env()
    ));
    ExitCode::SUCCESS
}

fn run(path: &Path, out: &Path, oracle: bool, seed: Option<u64>, format: Format) -> ExitCode {
    let scenario = match load(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let options = RunOptions {
        oracle,
        seed,
        ..RunOptions::default()
    };
    let start = Instant::now();
    let manifest = match harness::run(&scenario, &options) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.is_config_error() {
                CONFIG_ERROR
            } else {
                CHECK_FAILURE
            };
            return fail(&e, code);
        }
    };
    let elapsed = start.elapsed();
    let written = match harness::emit(&manifest, out, format) {
        Ok(w) => w,
        Err(e) => return fail(&e, CONFIG_ERROR),
    };
    let mut text = report(&manifest);
    for path in &written {
        let _ = writeln!(text, "wrote {}", path.display());
    }
    let _ = writeln!(text, "runtime {:.3} s", elapsed.as_secs_f64());
    print(&text);
    if manifest.all_pass() {
        ExitCode::SUCCESS
    } else {
        let names: Vec<_> = manifest.failures().map(|c| c.name.as_str()).collect();
        eprintln!("failed checks: {}", names.join(", "));
        ExitCode::from(CHECK_FAILURE)
    }
}

fn report(m: &ResultManifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario {} ({})", m.scenario.name, &m.scenario_hash[..12]);
    for (name, dim) in &m.dimensions {
        let _ = writeln!(s, "  {name} dimension {dim}");
    }
    for w in &m.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(s, "{:<28} {:>24} {:>9}  status", "check", "value", "tolerance");
    for c in &m.checks {
        let status = if c.pass { "pass" } else { "FAIL" };
        let _ = writeln!(
            s,
            "{:<28} {:>24} {:>9.0e}  {status}",
            c.name,
            format_f64(c.value),
            c.tolerance
        );
    }
    s
}
