//! Command-line front end: `run`, `plot` and `selftest`.

pub mod plot;
pub mod selftest;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::load_experiment;
use crate::error::CliError;
use crate::model::RobotModel;
use crate::sim::{run_scenario, write_outputs, Summary};

pub use plot::{cmd_plot, contact_bars, PlotReport};
pub use selftest::{run_checks, Check, SelftestReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FALL: i32 = 3;
pub const EXIT_SELFTEST: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "wheelleg", version, about = "Whole-body MPC simulation for wheeled quadrupeds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write CSV logs plus summary.json.
    Run(RunManifest),
    /// Draw SVG figures from the logs in a run directory.
    Plot {
        dir: PathBuf,
    },
    /// Run the built-in oracle checks.
    Selftest {
        /// Raise gravity by 1% in the Jacobian model (checks the checker).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

/// Everything one `run` needs.
#[derive(Debug, Clone, PartialEq, Args)]
pub struct RunManifest {
    /// Settings file; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in scenario name or path to a scenario file.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solve in a background thread while the plant keeps moving. Not
    /// reproducible.
    #[arg(long)]
    pub async_mpc: bool,
    /// Also draw the figures after the run.
    #[arg(long)]
    pub plots: bool,
}

impl RunManifest {
    pub fn new(scenario: &str, out: impl Into<PathBuf>) -> Self {
        RunManifest { config: None, scenario: scenario.into(), out: out.into(), seed: None, async_mpc: false, plots: false }
    }
}

/// Runs a manifest. Settings are loaded before anything is written, so a
/// bad config leaves no output behind. A fall still writes all logs and then
/// reports [`CliError::Fell`].
pub fn cmd_run(manifest: &RunManifest) -> Result<Summary, CliError> {
    let (config, scenario) = load_experiment(manifest.config.as_deref(), &manifest.scenario, manifest.seed)?;
    let model = RobotModel::default();
    let log = run_scenario(&scenario, &model, &config, manifest.async_mpc)?;
    let summary = write_outputs(&log, &manifest.out)?;
    if manifest.plots {
        let report = cmd_plot(&manifest.out)?;
        for w in &report.warnings {
            log::warn!("{w}");
        }
    }
    match &summary.fall {
        Some(f) => Err(CliError::Fell { time: f.time, reason: f.reason.clone() }),
        None => Ok(summary),
    }
}

pub fn cmd_selftest(checks: &[Check], out: &mut impl Write) -> Result<SelftestReport, CliError> {
    if checks.is_empty() {
        return Err(CliError::EmptyRegistry);
    }
    let report = run_checks(checks, out);
    if report.failed > 0 {
        return Err(CliError::Selftest { failed: report.failed, total: report.total });
    }
    Ok(report)
}

pub fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Config(_) => EXIT_CONFIG,
        CliError::Sim(crate::error::SimError::Config(_)) => EXIT_CONFIG,
        CliError::Fell { .. } => EXIT_FALL,
        CliError::Selftest { .. } | CliError::EmptyRegistry => EXIT_SELFTEST,
        CliError::Sim(_) | CliError::Plot(_) => EXIT_OTHER,
    }
}

fn one_line(s: &Summary) -> String {
    let pred = s.prediction_error.map_or("n/a".to_string(), |p| format!("{:.4} +/- {:.4} m", p.mean, p.std));
    format!(
        "{}: {:.2} s simulated, prediction error {pred}, min cone margin {:.3} N, {} cycles",
        s.scenario, s.simulated_time, s.min_cone_margin, s.cycles
    )
}

/// Executes a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(manifest) => cmd_run(&manifest).map(|s| {
            println!("{}", one_line(&s));
            println!("outputs in {}", manifest.out.display());
        }),
        Command::Plot { dir } => cmd_plot(&dir).map_err(CliError::from).map(|report| {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for p in &report.written {
                println!("wrote {}", p.display());
            }
        }),
        Command::Selftest { inject_fault } => {
            let checks = if inject_fault { selftest::faulty_registry() } else { selftest::registry() };
            cmd_selftest(&checks, &mut std::io::stdout()).map(|r| println!("{} checks passed", r.total))
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_registry_is_an_error() {
        let err = cmd_selftest(&[], &mut Vec::new()).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_SELFTEST);
    }

    #[test]
    fn missing_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut m = RunManifest::new("stand", &out);
        m.config = Some(dir.path().join("missing.toml"));
        let err = cmd_run(&m).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
        assert!(!out.exists());
    }

    #[test]
    fn unknown_scenario_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_run(&RunManifest::new("moonwalk", dir.path().join("x"))).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "wheelleg", "run", "--scenario", "reversal", "--out", "o", "--seed", "3", "--plots", "--async-mpc",
        ])
        .unwrap();
        let Command::Run(m) = cli.command else { panic!("expected run") };
        assert_eq!(m.seed, Some(3));
        assert!(m.plots && m.async_mpc);
        assert!(Cli::try_parse_from(["wheelleg", "run"]).is_err());
    }
}
