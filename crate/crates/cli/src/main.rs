use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use vfi_core::controller::Awareness;
use vfi_core::sim::reference::{self, EndonasalRun};
use vfi_core::sim::{self, Scenario, ScenarioError, SimError};

const EXIT_VALIDATION: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "vfi-sim", version, about = "Run VFI control scenarios and write CSV traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Awareness per robot, e.g. `k,s` (o = oblivious, s = static-aware, k = kinematics-aware).
        #[arg(long)]
        mode: Option<String>,
        /// Default VFI gain in 1/s.
        #[arg(long)]
        eta_d: Option<f64>,
    },
    /// Run a built-in suite.
    Suite {
        #[arg(value_enum)]
        name: SuiteName,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        eta_d: f64,
    },
    /// Check a scenario file's fields and bindings without running it.
    Validate { scenario: PathBuf },
    /// Write a built-in scenario as JSON.
    Export {
        #[arg(value_enum)]
        name: ReferenceName,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        /// For the plane experiment, omit to get the unconstrained variant.
        #[arg(long)]
        eta_d: Option<f64>,
        #[arg(long, value_enum, default_value_t = RunArg::Both)]
        run: RunArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteName {
    Table3,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceName {
    SimulationA,
    ExperimentA,
    Endonasal,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunArg {
    LeftOnly,
    RightOnly,
    Both,
}

enum Failure {
    Validation(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Scenario(s) => s.into(),
            other => Failure::Other(other.into()),
        }
    }
}

fn parse_modes(text: &str) -> Result<Vec<Awareness>, Failure> {
    text.split(',')
        .map(|m| {
            let m = m.trim();
            let mut chars = m.chars();
            match (chars.next().and_then(Awareness::from_letter), chars.next()) {
                (Some(a), None) => Ok(a),
                _ => Err(Failure::Validation(format!("--mode: unknown awareness `{m}`, expected o, s or k"))),
            }
        })
        .collect()
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Scenario::from_json(&text)?)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn execute(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run { scenario, out, metrics, mode, eta_d } => {
            let mut s = load(&scenario)?;
            if let Some(m) = mode {
                s = s.with_modes(&parse_modes(&m)?)?;
            }
            if let Some(g) = eta_d {
                s = s.with_eta_d(g);
            }
            let output = sim::run(&s)?;
            write(&out, &output.trace.to_csv())?;
            if let Some(path) = metrics {
                let json = serde_json::to_string_pretty(&output.metrics).context("serializing metrics")?;
                write(&path, &json)?;
            }
            if output.metrics.infeasible_steps > 0 {
                eprintln!(
                    "{} step(s) had an infeasible QP; those steps commanded zero velocity",
                    output.metrics.infeasible_steps
                );
                return Ok(EXIT_INFEASIBLE);
            }
            Ok(0)
        }
        Command::Suite { name: SuiteName::Table3, out_dir, eta_d } => {
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let (rows, files) = sim::table3(eta_d)?;
            for f in &files {
                write(&out_dir.join(&f.name), &f.contents)?;
            }
            let infeasible: usize = rows.iter().map(|r| r.metrics.infeasible_steps).sum();
            if infeasible > 0 {
                eprintln!("{infeasible} step(s) had an infeasible QP");
                return Ok(EXIT_INFEASIBLE);
            }
            Ok(0)
        }
        Command::Validate { scenario } => {
            let s = load(&scenario)?;
            let built = s.build()?;
            println!(
                "{}: {} robot(s), {} entit(ies), {} constraint(s), {} steps",
                s.name,
                built.setup.robots.len(),
                built.entities.len(),
                built.setup.bindings.len(),
                built.steps
            );
            Ok(0)
        }
        Command::Export { name, out, mode, eta_d, run } => {
            let modes = match mode {
                Some(m) => parse_modes(&m)?,
                None => vec![Awareness::KinematicsAware; 2],
            };
            let s = match name {
                ReferenceName::SimulationA => {
                    if modes.len() != 2 {
                        return Err(Failure::Validation("--mode: two robots need two modes".into()));
                    }
                    reference::simulation_a([modes[0], modes[1]], eta_d.unwrap_or(2.0))
                }
                ReferenceName::ExperimentA => reference::experiment_a(eta_d),
                ReferenceName::Endonasal => reference::endonasal(match run {
                    RunArg::LeftOnly => EndonasalRun::LeftOnly,
                    RunArg::RightOnly => EndonasalRun::RightOnly,
                    RunArg::Both => EndonasalRun::Both,
                }),
            };
            write(&out, &s.to_json())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Validation(msg)) => {
            eprintln!("invalid scenario: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
