//! Scenario files, reference scenarios, the fixed-step runner and the
//! awareness-mode suite.

pub mod reference;
pub mod runner;
pub mod scenario;

pub use runner::{metrics_from_trace, run, segment_distance, RunMetrics, RunOutput, SimError, Trace};
pub use scenario::{Scenario, ScenarioError};

use std::fmt::Write as _;

use crate::controller::Awareness;

/// One output file of a suite run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteFile {
    pub name: String,
    pub contents: String,
}

/// Summary line of one suite run.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub label: String,
    pub metrics: RunMetrics,
}

/// Runs the nine-mode grid of the two-robot shaft scenario plus each robot
/// alone, returning traces and a summary table. Wall times are left out so
/// the files are reproducible.
pub fn table3(eta_d: f64) -> Result<(Vec<SuiteRow>, Vec<SuiteFile>), SimError> {
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let mut push = |label: String, scenario: Scenario| -> Result<(), SimError> {
        let out = run(&scenario)?;
        files.push(SuiteFile { name: format!("{label}.csv"), contents: out.trace.to_csv() });
        rows.push(SuiteRow { label, metrics: out.metrics });
        Ok(())
    };
    for modes in reference::mode_grid() {
        let s = reference::simulation_a(modes, eta_d);
        push(format!("modes-{}{}", modes[0].letter(), modes[1].letter()), s)?;
    }
    let base = reference::simulation_a([Awareness::Oblivious, Awareness::Oblivious], eta_d);
    for i in 0..2 {
        push(format!("solo-{}", i + 1), base.solo(i))?;
    }
    let mut table = String::from("run,integrated_error_1,integrated_error_2,combined,collision,min_shaft_distance_m\n");
    for r in &rows {
        let e = &r.metrics.integrated_error;
        let e2 = e.get(1).map_or(String::new(), |v| v.to_string());
        let d = r.metrics.min_shaft_distance_m.map_or(String::new(), |v| v.to_string());
        writeln!(table, "{},{},{},{},{},{}", r.label, e[0], e2, e.iter().sum::<f64>(), r.metrics.collision, d)
            .expect("string write");
    }
    files.push(SuiteFile { name: "table3.csv".into(), contents: table });
    Ok((rows, files))
}
