//! Fixed-step simulation of a scenario, CSV traces and run metrics.

use std::fmt::Write as _;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scenario::{BuiltScenario, Scenario, ScenarioError};
use crate::controller::{estimate_entity_residual, multi_robot_step, ControlSetup, ControllerError};
use crate::qp::QpSolver;

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("step {step}: {source}")]
    Controller { step: usize, source: ControllerError },
    #[error("trace: {0}")]
    Trace(String),
}

/// Column-oriented trace; every row is one sample at `t = kτ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub scenario_hash: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trace {
    pub fn manifest(&self) -> String {
        format!("# vfi-sim trace schema={TRACE_SCHEMA} scenario_hash={}", self.scenario_hash)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.manifest());
        out.push('\n');
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{v}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, SimError> {
        let mut lines = text.lines();
        let manifest = lines.next().ok_or_else(|| SimError::Trace("empty file".into()))?;
        let hash = manifest
            .strip_prefix(&format!("# vfi-sim trace schema={TRACE_SCHEMA} scenario_hash="))
            .ok_or_else(|| SimError::Trace("missing manifest line".into()))?;
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| SimError::Trace("missing header".into()))?
            .split(',')
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| SimError::Trace(format!("row {}: {e}", i + 1)))?;
            if row.len() != header.len() {
                return Err(SimError::Trace(format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Trace { scenario_hash: hash.to_owned(), header, rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Trapezoidal `∫‖x̃_i‖ dt` per robot.
    pub integrated_error: Vec<f64>,
    /// Smallest distance between tool shafts over the run; absent with fewer than two tools.
    pub min_shaft_distance_m: Option<f64>,
    pub collision: bool,
    pub infeasible_steps: usize,
    pub max_step_wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub metrics: RunMetrics,
    /// Wall time of every control step, in seconds.
    pub step_times_s: Vec<f64>,
    /// Largest KKT residual of every control step.
    pub kkt_residuals: Vec<f64>,
}

pub fn trace_header(setup: &ControlSetup) -> Vec<String> {
    let mut h = vec!["t_s".to_owned()];
    for (i, r) in setup.robots.iter().enumerate() {
        let i = i + 1;
        h.extend((1..=r.robot.dof()).map(|k| format!("q_{i}_{k}")));
        h.extend((1..=8).map(|k| format!("err8_{i}_{k}")));
        h.push(format!("errnorm_{i}"));
    }
    for j in 1..=setup.bindings.len() {
        h.push(format!("dist_{j}"));
        h.push(format!("slack_{j}"));
    }
    h.push("collision_flag".into());
    h
}

/// Distance between the segments `[p0, p1]` and `[q0, q1]`.
pub fn segment_distance(p0: &Vector3<f64>, p1: &Vector3<f64>, q0: &Vector3<f64>, q1: &Vector3<f64>) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return r.norm();
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let den = a * e - b * b;
            let mut s0 = if den > 0.0 { ((b * f - c * e) / den).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

/// Tool shaft segments `(tip, back end)` for every robot with a tool.
type Segment = (Vector3<f64>, Vector3<f64>);

fn shaft_segments(setup: &ControlSetup, q: &[Vec<f64>]) -> Result<Vec<Segment>, ControllerError> {
    let mut out = Vec::new();
    for (r, qi) in setup.robots.iter().zip(q) {
        if let Some(tool) = r.tool {
            let fk = r.robot.frame_kinematics(qi, &tool.frame)?;
            let tip = fk.pose.position();
            let axis = fk.pose.rotate(&crate::dq::Quaternion::K).vector();
            out.push((tip, tip - axis * tool.length));
        }
    }
    Ok(out)
}

/// Smallest pairwise shaft distance at configuration `q`.
pub fn min_shaft_distance(setup: &ControlSetup, q: &[Vec<f64>]) -> Result<Option<f64>, ControllerError> {
    let segs = shaft_segments(setup, q)?;
    let mut best: Option<f64> = None;
    for i in 0..segs.len() {
        for j in i + 1..segs.len() {
            let d = segment_distance(&segs[i].0, &segs[i].1, &segs[j].0, &segs[j].1);
            best = Some(best.map_or(d, |b: f64| b.min(d)));
        }
    }
    Ok(best)
}

fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2).zip(y.windows(2)).map(|(t, y)| 0.5 * (y[0] + y[1]) * (t[1] - t[0])).sum()
}

/// Recomputes the deterministic metrics from a trace. Wall time is not in
/// the trace and comes back as zero.
pub fn metrics_from_trace(scenario: &Scenario, trace: &Trace) -> Result<RunMetrics, SimError> {
    let built = scenario.build()?;
    let col = |name: &str| trace.column(name).ok_or_else(|| SimError::Trace(format!("missing column {name}")));
    let t: Vec<f64> = {
        let c = col("t_s")?;
        trace.rows.iter().map(|r| r[c]).collect()
    };
    let mut integrated_error = Vec::new();
    let mut q_cols = Vec::new();
    for (i, r) in built.setup.robots.iter().enumerate() {
        let c = col(&format!("errnorm_{}", i + 1))?;
        let y: Vec<f64> = trace.rows.iter().map(|r| r[c]).collect();
        integrated_error.push(trapezoid(&t, &y));
        let mut cols = Vec::new();
        for k in 1..=r.robot.dof() {
            cols.push(col(&format!("q_{}_{k}", i + 1))?);
        }
        q_cols.push(cols);
    }
    let flag = col("collision_flag")?;
    let mut min_d: Option<f64> = None;
    let mut collision = false;
    for row in &trace.rows {
        let q: Vec<Vec<f64>> = q_cols.iter().map(|cols| cols.iter().map(|c| row[*c]).collect()).collect();
        if let Some(d) =
            min_shaft_distance(&built.setup, &q).map_err(|e| SimError::Controller { step: 0, source: e })?
        {
            min_d = Some(min_d.map_or(d, |b| b.min(d)));
        }
        collision |= row[flag] != 0.0;
    }
    Ok(RunMetrics {
        integrated_error,
        min_shaft_distance_m: min_d,
        collision,
        infeasible_steps: 0,
        max_step_wall_time_s: 0.0,
    })
}

/// Runs `scenario` from `t = 0` to its duration with explicit Euler steps.
pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    let built = scenario.build()?;
    let hash = scenario.hash();
    run_built(&built, scenario.collision_threshold_m, hash)
}

fn run_built(built: &BuiltScenario, threshold: f64, hash: String) -> Result<RunOutput, SimError> {
    let setup = &built.setup;
    let tau = setup.params.tau;
    let header = trace_header(setup);
    let mut q: Vec<Vec<f64>> = built.q0.clone();
    let mut solver = QpSolver::new();
    let mut rows = Vec::with_capacity(built.steps + 1);
    let mut step_times = Vec::with_capacity(built.steps + 1);
    let mut kkt = Vec::with_capacity(built.steps + 1);
    let mut infeasible_steps = 0;
    let mut min_d: Option<f64> = None;
    let mut collision = false;
    let mut times = Vec::with_capacity(built.steps + 1);
    let mut norms: Vec<Vec<f64>> = vec![Vec::with_capacity(built.steps + 1); setup.robots.len()];

    for k in 0..=built.steps {
        let t = k as f64 * tau;
        let targets: Vec<_> = built.targets.iter().map(|s| s.at(t)).collect();
        let entities: Vec<_> = built
            .entities
            .iter()
            .map(|e| {
                let now = e.at(t);
                let prev = (k > 0).then(|| e.at((k - 1) as f64 * tau));
                estimate_entity_residual(&now, prev.as_ref(), tau, built.residual_policy)
            })
            .collect();
        let qv: Vec<DVector<f64>> = q.iter().map(|v| DVector::from_column_slice(v)).collect();
        let report = multi_robot_step(setup, &mut solver, &qv, &targets, &entities)
            .map_err(|e| SimError::Controller { step: k, source: e })?;
        step_times.push(report.solve_time.as_secs_f64());
        kkt.push(report.kkt_residual);
        if report.infeasible {
            infeasible_steps += 1;
        }

        let d = min_shaft_distance(setup, &q).map_err(|e| SimError::Controller { step: k, source: e })?;
        let flag = d.is_some_and(|d| d < threshold);
        if let Some(d) = d {
            min_d = Some(min_d.map_or(d, |b| b.min(d)));
        }
        collision |= flag;

        let mut row = Vec::with_capacity(header.len());
        row.push(t);
        for (i, qi) in q.iter().enumerate() {
            row.extend_from_slice(qi);
            row.extend_from_slice(report.errors[i].as_slice());
            row.push(report.error_norms[i]);
            norms[i].push(report.error_norms[i]);
        }
        for (d, s) in report.distances.iter().zip(&report.slacks) {
            row.push(*d);
            row.push(*s);
        }
        row.push(if flag { 1.0 } else { 0.0 });
        rows.push(row);
        times.push(t);

        if k < built.steps {
            for (qi, v) in q.iter_mut().zip(&report.qdot) {
                for (a, b) in qi.iter_mut().zip(v.iter()) {
                    *a += tau * b;
                }
            }
        }
    }

    let metrics = RunMetrics {
        integrated_error: norms.iter().map(|y| trapezoid(&times, y)).collect(),
        min_shaft_distance_m: min_d,
        collision,
        infeasible_steps,
        max_step_wall_time_s: step_times.iter().copied().fold(0.0, f64::max),
    };
    Ok(RunOutput {
        trace: Trace { scenario_hash: hash, header, rows },
        metrics,
        step_times_s: step_times,
        kkt_residuals: kkt,
    })
}
