//! One control step for one or several robots.
//!
//! Each step computes the task errors and Jacobians, evaluates every
//! constraint binding, turns the results into VFI rows according to the
//! robots' awareness modes, solves the QP and returns joint velocities. The
//! caller integrates `q ← q + τ q̇`.
//!
//! Oblivious robots are solved first, each on its own and without rows, so
//! their motion does not depend on anything else in the scene. All aware
//! robots then share one QP; the oblivious robots' velocities enter the rows
//! of their pairs as residuals.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, RowDVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dq::{DualQuaternion, Pose, Quaternion, Vector8};
use crate::kinematics::{
    line_state, plane_state, point_state, translation_jacobian, FrameRef, KinematicsError, RobotLine, RobotPlane,
    RobotPoint, SerialManipulator,
};
use crate::primitives::{
    line_to_line, line_to_point, plane_to_point, point_to_line, point_to_plane, point_to_point, DistanceMetric,
    DistanceResult, EntityLine, EntityPlane, EntityPoint, PrimitiveError, WorkspaceEntity,
};
use crate::qp::{build_problem, solve, QpError, QpSolver, TaskBlock};
use crate::vfi::{
    coupled_row, cylinder_guard_pairs, single_row, ColumnBlock, ConstraintRow, Cylinder, Direction, GuardKind,
    Ownership, VfiError, VfiSpec,
};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Primitive(#[from] PrimitiveError),
    #[error(transparent)]
    Vfi(#[from] VfiError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("binding {index}: {reason}")]
    Binding { index: usize, reason: String },
    #[error("expected {expected} {what}, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Awareness {
    Oblivious,
    StaticAware,
    KinematicsAware,
}

impl Awareness {
    pub fn letter(self) -> char {
        match self {
            Awareness::Oblivious => 'o',
            Awareness::StaticAware => 's',
            Awareness::KinematicsAware => 'k',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'o' => Some(Awareness::Oblivious),
            's' => Some(Awareness::StaticAware),
            'k' => Some(Awareness::KinematicsAware),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Full pose tracking with an 8-row task.
    Pose,
    /// Tip position only, 4 rows; the orientation is free.
    Translation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    /// Task gain `η` in 1/s.
    pub eta: f64,
    /// Damping `λ ≥ 0`.
    pub lambda: f64,
    /// Sampling time in seconds.
    pub tau: f64,
    /// Gain factor for robot pairs where both robots are static-aware.
    pub static_pair_gain_scale: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self { eta: 50.0, lambda: 0.0, tau: 0.008, static_pair_gain_scale: 1.0 }
    }
}

/// A tool modeled as a shaft ending at the origin of `frame`, running back
/// along the frame's −z axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tool {
    pub frame: FrameRef,
    pub radius: f64,
    /// Shaft length used for collision checks; rows treat the shaft as semi-infinite.
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotSetup {
    pub robot: SerialManipulator,
    pub task: TaskKind,
    pub mode: Awareness,
    pub tool: Option<Tool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Point,
    Line,
    Plane,
}

/// A point, z-axis line or z-normal plane attached to a robot frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotEntity {
    pub robot: usize,
    pub kind: EntityKind,
    pub frame: FrameRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardPart {
    /// Tip of either tool against the other tool's shaft.
    TipShaft,
    ShaftShaft,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintBinding {
    Workspace { robot: RobotEntity, entity: usize, spec: VfiSpec },
    RobotPair { first: RobotEntity, second: RobotEntity, spec: VfiSpec },
    CylinderGuard { first: usize, second: usize, gain: f64, part: GuardPart },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSetup {
    pub robots: Vec<RobotSetup>,
    pub bindings: Vec<ConstraintBinding>,
    pub params: ControllerParams,
}

/// Result of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStepReport {
    pub qdot: Vec<DVector<f64>>,
    /// Task error per robot in `vec8` layout; translation tasks fill the
    /// primary part only.
    pub errors: Vec<Vector8>,
    pub error_norms: Vec<f64>,
    /// Signed margin to each binding's boundary, in meters; negative means violated.
    pub distances: Vec<f64>,
    /// `bound − row · ġ` per binding (the smallest over its rows); NaN when
    /// the binding emitted no row.
    pub slacks: Vec<f64>,
    pub rows: Vec<ConstraintRow>,
    /// Binding index of every entry in `rows`.
    pub row_owner: Vec<usize>,
    pub infeasible: bool,
    /// Largest KKT residual over the step's solves.
    pub kkt_residual: f64,
    pub solve_time: Duration,
}

/// `vec8(x − x_d)` after choosing the cover of `x` closest to `x_d`, and the
/// sign applied to `x` (which also applies to its Jacobian).
pub fn pose_error(x: &Pose, xd: &Pose) -> (Vector8, f64) {
    let a = (*x.as_dq() - *xd.as_dq()).to_vec8();
    let b = (-*x.as_dq() - *xd.as_dq()).to_vec8();
    if b.norm_squared() < a.norm_squared() {
        (b, -1.0)
    } else {
        (a, 1.0)
    }
}

impl ControlSetup {
    pub fn total_dof(&self) -> usize {
        self.robots.iter().map(|r| r.robot.dof()).sum()
    }

    pub fn blocks(&self) -> Vec<ColumnBlock> {
        let mut offset = 0;
        self.robots
            .iter()
            .map(|r| {
                let b = ColumnBlock::new(offset, r.robot.dof());
                offset += r.robot.dof();
                b
            })
            .collect()
    }

    /// Checks indices, frames and entity-kind combinations against `entities`.
    pub fn validate(&self, entities: &[WorkspaceEntity]) -> Result<(), ControllerError> {
        let check_re = |i: usize, re: &RobotEntity| -> Result<(), ControllerError> {
            let r = self.robots.get(re.robot).ok_or_else(|| ControllerError::Binding {
                index: i,
                reason: format!("robot {} does not exist", re.robot),
            })?;
            if re.frame.joint == 0 || re.frame.joint > r.robot.dof() {
                return Err(ControllerError::Binding {
                    index: i,
                    reason: format!("frame {} is outside 1..={}", re.frame.joint, r.robot.dof()),
                });
            }
            Ok(())
        };
        for (i, b) in self.bindings.iter().enumerate() {
            match b {
                ConstraintBinding::Workspace { robot, entity, spec } => {
                    check_re(i, robot)?;
                    spec.validate()?;
                    let e = entities.get(*entity).ok_or_else(|| ControllerError::Binding {
                        index: i,
                        reason: format!("entity {entity} does not exist"),
                    })?;
                    let ok = matches!(
                        (robot.kind, e),
                        (EntityKind::Point, WorkspaceEntity::Point(_))
                            | (EntityKind::Point, WorkspaceEntity::Line(_))
                            | (EntityKind::Point, WorkspaceEntity::Plane(_))
                            | (EntityKind::Line, WorkspaceEntity::Point(_))
                            | (EntityKind::Line, WorkspaceEntity::Line(_))
                            | (EntityKind::Plane, WorkspaceEntity::Point(_))
                    );
                    if !ok {
                        return Err(ControllerError::Binding {
                            index: i,
                            reason: format!("no primitive for robot {:?} against this entity", robot.kind),
                        });
                    }
                }
                ConstraintBinding::RobotPair { first, second, spec } => {
                    check_re(i, first)?;
                    check_re(i, second)?;
                    spec.validate()?;
                    if first.robot == second.robot {
                        return Err(ControllerError::Binding {
                            index: i,
                            reason: "a robot pair needs two different robots".into(),
                        });
                    }
                    let ok = matches!(
                        (first.kind, second.kind),
                        (EntityKind::Point, EntityKind::Point)
                            | (EntityKind::Point, EntityKind::Line)
                            | (EntityKind::Line, EntityKind::Point)
                            | (EntityKind::Line, EntityKind::Line)
                            | (EntityKind::Plane, EntityKind::Point)
                            | (EntityKind::Point, EntityKind::Plane)
                    );
                    if !ok {
                        return Err(ControllerError::Binding {
                            index: i,
                            reason: format!("no primitive for {:?} against {:?}", first.kind, second.kind),
                        });
                    }
                }
                ConstraintBinding::CylinderGuard { first, second, gain, .. } => {
                    for r in [first, second] {
                        let tool = self.robots.get(*r).and_then(|s| s.tool);
                        if tool.is_none() {
                            return Err(ControllerError::Binding {
                                index: i,
                                reason: format!("robot {r} has no tool"),
                            });
                        }
                    }
                    if first == second {
                        return Err(ControllerError::Binding {
                            index: i,
                            reason: "a guard needs two different robots".into(),
                        });
                    }
                    VfiSpec::keep_out(0.0, *gain).validate()?;
                }
            }
        }
        Ok(())
    }
}

/// Robot-side state of an entity at the current configuration.
#[derive(Debug, Clone)]
enum EntityState {
    Point(RobotPoint),
    Line(RobotLine),
    Plane(RobotPlane),
}

fn entity_state(robot: &SerialManipulator, q: &[f64], re: &RobotEntity) -> Result<EntityState, KinematicsError> {
    let fk = robot.frame_kinematics(q, &re.frame)?;
    Ok(match re.kind {
        EntityKind::Point => EntityState::Point(point_state(&fk.pose, &fk.jacobian)),
        EntityKind::Line => EntityState::Line(line_state(&fk.pose, &fk.jacobian)),
        EntityKind::Plane => EntityState::Plane(plane_state(&fk.pose, &fk.jacobian)),
    })
}

/// The same entity seen as moving workspace geometry with velocity `J q̇`.
fn as_workspace(state: &EntityState, qdot: Option<&DVector<f64>>) -> WorkspaceEntity {
    let vel4 = |j: &DMatrix<f64>| -> Quaternion {
        match qdot {
            Some(v) => {
                let r = j * v;
                Quaternion::new(0.0, r[1], r[2], r[3])
            }
            None => Quaternion::ZERO,
        }
    };
    match state {
        EntityState::Point(p) => WorkspaceEntity::Point(EntityPoint::moving(p.position, vel4(&p.jacobian))),
        EntityState::Line(l) => WorkspaceEntity::Line(EntityLine {
            line: l.line,
            velocity: DualQuaternion::new(vel4(&l.j_rz), vel4(&l.j_mz)),
        }),
        EntityState::Plane(p) => {
            let dd = qdot.map_or(0.0, |v| (&p.j_d * v)[0]);
            WorkspaceEntity::Plane(EntityPlane {
                normal: p.normal,
                offset: p.offset,
                normal_velocity: vel4(&p.j_rz),
                offset_velocity: dd,
            })
        }
    }
}

fn evaluate(state: &EntityState, entity: &WorkspaceEntity) -> Result<DistanceResult, PrimitiveError> {
    match (state, entity) {
        (EntityState::Point(t), WorkspaceEntity::Point(p)) => Ok(point_to_point(t, p)),
        (EntityState::Point(t), WorkspaceEntity::Line(l)) => point_to_line(t, l),
        (EntityState::Point(t), WorkspaceEntity::Plane(pi)) => point_to_plane(t, pi),
        (EntityState::Line(l), WorkspaceEntity::Point(p)) => Ok(line_to_point(l, p)),
        (EntityState::Line(l), WorkspaceEntity::Line(m)) => line_to_line(l, m),
        (EntityState::Plane(pi), WorkspaceEntity::Point(p)) => Ok(plane_to_point(pi, p)),
        _ => Err(PrimitiveError::InvalidPoint),
    }
}

/// Signed margin in meters.
fn margin_m(res: &DistanceResult, spec: &VfiSpec) -> f64 {
    let d = res.distance();
    match (res.metric, spec.direction) {
        (DistanceMetric::Signed, _) => spec.margin(res),
        (DistanceMetric::Squared, Direction::KeepOut) => d - spec.d_safe,
        (DistanceMetric::Squared, Direction::KeepIn) => spec.d_safe - d,
    }
}

fn with_residual(res: &DistanceResult, residual: f64) -> DistanceResult {
    DistanceResult { residual, ..res.clone() }
}

fn dot(row: &RowDVector<f64>, v: &DVector<f64>) -> f64 {
    row.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
}

/// Rows for one geometric pair between robots `a` and `b`.
///
/// `res_a` and `res_b` are the same distance differentiated with respect to
/// each robot's joints, both with zero residual.
#[allow(clippy::too_many_arguments)]
fn pair_rows(
    res_a: &DistanceResult,
    res_b: &DistanceResult,
    spec: &VfiSpec,
    (a, b): (usize, usize),
    modes: &[Awareness],
    blocks: &[ColumnBlock],
    known_qdot: &[Option<DVector<f64>>],
    params: &ControllerParams,
    total: usize,
) -> Result<Vec<ConstraintRow>, VfiError> {
    use Awareness::*;
    let zero_a = with_residual(res_a, 0.0);
    let zero_b = with_residual(res_b, 0.0);
    let (ba, bb) = (blocks[a], blocks[b]);
    let rows = match (modes[a], modes[b]) {
        (Oblivious, Oblivious) => vec![],
        (Oblivious, mb) => {
            let zeta = match (mb, &known_qdot[a]) {
                (KinematicsAware, Some(v)) => dot(&res_a.jacobian, v),
                _ => 0.0,
            };
            vec![single_row(&with_residual(res_b, zeta), spec, bb, total)?]
        }
        (ma, Oblivious) => {
            let zeta = match (ma, &known_qdot[b]) {
                (KinematicsAware, Some(v)) => dot(&res_b.jacobian, v),
                _ => 0.0,
            };
            vec![single_row(&with_residual(res_a, zeta), spec, ba, total)?]
        }
        (KinematicsAware, KinematicsAware) => {
            vec![coupled_row(&zero_a, ba, &zero_b, bb, spec, total, Ownership::BOTH)?]
        }
        (StaticAware, StaticAware) => {
            let scaled = spec.with_gain(spec.gain * params.static_pair_gain_scale);
            vec![single_row(&zero_a, &scaled, ba, total)?, single_row(&zero_b, &scaled, bb, total)?]
        }
        (StaticAware, KinematicsAware) => vec![
            single_row(&zero_a, spec, ba, total)?,
            coupled_row(&zero_a, ba, &zero_b, bb, spec, total, Ownership::BOTH)?,
        ],
        (KinematicsAware, StaticAware) => vec![
            single_row(&zero_b, spec, bb, total)?,
            coupled_row(&zero_a, ba, &zero_b, bb, spec, total, Ownership::BOTH)?,
        ],
    };
    Ok(rows)
}

fn cylinder(robot: &SerialManipulator, q: &[f64], tool: &Tool) -> Result<Cylinder, KinematicsError> {
    let fk = robot.frame_kinematics(q, &tool.frame)?;
    Ok(Cylinder {
        tip: point_state(&fk.pose, &fk.jacobian),
        shaft: line_state(&fk.pose, &fk.jacobian),
        radius: tool.radius,
    })
}

/// Distance from `p` to the ray `origin + s·dir`, `s ≥ 0`.
pub fn point_ray_distance(p: &Vector3<f64>, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
    let s = (p - origin).dot(dir).max(0.0);
    (p - origin - dir * s).norm()
}

/// Distance between the rays `o1 + s·d1` and `o2 + u·d2` (`s, u ≥ 0`, unit directions).
pub fn ray_ray_distance(o1: &Vector3<f64>, d1: &Vector3<f64>, o2: &Vector3<f64>, d2: &Vector3<f64>) -> f64 {
    let mut best = point_ray_distance(o1, o2, d2).min(point_ray_distance(o2, o1, d1));
    let b = d1.dot(d2);
    let den = 1.0 - b * b;
    if den > 1e-12 {
        let w = o1 - o2;
        let (d, e) = (d1.dot(&w), d2.dot(&w));
        let s = (b * e - d) / den;
        let u = (e - b * d) / den;
        if s >= 0.0 && u >= 0.0 {
            best = best.min((o1 + d1 * s - o2 - d2 * u).norm());
        }
    }
    best
}

fn guard_margin(c1: &Cylinder, c2: &Cylinder, part: GuardPart) -> f64 {
    let t1 = c1.tip.position.vector();
    let t2 = c2.tip.position.vector();
    let a1 = -c1.shaft.direction().vector();
    let a2 = -c2.shaft.direction().vector();
    let d_safe = c1.radius + c2.radius;
    let tip_shaft = point_ray_distance(&t1, &t2, &a2).min(point_ray_distance(&t2, &t1, &a1));
    let d = match part {
        GuardPart::TipShaft => tip_shaft,
        GuardPart::ShaftShaft | GuardPart::All => ray_ray_distance(&t1, &a1, &t2, &a2),
    };
    d - d_safe
}

/// Runs one control step. `q`, `targets` are per robot; `entities` carry the
/// workspace geometry with the velocities the residual policy supplies.
pub fn multi_robot_step(
    setup: &ControlSetup,
    solver: &mut QpSolver,
    q: &[DVector<f64>],
    targets: &[Pose],
    entities: &[WorkspaceEntity],
) -> Result<ControlStepReport, ControllerError> {
    let start = Instant::now();
    let n_robots = setup.robots.len();
    if q.len() != n_robots {
        return Err(ControllerError::Shape { what: "joint vectors", expected: n_robots, got: q.len() });
    }
    if targets.len() != n_robots {
        return Err(ControllerError::Shape { what: "targets", expected: n_robots, got: targets.len() });
    }
    let params = &setup.params;
    let blocks = setup.blocks();
    let total = setup.total_dof();
    let modes: Vec<Awareness> = setup.robots.iter().map(|r| r.mode).collect();

    // Task errors and Jacobians.
    let mut tasks = Vec::with_capacity(n_robots);
    let mut errors = Vec::with_capacity(n_robots);
    for (i, rs) in setup.robots.iter().enumerate() {
        let qi = q[i].as_slice();
        let fk = rs.robot.frame_kinematics(qi, &FrameRef::at(rs.robot.dof()))?;
        match rs.task {
            TaskKind::Pose => {
                let (err, sign) = pose_error(&fk.pose, &targets[i]);
                let jac = fk.jacobian * sign;
                tasks.push(TaskBlock { jacobian: jac, error: DVector::from_column_slice(err.as_slice()) });
                errors.push(err);
            }
            TaskKind::Translation => {
                let j_t = translation_jacobian(&fk.jacobian, &fk.pose);
                let e = (fk.pose.translation() - targets[i].translation()).to_vec4();
                let mut err = Vector8::zeros();
                err.fixed_rows_mut::<4>(0).copy_from(&e);
                tasks.push(TaskBlock { jacobian: j_t, error: DVector::from_column_slice(e.as_slice()) });
                errors.push(err);
            }
        }
    }

    // Oblivious robots first, each on its own.
    let mut qdot: Vec<Option<DVector<f64>>> = vec![None; n_robots];
    let mut kkt_residual = 0.0f64;
    for i in 0..n_robots {
        if modes[i] == Awareness::Oblivious {
            let p = build_problem(std::slice::from_ref(&tasks[i]), params.eta, params.lambda, &[])?;
            let sol = solve(&p)?;
            kkt_residual = kkt_residual.max(sol.kkt.max());
            qdot[i] = Some(sol.x);
        }
    }

    // Constraint rows.
    let mut rows = Vec::new();
    let mut row_owner = Vec::new();
    let mut distances = Vec::with_capacity(setup.bindings.len());
    for (bi, binding) in setup.bindings.iter().enumerate() {
        let emitted: Vec<ConstraintRow> = match binding {
            ConstraintBinding::Workspace { robot, entity, spec } => {
                let rs = &setup.robots[robot.robot];
                let state = entity_state(&rs.robot, q[robot.robot].as_slice(), robot)?;
                let res = evaluate(&state, &entities[*entity])?;
                distances.push(margin_m(&res, spec));
                if modes[robot.robot] == Awareness::Oblivious {
                    vec![]
                } else {
                    vec![single_row(&res, spec, blocks[robot.robot], total)?]
                }
            }
            ConstraintBinding::RobotPair { first, second, spec } => {
                let (a, b) = (first.robot, second.robot);
                let sa = entity_state(&setup.robots[a].robot, q[a].as_slice(), first)?;
                let sb = entity_state(&setup.robots[b].robot, q[b].as_slice(), second)?;
                let res_a = evaluate(&sa, &as_workspace(&sb, None))?;
                let res_b = evaluate(&sb, &as_workspace(&sa, None))?;
                distances.push(margin_m(&res_a, spec));
                pair_rows(&res_a, &res_b, spec, (a, b), &modes, &blocks, &qdot, params, total)?
            }
            ConstraintBinding::CylinderGuard { first, second, gain, part } => {
                let (a, b) = (*first, *second);
                let ta = setup.robots[a].tool.expect("validated");
                let tb = setup.robots[b].tool.expect("validated");
                let ca = cylinder(&setup.robots[a].robot, q[a].as_slice(), &ta)?;
                let cb = cylinder(&setup.robots[b].robot, q[b].as_slice(), &tb)?;
                distances.push(guard_margin(&ca, &cb, *part));
                let mut out = Vec::new();
                for pair in cylinder_guard_pairs(&ca, &cb)? {
                    let wanted = match part {
                        GuardPart::All => true,
                        GuardPart::TipShaft => pair.kind != GuardKind::ShaftShaft,
                        GuardPart::ShaftShaft => pair.kind == GuardKind::ShaftShaft,
                    };
                    if wanted {
                        let spec = VfiSpec::keep_out(pair.d_safe, *gain);
                        out.extend(pair_rows(
                            &pair.first,
                            &pair.second,
                            &spec,
                            (a, b),
                            &modes,
                            &blocks,
                            &qdot,
                            params,
                            total,
                        )?);
                    }
                }
                out
            }
        };
        for r in emitted {
            rows.push(r);
            row_owner.push(bi);
        }
    }

    // One QP over all aware robots.
    let aware: Vec<usize> = (0..n_robots).filter(|i| modes[*i] != Awareness::Oblivious).collect();
    let mut infeasible = false;
    if !aware.is_empty() {
        let cols: Vec<usize> =
            aware.iter().flat_map(|i| blocks[*i].offset..blocks[*i].offset + blocks[*i].len).collect();
        let sub_rows: Vec<ConstraintRow> = rows
            .iter()
            .map(|r| ConstraintRow {
                coeffs: RowDVector::from_iterator(cols.len(), cols.iter().map(|c| r.coeffs[*c])),
                bound: r.bound,
            })
            .collect();
        let sub_tasks: Vec<TaskBlock> = aware.iter().map(|i| tasks[*i].clone()).collect();
        let problem = build_problem(&sub_tasks, params.eta, params.lambda, &sub_rows)?;
        match solver.solve(&problem) {
            Ok(sol) => {
                kkt_residual = kkt_residual.max(sol.kkt.max());
                let mut offset = 0;
                for i in &aware {
                    let n = blocks[*i].len;
                    qdot[*i] = Some(sol.x.rows(offset, n).into_owned());
                    offset += n;
                }
            }
            Err(QpError::Infeasible { .. }) => {
                infeasible = true;
                solver.reset();
                for i in &aware {
                    qdot[*i] = Some(DVector::zeros(blocks[*i].len));
                }
            }
            Err(e) => return Err(e.into()),
        }
    }

    let qdot: Vec<DVector<f64>> = qdot.into_iter().map(|v| v.expect("every robot solved")).collect();
    let mut g = DVector::zeros(total);
    for (i, v) in qdot.iter().enumerate() {
        g.rows_mut(blocks[i].offset, blocks[i].len).copy_from(v);
    }
    let mut slacks = vec![f64::NAN; setup.bindings.len()];
    for (r, owner) in rows.iter().zip(&row_owner) {
        let s = r.slack(g.as_slice());
        slacks[*owner] = if slacks[*owner].is_nan() { s } else { slacks[*owner].min(s) };
    }

    Ok(ControlStepReport {
        error_norms: errors.iter().map(|e| e.norm()).collect(),
        errors,
        qdot,
        distances,
        slacks,
        rows,
        row_owner,
        infeasible,
        kkt_residual,
        solve_time: start.elapsed(),
    })
}

/// Single-robot convenience wrapper; the robot's mode in `setup` applies.
pub fn single_robot_step(
    setup: &ControlSetup,
    solver: &mut QpSolver,
    q: &DVector<f64>,
    target: &Pose,
    entities: &[WorkspaceEntity],
) -> Result<ControlStepReport, ControllerError> {
    if setup.robots.len() != 1 {
        return Err(ControllerError::Shape { what: "robots", expected: 1, got: setup.robots.len() });
    }
    multi_robot_step(setup, solver, std::slice::from_ref(q), std::slice::from_ref(target), entities)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualPolicy {
    /// Analytic velocity from the motion script.
    Exact,
    /// Backward difference of the last two samples.
    FiniteDifference,
    /// Entities are treated as static.
    Zero,
}

/// Supplies an entity's velocity according to `policy`.
///
/// `previous` is the entity sampled one step `tau` earlier, if any; `exact`
/// carries the analytic velocity.
pub fn estimate_entity_residual(
    exact: &WorkspaceEntity,
    previous: Option<&WorkspaceEntity>,
    tau: f64,
    policy: ResidualPolicy,
) -> WorkspaceEntity {
    match policy {
        ResidualPolicy::Exact => *exact,
        ResidualPolicy::Zero => zero_velocity(exact),
        ResidualPolicy::FiniteDifference => match previous {
            None => zero_velocity(exact),
            Some(prev) => difference(exact, prev, tau),
        },
    }
}

fn zero_velocity(e: &WorkspaceEntity) -> WorkspaceEntity {
    match e {
        WorkspaceEntity::Point(p) => WorkspaceEntity::Point(EntityPoint::fixed(p.position)),
        WorkspaceEntity::Line(l) => WorkspaceEntity::Line(EntityLine { line: l.line, velocity: DualQuaternion::ZERO }),
        WorkspaceEntity::Plane(p) => WorkspaceEntity::Plane(p.with_velocity(Quaternion::ZERO, 0.0)),
    }
}

fn difference(now: &WorkspaceEntity, prev: &WorkspaceEntity, tau: f64) -> WorkspaceEntity {
    let k = 1.0 / tau;
    match (now, prev) {
        (WorkspaceEntity::Point(a), WorkspaceEntity::Point(b)) => {
            WorkspaceEntity::Point(EntityPoint::moving(a.position, (a.position - b.position) * k))
        }
        (WorkspaceEntity::Line(a), WorkspaceEntity::Line(b)) => {
            WorkspaceEntity::Line(EntityLine { line: a.line, velocity: ((a.line - b.line) * k).im() })
        }
        (WorkspaceEntity::Plane(a), WorkspaceEntity::Plane(b)) => {
            WorkspaceEntity::Plane(a.with_velocity(((a.normal - b.normal) * k).im(), (a.offset - b.offset) * k))
        }
        _ => zero_velocity(now),
    }
}
