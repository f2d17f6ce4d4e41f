//! Scenario files: a JSON tree with units in the field names.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::{
    Awareness, ConstraintBinding, ControlSetup, ControllerParams, EntityKind, GuardPart, ResidualPolicy, RobotEntity,
    RobotSetup, TaskKind, Tool,
};
use crate::dq::{DualQuaternion, Pose, Quaternion};
use crate::kinematics::{DhRow, FrameRef, SerialManipulator};
use crate::primitives::{DistanceMetric, EntityLine, EntityPlane, EntityPoint, WorkspaceEntity};
use crate::vfi::{Direction, VfiSpec};

pub const DEFAULT_COLLISION_THRESHOLD_M: f64 = 0.003;

const IDENTITY8: [f64; 8] = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];

/// A validation failure, located by a JSON-style path such as `constraints[2].entity`.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {message}")]
pub struct ScenarioError {
    pub path: String,
    pub message: String,
}

impl ScenarioError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

fn identity8() -> [f64; 8] {
    IDENTITY8
}

fn default_threshold() -> f64 {
    DEFAULT_COLLISION_THRESHOLD_M
}

fn default_one() -> f64 {
    1.0
}

fn default_policy() -> ResidualPolicy {
    ResidualPolicy::Exact
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
    pub duration_s: f64,
    #[serde(default = "default_threshold")]
    pub collision_threshold_m: f64,
    pub params: ParamsSpec,
    pub robots: Vec<RobotSpec>,
    #[serde(default)]
    pub entities: Vec<EntitySpec>,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub eta_per_s: f64,
    pub lambda: f64,
    pub tau_s: f64,
    /// Default VFI gain for constraints that do not set their own.
    pub eta_d_per_s: f64,
    #[serde(default = "default_one")]
    pub static_pair_gain_scale: f64,
    #[serde(default = "default_policy")]
    pub residual_policy: ResidualPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub name: String,
    pub dh: Vec<DhRow>,
    /// Unit dual quaternion coefficients `(w, x, y, z)` primary then dual.
    pub base: [f64; 8],
    #[serde(default = "identity8")]
    pub effector: [f64; 8],
    pub q0_rad: Vec<f64>,
    pub mode: Awareness,
    pub task: TaskKind,
    #[serde(default)]
    pub tool: Option<ToolSpec>,
    /// Without a trajectory the robot holds its initial pose.
    #[serde(default)]
    pub trajectory: Option<TrajectorySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub joint: usize,
    #[serde(default = "identity8")]
    pub offset: [f64; 8],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    /// Tip frame; defaults to the end effector. The shaft runs along its −z axis.
    #[serde(default)]
    pub frame: Option<FrameSpec>,
    pub radius_m: f64,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Desired orientation `(w, x, y, z)`; the initial one when absent.
    #[serde(default)]
    pub orientation: Option<[f64; 4]>,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t_s: f64,
    pub position_m: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometrySpec {
    Point { position_m: [f64; 3] },
    Line { point_m: [f64; 3], direction: [f64; 3] },
    Plane { point_m: [f64; 3], normal: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySpec {
    pub name: String,
    pub geometry: GeometrySpec,
    /// Piecewise-linear rigid displacement; static when empty.
    #[serde(default)]
    pub motion: Vec<DisplacementKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisplacementKey {
    pub t_s: f64,
    pub displacement_m: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachSpec {
    pub robot: usize,
    pub kind: EntityKind,
    pub frame: FrameSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    Workspace {
        name: String,
        attach: AttachSpec,
        entity: usize,
        direction: Direction,
        metric: DistanceMetric,
        d_safe_m: f64,
        #[serde(default)]
        gain_per_s: Option<f64>,
    },
    RobotPair {
        name: String,
        first: AttachSpec,
        second: AttachSpec,
        direction: Direction,
        metric: DistanceMetric,
        d_safe_m: f64,
        #[serde(default)]
        gain_per_s: Option<f64>,
    },
    CylinderGuard {
        name: String,
        first: usize,
        second: usize,
        part: GuardPart,
        #[serde(default)]
        gain_per_s: Option<f64>,
    },
}

impl ConstraintSpec {
    pub fn name(&self) -> &str {
        match self {
            ConstraintSpec::Workspace { name, .. }
            | ConstraintSpec::RobotPair { name, .. }
            | ConstraintSpec::CylinderGuard { name, .. } => name,
        }
    }
}

/// Piecewise-linear interpolation over `(t, value)` keys, held constant
/// outside the key range. Returns the value and its right derivative.
fn interpolate(keys: &[(f64, Vector3<f64>)], t: f64) -> (Vector3<f64>, Vector3<f64>) {
    let Some(first) = keys.first() else {
        return (Vector3::zeros(), Vector3::zeros());
    };
    if t < first.0 {
        return (first.1, Vector3::zeros());
    }
    for w in keys.windows(2) {
        let ((t0, p0), (t1, p1)) = (w[0], w[1]);
        if t >= t0 && t < t1 {
            let rate = (p1 - p0) / (t1 - t0);
            return (p0 + rate * (t - t0), rate);
        }
    }
    (keys[keys.len() - 1].1, Vector3::zeros())
}

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn q3(v: &Vector3<f64>) -> Quaternion {
    Quaternion::from_vector3(v)
}

/// Entity geometry and its motion script.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityScript {
    base: WorkspaceEntity,
    keys: Vec<(f64, Vector3<f64>)>,
}

impl EntityScript {
    /// The entity at `t` with its exact velocity.
    pub fn at(&self, t: f64) -> WorkspaceEntity {
        let (d, v) = interpolate(&self.keys, t);
        match self.base {
            WorkspaceEntity::Point(p) => WorkspaceEntity::Point(EntityPoint::moving(p.position + q3(&d), q3(&v))),
            WorkspaceEntity::Line(l) => {
                let dir = l.line.primary.vector();
                let m = l.line.dual.vector() + d.cross(&dir);
                WorkspaceEntity::Line(EntityLine {
                    line: DualQuaternion::new(l.line.primary, q3(&m)),
                    velocity: DualQuaternion::new(Quaternion::ZERO, q3(&v.cross(&dir))),
                })
            }
            WorkspaceEntity::Plane(p) => {
                let n = p.normal.vector();
                WorkspaceEntity::Plane(EntityPlane {
                    normal: p.normal,
                    offset: p.offset + d.dot(&n),
                    normal_velocity: Quaternion::ZERO,
                    offset_velocity: v.dot(&n),
                })
            }
        }
    }
}

/// Per-robot desired pose over time.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetScript {
    orientation: Quaternion,
    keys: Vec<(f64, Vector3<f64>)>,
    hold: Pose,
}

impl TargetScript {
    pub fn at(&self, t: f64) -> Pose {
        if self.keys.is_empty() {
            return self.hold;
        }
        let (p, _) = interpolate(&self.keys, t);
        Pose::new(self.orientation, q3(&p)).expect("validated orientation")
    }
}

/// A scenario resolved into controller inputs.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub setup: ControlSetup,
    pub q0: Vec<Vec<f64>>,
    pub targets: Vec<TargetScript>,
    pub entities: Vec<EntityScript>,
    pub residual_policy: ResidualPolicy,
    pub steps: usize,
}

fn pose_from(path: &str, c: &[f64; 8]) -> Result<Pose, ScenarioError> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(ScenarioError::new(path, "non-finite coefficient"));
    }
    Pose::from_array(*c).map_err(|_| ScenarioError::new(path, "not a unit dual quaternion"))
}

fn frame_from(path: &str, f: &FrameSpec, dof: usize) -> Result<FrameRef, ScenarioError> {
    if f.joint == 0 || f.joint > dof {
        return Err(ScenarioError::new(format!("{path}.joint"), format!("must be in 1..={dof}, got {}", f.joint)));
    }
    Ok(FrameRef::with_offset(f.joint, pose_from(&format!("{path}.offset"), &f.offset)?))
}

fn unit3(path: &str, a: &[f64; 3]) -> Result<Quaternion, ScenarioError> {
    let v = v3(a);
    let n = v.norm();
    if !n.is_finite() || n < 1e-9 {
        return Err(ScenarioError::new(path, "direction must be finite and nonzero"));
    }
    Ok(q3(&(v / n)))
}

fn finite3(path: &str, a: &[f64; 3]) -> Result<Vector3<f64>, ScenarioError> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(ScenarioError::new(path, "non-finite coordinate"));
    }
    Ok(v3(a))
}

fn increasing_times(path: &str, times: impl Iterator<Item = f64>) -> Result<(), ScenarioError> {
    let mut last = f64::NEG_INFINITY;
    for (i, t) in times.enumerate() {
        if !t.is_finite() || t <= last {
            return Err(ScenarioError::new(
                format!("{path}[{i}].t_s"),
                "waypoint times must be finite and strictly increasing",
            ));
        }
        last = t;
    }
    Ok(())
}

fn expected_metric(a: EntityKind, b: EntityKind) -> DistanceMetric {
    if a == EntityKind::Plane || b == EntityKind::Plane {
        DistanceMetric::Signed
    } else {
        DistanceMetric::Squared
    }
}

fn entity_kind(e: &WorkspaceEntity) -> EntityKind {
    match e {
        WorkspaceEntity::Point(_) => EntityKind::Point,
        WorkspaceEntity::Line(_) => EntityKind::Line,
        WorkspaceEntity::Plane(_) => EntityKind::Plane,
    }
}

fn supported(a: EntityKind, b: EntityKind) -> bool {
    use EntityKind::*;
    !matches!((a, b), (Line, Plane) | (Plane, Line) | (Plane, Plane))
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text)
            .map_err(|e| ScenarioError::new(format!("line {} column {}", e.line(), e.column()), e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn with_modes(mut self, modes: &[Awareness]) -> Result<Self, ScenarioError> {
        if modes.len() != self.robots.len() {
            return Err(ScenarioError::new(
                "robots",
                format!("{} modes given for {} robots", modes.len(), self.robots.len()),
            ));
        }
        for (r, m) in self.robots.iter_mut().zip(modes) {
            r.mode = *m;
        }
        Ok(self)
    }

    pub fn with_eta_d(mut self, eta_d: f64) -> Self {
        self.params.eta_d_per_s = eta_d;
        self
    }

    /// Resolves every reference and checks all fields.
    pub fn build(&self) -> Result<BuiltScenario, ScenarioError> {
        let p = &self.params;
        for (name, v) in [("eta_per_s", p.eta_per_s), ("lambda", p.lambda), ("eta_d_per_s", p.eta_d_per_s)] {
            if !v.is_finite() || v < 0.0 {
                return Err(ScenarioError::new(format!("params.{name}"), "must be finite and ≥ 0"));
            }
        }
        if !p.tau_s.is_finite() || p.tau_s <= 0.0 {
            return Err(ScenarioError::new("params.tau_s", "must be > 0"));
        }
        if !p.static_pair_gain_scale.is_finite() || p.static_pair_gain_scale < 0.0 {
            return Err(ScenarioError::new("params.static_pair_gain_scale", "must be finite and ≥ 0"));
        }
        if !self.duration_s.is_finite() || self.duration_s < 0.0 {
            return Err(ScenarioError::new("duration_s", "must be finite and ≥ 0"));
        }
        if !self.collision_threshold_m.is_finite() || self.collision_threshold_m < 0.0 {
            return Err(ScenarioError::new("collision_threshold_m", "must be finite and ≥ 0"));
        }
        if self.robots.is_empty() {
            return Err(ScenarioError::new("robots", "at least one robot is required"));
        }

        let mut robots = Vec::new();
        let mut q0 = Vec::new();
        let mut targets = Vec::new();
        for (i, r) in self.robots.iter().enumerate() {
            let path = format!("robots[{i}]");
            let base = pose_from(&format!("{path}.base"), &r.base)?;
            let eff = pose_from(&format!("{path}.effector"), &r.effector)?;
            let robot = SerialManipulator::new(r.dh.clone(), base, eff)
                .map_err(|e| ScenarioError::new(format!("{path}.dh"), e.to_string()))?;
            if r.q0_rad.len() != robot.dof() {
                return Err(ScenarioError::new(
                    format!("{path}.q0_rad"),
                    format!("expected {} entries, got {}", robot.dof(), r.q0_rad.len()),
                ));
            }
            if r.q0_rad.iter().any(|v| !v.is_finite()) {
                return Err(ScenarioError::new(format!("{path}.q0_rad"), "non-finite entry"));
            }
            let tool = match &r.tool {
                None => None,
                Some(t) => {
                    let frame = match &t.frame {
                        Some(f) => frame_from(&format!("{path}.tool.frame"), f, robot.dof())?,
                        None => FrameRef::at(robot.dof()),
                    };
                    if !(t.radius_m.is_finite() && t.radius_m >= 0.0) {
                        return Err(ScenarioError::new(format!("{path}.tool.radius_m"), "must be ≥ 0"));
                    }
                    if !(t.length_m.is_finite() && t.length_m > 0.0) {
                        return Err(ScenarioError::new(format!("{path}.tool.length_m"), "must be > 0"));
                    }
                    Some(Tool { frame, radius: t.radius_m, length: t.length_m })
                }
            };
            let start =
                robot.fkm(&r.q0_rad).map_err(|e| ScenarioError::new(format!("{path}.q0_rad"), e.to_string()))?;
            let target = match &r.trajectory {
                None => TargetScript { orientation: start.rotation(), keys: vec![], hold: start },
                Some(tr) => {
                    let tpath = format!("{path}.trajectory");
                    if tr.waypoints.is_empty() {
                        return Err(ScenarioError::new(format!("{tpath}.waypoints"), "at least one waypoint"));
                    }
                    increasing_times(&format!("{tpath}.waypoints"), tr.waypoints.iter().map(|w| w.t_s))?;
                    let mut keys = Vec::new();
                    for (k, w) in tr.waypoints.iter().enumerate() {
                        keys.push((w.t_s, finite3(&format!("{tpath}.waypoints[{k}].position_m"), &w.position_m)?));
                    }
                    let orientation = match tr.orientation {
                        None => start.rotation(),
                        Some(o) => {
                            let q = Quaternion::new(o[0], o[1], o[2], o[3]);
                            if !q.is_unit() {
                                return Err(ScenarioError::new(
                                    format!("{tpath}.orientation"),
                                    "not a unit quaternion",
                                ));
                            }
                            q
                        }
                    };
                    TargetScript { orientation, keys, hold: start }
                }
            };
            robots.push(RobotSetup { robot, task: r.task, mode: r.mode, tool });
            q0.push(r.q0_rad.clone());
            targets.push(target);
        }

        let mut entities = Vec::new();
        for (i, e) in self.entities.iter().enumerate() {
            let path = format!("entities[{i}]");
            let gpath = format!("{path}.geometry");
            let base = match &e.geometry {
                GeometrySpec::Point { position_m } => {
                    WorkspaceEntity::Point(EntityPoint::fixed(q3(&finite3(&gpath, position_m)?)))
                }
                GeometrySpec::Line { point_m, direction } => {
                    let p = q3(&finite3(&gpath, point_m)?);
                    let l = EntityLine::through(&p, &unit3(&format!("{gpath}.direction"), direction)?)
                        .map_err(|err| ScenarioError::new(&gpath, err.to_string()))?;
                    WorkspaceEntity::Line(l)
                }
                GeometrySpec::Plane { point_m, normal } => {
                    let p = q3(&finite3(&gpath, point_m)?);
                    let pl = EntityPlane::through(&p, &unit3(&format!("{gpath}.normal"), normal)?)
                        .map_err(|err| ScenarioError::new(&gpath, err.to_string()))?;
                    WorkspaceEntity::Plane(pl)
                }
            };
            increasing_times(&format!("{path}.motion"), e.motion.iter().map(|k| k.t_s))?;
            let mut keys = Vec::new();
            for (k, m) in e.motion.iter().enumerate() {
                keys.push((m.t_s, finite3(&format!("{path}.motion[{k}].displacement_m"), &m.displacement_m)?));
            }
            entities.push(EntityScript { base, keys });
        }

        let gain_of = |path: &str, g: Option<f64>| -> Result<f64, ScenarioError> {
            let v = g.unwrap_or(p.eta_d_per_s);
            if !v.is_finite() || v < 0.0 {
                return Err(ScenarioError::new(format!("{path}.gain_per_s"), "must be finite and ≥ 0"));
            }
            Ok(v)
        };
        let attach = |path: &str, a: &AttachSpec| -> Result<RobotEntity, ScenarioError> {
            let r = robots.get(a.robot).ok_or_else(|| {
                ScenarioError::new(format!("{path}.robot"), format!("robot {} does not exist", a.robot))
            })?;
            let frame = frame_from(&format!("{path}.frame"), &a.frame, r.robot.dof())?;
            Ok(RobotEntity { robot: a.robot, kind: a.kind, frame })
        };
        let make_spec = |path: &str, direction: Direction, d_safe: f64, gain: f64| -> Result<VfiSpec, ScenarioError> {
            let spec = match direction {
                Direction::KeepOut => VfiSpec::keep_out(d_safe, gain),
                Direction::KeepIn => VfiSpec::keep_in(d_safe, gain),
            };
            spec.validate().map_err(|e| ScenarioError::new(path, e.to_string()))?;
            Ok(spec)
        };
        let check_metric = |path: &str, declared: DistanceMetric, a: EntityKind, b: EntityKind| {
            let expected = expected_metric(a, b);
            if declared != expected {
                return Err(ScenarioError::new(
                    format!("{path}.metric"),
                    format!("this pair uses the {expected:?} metric, not {declared:?}"),
                ));
            }
            Ok(())
        };

        let mut bindings = Vec::new();
        for (i, c) in self.constraints.iter().enumerate() {
            let path = format!("constraints[{i}]");
            let b = match c {
                ConstraintSpec::Workspace { attach: a, entity, direction, metric, d_safe_m, gain_per_s, .. } => {
                    let re = attach(&format!("{path}.attach"), a)?;
                    let e = entities.get(*entity).ok_or_else(|| {
                        ScenarioError::new(format!("{path}.entity"), format!("entity {entity} does not exist"))
                    })?;
                    let ek = entity_kind(&e.base);
                    if !supported(re.kind, ek) {
                        return Err(ScenarioError::new(
                            &path,
                            format!("no primitive for {:?} against {:?}", re.kind, ek),
                        ));
                    }
                    check_metric(&path, *metric, re.kind, ek)?;
                    let spec = make_spec(&path, *direction, *d_safe_m, gain_of(&path, *gain_per_s)?)?;
                    ConstraintBinding::Workspace { robot: re, entity: *entity, spec }
                }
                ConstraintSpec::RobotPair { first, second, direction, metric, d_safe_m, gain_per_s, .. } => {
                    let a = attach(&format!("{path}.first"), first)?;
                    let b = attach(&format!("{path}.second"), second)?;
                    if a.robot == b.robot {
                        return Err(ScenarioError::new(&path, "a robot pair needs two different robots"));
                    }
                    if !supported(a.kind, b.kind) {
                        return Err(ScenarioError::new(
                            &path,
                            format!("no primitive for {:?} against {:?}", a.kind, b.kind),
                        ));
                    }
                    check_metric(&path, *metric, a.kind, b.kind)?;
                    let spec = make_spec(&path, *direction, *d_safe_m, gain_of(&path, *gain_per_s)?)?;
                    ConstraintBinding::RobotPair { first: a, second: b, spec }
                }
                ConstraintSpec::CylinderGuard { first, second, part, gain_per_s, .. } => {
                    for (field, r) in [("first", first), ("second", second)] {
                        match robots.get(*r) {
                            None => {
                                return Err(ScenarioError::new(
                                    format!("{path}.{field}"),
                                    format!("robot {r} does not exist"),
                                ))
                            }
                            Some(s) if s.tool.is_none() => {
                                return Err(ScenarioError::new(
                                    format!("{path}.{field}"),
                                    format!("robot {r} has no tool"),
                                ))
                            }
                            _ => {}
                        }
                    }
                    if first == second {
                        return Err(ScenarioError::new(&path, "a guard needs two different robots"));
                    }
                    ConstraintBinding::CylinderGuard {
                        first: *first,
                        second: *second,
                        gain: gain_of(&path, *gain_per_s)?,
                        part: *part,
                    }
                }
            };
            bindings.push(b);
        }

        let setup = ControlSetup {
            robots,
            bindings,
            params: ControllerParams {
                eta: p.eta_per_s,
                lambda: p.lambda,
                tau: p.tau_s,
                static_pair_gain_scale: p.static_pair_gain_scale,
            },
        };
        let steps = (self.duration_s / p.tau_s).round() as usize;
        Ok(BuiltScenario { setup, q0, targets, entities, residual_policy: p.residual_policy, steps })
    }

    /// The scenario restricted to robot `i`: other robots and every
    /// constraint touching them are dropped.
    pub fn solo(&self, i: usize) -> Scenario {
        let mut s = self.clone();
        s.name = format!("{}-solo{}", self.name, i + 1);
        s.robots = vec![self.robots[i].clone()];
        s.constraints = self
            .constraints
            .iter()
            .filter_map(|c| match c {
                ConstraintSpec::Workspace { attach, .. } if attach.robot == i => {
                    let mut c = c.clone();
                    if let ConstraintSpec::Workspace { attach, .. } = &mut c {
                        attach.robot = 0;
                    }
                    Some(c)
                }
                _ => None,
            })
            .collect();
        s
    }
}
