//! Built-in scenarios. Geometry, radii and the robot's DH table are chosen
//! here; they are plausible values, not measured ones.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::scenario::{
    AttachSpec, ConstraintSpec, EntitySpec, FrameSpec, GeometrySpec, ParamsSpec, RobotSpec, Scenario, ToolSpec,
    TrajectorySpec, Waypoint, DEFAULT_COLLISION_THRESHOLD_M,
};
use crate::controller::{pose_error, Awareness, EntityKind, GuardPart, ResidualPolicy, TaskKind};
use crate::dq::{Pose, Quaternion};
use crate::kinematics::{DhRow, JointKind, SerialManipulator};
use crate::primitives::DistanceMetric;
use crate::vfi::Direction;

/// A six-joint industrial arm with a spherical wrist, sized like a small
/// tabletop manipulator.
pub fn vs050_like_dh() -> Vec<DhRow> {
    vec![
        DhRow::revolute(0.0, 0.345, 0.0, FRAC_PI_2),
        DhRow::revolute(FRAC_PI_2, 0.0, 0.25, 0.0),
        DhRow::revolute(FRAC_PI_2, 0.0, 0.01, FRAC_PI_2),
        DhRow::revolute(0.0, 0.255, 0.0, -FRAC_PI_2),
        DhRow::revolute(0.0, 0.0, 0.0, FRAC_PI_2),
        DhRow::revolute(0.0, 0.07, 0.0, 0.0),
    ]
}

/// Damped least-squares inverse kinematics on the full pose.
pub fn inverse_kinematics(robot: &SerialManipulator, target: &Pose, seed: &[f64]) -> Option<Vec<f64>> {
    let mut q = seed.to_vec();
    for _ in 0..5000 {
        let x = robot.fkm(&q).ok()?;
        let (err, sign) = pose_error(&x, target);
        if err.norm() < 1e-14 {
            return Some(wrap_revolute(robot, q));
        }
        let j = robot.pose_jacobian(&q).ok()? * sign;
        let e = DVector::from_column_slice(err.as_slice());
        let h = j.transpose() * &j + DMatrix::identity(q.len(), q.len()) * 1e-6;
        let step = h.cholesky()?.solve(&(j.transpose() * e));
        for (a, b) in q.iter_mut().zip(step.iter()) {
            *a -= b;
        }
    }
    let x = robot.fkm(&q).ok()?;
    (pose_error(&x, target).0.norm() < 1e-10).then(|| wrap_revolute(robot, q))
}

fn wrap_revolute(robot: &SerialManipulator, mut q: Vec<f64>) -> Vec<f64> {
    for (qi, row) in q.iter_mut().zip(robot.dh_rows()) {
        if row.kind == JointKind::Revolute {
            *qi = qi.sin().atan2(qi.cos());
        }
    }
    q
}

/// Rotation whose z axis is `z`, with its y axis as close as possible to `y_hint`.
fn frame_rotation(z: Vector3<f64>, y_hint: Vector3<f64>) -> Quaternion {
    let z = z.normalize();
    let y = (y_hint - z * z.dot(&y_hint)).normalize();
    let x = y.cross(&z);
    let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    let u = UnitQuaternion::from_rotation_matrix(&r);
    Quaternion::new(u.w, u.i, u.j, u.k)
}

fn pose_at(rotation: Quaternion, p: Vector3<f64>) -> Pose {
    Pose::new(rotation, Quaternion::from_vector3(&p)).expect("unit rotation")
}

fn tool_effector(length: f64) -> [f64; 8] {
    Pose::from_translation(0.0, 0.0, length).to_array()
}

fn solve_q0(dh: &[DhRow], base: &Pose, effector: &[f64; 8], target: &Pose, seed: &[f64]) -> Vec<f64> {
    let robot =
        SerialManipulator::new(dh.to_vec(), *base, Pose::from_array(*effector).expect("unit")).expect("valid robot");
    inverse_kinematics(&robot, target, seed).expect("reference pose is reachable")
}

fn waypoints(keys: &[(f64, Vector3<f64>)]) -> Vec<Waypoint> {
    keys.iter().map(|(t, p)| Waypoint { t_s: *t, position_m: [p.x, p.y, p.z] }).collect()
}

/// Two facing robots whose tool shafts cross in the xz view and move along
/// y in four 2 s phases: R1 follows R2, R2 follows R1, both converge, both
/// separate.
pub fn simulation_a(modes: [Awareness; 2], eta_d: f64) -> Scenario {
    const TOOL: f64 = 0.15;
    const HEIGHT: f64 = 0.25;
    const TIP_X: f64 = 0.01;
    // Lateral gap between the shafts while following, and the travel of each phase.
    const OFFSET: f64 = 0.06;
    const TRAVEL: f64 = 0.08;
    const CROSS: f64 = 0.02;
    const D_SAFE: f64 = 0.004;

    let dh = vs050_like_dh();
    let eff = tool_effector(TOOL);
    let bases = [
        Pose::from_translation(-0.45, 0.0, 0.0),
        Pose::from_translation(0.45, 0.0, 0.0) * Pose::from_axis_angle(&Vector3::z(), PI),
    ];
    let dirs = [Vector3::new(1.0, 0.0, -1.0), Vector3::new(-1.0, 0.0, -1.0)];
    let tip_x = [TIP_X, -TIP_X];
    // y of each tip at t = 0, 2, 4, 6, 8 s. The converging targets pass
    // each other by CROSS, so a robot that ignores the other drives into it.
    let half = OFFSET / 2.0;
    let ys = [[half, half - TRAVEL, half, -CROSS / 2.0, half], [-half, -half - TRAVEL, -half, CROSS / 2.0, -half]];
    let mut robots = Vec::new();
    for i in 0..2 {
        let rot = frame_rotation(dirs[i], Vector3::y());
        let keys: Vec<_> =
            ys[i].iter().enumerate().map(|(k, y)| (2.0 * k as f64, Vector3::new(tip_x[i], *y, HEIGHT))).collect();
        let start = pose_at(rot, keys[0].1);
        let q0 = solve_q0(&dh, &bases[i], &eff, &start, &[0.0, -0.3, -1.2, 0.0, -1.2, 0.0]);
        robots.push(RobotSpec {
            name: format!("R{}", i + 1),
            dh: dh.clone(),
            base: bases[i].to_array(),
            effector: eff,
            q0_rad: q0,
            mode: modes[i],
            task: TaskKind::Pose,
            tool: Some(ToolSpec { frame: None, radius_m: 0.0015, length_m: 0.1 }),
            trajectory: Some(TrajectorySpec { orientation: Some(rot.to_array()), waypoints: waypoints(&keys) }),
        });
    }
    let shaft = |robot| AttachSpec {
        robot,
        kind: EntityKind::Line,
        frame: FrameSpec { joint: 6, offset: Pose::IDENTITY.to_array() },
    };
    Scenario {
        name: format!("simulation-a-{}{}", modes[0].letter(), modes[1].letter()),
        note: "Shaft radius 1.5 mm; d_safe adds 1 mm over the 3 mm collision threshold.".into(),
        duration_s: 8.0,
        collision_threshold_m: DEFAULT_COLLISION_THRESHOLD_M,
        params: ParamsSpec {
            eta_per_s: 50.0,
            lambda: 0.0,
            tau_s: 0.008,
            eta_d_per_s: eta_d,
            static_pair_gain_scale: 0.5,
            residual_policy: ResidualPolicy::Exact,
        },
        robots,
        entities: vec![],
        constraints: vec![ConstraintSpec::RobotPair {
            name: "shaft-shaft".into(),
            first: shaft(0),
            second: shaft(1),
            direction: Direction::KeepOut,
            metric: DistanceMetric::Squared,
            d_safe_m: D_SAFE,
            gain_per_s: None,
        }],
    }
}

/// Gains of the plane experiment.
pub const EXPERIMENT_A_GAINS: [f64; 5] = [0.0, 0.25, 1.0, 4.0, 16.0];

/// One robot with a downward tool, a static plane 25 mm below the tip and a
/// 45 mm commanded descent. `None` disables the plane constraint.
pub fn experiment_a(eta_d: Option<f64>) -> Scenario {
    const TOOL: f64 = 0.1;
    let dh = vs050_like_dh();
    let q0 = vec![0.0, FRAC_PI_6, FRAC_PI_2, 0.0, -FRAC_PI_6, 0.0];
    let bare = SerialManipulator::new(dh.clone(), Pose::IDENTITY, Pose::IDENTITY).expect("valid robot");
    let flange = bare.fkm(&q0).expect("six joints");
    let down = frame_rotation(-Vector3::z(), Vector3::y());
    let align = Pose::from_rotation(flange.rotation().conj() * down).expect("unit");
    let eff = (align * Pose::from_translation(0.0, 0.0, TOOL)).to_array();
    let robot =
        SerialManipulator::new(dh.clone(), Pose::IDENTITY, Pose::from_array(eff).expect("unit")).expect("valid");
    let tip = robot.fkm(&q0).expect("six joints").position();
    let goal = tip - Vector3::new(0.0, 0.0, 0.045);
    let plane_point = tip - Vector3::new(0.0, 0.0, 0.025);
    Scenario {
        name: match eta_d {
            Some(g) => format!("experiment-a-eta{g}"),
            None => "experiment-a-disabled".into(),
        },
        note: String::new(),
        duration_s: 5.0,
        collision_threshold_m: DEFAULT_COLLISION_THRESHOLD_M,
        params: ParamsSpec {
            eta_per_s: 50.0,
            lambda: 0.0,
            tau_s: 0.008,
            eta_d_per_s: eta_d.unwrap_or(0.0),
            static_pair_gain_scale: 1.0,
            residual_policy: ResidualPolicy::Exact,
        },
        robots: vec![RobotSpec {
            name: "R1".into(),
            dh,
            base: Pose::IDENTITY.to_array(),
            effector: eff,
            q0_rad: q0,
            mode: if eta_d.is_some() { Awareness::KinematicsAware } else { Awareness::Oblivious },
            task: TaskKind::Pose,
            tool: None,
            trajectory: Some(TrajectorySpec { orientation: None, waypoints: waypoints(&[(0.0, tip), (2.0, goal)]) }),
        }],
        entities: vec![EntitySpec {
            name: "plane".into(),
            geometry: GeometrySpec::Plane { point_m: plane_point.into(), normal: [0.0, 0.0, 1.0] },
            motion: vec![],
        }],
        // The disabled variant keeps the binding for its distance column; an
        // oblivious robot receives no rows.
        constraints: vec![ConstraintSpec::Workspace {
            name: "tip-plane".into(),
            attach: AttachSpec {
                robot: 0,
                kind: EntityKind::Point,
                frame: FrameSpec { joint: 6, offset: Pose::IDENTITY.to_array() },
            },
            entity: 0,
            direction: Direction::KeepOut,
            metric: DistanceMetric::Signed,
            d_safe_m: 0.0,
            gain_per_s: None,
        }],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndonasalRun {
    LeftOnly,
    RightOnly,
    Both,
}

impl EndonasalRun {
    pub const ALL: [EndonasalRun; 3] = [EndonasalRun::LeftOnly, EndonasalRun::RightOnly, EndonasalRun::Both];

    pub fn label(self) -> &'static str {
        match self {
            EndonasalRun::LeftOnly => "left-only",
            EndonasalRun::RightOnly => "right-only",
            EndonasalRun::Both => "both",
        }
    }
}

/// Endonasal geometry, in meters. Tools enter along +x through the nostrils.
pub mod endonasal_geometry {
    pub const NOSTRIL_LEFT: [f64; 3] = [0.0, 0.01, 0.0];
    pub const NOSTRIL_RIGHT: [f64; 3] = [0.0, -0.01, 0.0];
    pub const DURA: [f64; 3] = [0.085, 0.0, 0.0];
    /// x of the sinus-end points; their y, z lie on the initial shafts.
    pub const SINUS_X: f64 = 0.05;
    pub const LEFT_START: [f64; 3] = [0.075, 0.002, -0.006];
    pub const LEFT_END: [f64; 3] = [0.075, 0.002, 0.006];
    pub const RIGHT_START: [f64; 3] = [0.07, -0.004, 0.0];
    pub const RIGHT_END: [f64; 3] = [0.07, 0.008, 0.0];
    pub const NOSTRIL_RADIUS: f64 = 0.012;
    pub const SINUS_RADIUS: f64 = 0.012;
    pub const DURA_RADIUS: f64 = 0.015;
    pub const TOOL_RADIUS: f64 = 0.0015;
    pub const TOOL_LENGTH: f64 = 0.25;
    pub const MODULE_CLEARANCE: f64 = 0.005;
    /// Out and back durations, then a hold.
    pub const LEG_S: f64 = 5.0;
    pub const DURATION_S: f64 = 12.0;
}

/// Two robots working through the nostrils: six keep-in shaft-to-point
/// constraints, four module plane-to-point constraints and two shaft guards.
pub fn endonasal(run: EndonasalRun) -> Scenario {
    use endonasal_geometry as g;
    let v = |a: [f64; 3]| Vector3::new(a[0], a[1], a[2]);
    let dh = vs050_like_dh();
    let eff = tool_effector(g::TOOL_LENGTH);
    let bases = [Pose::from_translation(-0.6, 0.15, -0.35), Pose::from_translation(-0.6, -0.15, -0.35)];
    let nostrils = [v(g::NOSTRIL_LEFT), v(g::NOSTRIL_RIGHT)];
    let starts = [v(g::LEFT_START), v(g::RIGHT_START)];
    let ends = [v(g::LEFT_END), v(g::RIGHT_END)];
    let moving = match run {
        EndonasalRun::LeftOnly => [true, false],
        EndonasalRun::RightOnly => [false, true],
        EndonasalRun::Both => [true, true],
    };

    let mut robots = Vec::new();
    let mut sinus = Vec::new();
    for i in 0..2 {
        let dir = (starts[i] - nostrils[i]).normalize();
        let rot = frame_rotation(dir, Vector3::y());
        let start = pose_at(rot, starts[i]);
        let q0 = solve_q0(&dh, &bases[i], &eff, &start, &[0.0, -0.3, -1.2, 0.0, -1.2, 0.0]);
        let s = (g::SINUS_X - nostrils[i].x) / dir.x;
        sinus.push(nostrils[i] + dir * s);
        robots.push(RobotSpec {
            name: ["left", "right"][i].into(),
            dh: dh.clone(),
            base: bases[i].to_array(),
            effector: eff,
            q0_rad: q0,
            mode: if moving[i] { Awareness::KinematicsAware } else { Awareness::Oblivious },
            task: TaskKind::Translation,
            tool: Some(ToolSpec { frame: None, radius_m: g::TOOL_RADIUS, length_m: g::TOOL_LENGTH }),
            trajectory: moving[i].then(|| TrajectorySpec {
                orientation: None,
                waypoints: waypoints(&[(0.0, starts[i]), (g::LEG_S, ends[i]), (2.0 * g::LEG_S, starts[i])]),
            }),
        });
    }

    let point = |name: &str, p: Vector3<f64>| EntitySpec {
        name: name.into(),
        geometry: GeometrySpec::Point { position_m: p.into() },
        motion: vec![],
    };
    let entities = vec![
        point("nostril-left", nostrils[0]),
        point("sinus-left", sinus[0]),
        point("nostril-right", nostrils[1]),
        point("sinus-right", sinus[1]),
        point("dura", v(g::DURA)),
    ];
    let tip_frame = FrameSpec { joint: 6, offset: Pose::IDENTITY.to_array() };
    let shaft = |robot| AttachSpec { robot, kind: EntityKind::Line, frame: tip_frame };
    let keep_in = |name: &str, robot, entity, radius| ConstraintSpec::Workspace {
        name: name.into(),
        attach: shaft(robot),
        entity,
        direction: Direction::KeepIn,
        metric: DistanceMetric::Squared,
        d_safe_m: radius,
        gain_per_s: None,
    };
    let mut constraints = vec![
        keep_in("left-nostril", 0, 0, g::NOSTRIL_RADIUS),
        keep_in("left-sinus", 0, 1, g::SINUS_RADIUS),
        keep_in("left-dura", 0, 4, g::DURA_RADIUS),
        keep_in("right-nostril", 1, 2, g::NOSTRIL_RADIUS),
        keep_in("right-sinus", 1, 3, g::SINUS_RADIUS),
        keep_in("right-dura", 1, 4, g::DURA_RADIUS),
    ];
    // Module plane on the left tool facing the right one, 12 mm off its shaft
    // and 0.2 m behind the tip; four corners of the right module.
    let plane_offset = Pose::from_translation(0.0, -0.012, -0.2) * Pose::from_axis_angle(&Vector3::x(), FRAC_PI_2);
    for (k, (dx, dz)) in [(-0.01, -0.01), (0.01, -0.01), (-0.01, 0.01), (0.01, 0.01)].into_iter().enumerate() {
        constraints.push(ConstraintSpec::RobotPair {
            name: format!("module-{}", k + 1),
            first: AttachSpec {
                robot: 0,
                kind: EntityKind::Plane,
                frame: FrameSpec { joint: 6, offset: plane_offset.to_array() },
            },
            second: AttachSpec {
                robot: 1,
                kind: EntityKind::Point,
                frame: FrameSpec { joint: 6, offset: Pose::from_translation(dx, 0.012, -0.2 + dz).to_array() },
            },
            direction: Direction::KeepOut,
            metric: DistanceMetric::Signed,
            d_safe_m: g::MODULE_CLEARANCE,
            gain_per_s: None,
        });
    }
    constraints.push(ConstraintSpec::CylinderGuard {
        name: "tip-shaft".into(),
        first: 0,
        second: 1,
        part: GuardPart::TipShaft,
        gain_per_s: None,
    });
    constraints.push(ConstraintSpec::CylinderGuard {
        name: "shaft-shaft".into(),
        first: 0,
        second: 1,
        part: GuardPart::ShaftShaft,
        gain_per_s: None,
    });

    Scenario {
        name: format!("endonasal-{}", run.label()),
        note: "Radii, clearances and placements are illustrative.".into(),
        duration_s: g::DURATION_S,
        collision_threshold_m: DEFAULT_COLLISION_THRESHOLD_M,
        params: ParamsSpec {
            eta_per_s: 100.0,
            lambda: 0.1,
            tau_s: 0.008,
            eta_d_per_s: 2.0,
            static_pair_gain_scale: 1.0,
            residual_policy: ResidualPolicy::Exact,
        },
        robots,
        entities,
        constraints,
    }
}

/// The nine awareness-mode pairs, in row-major `o, s, k` order.
pub fn mode_grid() -> Vec<[Awareness; 2]> {
    let all = [Awareness::Oblivious, Awareness::StaticAware, Awareness::KinematicsAware];
    all.iter().flat_map(|a| all.iter().map(move |b| [*a, *b])).collect()
}
