//! Vector-field-inequality active constraints on dual-quaternion kinematics.
//!
//! The crate is layered bottom-up: [`dq`] algebra, serial-chain [`kinematics`],
//! distance [`primitives`], [`vfi`] constraint rows, a dense [`qp`] solver, the
//! per-step [`controller`], and the deterministic simulator in [`sim`].

pub mod controller;
pub mod dq;
pub mod kinematics;
pub mod primitives;
pub mod qp;
pub mod sim;
pub mod vfi;

pub use controller::{Awareness, ControlSetup, ControlStepReport, ControllerParams, TaskKind};
pub use dq::{AlgebraError, DualQuaternion, Pose, Quaternion};
pub use kinematics::{
    DhRow, FrameRef, JointKind, KinematicsError, RobotLine, RobotPlane, RobotPoint, SerialManipulator,
};
pub use primitives::{DistanceMetric, DistanceResult, WorkspaceEntity};
pub use qp::{QpProblem, QpSolution, QpSolver};
pub use sim::{RunMetrics, Scenario, Trace};
pub use vfi::{ConstraintRow, Direction, VfiSpec};

pub use nalgebra;
