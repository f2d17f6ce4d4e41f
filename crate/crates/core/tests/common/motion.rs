//! Entities with known motion and the robot frame geometry used by the
//! finite-difference checks.

use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use rand::Rng;
use vfi_core::dq::{DualQuaternion, Pose};
use vfi_core::kinematics::{line_state, FrameRef, RobotLine, SerialManipulator};
use vfi_core::primitives::{EntityLine, EntityPlane, EntityPoint};

use super::*;

pub struct Setup {
    pub robot: SerialManipulator,
    pub q: Vec<f64>,
    pub frame: FrameRef,
}

pub fn setup(rng: &mut impl Rng) -> Setup {
    let robot = random_robot(rng, 6);
    let q = random_q(rng, 6);
    let frame = random_frame(rng, 6);
    Setup { robot, q, frame }
}

/// A point moving with constant velocity.
#[derive(Clone, Copy)]
pub struct PointMotion {
    pub p0: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl PointMotion {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self { p0: vector(rng, 0.8), v: vector(rng, 0.5) }
    }
    pub fn at(&self, tau: f64) -> Vector3<f64> {
        self.p0 + self.v * tau
    }
    pub fn entity(&self) -> EntityPoint {
        EntityPoint::moving(pure(&self.p0), pure(&self.v))
    }
}

/// A line through a translating point, spinning about a fixed axis.
#[derive(Clone, Copy)]
pub struct LineMotion {
    pub p: PointMotion,
    pub u0: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl LineMotion {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self { p: PointMotion::random(rng), u0: unit_vector(rng), w: vector(rng, 0.8) }
    }
    pub fn at(&self, tau: f64) -> (Vector3<f64>, Vector3<f64>) {
        (self.p.at(tau), Rotation3::new(self.w * tau) * self.u0)
    }
    pub fn entity(&self) -> EntityLine {
        let ldot = self.w.cross(&self.u0);
        let mdot = self.p.v.cross(&self.u0) + self.p.p0.cross(&ldot);
        EntityLine::through(&pure(&self.p.p0), &pure(&self.u0))
            .unwrap()
            .with_velocity(DualQuaternion::new(pure(&ldot), pure(&mdot)))
    }
}

/// A plane through a translating point with a spinning normal.
#[derive(Clone, Copy)]
pub struct PlaneMotion {
    pub l: LineMotion,
}

impl PlaneMotion {
    pub fn at(&self, tau: f64) -> (Vector3<f64>, f64) {
        let (p, n) = self.l.at(tau);
        (n, p.dot(&n))
    }
    pub fn entity(&self) -> EntityPlane {
        let n0 = self.l.u0;
        let ndot = self.l.w.cross(&n0);
        let ddot = self.l.p.v.dot(&n0) + self.l.p.p0.dot(&ndot);
        EntityPlane::through(&pure(&self.l.p.p0), &pure(&n0)).unwrap().with_velocity(pure(&ndot), ddot)
    }
}

pub fn row_matrix(r: &nalgebra::RowDVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, r.len(), r.as_slice())
}

pub fn scalar(v: f64) -> DVector<f64> {
    DVector::from_vec(vec![v])
}

/// Oracle geometry of the robot frame: origin, z-axis.
pub fn frame_geometry(s: &Setup, q: &[f64]) -> (Vector3<f64>, Vector3<f64>) {
    let x = chain_pose(&s.robot, q, &s.frame);
    (translation_of(&x), rotate(&x, &Vector3::z()))
}

pub fn point_line_sq(p: &Vector3<f64>, a: &Vector3<f64>, u: &Vector3<f64>) -> f64 {
    (p - a).cross(u).norm_squared()
}

/// Robot line whose z-axis passes through `p` along `u`.
pub fn robot_line_through(p: &Vector3<f64>, u: &Vector3<f64>) -> RobotLine {
    let axis = Vector3::z().cross(u);
    let rot = if axis.norm() < 1e-12 {
        if u.z > 0.0 {
            Pose::IDENTITY
        } else {
            Pose::from_axis_angle(&Vector3::x(), std::f64::consts::PI)
        }
    } else {
        Pose::from_axis_angle(&axis, u.z.clamp(-1.0, 1.0).acos())
    };
    line_state(&(Pose::from_translation(p.x, p.y, p.z) * rot), &DMatrix::zeros(8, 1))
}
