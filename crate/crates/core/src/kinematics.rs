//! Serial-manipulator kinematics on unit dual quaternions.
//!
//! Links follow the standard (distal) Denavit–Hartenberg convention, so every
//! joint acts about the z-axis of the previous frame:
//! `A_i = Rz(θ_i) Tz(d_i) Tx(a_i) Rx(α_i)`.
//!
//! Frame `k` (1-based) is the pose after the `k`-th link, composed with the
//! base pose, and with the effector offset when `k = n`. Robot entities can be
//! attached to any frame through an extra fixed offset ([`FrameRef`]).

use nalgebra::{DMatrix, Matrix4, RowDVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dq::{conjugation_matrix, crossmatrix_of, DualQuaternion, Pose, Quaternion};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KinematicsError {
    #[error("a serial manipulator needs at least one joint")]
    EmptyChain,
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("frame {frame} is out of range 1..={dof}")]
    FrameOutOfRange { frame: usize, dof: usize },
    #[error("non-finite value in DH row {row}")]
    NonFinite { row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One DH row. The joint variable adds to `theta` (revolute) or `d` (prismatic).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    #[serde(rename = "theta_rad")]
    pub theta: f64,
    #[serde(rename = "d_m")]
    pub d: f64,
    #[serde(rename = "a_m")]
    pub a: f64,
    #[serde(rename = "alpha_rad")]
    pub alpha: f64,
    #[serde(rename = "joint")]
    pub kind: JointKind,
}

impl DhRow {
    pub fn revolute(theta: f64, d: f64, a: f64, alpha: f64) -> Self {
        Self { theta, d, a, alpha, kind: JointKind::Revolute }
    }

    pub fn prismatic(theta: f64, d: f64, a: f64, alpha: f64) -> Self {
        Self { theta, d, a, alpha, kind: JointKind::Prismatic }
    }

    fn link(&self, q: f64) -> DualQuaternion {
        let (theta, d) = match self.kind {
            JointKind::Revolute => (self.theta + q, self.d),
            JointKind::Prismatic => (self.theta, self.d + q),
        };
        let (st, ct) = (0.5 * theta).sin_cos();
        let (sa, ca) = (0.5 * self.alpha).sin_cos();
        let rz = DualQuaternion::from_primary(Quaternion::new(ct, 0.0, 0.0, st));
        let tz = DualQuaternion::new(Quaternion::ONE, Quaternion::pure(0.0, 0.0, 0.5 * d));
        let tx = DualQuaternion::new(Quaternion::ONE, Quaternion::pure(0.5 * self.a, 0.0, 0.0));
        let rx = DualQuaternion::from_primary(Quaternion::new(ca, sa, 0.0, 0.0));
        rz * tz * tx * rx
    }

    /// Generator `ω` with `dA/dq = ½ ω A` when expressed in the link's parent frame.
    fn generator(&self) -> DualQuaternion {
        match self.kind {
            JointKind::Revolute => DualQuaternion::from_primary(Quaternion::K),
            JointKind::Prismatic => DualQuaternion::new(Quaternion::ZERO, Quaternion::K),
        }
    }
}

/// A frame of interest: DH frame `joint` (1-based) followed by a fixed `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRef {
    pub joint: usize,
    pub offset: Pose,
}

impl FrameRef {
    pub fn at(joint: usize) -> Self {
        Self { joint, offset: Pose::IDENTITY }
    }

    pub fn with_offset(joint: usize, offset: Pose) -> Self {
        Self { joint, offset }
    }
}

/// Pose of a frame together with its 8×n analytical Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameKinematics {
    pub pose: Pose,
    pub jacobian: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerialManipulator {
    rows: Vec<DhRow>,
    base: Pose,
    effector: Pose,
}

impl SerialManipulator {
    pub fn new(rows: Vec<DhRow>, base: Pose, effector: Pose) -> Result<Self, KinematicsError> {
        if rows.is_empty() {
            return Err(KinematicsError::EmptyChain);
        }
        for (i, r) in rows.iter().enumerate() {
            if ![r.theta, r.d, r.a, r.alpha].iter().all(|v| v.is_finite()) {
                return Err(KinematicsError::NonFinite { row: i });
            }
        }
        Ok(Self { rows, base, effector })
    }

    pub fn dof(&self) -> usize {
        self.rows.len()
    }

    pub fn dh_rows(&self) -> &[DhRow] {
        &self.rows
    }

    pub fn base(&self) -> Pose {
        self.base
    }

    pub fn effector(&self) -> Pose {
        self.effector
    }

    pub fn with_base(mut self, base: Pose) -> Self {
        self.base = base;
        self
    }

    pub fn with_effector(mut self, effector: Pose) -> Self {
        self.effector = effector;
        self
    }

    fn check_q(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch { expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    fn check_frame(&self, frame: usize) -> Result<(), KinematicsError> {
        if frame == 0 || frame > self.dof() {
            return Err(KinematicsError::FrameOutOfRange { frame, dof: self.dof() });
        }
        Ok(())
    }

    /// End-effector pose (frame `n` with the effector offset).
    pub fn fkm(&self, q: &[f64]) -> Result<Pose, KinematicsError> {
        self.fkm_to(q, self.dof())
    }

    /// Pose of frame `up_to_joint`, canonicalized to a nonnegative rotation scalar.
    pub fn fkm_to(&self, q: &[f64], up_to_joint: usize) -> Result<Pose, KinematicsError> {
        self.check_q(q)?;
        self.check_frame(up_to_joint)?;
        let mut x = *self.base.as_dq();
        for (row, qi) in self.rows.iter().zip(q).take(up_to_joint) {
            x = x * row.link(*qi);
        }
        if up_to_joint == self.dof() {
            x = x * *self.effector.as_dq();
        }
        Ok(Pose::from_dq_unchecked(x).canonical())
    }

    /// 8×n Jacobian of the end-effector pose: `vec8 ẋ = J_x q̇`.
    pub fn pose_jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>, KinematicsError> {
        Ok(self.frame_kinematics(q, &FrameRef::at(self.dof()))?.jacobian)
    }

    /// 8×n Jacobian of frame `up_to_joint`; columns beyond it are zero.
    pub fn pose_jacobian_to(&self, q: &[f64], up_to_joint: usize) -> Result<DMatrix<f64>, KinematicsError> {
        Ok(self.frame_kinematics(q, &FrameRef::at(up_to_joint))?.jacobian)
    }

    /// Pose and Jacobian of an arbitrary frame of interest.
    ///
    /// Column `i ≤ k` is `vec8(½ ω_i x)`, where `ω_i = x_{i−1} ĝ x_{i−1}*` is the
    /// joint-`i` screw in world coordinates (`ĝ = k̂` revolute, `εk̂` prismatic).
    pub fn frame_kinematics(&self, q: &[f64], frame: &FrameRef) -> Result<FrameKinematics, KinematicsError> {
        self.check_q(q)?;
        self.check_frame(frame.joint)?;
        let n = self.dof();
        let k = frame.joint;

        let mut prefixes = Vec::with_capacity(k + 1);
        let mut x = *self.base.as_dq();
        prefixes.push(x);
        for (row, qi) in self.rows.iter().zip(q).take(k) {
            x = x * row.link(*qi);
            prefixes.push(x);
        }
        if k == n {
            x = x * *self.effector.as_dq();
        }
        x = x * *frame.offset.as_dq();
        let pose = Pose::from_dq_unchecked(x).canonical();
        let x = *pose.as_dq();

        let mut jacobian = DMatrix::zeros(8, n);
        for (i, row) in self.rows.iter().enumerate().take(k) {
            let p = prefixes[i];
            let screw = p * row.generator() * p.conj();
            let col = (0.5 * screw * x).to_vec8();
            jacobian.column_mut(i).copy_from(&col);
        }
        Ok(FrameKinematics { pose, jacobian })
    }

    pub fn point(&self, q: &[f64], frame: &FrameRef) -> Result<RobotPoint, KinematicsError> {
        let fk = self.frame_kinematics(q, frame)?;
        Ok(point_state(&fk.pose, &fk.jacobian))
    }

    pub fn line(&self, q: &[f64], frame: &FrameRef) -> Result<RobotLine, KinematicsError> {
        let fk = self.frame_kinematics(q, frame)?;
        Ok(line_state(&fk.pose, &fk.jacobian))
    }

    pub fn plane(&self, q: &[f64], frame: &FrameRef) -> Result<RobotPlane, KinematicsError> {
        let fk = self.frame_kinematics(q, frame)?;
        Ok(plane_state(&fk.pose, &fk.jacobian))
    }
}

/// `J_r`: the primary-part rows of `J_x`.
pub fn rotation_jacobian(j_x: &DMatrix<f64>) -> DMatrix<f64> {
    j_x.rows(0, 4).into_owned()
}

/// `J_t = 2(H4⁻(r*) J_D + H4⁺(D(x)) C4 J_r)`, from `t = 2 D(x) r*`.
pub fn translation_jacobian(j_x: &DMatrix<f64>, pose: &Pose) -> DMatrix<f64> {
    let x = pose.as_dq();
    let j_r = j_x.rows(0, 4);
    let j_d = j_x.rows(4, 4);
    let a = dyn4(&x.primary.conj().hamilton_minus());
    let b = dyn4(&(x.dual.hamilton_plus() * conjugation_matrix()));
    2.0 * (a * j_d + b * j_r)
}

/// A point on the robot and its translation Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotPoint {
    pub position: Quaternion,
    /// 4×n, `vec4 ṫ = J_t q̇`.
    pub jacobian: DMatrix<f64>,
}

/// Plücker line along a frame's z-axis: `l_z + ε m_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotLine {
    pub line: DualQuaternion,
    /// 4×n, `vec4 l̇_z = J_rz q̇`.
    pub j_rz: DMatrix<f64>,
    /// 4×n, `vec4 ṁ_z = J_mz q̇`.
    pub j_mz: DMatrix<f64>,
}

impl RobotLine {
    pub fn direction(&self) -> Quaternion {
        self.line.primary
    }

    pub fn moment(&self) -> Quaternion {
        self.line.dual
    }

    /// 8×n `J_lz = [J_rz; J_mz]`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let n = self.j_rz.ncols();
        let mut j = DMatrix::zeros(8, n);
        j.rows_mut(0, 4).copy_from(&self.j_rz);
        j.rows_mut(4, 4).copy_from(&self.j_mz);
        j
    }
}

/// Plane through a frame's origin with normal along its z-axis: `n_πz + ε d_πz`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotPlane {
    pub normal: Quaternion,
    pub offset: f64,
    /// 4×n, `vec4 ṅ_πz = J_rz q̇`.
    pub j_rz: DMatrix<f64>,
    /// 1×n, `ḋ_πz = J_dπz q̇`.
    pub j_d: RowDVector<f64>,
}

impl RobotPlane {
    pub fn as_dq(&self) -> DualQuaternion {
        DualQuaternion::new(self.normal, Quaternion::real(self.offset))
    }
}

pub fn point_state(pose: &Pose, j_x: &DMatrix<f64>) -> RobotPoint {
    RobotPoint { position: pose.translation(), jacobian: translation_jacobian(j_x, pose) }
}

/// `J_rz = H4⁻(k̂ r*) J_r + H4⁺(r k̂) C4 J_r`.
fn z_axis_jacobian(r: &Quaternion, j_r: &DMatrix<f64>) -> DMatrix<f64> {
    let left = (Quaternion::K * r.conj()).hamilton_minus();
    let right = (*r * Quaternion::K).hamilton_plus() * conjugation_matrix();
    dyn4(&(left + right)) * j_r
}

pub(crate) fn dyn4(m: &Matrix4<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 4, m.as_slice())
}

pub fn line_state(pose: &Pose, j_x: &DMatrix<f64>) -> RobotLine {
    let r = pose.rotation();
    let t = pose.translation();
    let l = pose.rotate(&Quaternion::K);
    let m = Quaternion::from_vector3(&t.vector().cross(&l.vector()));
    let j_r = rotation_jacobian(j_x);
    let j_t = translation_jacobian(j_x, pose);
    let j_rz = z_axis_jacobian(&r, &j_r);
    // J_mz = S(l_z)ᵀ J_t + S(t) J_rz
    let j_mz = dyn4(&crossmatrix_of(&l.vector()).transpose()) * &j_t + dyn4(&crossmatrix_of(&t.vector())) * &j_rz;
    RobotLine { line: DualQuaternion::new(l, m), j_rz, j_mz }
}

pub fn plane_state(pose: &Pose, j_x: &DMatrix<f64>) -> RobotPlane {
    let r = pose.rotation();
    let t = pose.translation();
    let normal = pose.rotate(&Quaternion::K);
    let offset = t.vector().dot(&normal.vector());
    let j_r = rotation_jacobian(j_x);
    let j_t = translation_jacobian(j_x, pose);
    let j_rz = z_axis_jacobian(&r, &j_r);
    let j_d = normal.to_vec4().transpose() * &j_t + t.to_vec4().transpose() * &j_rz;
    RobotPlane { normal, offset, j_rz, j_d }
}
