//! Distance primitives between robot entities and workspace entities.
//!
//! Each function returns the distance (squared for point/line pairs, signed for
//! plane pairs), the 1×n row `J` with `ḋ = J q̇ + ζ`, and the residual `ζ` due
//! to the workspace entity's own motion.

use nalgebra::{DMatrix, RowDVector, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dq::{crossmatrix_of, DualQuaternion, Quaternion};
use crate::kinematics::{dyn4, RobotLine, RobotPlane, RobotPoint};

/// Tolerance on the Plücker and unit-normal conditions of workspace entities.
pub const ENTITY_TOLERANCE: f64 = 1e-10;

/// Below this `|sin φ|` two lines are treated as parallel.
pub const PARALLEL_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PrimitiveError {
    #[error("line violates the Plücker conditions")]
    InvalidLine,
    #[error("plane normal is not a pure unit quaternion")]
    InvalidPlane,
    #[error("point must be a pure quaternion")]
    InvalidPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Squared,
    Signed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceResult {
    pub metric: DistanceMetric,
    /// m² for [`DistanceMetric::Squared`], m for [`DistanceMetric::Signed`].
    pub value: f64,
    pub jacobian: RowDVector<f64>,
    pub residual: f64,
}

impl DistanceResult {
    /// Distance in meters: the square root for squared metrics.
    pub fn distance(&self) -> f64 {
        match self.metric {
            DistanceMetric::Squared => self.value.max(0.0).sqrt(),
            DistanceMetric::Signed => self.value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntityPoint {
    pub position: Quaternion,
    pub velocity: Quaternion,
}

impl EntityPoint {
    pub fn fixed(position: Quaternion) -> Self {
        Self { position, velocity: Quaternion::ZERO }
    }

    pub fn moving(position: Quaternion, velocity: Quaternion) -> Self {
        Self { position, velocity }
    }

    pub fn validate(&self) -> Result<(), PrimitiveError> {
        if self.position.is_pure() && self.velocity.is_pure() {
            Ok(())
        } else {
            Err(PrimitiveError::InvalidPoint)
        }
    }
}

/// Plücker line `l + ε m` and its time derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntityLine {
    pub line: DualQuaternion,
    pub velocity: DualQuaternion,
}

impl EntityLine {
    /// Line through `point` along `direction` (normalized here).
    pub fn through(point: &Quaternion, direction: &Quaternion) -> Result<Self, PrimitiveError> {
        let l = direction.im().normalize().ok_or(PrimitiveError::InvalidLine)?;
        let m = Quaternion::from_vector3(&point.vector().cross(&l.vector()));
        Ok(Self { line: DualQuaternion::new(l, m), velocity: DualQuaternion::ZERO })
    }

    pub fn with_velocity(mut self, velocity: DualQuaternion) -> Self {
        self.velocity = velocity;
        self
    }

    pub fn validate(&self) -> Result<(), PrimitiveError> {
        let (l, m) = (self.line.primary, self.line.dual);
        let ok = self.line.is_pure()
            && self.velocity.is_pure()
            && (l.norm() - 1.0).abs() <= ENTITY_TOLERANCE
            && l.dot4(&m).abs() <= ENTITY_TOLERANCE;
        if ok {
            Ok(())
        } else {
            Err(PrimitiveError::InvalidLine)
        }
    }
}

/// Plane `n + ε d` with the offset stored as the real dual part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntityPlane {
    pub normal: Quaternion,
    pub offset: f64,
    pub normal_velocity: Quaternion,
    pub offset_velocity: f64,
}

impl EntityPlane {
    pub fn new(normal: Quaternion, offset: f64) -> Result<Self, PrimitiveError> {
        let plane = Self { normal, offset, normal_velocity: Quaternion::ZERO, offset_velocity: 0.0 };
        plane.validate()?;
        Ok(plane)
    }

    /// Plane through `point` with the given (normalized) normal.
    pub fn through(point: &Quaternion, normal: &Quaternion) -> Result<Self, PrimitiveError> {
        let n = normal.im().normalize().ok_or(PrimitiveError::InvalidPlane)?;
        Self::new(n, point.vector().dot(&n.vector()))
    }

    pub fn with_velocity(mut self, normal_velocity: Quaternion, offset_velocity: f64) -> Self {
        self.normal_velocity = normal_velocity;
        self.offset_velocity = offset_velocity;
        self
    }

    pub fn as_dq(&self) -> DualQuaternion {
        DualQuaternion::new(self.normal, Quaternion::real(self.offset))
    }

    pub fn validate(&self) -> Result<(), PrimitiveError> {
        let ok = self.normal.is_pure()
            && self.normal_velocity.is_pure()
            && (self.normal.norm() - 1.0).abs() <= ENTITY_TOLERANCE
            && self.offset.is_finite();
        if ok {
            Ok(())
        } else {
            Err(PrimitiveError::InvalidPlane)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkspaceEntity {
    Point(EntityPoint),
    Line(EntityLine),
    Plane(EntityPlane),
}

impl WorkspaceEntity {
    pub fn validate(&self) -> Result<(), PrimitiveError> {
        match self {
            WorkspaceEntity::Point(p) => p.validate(),
            WorkspaceEntity::Line(l) => l.validate(),
            WorkspaceEntity::Plane(p) => p.validate(),
        }
    }
}

fn row(v: &Vector4<f64>, m: &DMatrix<f64>) -> RowDVector<f64> {
    v.transpose() * m
}

fn cross(a: &Quaternion, b: &Quaternion) -> Quaternion {
    Quaternion::from_vector3(&a.vector().cross(&b.vector()))
}

/// `D = ‖t − p‖²`.
pub fn point_to_point(t: &RobotPoint, p: &EntityPoint) -> DistanceResult {
    let h = t.position - p.position;
    DistanceResult {
        metric: DistanceMetric::Squared,
        value: h.norm_squared(),
        jacobian: 2.0 * row(&h.to_vec4(), &t.jacobian),
        residual: -2.0 * h.dot4(&p.velocity),
    }
}

/// `D = ‖t × l − m‖²`.
pub fn point_to_line(t: &RobotPoint, l: &EntityLine) -> Result<DistanceResult, PrimitiveError> {
    l.validate()?;
    let (dir, m) = (l.line.primary, l.line.dual);
    let h1 = cross(&t.position, &dir) - m;
    let h2 = cross(&t.position, &l.velocity.primary) - l.velocity.dual;
    let s = dyn4(&crossmatrix_of(&dir.vector()).transpose());
    Ok(DistanceResult {
        metric: DistanceMetric::Squared,
        value: h1.norm_squared(),
        jacobian: 2.0 * row(&h1.to_vec4(), &(s * &t.jacobian)),
        residual: 2.0 * h1.dot4(&h2),
    })
}

/// `D = ‖p × l_z − m_z‖²`.
pub fn line_to_point(rl: &RobotLine, p: &EntityPoint) -> DistanceResult {
    let h = cross(&p.position, &rl.direction()) - rl.moment();
    let dh = dyn4(&crossmatrix_of(&p.position.vector())) * &rl.j_rz - &rl.j_mz;
    DistanceResult {
        metric: DistanceMetric::Squared,
        value: h.norm_squared(),
        jacobian: 2.0 * row(&h.to_vec4(), &dh),
        residual: 2.0 * cross(&p.velocity, &rl.direction()).dot4(&h),
    }
}

/// Squared distance between the robot line and a workspace line.
///
/// Uses `D(⟨l_z, l⟩)² / ‖P(l_z × l)‖²` unless `‖P(l_z × l)‖ < PARALLEL_THRESHOLD`,
/// where the parallel form `‖D(l_z × l)‖²` takes over.
pub fn line_to_line(rl: &RobotLine, l: &EntityLine) -> Result<DistanceResult, PrimitiveError> {
    l.validate()?;
    let lz = rl.line;
    let h8m = l.line.hamilton_minus();
    let h8p = l.line.hamilton_plus();
    let j_lz = rl.jacobian();

    let cross_dq = cross_pure(&lz, &l.line);
    let cross_res = cross_pure(&lz, &l.velocity);
    let j_cross = 0.5 * (h8m - h8p) * &j_lz;
    let c = cross_dq.primary.to_vec4();

    if c.norm() < PARALLEL_THRESHOLD {
        let e = cross_dq.dual.to_vec4();
        let j = 2.0 * e.transpose() * j_cross.rows(4, 4);
        return Ok(DistanceResult {
            metric: DistanceMetric::Squared,
            value: e.norm_squared(),
            jacobian: j,
            residual: 2.0 * e.dot(&cross_res.dual.to_vec4()),
        });
    }

    // Dual part of ⟨l_z, l⟩ is the reciprocal product, stored in the real slot.
    let beta = lz.primary.vector().dot(&l.line.dual.vector()) + lz.dual.vector().dot(&l.line.primary.vector());
    let beta_res =
        lz.primary.vector().dot(&l.velocity.dual.vector()) + lz.dual.vector().dot(&l.velocity.primary.vector());
    let j_inner = -0.5 * (h8m + h8p) * &j_lz;

    let c2 = c.norm_squared();
    let a = 1.0 / c2;
    let b = -beta * beta / (c2 * c2);
    let j_beta2 = 2.0 * beta * j_inner.row(4);
    let j_c2 = 2.0 * c.transpose() * j_cross.rows(0, 4);
    let res_beta2 = 2.0 * beta * beta_res;
    let res_c2 = 2.0 * c.dot(&cross_res.primary.to_vec4());
    Ok(DistanceResult {
        metric: DistanceMetric::Squared,
        value: beta * beta * a,
        jacobian: a * j_beta2 + b * j_c2,
        residual: a * res_beta2 + b * res_c2,
    })
}

fn cross_pure(a: &DualQuaternion, b: &DualQuaternion) -> DualQuaternion {
    (0.5 * (*a * *b - *b * *a)).im()
}

/// Signed `d = ⟨p, n_πz⟩ − d_πz`, positive on the normal's side.
pub fn plane_to_point(rp: &RobotPlane, p: &EntityPoint) -> DistanceResult {
    let n = rp.normal;
    DistanceResult {
        metric: DistanceMetric::Signed,
        value: p.position.dot4(&n) - rp.offset,
        jacobian: row(&p.position.to_vec4(), &rp.j_rz) - &rp.j_d,
        residual: p.velocity.dot4(&n),
    }
}

/// Signed `d = ⟨t, n_π⟩ − d_π`.
pub fn point_to_plane(t: &RobotPoint, pi: &EntityPlane) -> Result<DistanceResult, PrimitiveError> {
    pi.validate()?;
    Ok(DistanceResult {
        metric: DistanceMetric::Signed,
        value: t.position.dot4(&pi.normal) - pi.offset,
        jacobian: row(&pi.normal.to_vec4(), &t.jacobian),
        residual: t.position.dot4(&pi.normal_velocity) - pi.offset_velocity,
    })
}
