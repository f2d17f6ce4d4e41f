use std::ops::Mul;

use nalgebra::Vector3;

use super::{AlgebraError, DualQuaternion, Quaternion};

/// Tolerance for accepting a dual quaternion as a rigid pose.
pub const POSE_UNIT_TOLERANCE: f64 = 1e-10;

/// A rigid pose stored as the unit dual quaternion `x = r + ε ½ t r`.
///
/// `x` and `−x` describe the same rigid transformation. Nothing here picks a
/// sign; see [`Pose::canonical`] and the controller's pose error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(DualQuaternion);

impl Pose {
    pub const IDENTITY: Pose = Pose(DualQuaternion::ONE);

    /// Builds `r + ε ½ t r`. `r` must be unit (within 1e-12) and `t` pure.
    pub fn new(rotation: Quaternion, translation: Quaternion) -> Result<Self, AlgebraError> {
        if !rotation.is_unit() {
            return Err(AlgebraError::NotUnit);
        }
        if !translation.is_pure() {
            return Err(AlgebraError::NotPure);
        }
        Ok(Self::compose_unchecked(rotation, translation))
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::compose_unchecked(Quaternion::ONE, Quaternion::pure(x, y, z))
    }

    pub fn from_rotation(rotation: Quaternion) -> Result<Self, AlgebraError> {
        Self::new(rotation, Quaternion::ZERO)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::compose_unchecked(Quaternion::from_axis_angle(axis, angle), Quaternion::ZERO)
    }

    pub(crate) fn compose_unchecked(rotation: Quaternion, translation: Quaternion) -> Self {
        Pose(DualQuaternion::new(rotation, 0.5 * translation * rotation))
    }

    /// Accepts `x` if `x x* = 1` within [`POSE_UNIT_TOLERANCE`].
    pub fn try_from_dq(x: DualQuaternion) -> Result<Self, AlgebraError> {
        if !x.is_finite() || !x.is_unit_within(POSE_UNIT_TOLERANCE) {
            return Err(AlgebraError::NotUnit);
        }
        Ok(Pose(x))
    }

    pub fn from_array(c: [f64; 8]) -> Result<Self, AlgebraError> {
        Self::try_from_dq(DualQuaternion::from_array(c))
    }

    /// Projects an arbitrary nonzero dual quaternion onto the nearest pose.
    pub fn normalized(x: &DualQuaternion) -> Result<Self, AlgebraError> {
        x.normalize().map(Pose).ok_or(AlgebraError::NotUnit)
    }

    pub(crate) fn from_dq_unchecked(x: DualQuaternion) -> Self {
        Pose(x)
    }

    pub fn as_dq(&self) -> &DualQuaternion {
        &self.0
    }

    pub fn to_array(&self) -> [f64; 8] {
        self.0.to_array()
    }

    pub fn rotation(&self) -> Quaternion {
        self.0.primary
    }

    /// `t = 2 D(x) r*`, returned with an exactly zero real part.
    pub fn translation(&self) -> Quaternion {
        (2.0 * self.0.dual * self.0.primary.conj()).im()
    }

    /// `(r, t)`.
    pub fn decompose(&self) -> (Quaternion, Quaternion) {
        (self.rotation(), self.translation())
    }

    pub fn position(&self) -> Vector3<f64> {
        self.translation().vector()
    }

    pub fn inverse(&self) -> Self {
        Pose(self.0.conj())
    }

    /// The other cover of the same rigid transformation.
    pub fn negated(&self) -> Self {
        Pose(-self.0)
    }

    /// Representative whose rotation has a nonnegative scalar part. Left
    /// untouched when `|w| ≤ 1e-12`, where the choice is numerically ambiguous.
    pub fn canonical(&self) -> Self {
        if self.0.primary.w < -1e-12 {
            self.negated()
        } else {
            *self
        }
    }

    /// Rotates a pure quaternion: `r v r*`, real part exactly zero.
    pub fn rotate(&self, v: &Quaternion) -> Quaternion {
        let r = self.rotation();
        (r * *v * r.conj()).im()
    }

    /// Image of the point `p` under the rigid transformation.
    pub fn transform_point(&self, p: &Quaternion) -> Quaternion {
        self.rotate(p) + self.translation()
    }

    /// Re-projects onto the unit dual quaternions.
    pub fn renormalize(&self) -> Self {
        self.0.normalize().map(Pose).unwrap_or(*self)
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose(self.0 * rhs.0)
    }
}

impl From<Pose> for DualQuaternion {
    fn from(p: Pose) -> Self {
        p.0
    }
}
