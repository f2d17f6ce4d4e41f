//! Quaternion and dual-quaternion algebra.
//!
//! Coefficients are always in `(w, x, y, z)` order and `vec8` is
//! `(primary ‖ dual)`. Hamilton operators, `S(·)` and `C4` all use that order.
//! Nothing renormalizes implicitly; call `normalize` when drift matters.

mod dual;
mod pose;
mod quaternion;

pub use dual::{pure_cross, pure_inner, DualQuaternion, DualScalar, Matrix8, Vector8, DUAL_UNIT_TOLERANCE};
pub use pose::{Pose, POSE_UNIT_TOLERANCE};
pub(crate) use quaternion::crossmatrix_of;
pub use quaternion::{conjugation_matrix, cross, crossmatrix, inner, Quaternion, UNIT_TOLERANCE};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AlgebraError {
    #[error("operand must be pure (zero real part)")]
    NotPure,
    #[error("operand must have unit norm")]
    NotUnit,
}
