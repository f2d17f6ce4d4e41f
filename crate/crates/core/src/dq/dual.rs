use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{SMatrix, SVector};

use super::{AlgebraError, Quaternion};

pub type Matrix8 = SMatrix<f64, 8, 8>;
pub type Vector8 = SVector<f64, 8>;

/// Tolerance used by [`DualQuaternion::is_unit`].
pub const DUAL_UNIT_TOLERANCE: f64 = 1e-12;

/// A dual number `primary + ε dual` with real coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualScalar {
    pub primary: f64,
    pub dual: f64,
}

impl DualScalar {
    pub const fn new(primary: f64, dual: f64) -> Self {
        Self { primary, dual }
    }
}

/// `h = P(h) + ε D(h)` with `ε² = 0`.
///
/// `vec8` order is `(primary ‖ dual)`, each part in `(w, x, y, z)` order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualQuaternion {
    pub primary: Quaternion,
    pub dual: Quaternion,
}

impl DualQuaternion {
    pub const ZERO: DualQuaternion = DualQuaternion::new(Quaternion::ZERO, Quaternion::ZERO);
    pub const ONE: DualQuaternion = DualQuaternion::new(Quaternion::ONE, Quaternion::ZERO);
    /// The dual unit `ε`.
    pub const EPSILON: DualQuaternion = DualQuaternion::new(Quaternion::ZERO, Quaternion::ONE);

    pub const fn new(primary: Quaternion, dual: Quaternion) -> Self {
        Self { primary, dual }
    }

    pub fn from_primary(primary: Quaternion) -> Self {
        Self::new(primary, Quaternion::ZERO)
    }

    pub fn from_vec8(v: &Vector8) -> Self {
        Self::new(Quaternion::new(v[0], v[1], v[2], v[3]), Quaternion::new(v[4], v[5], v[6], v[7]))
    }

    pub fn from_array(c: [f64; 8]) -> Self {
        Self::new(Quaternion::new(c[0], c[1], c[2], c[3]), Quaternion::new(c[4], c[5], c[6], c[7]))
    }

    pub fn to_vec8(&self) -> Vector8 {
        let (p, d) = (self.primary, self.dual);
        Vector8::from([p.w, p.x, p.y, p.z, d.w, d.x, d.y, d.z])
    }

    pub fn to_array(&self) -> [f64; 8] {
        let (p, d) = (self.primary, self.dual);
        [p.w, p.x, p.y, p.z, d.w, d.x, d.y, d.z]
    }

    pub fn conj(&self) -> Self {
        Self::new(self.primary.conj(), self.dual.conj())
    }

    /// `Re(h) = h1 + ε h1'`.
    pub fn re(&self) -> Self {
        Self::new(self.primary.re(), self.dual.re())
    }

    /// `Im(h)`, with both real parts exactly zero.
    pub fn im(&self) -> Self {
        Self::new(self.primary.im(), self.dual.im())
    }

    /// Dual norm `sqrt(h h*)`: primary `‖P‖`, dual `⟨P, D⟩ / ‖P‖`.
    pub fn norm(&self) -> DualScalar {
        let p = self.primary.norm();
        let d = if p > 0.0 { self.primary.dot4(&self.dual) / p } else { 0.0 };
        DualScalar::new(p, d)
    }

    /// Unit within [`DUAL_UNIT_TOLERANCE`] in both parts of the dual norm.
    pub fn is_unit(&self) -> bool {
        self.is_unit_within(DUAL_UNIT_TOLERANCE)
    }

    pub fn is_unit_within(&self, tol: f64) -> bool {
        let n = self.norm();
        (n.primary - 1.0).abs() <= tol && n.dual.abs() <= tol
    }

    pub fn is_pure(&self) -> bool {
        self.primary.is_pure() && self.dual.is_pure()
    }

    pub fn is_finite(&self) -> bool {
        self.primary.is_finite() && self.dual.is_finite()
    }

    /// Projects onto the unit dual quaternions: scales the primary part to unit
    /// norm and removes the dual component along it.
    pub fn normalize(&self) -> Option<Self> {
        let n = self.primary.norm();
        if n <= 0.0 || !n.is_finite() {
            return None;
        }
        let p = self.primary * (1.0 / n);
        let d = self.dual * (1.0 / n);
        Some(Self::new(p, d - p * p.dot4(&d)))
    }

    /// `vec8(self · h) = H8⁺(self) vec8(h)`.
    pub fn hamilton_plus(&self) -> Matrix8 {
        let p = self.primary.hamilton_plus();
        let d = self.dual.hamilton_plus();
        let mut m = Matrix8::zeros();
        m.fixed_view_mut::<4, 4>(0, 0).copy_from(&p);
        m.fixed_view_mut::<4, 4>(4, 0).copy_from(&d);
        m.fixed_view_mut::<4, 4>(4, 4).copy_from(&p);
        m
    }

    /// `vec8(h · self) = H8⁻(self) vec8(h)`.
    pub fn hamilton_minus(&self) -> Matrix8 {
        let p = self.primary.hamilton_minus();
        let d = self.dual.hamilton_minus();
        let mut m = Matrix8::zeros();
        m.fixed_view_mut::<4, 4>(0, 0).copy_from(&p);
        m.fixed_view_mut::<4, 4>(4, 0).copy_from(&d);
        m.fixed_view_mut::<4, 4>(4, 4).copy_from(&p);
        m
    }
}

/// `⟨a, b⟩ = −(ab + ba)/2` for pure dual quaternions; the result is a real dual number.
pub fn pure_inner(a: &DualQuaternion, b: &DualQuaternion) -> Result<DualScalar, AlgebraError> {
    if !a.is_pure() || !b.is_pure() {
        return Err(AlgebraError::NotPure);
    }
    let s = -0.5 * (*a * *b + *b * *a);
    Ok(DualScalar::new(s.primary.w, s.dual.w))
}

/// `a × b = (ab − ba)/2` for pure dual quaternions; the result is pure.
pub fn pure_cross(a: &DualQuaternion, b: &DualQuaternion) -> Result<DualQuaternion, AlgebraError> {
    if !a.is_pure() || !b.is_pure() {
        return Err(AlgebraError::NotPure);
    }
    Ok((0.5 * (*a * *b - *b * *a)).im())
}

impl Add for DualQuaternion {
    type Output = DualQuaternion;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.primary + rhs.primary, self.dual + rhs.dual)
    }
}

impl Sub for DualQuaternion {
    type Output = DualQuaternion;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.primary - rhs.primary, self.dual - rhs.dual)
    }
}

impl Neg for DualQuaternion {
    type Output = DualQuaternion;
    fn neg(self) -> Self {
        Self::new(-self.primary, -self.dual)
    }
}

impl Mul for DualQuaternion {
    type Output = DualQuaternion;
    fn mul(self, rhs: Self) -> Self {
        Self::new(self.primary * rhs.primary, self.primary * rhs.dual + self.dual * rhs.primary)
    }
}

impl Mul<f64> for DualQuaternion {
    type Output = DualQuaternion;
    fn mul(self, s: f64) -> Self {
        Self::new(self.primary * s, self.dual * s)
    }
}

impl Mul<DualQuaternion> for f64 {
    type Output = DualQuaternion;
    fn mul(self, h: DualQuaternion) -> DualQuaternion {
        h * self
    }
}

impl fmt::Display for DualQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) + ε({})", self.primary, self.dual)
    }
}
