use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix4, Vector3, Vector4};

use super::AlgebraError;

/// Tolerance used by [`Quaternion::is_unit`].
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// A quaternion `w + î x + ĵ y + k̂ z`.
///
/// Coefficients are stored in `(w, x, y, z)` order, which is also the order of
/// [`Quaternion::to_vec4`] and of every 4×4 operator in this module.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const ZERO: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quaternion = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quaternion = Quaternion::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 1.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Pure quaternion `î x + ĵ y + k̂ z`; the real part is exactly zero.
    pub const fn pure(x: f64, y: f64, z: f64) -> Self {
        Self { w: 0.0, x, y, z }
    }

    pub const fn real(w: f64) -> Self {
        Self { w, x: 0.0, y: 0.0, z: 0.0 }
    }

    pub fn from_vector3(v: &Vector3<f64>) -> Self {
        Self::pure(v.x, v.y, v.z)
    }

    pub fn from_vec4(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vec4(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Imaginary part as a 3-vector.
    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Rotation of `angle` radians about the unit `axis`: `cos(φ/2) + v sin(φ/2)`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let axis = axis.normalize();
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, s * axis.x, s * axis.y, s * axis.z)
    }

    pub fn conj(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn norm_squared(&self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Returns `None` for the zero quaternion.
    pub fn normalize(&self) -> Option<Self> {
        let n = self.norm();
        (n > 0.0).then(|| *self * (1.0 / n))
    }

    /// Real part, i.e. the projection onto `1`.
    pub fn re(&self) -> Self {
        Self::real(self.w)
    }

    /// Imaginary part, with the real part set to exactly zero.
    pub fn im(&self) -> Self {
        Self::pure(self.x, self.y, self.z)
    }

    pub fn is_pure(&self) -> bool {
        self.w == 0.0
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    /// Euclidean inner product of the four coefficients.
    pub fn dot4(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Left Hamilton operator: `vec4(self · h) = H⁺(self) vec4(h)`.
    pub fn hamilton_plus(&self) -> Matrix4<f64> {
        let Quaternion { w, x, y, z } = *self;
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        )
    }

    /// Right Hamilton operator: `vec4(h · self) = H⁻(self) vec4(h)`.
    pub fn hamilton_minus(&self) -> Matrix4<f64> {
        let Quaternion { w, x, y, z } = *self;
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, z, -y, //
            y, -z, w, x, //
            z, y, -x, w,
        )
    }
}

/// `C4 = diag(1, −1, −1, −1)`, so that `vec4(h*) = C4 vec4(h)`.
pub fn conjugation_matrix() -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::new(1.0, -1.0, -1.0, -1.0))
}

/// Cross-product matrix `S(a)` with `vec4(a × b) = S(a) vec4(b) = S(b)ᵀ vec4(a)`.
pub fn crossmatrix(a: &Quaternion) -> Result<Matrix4<f64>, AlgebraError> {
    if !a.is_pure() {
        return Err(AlgebraError::NotPure);
    }
    Ok(crossmatrix_of(&a.vector()))
}

/// `S(·)` built from the imaginary part only. Callers that produce the vector
/// through pure-preserving arithmetic use this to skip the purity check.
pub(crate) fn crossmatrix_of(v: &Vector3<f64>) -> Matrix4<f64> {
    Matrix4::new(
        0.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, -v.z, v.y, //
        0.0, v.z, 0.0, -v.x, //
        0.0, -v.y, v.x, 0.0,
    )
}

/// `⟨a, b⟩ = −(ab + ba)/2` for pure quaternions.
pub fn inner(a: &Quaternion, b: &Quaternion) -> Result<f64, AlgebraError> {
    if !a.is_pure() || !b.is_pure() {
        return Err(AlgebraError::NotPure);
    }
    Ok((-0.5 * (*a * *b + *b * *a)).w)
}

/// `a × b = (ab − ba)/2` for pure quaternions.
pub fn cross(a: &Quaternion, b: &Quaternion) -> Result<Quaternion, AlgebraError> {
    if !a.is_pure() || !b.is_pure() {
        return Err(AlgebraError::NotPure);
    }
    Ok((0.5 * (*a * *b - *b * *a)).im())
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.w + rhs.w, self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl AddAssign for Quaternion {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.w - rhs.w, self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, b: Self) -> Self {
        let a = self;
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Mul<f64> for Quaternion {
    type Output = Quaternion;
    fn mul(self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Quaternion> for f64 {
    type Output = Quaternion;
    fn mul(self, q: Quaternion) -> Quaternion {
        q * self
    }
}

impl fmt::Display for Quaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}î + {}ĵ + {}k̂", self.w, self.x, self.y, self.z)
    }
}
