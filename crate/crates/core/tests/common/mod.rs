//! Independent oracles shared by the integration tests: random robots and
//! entities, central finite differences, and brute-force geometry.
#![allow(dead_code)]

pub mod checks;
pub mod motion;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfi_core::dq::{DualQuaternion, Pose, Quaternion};
use vfi_core::kinematics::{DhRow, FrameRef, SerialManipulator};

pub const FD_STEP: f64 = 1e-7;
pub const FD_REL_TOL: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn vector(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
}

pub fn pure(v: &Vector3<f64>) -> Quaternion {
    Quaternion::pure(v.x, v.y, v.z)
}

pub fn random_pose(rng: &mut impl Rng, scale: f64) -> Pose {
    let axis = unit_vector(rng);
    let angle = rng.gen_range(-PI..PI);
    let t = vector(rng, scale);
    Pose::from_translation(t.x, t.y, t.z) * Pose::from_axis_angle(&axis, angle)
}

/// Random chain of `n` joints; roughly one in five is prismatic.
pub fn random_robot(rng: &mut impl Rng, n: usize) -> SerialManipulator {
    let rows = (0..n)
        .map(|_| {
            let theta = rng.gen_range(-PI..PI);
            let d = rng.gen_range(-0.4..0.4);
            let a = rng.gen_range(-0.4..0.4);
            let alpha = rng.gen_range(-PI..PI);
            if rng.gen_bool(0.2) {
                DhRow::prismatic(theta, d, a, alpha)
            } else {
                DhRow::revolute(theta, d, a, alpha)
            }
        })
        .collect();
    let base = random_pose(rng, 0.5);
    let eff = random_pose(rng, 0.2);
    SerialManipulator::new(rows, base, eff).unwrap()
}

pub fn random_q(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-PI..PI)).collect()
}

pub fn random_frame(rng: &mut impl Rng, n: usize) -> FrameRef {
    let joint = rng.gen_range(1..=n);
    if rng.gen_bool(0.5) {
        FrameRef::with_offset(joint, random_pose(rng, 0.2))
    } else {
        FrameRef::at(joint)
    }
}

/// Central-difference Jacobian of `f` at `q`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> DVector<f64>, q: &[f64], delta: f64) -> DMatrix<f64> {
    let m = f(q).len();
    let mut j = DMatrix::zeros(m, q.len());
    let mut qp = q.to_vec();
    let mut qm = q.to_vec();
    for i in 0..q.len() {
        qp[i] = q[i] + delta;
        qm[i] = q[i] - delta;
        let col = (f(&qp) - f(&qm)) / (2.0 * delta);
        j.column_mut(i).copy_from(&col);
        qp[i] = q[i];
        qm[i] = q[i];
    }
    j
}

/// Central difference of a scalar function of time.
pub fn fd_scalar(f: impl Fn(f64) -> f64, t: f64, delta: f64) -> f64 {
    (f(t + delta) - f(t - delta)) / (2.0 * delta)
}

/// `‖a − b‖_F / max(‖a‖_F, ‖b‖_F)`, with a floor for all-zero operands.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.norm().max(b.norm()).max(1e-12);
    (a - b).norm() / scale
}

pub fn rel_err_scalar(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Raw DH chain product, independent of the library's Jacobian code.
pub fn chain_pose(robot: &SerialManipulator, q: &[f64], frame: &FrameRef) -> DualQuaternion {
    let mut x = *robot.base().as_dq();
    for (row, qi) in robot.dh_rows().iter().zip(q).take(frame.joint) {
        let (theta, d) = match row.kind {
            vfi_core::kinematics::JointKind::Revolute => (row.theta + qi, row.d),
            vfi_core::kinematics::JointKind::Prismatic => (row.theta, row.d + qi),
        };
        let link = Pose::from_axis_angle(&Vector3::z(), theta)
            * Pose::from_translation(0.0, 0.0, d)
            * Pose::from_translation(row.a, 0.0, 0.0)
            * Pose::from_axis_angle(&Vector3::x(), row.alpha);
        x = x * *link.as_dq();
    }
    if frame.joint == robot.dof() {
        x = x * *robot.effector().as_dq();
    }
    x * *frame.offset.as_dq()
}

/// `vec8` of the chain pose with its sign aligned to `reference`.
pub fn aligned_vec8(x: DualQuaternion, reference: &DualQuaternion) -> DVector<f64> {
    let v = x.to_vec8();
    let r = reference.to_vec8();
    let v = if v.dot(&r) < 0.0 { -v } else { v };
    DVector::from_column_slice(v.as_slice())
}

pub fn translation_of(x: &DualQuaternion) -> Vector3<f64> {
    (2.0 * x.dual * x.primary.conj()).vector()
}

pub fn rotate(x: &DualQuaternion, v: &Vector3<f64>) -> Vector3<f64> {
    (x.primary * pure(v) * x.primary.conj()).vector()
}

/// Squared distance between two infinite lines (point + unit direction),
/// found by minimizing over a parameter on the first line after eliminating
/// the second through orthogonal projection.
pub fn line_line_distance_sq(p1: &Vector3<f64>, u1: &Vector3<f64>, p2: &Vector3<f64>, u2: &Vector3<f64>) -> f64 {
    // f(s) = ‖(I − u2 u2ᵀ)(p1 + s u1 − p2)‖², a 1-D quadratic in s.
    let proj = |v: Vector3<f64>| v - u2 * u2.dot(&v);
    let a = proj(*u1);
    let b = proj(p1 - p2);
    let aa = a.dot(&a);
    if aa <= 1e-300 {
        return b.dot(&b);
    }
    let s = -a.dot(&b) / aa;
    let w = b + a * s;
    w.dot(&w)
}

/// Closest distance from a point to a ray starting at `origin` along `dir`.
pub fn point_ray_distance(p: &Vector3<f64>, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
    let s = (p - origin).dot(dir).max(0.0);
    (p - origin - dir * s).norm()
}

/// Segment-segment distance by dense sampling followed by golden-section
/// refinement in each parameter. Slow but independent of the closed form.
pub fn segment_distance_sampled(a0: &Vector3<f64>, a1: &Vector3<f64>, b0: &Vector3<f64>, b1: &Vector3<f64>) -> f64 {
    let pa = |s: f64| a0 + (a1 - a0) * s;
    let pb = |u: f64| b0 + (b1 - b0) * u;
    // For fixed s the inner problem is a clamped projection.
    let inner = |s: f64| {
        let p = pa(s);
        let d = b1 - b0;
        let dd = d.dot(&d);
        let u = if dd > 0.0 { ((p - b0).dot(&d) / dd).clamp(0.0, 1.0) } else { 0.0 };
        (p - pb(u)).norm()
    };
    let n = 400;
    let mut best = (0.0, f64::INFINITY);
    for i in 0..=n {
        let s = i as f64 / n as f64;
        let v = inner(s);
        if v < best.1 {
            best = (s, v);
        }
    }
    let (mut lo, mut hi) = ((best.0 - 1.0 / n as f64).max(0.0), (best.0 + 1.0 / n as f64).min(1.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if inner(m1) < inner(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    best.1.min(inner(0.5 * (lo + hi)))
}

/// Hildreth's method: projected Gauss–Seidel on the dual
/// `min ½ μᵀQμ + μᵀc, μ ≥ 0` with `Q = W H⁻¹ Wᵀ`, `c = w + W H⁻¹ f`.
/// Returns the primal point `−H⁻¹(f + Wᵀμ)`.
pub fn hildreth(h: &DMatrix<f64>, f: &DVector<f64>, w_mat: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    let h_inv = h.clone().try_inverse().expect("oracle needs an invertible hessian");
    let q = w_mat * &h_inv * w_mat.transpose();
    let c = w + w_mat * &h_inv * f;
    let m = w.len();
    let mut mu = DVector::zeros(m);
    for _ in 0..2_000_000 {
        let mut change = 0.0f64;
        for i in 0..m {
            if q[(i, i)] <= 1e-300 {
                continue;
            }
            let g = q.row(i).dot(&mu.transpose()) + c[i];
            let next = (mu[i] - g / q[(i, i)]).max(0.0);
            change = change.max((next - mu[i]).abs());
            mu[i] = next;
        }
        if change < 1e-15 {
            break;
        }
    }
    -(&h_inv * (f + w_mat.transpose() * mu))
}

/// Random strictly convex problem with a feasible set containing `x0`.
pub struct RandomQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub w_mat: DMatrix<f64>,
    pub w: DVector<f64>,
}

pub fn random_qp(rng: &mut impl Rng, max_n: usize, max_rows: usize) -> RandomQp {
    let n = rng.gen_range(1..=max_n);
    let rows = rng.gen_range(0..=max_rows);
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = b.transpose() * &b + DMatrix::identity(n, n) * rng.gen_range(0.05..1.0);
    let f = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let mut w_mat = DMatrix::from_fn(rows, n, |_, _| rng.gen_range(-1.0..1.0));
    // Occasionally duplicate or scale a row to exercise degeneracy.
    if rows >= 2 && rng.gen_bool(0.2) {
        let src = w_mat.row(0).into_owned() * rng.gen_range(0.5..2.0);
        w_mat.set_row(1, &src);
    }
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let w = &w_mat * &x0 + DVector::from_fn(rows, |_, _| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..0.5) });
    RandomQp { h, f, w_mat, w }
}
