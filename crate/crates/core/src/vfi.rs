//! Vector-field inequalities: distance results become linear rows `M ġ ≤ m`.
//!
//! With `d̃` the distance to the zone boundary (nonnegative while safe), every
//! row enforces `d̃' ≥ −η d̃`, so the boundary is approached at most
//! exponentially and never crossed in continuous time.

use nalgebra::RowDVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{RobotLine, RobotPoint};
use crate::primitives::{
    line_to_line, line_to_point, point_to_line, DistanceMetric, DistanceResult, EntityLine, EntityPoint,
    PrimitiveError, PARALLEL_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VfiError {
    #[error("gain must be finite and nonnegative, got {0}")]
    NegativeGain(f64),
    #[error("safe distance must be finite and nonnegative, got {0}")]
    NegativeSafeDistance(f64),
    #[error("expected a {expected:?} constraint")]
    WrongDirection { expected: Direction },
    #[error("column block {offset}+{len} does not fit in {total} columns")]
    BlockOutOfRange { offset: usize, len: usize, total: usize },
    #[error("the two results describe different pairs ({0} vs {1})")]
    MismatchedPair(f64, f64),
    #[error(transparent)]
    Primitive(#[from] PrimitiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Stay outside the zone: `d ≥ d_safe`.
    KeepOut,
    /// Stay inside the zone: `d ≤ d_safe`.
    KeepIn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VfiSpec {
    pub direction: Direction,
    /// Always in meters; squared metrics use `d_safe²`.
    pub d_safe: f64,
    pub d_safe_rate: f64,
    /// `η_d` in 1/s.
    pub gain: f64,
}

impl VfiSpec {
    pub fn keep_out(d_safe: f64, gain: f64) -> Self {
        Self { direction: Direction::KeepOut, d_safe, d_safe_rate: 0.0, gain }
    }

    pub fn keep_in(d_safe: f64, gain: f64) -> Self {
        Self { direction: Direction::KeepIn, d_safe, d_safe_rate: 0.0, gain }
    }

    pub fn with_safe_rate(mut self, rate: f64) -> Self {
        self.d_safe_rate = rate;
        self
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn validate(&self) -> Result<(), VfiError> {
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(VfiError::NegativeGain(self.gain));
        }
        if !(self.d_safe >= 0.0 && self.d_safe.is_finite()) {
            return Err(VfiError::NegativeSafeDistance(self.d_safe));
        }
        Ok(())
    }

    /// Safe boundary and its rate in the metric of `metric`.
    pub fn boundary(&self, metric: DistanceMetric) -> (f64, f64) {
        match metric {
            DistanceMetric::Squared => (self.d_safe * self.d_safe, 2.0 * self.d_safe * self.d_safe_rate),
            DistanceMetric::Signed => (self.d_safe, self.d_safe_rate),
        }
    }

    /// `d̃`, nonnegative inside the safe set.
    pub fn margin(&self, res: &DistanceResult) -> f64 {
        let (safe, _) = self.boundary(res.metric);
        match self.direction {
            Direction::KeepOut => res.value - safe,
            Direction::KeepIn => safe - res.value,
        }
    }
}

/// Columns `offset..offset + len` of the stacked joint vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnBlock {
    pub offset: usize,
    pub len: usize,
}

impl ColumnBlock {
    pub fn new(offset: usize, len: usize) -> Self {
        Self { offset, len }
    }

    fn check(&self, total: usize) -> Result<(), VfiError> {
        if self.offset + self.len > total {
            return Err(VfiError::BlockOutOfRange { offset: self.offset, len: self.len, total });
        }
        Ok(())
    }
}

/// One row of `W ġ ≤ w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub coeffs: RowDVector<f64>,
    pub bound: f64,
}

impl ConstraintRow {
    pub fn width(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_finite(&self) -> bool {
        self.bound.is_finite() && self.coeffs.iter().all(|v| v.is_finite())
    }

    /// `bound − coeffs · ġ`; nonnegative when satisfied.
    pub fn slack(&self, gdot: &[f64]) -> f64 {
        self.bound - self.coeffs.iter().zip(gdot).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn place(total: usize, parts: &[(&RowDVector<f64>, ColumnBlock, f64)]) -> Result<RowDVector<f64>, VfiError> {
    let mut coeffs = RowDVector::zeros(total);
    for (j, block, sign) in parts {
        block.check(total)?;
        if j.len() != block.len {
            return Err(VfiError::BlockOutOfRange { offset: block.offset, len: j.len(), total });
        }
        for (k, v) in j.iter().enumerate() {
            coeffs[block.offset + k] += sign * v;
        }
    }
    Ok(coeffs)
}

/// `−J ġ ≤ η d̃ + ζ_safe` with `d̃ = d − d_safe` and `ζ_safe = ζ − ḋ_safe`.
pub fn keep_out_row(
    res: &DistanceResult,
    spec: &VfiSpec,
    block: ColumnBlock,
    total: usize,
) -> Result<ConstraintRow, VfiError> {
    if spec.direction != Direction::KeepOut {
        return Err(VfiError::WrongDirection { expected: Direction::KeepOut });
    }
    single_row(res, spec, block, total)
}

/// `J ġ ≤ η d̃ − ζ_safe` with `d̃ = d_safe − d` and `ζ_safe = ζ − ḋ_safe`.
pub fn keep_in_row(
    res: &DistanceResult,
    spec: &VfiSpec,
    block: ColumnBlock,
    total: usize,
) -> Result<ConstraintRow, VfiError> {
    if spec.direction != Direction::KeepIn {
        return Err(VfiError::WrongDirection { expected: Direction::KeepIn });
    }
    single_row(res, spec, block, total)
}

/// Dispatches on `spec.direction`.
pub fn single_row(
    res: &DistanceResult,
    spec: &VfiSpec,
    block: ColumnBlock,
    total: usize,
) -> Result<ConstraintRow, VfiError> {
    spec.validate()?;
    let sign = direction_sign(spec.direction);
    let coeffs = place(total, &[(&res.jacobian, block, sign)])?;
    Ok(ConstraintRow { coeffs, bound: bound(res.value, res.residual, res.metric, spec) })
}

fn direction_sign(direction: Direction) -> f64 {
    match direction {
        Direction::KeepOut => -1.0,
        Direction::KeepIn => 1.0,
    }
}

fn bound(value: f64, residual: f64, metric: DistanceMetric, spec: &VfiSpec) -> f64 {
    let (safe, safe_rate) = spec.boundary(metric);
    let zeta_safe = residual - safe_rate;
    match spec.direction {
        Direction::KeepOut => spec.gain * (value - safe) + zeta_safe,
        Direction::KeepIn => spec.gain * (safe - value) - zeta_safe,
    }
}

/// Which robots of a pair have their columns in a coupled row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ownership {
    pub first: bool,
    pub second: bool,
}

impl Ownership {
    pub const BOTH: Ownership = Ownership { first: true, second: true };
    pub const FIRST: Ownership = Ownership { first: true, second: false };
    pub const SECOND: Ownership = Ownership { first: false, second: true };
}

/// One row over two robots' column blocks for a pair measured from both sides.
///
/// `res1` and `res2` are the same distance differentiated with respect to each
/// robot's joints. The row's residual is taken from `res1` only; the caller
/// folds any masked-out robot's motion into it.
pub fn coupled_row(
    res1: &DistanceResult,
    block1: ColumnBlock,
    res2: &DistanceResult,
    block2: ColumnBlock,
    spec: &VfiSpec,
    total: usize,
    owned: Ownership,
) -> Result<ConstraintRow, VfiError> {
    spec.validate()?;
    let same = res1.metric == res2.metric && (res1.value - res2.value).abs() <= 1e-8 * res1.value.abs().max(1.0);
    if !same {
        return Err(VfiError::MismatchedPair(res1.value, res2.value));
    }
    let sign = direction_sign(spec.direction);
    let mut parts = Vec::with_capacity(2);
    if owned.first {
        parts.push((&res1.jacobian, block1, sign));
    }
    if owned.second {
        parts.push((&res2.jacobian, block2, sign));
    }
    block1.check(total)?;
    block2.check(total)?;
    let coeffs = place(total, &parts)?;
    Ok(ConstraintRow { coeffs, bound: bound(res1.value, res1.residual, res1.metric, spec) })
}

/// A tool shaft: a semi-infinite cylinder from the tip back toward the base.
///
/// The shaft line's direction points from base to tip, so the cylinder extends
/// along `−l_z` from `tip`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cylinder {
    pub tip: RobotPoint,
    pub shaft: RobotLine,
    pub radius: f64,
}

impl Cylinder {
    /// Parameter of `p`'s projection along the extent; `≥ 0` is inside.
    pub fn extent_parameter(&self, p: &nalgebra::Vector3<f64>) -> f64 {
        -(p - self.tip.position.vector()).dot(&self.shaft.direction().vector())
    }

    fn as_entity_line(&self) -> EntityLine {
        EntityLine { line: self.shaft.line, velocity: crate::dq::DualQuaternion::ZERO }
    }

    fn as_entity_point(&self) -> EntityPoint {
        EntityPoint::fixed(self.tip.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardKind {
    /// Tip of the first tool against the shaft of the second.
    FirstTipSecondShaft,
    /// Tip of the second tool against the shaft of the first.
    SecondTipFirstShaft,
    ShaftShaft,
}

/// A guarded pair measured from both robots' sides.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardPair {
    pub kind: GuardKind,
    pub first: DistanceResult,
    pub second: DistanceResult,
    pub d_safe: f64,
}

/// Pairs between two tool cylinders that currently need a row.
///
/// Tip-vs-shaft pairs are emitted when the tip projects inside the other
/// shaft's extent; the shaft-vs-shaft pair when both closest points of the
/// axis lines lie inside both extents and the axes are not parallel.
pub fn cylinder_guard_pairs(c1: &Cylinder, c2: &Cylinder) -> Result<Vec<GuardPair>, VfiError> {
    let d_safe = c1.radius + c2.radius;
    let t1 = c1.tip.position.vector();
    let t2 = c2.tip.position.vector();
    let mut out = Vec::with_capacity(3);

    if c2.extent_parameter(&t1) >= 0.0 {
        out.push(GuardPair {
            kind: GuardKind::FirstTipSecondShaft,
            first: point_to_line(&c1.tip, &c2.as_entity_line())?,
            second: line_to_point(&c2.shaft, &c1.as_entity_point()),
            d_safe,
        });
    }
    if c1.extent_parameter(&t2) >= 0.0 {
        out.push(GuardPair {
            kind: GuardKind::SecondTipFirstShaft,
            first: line_to_point(&c1.shaft, &c2.as_entity_point()),
            second: point_to_line(&c2.tip, &c1.as_entity_line())?,
            d_safe,
        });
    }

    let a1 = -c1.shaft.direction().vector();
    let a2 = -c2.shaft.direction().vector();
    if a1.cross(&a2).norm() >= PARALLEL_THRESHOLD {
        let (s1, s2) = closest_parameters(&t1, &a1, &t2, &a2);
        if s1 >= 0.0 && s2 >= 0.0 {
            out.push(GuardPair {
                kind: GuardKind::ShaftShaft,
                first: line_to_line(&c1.shaft, &c2.as_entity_line())?,
                second: line_to_line(&c2.shaft, &c1.as_entity_line())?,
                d_safe,
            });
        }
    }
    Ok(out)
}

/// Parameters of the mutually closest points of `p1 + s1 a1` and `p2 + s2 a2`
/// for unit, non-parallel directions.
pub fn closest_parameters(
    p1: &nalgebra::Vector3<f64>,
    a1: &nalgebra::Vector3<f64>,
    p2: &nalgebra::Vector3<f64>,
    a2: &nalgebra::Vector3<f64>,
) -> (f64, f64) {
    let w = p1 - p2;
    let b = a1.dot(a2);
    let d = a1.dot(&w);
    let e = a2.dot(&w);
    let den = 1.0 - b * b;
    ((b * e - d) / den, (e - b * d) / den)
}

/// Fully coupled keep-out rows for every active guard pair.
pub fn cylinder_guard_rows(
    c1: &Cylinder,
    block1: ColumnBlock,
    c2: &Cylinder,
    block2: ColumnBlock,
    gain: f64,
    total: usize,
) -> Result<Vec<ConstraintRow>, VfiError> {
    cylinder_guard_pairs(c1, c2)?
        .iter()
        .map(|p| {
            let spec = VfiSpec::keep_out(p.d_safe, gain);
            coupled_row(&p.first, block1, &p.second, block2, &spec, total, Ownership::BOTH)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(value: f64, jacobian: &[f64], residual: f64, metric: DistanceMetric) -> DistanceResult {
        DistanceResult { metric, value, jacobian: RowDVector::from_row_slice(jacobian), residual }
    }

    #[test]
    fn keep_out_substitution() {
        let res = result(2.0, &[1.0, 0.0], 0.0, DistanceMetric::Signed);
        let row = keep_out_row(&res, &VfiSpec::keep_out(1.0, 1.0), ColumnBlock::new(0, 2), 3).unwrap();
        assert_eq!(row.coeffs.as_slice(), &[-1.0, 0.0, 0.0]);
        assert_eq!(row.bound, 1.0);
    }

    #[test]
    fn keep_out_boundary_and_moving_obstacle() {
        let at = result(1.0, &[1.0], 0.0, DistanceMetric::Signed);
        assert_eq!(keep_out_row(&at, &VfiSpec::keep_out(1.0, 3.0), ColumnBlock::new(0, 1), 1).unwrap().bound, 0.0);
        let closing = result(2.0, &[1.0], -0.5, DistanceMetric::Signed);
        let row = keep_out_row(&closing, &VfiSpec::keep_out(1.0, 1.0), ColumnBlock::new(0, 1), 1).unwrap();
        assert_eq!(row.bound, 0.5);
    }

    #[test]
    fn keep_in_cases() {
        let inside = result(0.5, &[1.0], 0.0, DistanceMetric::Signed);
        let row = keep_in_row(&inside, &VfiSpec::keep_in(1.0, 1.0), ColumnBlock::new(0, 1), 1).unwrap();
        assert_eq!((row.coeffs[0], row.bound), (1.0, 0.5));
        let at = result(1.0, &[1.0], 0.0, DistanceMetric::Signed);
        assert_eq!(keep_in_row(&at, &VfiSpec::keep_in(1.0, 1.0), ColumnBlock::new(0, 1), 1).unwrap().bound, 0.0);
        let shrinking = result(0.8, &[1.0], 0.0, DistanceMetric::Signed);
        let spec = VfiSpec::keep_in(1.0, 1.0).with_safe_rate(-0.1);
        let row = keep_in_row(&shrinking, &spec, ColumnBlock::new(0, 1), 1).unwrap();
        assert!((row.bound - 0.1).abs() < 1e-15);
    }

    #[test]
    fn squared_metric_uses_squared_boundary() {
        let res = result(4.0, &[1.0], 0.0, DistanceMetric::Squared);
        let spec = VfiSpec::keep_out(1.0, 2.0).with_safe_rate(0.5);
        let row = single_row(&res, &spec, ColumnBlock::new(0, 1), 1).unwrap();
        // 2 (4 − 1) + (0 − 2·1·0.5)
        assert_eq!(row.bound, 5.0);
    }

    #[test]
    fn rejects_bad_specs() {
        let res = result(1.0, &[1.0], 0.0, DistanceMetric::Signed);
        let bad = VfiSpec::keep_out(1.0, -1.0);
        assert_eq!(single_row(&res, &bad, ColumnBlock::new(0, 1), 1), Err(VfiError::NegativeGain(-1.0)));
        assert!(keep_in_row(&res, &VfiSpec::keep_out(1.0, 1.0), ColumnBlock::new(0, 1), 1).is_err());
        assert!(single_row(&res, &VfiSpec::keep_out(1.0, 1.0), ColumnBlock::new(1, 1), 1).is_err());
    }

    #[test]
    fn coupled_row_layout_and_degenerate_case() {
        let r1 = result(3.0, &[1.0, 2.0], 0.25, DistanceMetric::Squared);
        let r2 = result(3.0, &[-1.0], 7.0, DistanceMetric::Squared);
        let spec = VfiSpec::keep_out(1.0, 1.0);
        let row =
            coupled_row(&r1, ColumnBlock::new(0, 2), &r2, ColumnBlock::new(2, 1), &spec, 3, Ownership::BOTH).unwrap();
        assert_eq!(row.coeffs.as_slice(), &[-1.0, -2.0, 1.0]);
        assert_eq!(row.bound, 2.25);
        let frozen = result(3.0, &[0.0], 0.0, DistanceMetric::Squared);
        let a = coupled_row(&r1, ColumnBlock::new(0, 2), &frozen, ColumnBlock::new(2, 1), &spec, 3, Ownership::BOTH)
            .unwrap();
        let b = keep_out_row(&r1, &spec, ColumnBlock::new(0, 2), 3).unwrap();
        assert_eq!(a, b);
        let mismatch = result(2.0, &[0.0], 0.0, DistanceMetric::Squared);
        assert!(coupled_row(&r1, ColumnBlock::new(0, 2), &mismatch, ColumnBlock::new(2, 1), &spec, 3, Ownership::BOTH)
            .is_err());
    }

    #[test]
    fn masked_coupled_row_drops_columns() {
        let r1 = result(3.0, &[1.0], 0.0, DistanceMetric::Squared);
        let r2 = result(3.0, &[5.0], 0.0, DistanceMetric::Squared);
        let spec = VfiSpec::keep_out(1.0, 1.0);
        let row =
            coupled_row(&r1, ColumnBlock::new(0, 1), &r2, ColumnBlock::new(1, 1), &spec, 2, Ownership::FIRST).unwrap();
        assert_eq!(row.coeffs.as_slice(), &[-1.0, 0.0]);
    }

    #[test]
    fn closest_parameters_of_crossing_axes() {
        use nalgebra::Vector3;
        let (s1, s2) = closest_parameters(
            &Vector3::new(-1.0, 0.0, 0.0),
            &Vector3::x(),
            &Vector3::new(0.0, -2.0, 1.0),
            &Vector3::y(),
        );
        assert!((s1 - 1.0).abs() < 1e-15 && (s2 - 2.0).abs() < 1e-15);
    }
}
