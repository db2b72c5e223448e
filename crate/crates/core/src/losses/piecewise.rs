//! Explicit loss reconstruction from RC derivative samples.
//!
//! Given margins and derivatives satisfying the RC conditions, build a
//! continuous piecewise-linear loss whose slope at every margin equals the
//! given derivative. The origin is added as an extra point with a derivative
//! chosen between its neighbours, knots sit halfway between consecutive
//! points, and the last piece gets slope `max(g_last, 1)` so the loss is
//! eventually increasing.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::derivgen::certify_rc;
use crate::error::{Error, Result};

/// Continuous piecewise-linear loss.
///
/// Piece `i` covers `(knots[i-1], knots[i]]` with slope `slopes[i]`; the
/// first piece extends to `-inf` and the last (slope `slopes[knots.len()]`)
/// to `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearLoss {
    knots: Vec<f64>,
    slopes: Vec<f64>,
    knot_values: Vec<f64>,
    anchor: f64,
}

impl PiecewiseLinearLoss {
    /// Builds the loss from knots, slopes and the value at the first knot.
    pub fn new(knots: Vec<f64>, slopes: Vec<f64>, first_value: f64) -> Result<Self> {
        if knots.is_empty() || slopes.len() != knots.len() + 1 {
            return Err(Error::Shape(format!(
                "{} knots need {} slopes, got {}",
                knots.len(),
                knots.len() + 1,
                slopes.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("knots must be strictly increasing".into()));
        }
        let mut knot_values = Vec::with_capacity(knots.len());
        knot_values.push(first_value);
        for i in 1..knots.len() {
            let prev = knot_values[i - 1];
            knot_values.push(prev + slopes[i] * (knots[i] - knots[i - 1]));
        }
        let mut loss = Self {
            knots,
            slopes,
            knot_values,
            anchor: 0.0,
        };
        loss.anchor = loss.value(0.0);
        Ok(loss)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Value at `z = 0`.
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// Index of the piece containing `z` (pieces are closed on the right).
    fn piece(&self, z: f64) -> usize {
        self.knots.partition_point(|&u| u < z)
    }

    pub fn value(&self, z: f64) -> f64 {
        let i = self.piece(z);
        if i == 0 {
            self.knot_values[0] + self.slopes[0] * (z - self.knots[0])
        } else {
            self.knot_values[i - 1] + self.slopes[i] * (z - self.knots[i - 1])
        }
    }

    /// Slope of the piece containing `z`; the left slope at a knot.
    pub fn derivative(&self, z: f64) -> f64 {
        self.slopes[self.piece(z)]
    }

    /// Left and right slopes at `z`; they differ only at a knot.
    pub fn one_sided_slopes(&self, z: f64) -> (f64, f64) {
        let right = self.knots.partition_point(|&u| u <= z);
        (self.slopes[self.piece(z)], self.slopes[right])
    }

    pub fn is_convex(&self) -> bool {
        self.slopes.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn is_bounded_below(&self) -> bool {
        self.slopes.last().is_some_and(|&s| s > 0.0)
    }

    /// Differentiable at zero with a negative slope there.
    pub fn is_calibrated(&self) -> bool {
        !self.knots.contains(&0.0) && self.derivative(0.0) < 0.0
    }
}

/// Reconstructs a bounded-below convex calibrated loss with
/// `phi'(margins[i]) = derivs[i]`.
///
/// Equal margins (which must carry equal derivatives) are merged. The inputs
/// must satisfy the RC conditions with `p = 1`.
pub fn reconstruct_loss(margins: &[f64], derivs: &[f64]) -> Result<PiecewiseLinearLoss> {
    if margins.len() != derivs.len() {
        return Err(Error::Shape(format!(
            "{} margins but {} derivatives",
            margins.len(),
            derivs.len()
        )));
    }
    if margins.is_empty() {
        return Err(Error::EmptyRequest("loss reconstruction from no samples"));
    }
    if margins.iter().chain(derivs).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite margin or derivative".into()));
    }
    if let Some(w) = certify_rc(margins, derivs, 1.0)? {
        return Err(Error::RcViolation {
            condition: match w.condition {
                crate::derivgen::RcCondition::Convexity => "convexity",
                crate::derivgen::RcCondition::Calibration => "calibration",
                crate::derivgen::RcCondition::RaisingTail => "raising tail",
            },
            pair: w.pair,
        });
    }

    let mut points: Vec<(f64, f64)> = margins.iter().copied().zip(derivs.iter().copied()).collect();
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    points.dedup_by(|b, a| a.0 == b.0);

    let zero_at = points.partition_point(|p| p.0 < 0.0);
    let has_zero = points.get(zero_at).is_some_and(|p| p.0 == 0.0);
    if !has_zero {
        let left = zero_at.checked_sub(1).map(|i| points[i].1);
        let right = points.get(zero_at).map(|p| p.1);
        let g0 = match (left, right) {
            (Some(l), Some(r)) => (l / 2.0).min((l + r) / 2.0),
            (Some(l), None) => l / 2.0,
            (None, Some(r)) => r.min(-1.0),
            (None, None) => unreachable!("non-empty input"),
        };
        points.insert(zero_at, (0.0, g0));
    }

    let n = points.len();
    let mut knots = Vec::with_capacity(n);
    for w in points.windows(2) {
        knots.push(0.5 * (w[0].0 + w[1].0));
    }
    knots.push(points[n - 1].0 + 1.0);

    let mut slopes: Vec<f64> = points.iter().map(|p| p.1).collect();
    slopes.push(points[n - 1].1.max(1.0));

    // The first piece is g_1 * z, so its value at the first knot is g_1 u_1.
    let first_value = slopes[0] * knots[0];
    PiecewiseLinearLoss::new(knots, slopes, first_value)
}
