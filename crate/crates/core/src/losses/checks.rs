//! Numeric evidence for loss validity.
//!
//! These are tolerance-based probes, not proofs. An adversarial loss (for
//! example one whose tail changes character beyond the scanned range) can
//! fool them.

use serde::Serialize;

use super::LossSpec;
use crate::error::{Error, Result};

/// Default step for the one-sided difference quotients at zero.
pub const CALIBRATION_STEP: f64 = 1e-6;
/// Allowed disagreement between the left and right quotients at zero.
pub const CALIBRATION_AGREEMENT: f64 = 1e-4;
/// A derivative at zero has to be below this to count as negative.
pub const NEGATIVE_SLOPE_FLOOR: f64 = -1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationReason {
    Calibrated,
    NotDifferentiableAtZero,
    NonNegativeDerivativeAtZero,
}

impl std::fmt::Display for CalibrationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CalibrationReason::Calibrated => "differentiable at 0 with negative derivative",
            CalibrationReason::NotDifferentiableAtZero => "not differentiable at 0",
            CalibrationReason::NonNegativeDerivativeAtZero => "derivative at 0 is not negative",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationCertificate {
    pub calibrated: bool,
    pub reason: CalibrationReason,
    pub left_slope: f64,
    pub right_slope: f64,
    /// Central difference quotient at zero.
    pub derivative: f64,
    /// Zero when the slopes were read exactly.
    pub step: f64,
}

fn eval(loss: &LossSpec, z: f64) -> Result<f64> {
    let v = loss.value(z);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation(format!("{} is not finite at z={z}", loss.name())))
    }
}

/// A convex loss is classification-calibrated iff it is differentiable at
/// zero with a negative derivative there.
///
/// Piecewise-linear losses are checked exactly from their slopes, since a
/// slope as small as the generator's positivity clamp is invisible to a
/// difference quotient. For other losses the one-sided quotients use a step of [`CALIBRATION_STEP`], shrunk to stay
/// inside the smooth piece around zero when the loss reports nearby kinks.
pub fn check_calibration(loss: &LossSpec) -> Result<CalibrationCertificate> {
    if let Some(pw) = loss.as_piecewise() {
        let (left, right) = pw.one_sided_slopes(0.0);
        let reason = if left != right {
            CalibrationReason::NotDifferentiableAtZero
        } else if left >= 0.0 {
            CalibrationReason::NonNegativeDerivativeAtZero
        } else {
            CalibrationReason::Calibrated
        };
        return Ok(CalibrationCertificate {
            calibrated: reason == CalibrationReason::Calibrated,
            reason,
            left_slope: left,
            right_slope: right,
            derivative: if left == right { left } else { 0.5 * (left + right) },
            step: 0.0,
        });
    }
    let nearest_kink = loss
        .kinks()
        .iter()
        .map(|k| k.abs())
        .filter(|&k| k > 0.0)
        .fold(f64::INFINITY, f64::min);
    let h = CALIBRATION_STEP.min(0.5 * nearest_kink);

    let f0 = eval(loss, 0.0)?;
    let fp = eval(loss, h)?;
    let fm = eval(loss, -h)?;
    let right = (fp - f0) / h;
    let left = (f0 - fm) / h;
    let central = (fp - fm) / (2.0 * h);

    let scale = 1.0f64.max(central.abs());
    let differentiable = (right - left).abs() <= CALIBRATION_AGREEMENT * scale;
    let reason = if !differentiable {
        CalibrationReason::NotDifferentiableAtZero
    } else if central >= NEGATIVE_SLOPE_FLOOR {
        CalibrationReason::NonNegativeDerivativeAtZero
    } else {
        CalibrationReason::Calibrated
    };
    Ok(CalibrationCertificate {
        calibrated: reason == CalibrationReason::Calibrated,
        reason,
        left_slope: left,
        right_slope: right,
        derivative: central,
        step: h,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TailCertificate {
    pub holds: bool,
    pub p: f64,
    pub z0: f64,
    /// First adjacent grid pair `(z_i, z_{i+1})` where `z^p dphi(z)` drops.
    pub witness: Option<(f64, f64)>,
}

/// Checks that `z^p * dphi(z)` is nondecreasing on a geometric grid over
/// `[z0, 1000 z0]`.
pub fn check_superlinear_tail(loss: &LossSpec, p: f64, z0: f64, grid: usize) -> Result<TailCertificate> {
    if grid < 2 {
        return Err(Error::Domain("tail check needs at least 2 grid points".into()));
    }
    if !(z0 > 0.0) || !p.is_finite() {
        return Err(Error::Domain(format!("invalid tail check parameters p={p}, z0={z0}")));
    }
    let ratio = 1000f64.powf(1.0 / (grid - 1) as f64);
    let mut prev: Option<(f64, f64)> = None;
    let mut witness = None;
    for i in 0..grid {
        let z = z0 * ratio.powi(i as i32);
        let d = loss.subderivative(z);
        if !d.is_finite() {
            return Err(Error::Evaluation(format!(
                "{} has a non-finite derivative at z={z}",
                loss.name()
            )));
        }
        let h = z.powf(p) * d;
        if let Some((pz, ph)) = prev {
            if h < ph - 1e-9 * ph.abs().max(1.0) {
                witness = Some((pz, z));
                break;
            }
        }
        prev = Some((z, h));
    }
    Ok(TailCertificate {
        holds: witness.is_none(),
        p,
        z0,
        witness,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundedBelowCertificate {
    pub bounded: bool,
    /// Smallest value seen on the scan, extended by an extrapolated tail sum
    /// when the loss is still decreasing at the edge of the scan.
    pub inf_estimate: f64,
    pub scan_max: f64,
}

/// Per-side outcome of the outward scan.
struct SideScan {
    bounded: bool,
    min: f64,
    tail_extrapolation: f64,
}

const POINTS_PER_DECADE: usize = 20;
const STABLE_RTOL: f64 = 1e-3;
const MIN_DECAY_EXPONENT: f64 = 1.25;

/// Scans the loss outward from the origin in both directions.
///
/// A side counts as bounded when its running minimum stops moving over the
/// last decade (and the outward slope at the edge is not negative), or when
/// the per-decade decrease shrinks fast enough to be summable: the decrease
/// over decade `k` behaves like `k^-s` with `s` above
/// [`MIN_DECAY_EXPONENT`]. The second rule is what separates slowly
/// converging tails such as `e/log(z)` from the divergent `-log z`.
pub fn check_bounded_below(loss: &LossSpec, scan_max: f64) -> Result<BoundedBelowCertificate> {
    if !(scan_max > 1.0) || !scan_max.is_finite() {
        return Err(Error::Domain(format!("scan_max must exceed 1, got {scan_max}")));
    }
    let mut core_min = f64::INFINITY;
    for i in 0..=200 {
        let z = -1.0 + 2.0 * i as f64 / 200.0;
        core_min = core_min.min(eval(loss, z)?);
    }
    let right = scan_side(loss, scan_max, 1.0)?;
    let left = scan_side(loss, scan_max, -1.0)?;
    let min = core_min.min(right.min).min(left.min);
    let bounded = right.bounded && left.bounded;
    let inf_estimate = if bounded {
        min - right.tail_extrapolation.max(left.tail_extrapolation)
    } else {
        f64::NEG_INFINITY
    };
    Ok(BoundedBelowCertificate {
        bounded,
        inf_estimate,
        scan_max,
    })
}

fn scan_side(loss: &LossSpec, scan_max: f64, dir: f64) -> Result<SideScan> {
    let decades = scan_max.log10();
    let n = (decades * POINTS_PER_DECADE as f64).ceil().max(1.0) as usize;
    let mut values = Vec::with_capacity(n + 1);
    let mut zs = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = (i as f64 / n as f64) * decades;
        let z = dir * 10f64.powf(t);
        let v = loss.value(z);
        if v.is_nan() {
            return Err(Error::Evaluation(format!("{} is NaN at z={z}", loss.name())));
        }
        if v == f64::NEG_INFINITY {
            return Ok(SideScan {
                bounded: false,
                min: f64::NEG_INFINITY,
                tail_extrapolation: 0.0,
            });
        }
        if v == f64::INFINITY {
            // Growing without bound in this direction.
            break;
        }
        zs.push(z);
        values.push(v);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.len() <= POINTS_PER_DECADE {
        return Ok(SideScan {
            bounded: true,
            min,
            tail_extrapolation: 0.0,
        });
    }

    // Decrease over each full decade (positive while still falling).
    let decrements: Vec<f64> = values
        .windows(POINTS_PER_DECADE + 1)
        .step_by(POINTS_PER_DECADE)
        .map(|w| w[0] - w[POINTS_PER_DECADE])
        .collect();
    let last = *decrements.last().unwrap_or(&0.0);
    let tol = STABLE_RTOL * (1.0 + min.abs());

    let z_edge = *zs.last().unwrap_or(&dir);
    let h = 1e-6 * z_edge.abs();
    let outward_slope = (loss.value(z_edge) - loss.value(z_edge - dir * h)) / h;
    let flat_edge = !(outward_slope < -1e-9);

    if last <= 0.0 || (last < tol && flat_edge) {
        return Ok(SideScan {
            bounded: true,
            min,
            tail_extrapolation: 0.0,
        });
    }

    // Power-law fit of the decrements between the middle and the last decade.
    let k_last = decrements.len();
    let k_mid = (k_last / 2).max(1);
    if k_last < 4 || k_mid == k_last {
        return Ok(SideScan {
            bounded: false,
            min,
            tail_extrapolation: 0.0,
        });
    }
    let d_mid = decrements[k_mid - 1];
    if d_mid <= 0.0 {
        // Rose and then fell again: not convex, report unbounded.
        return Ok(SideScan {
            bounded: false,
            min,
            tail_extrapolation: 0.0,
        });
    }
    let s = (d_mid / last).ln() / (k_last as f64 / k_mid as f64).ln();
    if s > MIN_DECAY_EXPONENT {
        // sum_{j > K} d_K (K/j)^s ~ d_K K / (s - 1)
        let extra = last * k_last as f64 / (s - 1.0);
        Ok(SideScan {
            bounded: true,
            min,
            tail_extrapolation: extra.min(1e6),
        })
    } else {
        Ok(SideScan {
            bounded: false,
            min,
            tail_extrapolation: 0.0,
        })
    }
}

/// Serializable summary of all checks for one loss.
#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub name: String,
    pub calibrated: bool,
    pub bounded_below: bool,
    pub tail_ok: bool,
    pub calibration: CalibrationCertificate,
    pub bounded: BoundedBelowCertificate,
    pub tail: TailCertificate,
    pub warnings: Vec<String>,
}

/// Default scan range for [`check_loss`].
pub const DEFAULT_SCAN_MAX: f64 = 1e12;

pub fn check_loss(loss: &LossSpec, p: f64, z0: f64, grid: usize) -> Result<LossReport> {
    let calibration = check_calibration(loss)?;
    let bounded = check_bounded_below(loss, DEFAULT_SCAN_MAX)?;
    let tail = check_superlinear_tail(loss, p, z0, grid)?;
    let mut warnings = Vec::new();
    if !bounded.bounded {
        warnings.push(
            "loss is unbounded below: it cannot be calibrated in general and SGD training with it \
             tends to be unstable"
                .to_string(),
        );
    }
    if !tail.holds {
        warnings.push(format!(
            "derivative tail does not rise superlinearly (p={p}, z0={z0}); witness {:?}",
            tail.witness
        ));
    }
    Ok(LossReport {
        name: loss.name().to_string(),
        calibrated: calibration.calibrated,
        bounded_below: bounded.bounded,
        tail_ok: tail.holds,
        calibration,
        bounded,
        tail,
        warnings,
    })
}
