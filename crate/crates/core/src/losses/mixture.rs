//! Finite loss ensembles and the psi-transform bounding zero-one excess risk.
//!
//! For a random loss taking finitely many values `phi_q` with probabilities
//! `pi_q`, the ensemble risk is the risk of the mixture `sum_q pi_q phi_q`.
//! Its psi-transform
//!
//! ```text
//! psi(theta) = E phi(0) - inf_a E[(1 + theta)/2 phi(a) + (1 - theta)/2 phi(-a)]
//! ```
//!
//! bounds the zero-one excess risk by `psi^-1` of the ensemble excess risk.

use super::LossSpec;
use crate::error::{Error, Result};

/// Weighted finite set of losses; weights are positive and sum to one.
#[derive(Debug, Clone)]
pub struct FiniteLossMixture {
    components: Vec<(LossSpec, f64)>,
}

impl FiniteLossMixture {
    pub fn new(components: Vec<(LossSpec, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyRequest("loss mixture without components"));
        }
        if let Some((l, w)) = components.iter().find(|(_, w)| !(*w > 0.0 && *w <= 1.0)) {
            return Err(Error::Domain(format!("weight {w} of {} is outside (0, 1]", l.name())));
        }
        let total: f64 = components.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { components })
    }

    pub fn single(loss: LossSpec) -> Self {
        Self {
            components: vec![(loss, 1.0)],
        }
    }

    pub fn components(&self) -> &[(LossSpec, f64)] {
        &self.components
    }

    pub fn value(&self, z: f64) -> f64 {
        self.components.iter().map(|(l, w)| w * l.value(z)).sum()
    }
}

/// `sum_q pi_q phi_q(z)`.
pub fn mixture_loss_value(mix: &FiniteLossMixture, z: f64) -> f64 {
    mix.value(z)
}

/// Bracket and tolerance for the inner minimization over `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSearch {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
}

impl Default for AlphaSearch {
    fn default() -> Self {
        Self {
            lo: -50.0,
            hi: 50.0,
            tol: 1e-8,
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimum of a unimodal function on `[lo, hi]`.
fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = fc.min(fd);
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
            best = best.min(fc);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
            best = best.min(fd);
        }
    }
    best.min(f(0.5 * (lo + hi)))
}

/// The psi-transform of the mixture at `theta`.
///
/// The inner objective is convex in `a`, so a golden-section search over the
/// bracket finds its infimum.
pub fn psi_transform(mix: &FiniteLossMixture, theta: f64, search: AlphaSearch) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("theta must lie in [0, 1], got {theta}")));
    }
    let wp = 0.5 * (1.0 + theta);
    let wm = 0.5 * (1.0 - theta);
    let objective = |a: f64| {
        let pos = mix.value(a);
        // avoid 0 * inf at theta = 1
        let neg = if wm == 0.0 { 0.0 } else { wm * mix.value(-a) };
        wp * pos + neg
    };
    let inf = golden_section_min(objective, search.lo, search.hi, search.tol);
    let at_zero = mix.value(0.0);
    if !(inf.is_finite() && at_zero.is_finite()) {
        return Err(Error::Evaluation("psi objective is not finite".into()));
    }
    Ok((at_zero - inf.min(at_zero)).max(0.0))
}

/// Upper bound on the zero-one excess risk implied by a surrogate excess
/// risk, `psi^-1(surrogate_excess)`, found by bisection. Capped at 1.
pub fn excess_risk_bound(mix: &FiniteLossMixture, surrogate_excess: f64) -> Result<f64> {
    if !(surrogate_excess >= 0.0) {
        return Err(Error::Domain(format!(
            "surrogate excess risk must be non-negative, got {surrogate_excess}"
        )));
    }
    if surrogate_excess == 0.0 {
        return Ok(0.0);
    }
    let search = AlphaSearch::default();
    if surrogate_excess >= psi_transform(mix, 1.0, search)? {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if psi_transform(mix, mid, search)? < surrogate_excess {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
