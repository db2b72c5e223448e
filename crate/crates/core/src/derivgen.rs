//! Random RC loss-derivatives for a minibatch.
//!
//! A derivative vector `g` over batch margins `z` is *RC* (superlinear
//! raising-tailed, calibrated) when
//!
//! 1. `g_i <= g_j` whenever `z_i < z_j`, and `g_i = g_j` whenever `z_i = z_j`;
//! 2. `g_i < 0` whenever `z_i <= 0`;
//! 3. `z_i^p g_i <= z_j^p g_j` whenever `1 <= z_i < z_j`.
//!
//! Any such vector is the derivative of some bounded-below convex calibrated
//! loss at the batch margins (see [`crate::losses::reconstruct_loss`]), so
//! drawing a fresh one per step trains on a random member of that loss class.
//! The generator draws negative values, sorts them against the margins and
//! divides by the margin wherever it exceeds one. Tied margins share one
//! draw. The generator uses `p = 1`.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::numerics::{inv_box_cox, BoxCoxParam, Rng};

/// Margins `z_b = y_b f(x_b)` of one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginBatch<T> {
    margins: Vec<T>,
    sample_ids: Vec<usize>,
}

impl<T: Float> MarginBatch<T> {
    pub fn new(margins: Vec<T>, sample_ids: Vec<usize>) -> Result<Self> {
        if margins.is_empty() {
            return Err(Error::EmptyRequest("margin batch with no samples"));
        }
        if margins.len() != sample_ids.len() {
            return Err(Error::Shape(format!(
                "{} margins but {} sample ids",
                margins.len(),
                sample_ids.len()
            )));
        }
        if let Some(i) = margins.iter().position(|z| !z.is_finite()) {
            return Err(Error::Divergence(format!("non-finite margin for sample {}", sample_ids[i])));
        }
        Ok(Self { margins, sample_ids })
    }

    /// Batch whose sample ids are `0..margins.len()`.
    pub fn from_margins(margins: Vec<T>) -> Result<Self> {
        let ids = (0..margins.len()).collect();
        Self::new(margins, ids)
    }

    pub fn margins(&self) -> &[T] {
        &self.margins
    }

    pub fn sample_ids(&self) -> &[usize] {
        &self.sample_ids
    }

    pub fn len(&self) -> usize {
        self.margins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.margins.is_empty()
    }
}

/// Per-sample loss-derivatives aligned with a [`MarginBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBatch<T> {
    pub derivs: Vec<T>,
    /// Box-Cox exponent used for the draws; `None` for fixed losses.
    pub lambda_used: Option<f64>,
    /// Set once the batch passed [`certify_rc`].
    pub certified: bool,
}

/// Configuration of the derivative generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Exponent in effect for the next draws.
    pub lambda: BoxCoxParam,
    /// Resample `lambda` from `lambda_pool` every this many epochs; 0 keeps it fixed.
    pub resample_period: usize,
    pub lambda_pool: Vec<BoxCoxParam>,
    /// Margins closer than this are merged into one sample point.
    pub tie_eps: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            lambda: BoxCoxParam::default(),
            resample_period: 0,
            lambda_pool: Vec::new(),
            tie_eps: 0.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resample_period > 0 && self.lambda_pool.is_empty() {
            return Err(Error::Config("lambda resampling requested with an empty lambda pool".into()));
        }
        if !(self.tie_eps >= 0.0) {
            return Err(Error::Config(format!("tie_eps must be non-negative, got {}", self.tie_eps)));
        }
        Ok(())
    }
}

/// The exponent to use at `epoch`: a uniform draw from the pool at every
/// multiple of the resample period, otherwise the current one.
pub fn maybe_resample_lambda(cfg: &GenConfig, epoch: usize, rng: &mut Rng) -> Result<BoxCoxParam> {
    if cfg.resample_period == 0 {
        return Ok(cfg.lambda);
    }
    if cfg.lambda_pool.is_empty() {
        return Err(Error::Config("lambda resampling requested with an empty lambda pool".into()));
    }
    if epoch % cfg.resample_period == 0 {
        Ok(cfg.lambda_pool[rng.index(cfg.lambda_pool.len())])
    } else {
        Ok(cfg.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RcCondition {
    Convexity,
    Calibration,
    RaisingTail,
}

/// First violation found by [`certify_rc`], as indices into the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RcWitness {
    pub condition: RcCondition,
    pub pair: (usize, usize),
}

/// Sample indices ordered by ascending margin.
fn ascending_order<T: Float>(margins: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..margins.len()).collect();
    idx.sort_by(|&a, &b| margins[a].partial_cmp(&margins[b]).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

/// Checks the three RC conditions; `Ok(None)` means they all hold.
///
/// Ties are exact float equality. Condition 3 compares products `z^p g`,
/// which pick up rounding, so it allows a relative slack of four machine
/// epsilons.
pub fn certify_rc<T: Float>(margins: &[T], derivs: &[T], p: f64) -> Result<Option<RcWitness>> {
    if margins.len() != derivs.len() {
        return Err(Error::Shape(format!(
            "{} margins but {} derivatives",
            margins.len(),
            derivs.len()
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("tail exponent p must be >= 1, got {p}")));
    }
    let order = ascending_order(margins);
    let zero = T::zero();
    let one = T::one();
    let p_t = T::from(p).unwrap_or_else(T::one);
    let slack = T::epsilon() * T::from(4.0).unwrap_or_else(T::one);

    for (&i, &j) in order.iter().zip(order.iter().skip(1)) {
        let (zi, zj, gi, gj) = (margins[i], margins[j], derivs[i], derivs[j]);
        let violated = if zi == zj { gi != gj } else { gi > gj };
        if violated {
            return Ok(Some(RcWitness {
                condition: RcCondition::Convexity,
                pair: (i, j),
            }));
        }
    }
    for &i in &order {
        if margins[i] > zero {
            break;
        }
        if !(derivs[i] < zero) {
            return Ok(Some(RcWitness {
                condition: RcCondition::Calibration,
                pair: (i, i),
            }));
        }
    }
    let tail: Vec<usize> = order.iter().copied().filter(|&i| margins[i] >= one).collect();
    for (&i, &j) in tail.iter().zip(tail.iter().skip(1)) {
        if margins[i] == margins[j] {
            continue;
        }
        let hi = margins[i].powf(p_t) * derivs[i];
        let hj = margins[j].powf(p_t) * derivs[j];
        if hi > hj + slack * hi.abs().max(hj.abs()) {
            return Ok(Some(RcWitness {
                condition: RcCondition::RaisingTail,
                pair: (i, j),
            }));
        }
    }
    Ok(None)
}

/// Groups sample indices into classes of (near-)equal margins, ordered by
/// descending margin.
pub fn margin_classes<T: Float>(margins: &[T], tie_eps: f64) -> Vec<Vec<usize>> {
    let mut order = ascending_order(margins);
    order.reverse();
    let eps = T::from(tie_eps).unwrap_or_else(T::zero);
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match classes.last_mut() {
            Some(class) if margins[*class.last().unwrap_or(&i)] - margins[i] <= eps => class.push(i),
            _ => classes.push(vec![i]),
        }
    }
    classes
}

/// Matches negative draws to margins and applies the tail rescale.
///
/// `draws` holds one negative value per margin class (see
/// [`margin_classes`]), in any order. The largest draw goes to the largest
/// margin, and so on down; every class with margin above one then has its
/// draw divided by the margin.
pub fn assign_rc_derivatives<T: Float>(margins: &[T], draws: &[T], tie_eps: f64) -> Result<Vec<T>> {
    let classes = margin_classes(margins, tie_eps);
    if draws.len() != classes.len() {
        return Err(Error::Shape(format!(
            "{} draws for {} margin classes",
            draws.len(),
            classes.len()
        )));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));

    let one = T::one();
    let mut out = vec![T::zero(); margins.len()];
    for (class, &g) in classes.iter().zip(&sorted) {
        let z = margins[class[0]];
        let g = if z > one { g / z } else { g };
        for &i in class {
            out[i] = g;
        }
    }
    Ok(out)
}

/// Draws a random RC derivative vector for `batch` using `cfg.lambda`.
pub fn generate_rc_derivatives<T: Float>(
    batch: &MarginBatch<T>,
    cfg: &GenConfig,
    rng: &mut Rng,
) -> Result<DerivativeBatch<T>> {
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall {
            got: batch.len(),
            need: 2,
        });
    }
    let n_classes = margin_classes(batch.margins(), cfg.tie_eps).len();
    let mut draws = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let xi = inv_box_cox(rng.standard_normal(), cfg.lambda)?;
        draws.push(T::from(-xi).unwrap_or_else(T::nan));
    }
    let derivs = assign_rc_derivatives(batch.margins(), &draws, cfg.tie_eps)?;
    if let Some(w) = certify_rc(batch.margins(), &derivs, 1.0)? {
        return Err(Error::Internal(format!("generated derivatives failed RC certification: {w:?}")));
    }
    if derivs.iter().any(|g| !(*g < T::zero())) {
        return Err(Error::Internal("generated a non-negative derivative".into()));
    }
    Ok(DerivativeBatch {
        derivs,
        lambda_used: Some(cfg.lambda.lambda()),
        certified: true,
    })
}

/// Derivatives of a fixed loss at the batch margins.
pub fn fixed_loss_derivatives<T: Float>(batch: &MarginBatch<T>, loss: &LossSpec) -> Result<DerivativeBatch<T>> {
    let mut derivs = Vec::with_capacity(batch.len());
    for (&z, &id) in batch.margins().iter().zip(batch.sample_ids()) {
        let g = loss.subderivative_as(z);
        if !g.is_finite() {
            return Err(Error::Evaluation(format!(
                "{} derivative is not finite at margin of sample {id}",
                loss.name()
            )));
        }
        derivs.push(g);
    }
    Ok(DerivativeBatch {
        derivs,
        lambda_used: None,
        certified: false,
    })
}
