//! Surrogate losses for margin-based binary classification.
//!
//! A loss is a function of the margin `z = y f(x)`. [`LossSpec`] pairs the
//! value with a subderivative and a little metadata; the numeric checkers in
//! [`checks`] inspect it for calibration, a superlinear raising tail and a
//! finite infimum. [`piecewise`] rebuilds an explicit loss from a batch of
//! derivative samples and [`mixture`] handles finite loss ensembles.

pub mod checks;
pub mod mixture;
pub mod piecewise;

use std::fmt;
use std::sync::Arc;

use num_traits::Float;

use crate::error::{Error, Result};

pub use checks::{
    check_bounded_below, check_calibration, check_loss, check_superlinear_tail,
    BoundedBelowCertificate, CalibrationCertificate, LossReport, TailCertificate,
};
pub use mixture::{excess_risk_bound, mixture_loss_value, psi_transform, AlphaSearch, FiniteLossMixture};
pub use piecewise::{reconstruct_loss, PiecewiseLinearLoss};

/// Closed-form losses shipped with the crate.
///
/// All hinge-tail variants coincide with the hinge loss `1 - z` for `z <= 1`
/// and differ only in their right tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Surrogate {
    /// `log(1 + exp(-z))`
    Logistic,
    /// `log(1 + exp(-2z))`
    Logistic2z,
    /// `max(1 - z, 0)`
    Hinge,
    /// `exp(-z)`
    Exponential,
    /// `(1 - z)^2`
    Squared,
    /// tail `0`
    HingeZeroTail,
    /// tail `exp(-(z - 1)) - 1`
    HingeExpTail,
    /// tail `1/z - 1`
    HingeInverseTail,
    /// tail `e / log(z + e - 1) - e`
    HingeInvLogTail,
    /// tail `-log z`, unbounded below
    HingeLogTail,
}

impl Surrogate {
    pub const ALL: [Surrogate; 10] = [
        Surrogate::Logistic,
        Surrogate::Logistic2z,
        Surrogate::Hinge,
        Surrogate::Exponential,
        Surrogate::Squared,
        Surrogate::HingeZeroTail,
        Surrogate::HingeExpTail,
        Surrogate::HingeInverseTail,
        Surrogate::HingeInvLogTail,
        Surrogate::HingeLogTail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Surrogate::Logistic => "logistic",
            Surrogate::Logistic2z => "logistic_2z",
            Surrogate::Hinge => "hinge",
            Surrogate::Exponential => "exponential",
            Surrogate::Squared => "squared",
            Surrogate::HingeZeroTail => "hinge_zero_tail",
            Surrogate::HingeExpTail => "hinge_exp_tail",
            Surrogate::HingeInverseTail => "hinge_inverse_tail",
            Surrogate::HingeInvLogTail => "hinge_invlog_tail",
            Surrogate::HingeLogTail => "hinge_log_tail",
        }
    }

    /// Resolves a canonical name or one of the aliases `bce` and `exp`.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "bce" => return Some(Surrogate::Logistic),
            "exp" => return Some(Surrogate::Exponential),
            _ => {}
        }
        Self::ALL.iter().copied().find(|s| s.name() == name)
    }

    fn is_hinge_family(self) -> bool {
        !matches!(
            self,
            Surrogate::Logistic | Surrogate::Logistic2z | Surrogate::Exponential | Surrogate::Squared
        )
    }

    pub fn value<T: Float>(self, z: T) -> T {
        let one = T::one();
        if self.is_hinge_family() && z <= one {
            return one - z;
        }
        match self {
            Surrogate::Logistic => softplus(-z),
            Surrogate::Logistic2z => softplus(-(z + z)),
            Surrogate::Exponential => (-z).exp(),
            Surrogate::Squared => (one - z) * (one - z),
            Surrogate::Hinge | Surrogate::HingeZeroTail => T::zero(),
            Surrogate::HingeExpTail => (one - z).exp() - one,
            Surrogate::HingeInverseTail => z.recip() - one,
            Surrogate::HingeInvLogTail => {
                let e = T::one().exp();
                e / (z + e - one).ln() - e
            }
            Surrogate::HingeLogTail => -z.ln(),
        }
    }

    /// Subderivative; the left derivative is used at the hinge kink.
    pub fn derivative<T: Float>(self, z: T) -> T {
        let one = T::one();
        if self.is_hinge_family() && z <= one {
            return -one;
        }
        match self {
            Surrogate::Logistic => -sigmoid(-z),
            Surrogate::Logistic2z => -(sigmoid(-(z + z)) + sigmoid(-(z + z))),
            Surrogate::Exponential => -(-z).exp(),
            Surrogate::Squared => -(one - z) - (one - z),
            Surrogate::Hinge | Surrogate::HingeZeroTail => T::zero(),
            Surrogate::HingeExpTail => -(one - z).exp(),
            Surrogate::HingeInverseTail => -(z * z).recip(),
            Surrogate::HingeInvLogTail => {
                let e = T::one().exp();
                let s = z + e - one;
                let l = s.ln();
                -e / (s * l * l)
            }
            Surrogate::HingeLogTail => -z.recip(),
        }
    }

    fn deriv_at_zero(self) -> f64 {
        match self {
            Surrogate::Logistic => -0.5,
            Surrogate::Squared => -2.0,
            _ => -1.0,
        }
    }

    fn kinks(self) -> Vec<f64> {
        if self.is_hinge_family() {
            vec![1.0]
        } else {
            Vec::new()
        }
    }
}

fn softplus<T: Float>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum LossKind {
    Builtin(Surrogate),
    Piecewise(Arc<PiecewiseLinearLoss>),
    Custom { value: ScalarFn, deriv: ScalarFn },
}

/// A surrogate loss: value and subderivative as functions of the margin.
#[derive(Clone)]
pub struct LossSpec {
    name: String,
    kind: LossKind,
    differentiable_at_zero: bool,
    deriv_at_zero: f64,
    kinks: Vec<f64>,
}

impl fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LossSpec")
            .field("name", &self.name)
            .field("differentiable_at_zero", &self.differentiable_at_zero)
            .field("deriv_at_zero", &self.deriv_at_zero)
            .field("kinks", &self.kinks)
            .finish_non_exhaustive()
    }
}

impl LossSpec {
    pub fn from_surrogate(s: Surrogate) -> Self {
        Self {
            name: s.name().to_string(),
            kind: LossKind::Builtin(s),
            differentiable_at_zero: true,
            deriv_at_zero: s.deriv_at_zero(),
            kinks: s.kinks(),
        }
    }

    /// A loss given by closures. `kinks` lists points where the loss is not
    /// differentiable; the calibration checker keeps its difference step
    /// inside the smooth piece around zero when they are known.
    pub fn custom<V, D>(
        name: impl Into<String>,
        value: V,
        subderivative: D,
        differentiable_at_zero: bool,
        deriv_at_zero: f64,
        kinks: Vec<f64>,
    ) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            kind: LossKind::Custom {
                value: Arc::new(value),
                deriv: Arc::new(subderivative),
            },
            differentiable_at_zero,
            deriv_at_zero,
            kinks,
        }
    }

    pub fn from_piecewise(loss: PiecewiseLinearLoss) -> Self {
        let deriv_at_zero = loss.derivative(0.0);
        let kinks = loss.knots().to_vec();
        Self {
            name: "reconstructed".to_string(),
            differentiable_at_zero: !kinks.contains(&0.0),
            deriv_at_zero,
            kinks,
            kind: LossKind::Piecewise(Arc::new(loss)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn surrogate(&self) -> Option<Surrogate> {
        match self.kind {
            LossKind::Builtin(s) => Some(s),
            _ => None,
        }
    }

    pub fn differentiable_at_zero(&self) -> bool {
        self.differentiable_at_zero
    }

    pub fn deriv_at_zero(&self) -> f64 {
        self.deriv_at_zero
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn value(&self, z: f64) -> f64 {
        match &self.kind {
            LossKind::Builtin(s) => s.value(z),
            LossKind::Piecewise(p) => p.value(z),
            LossKind::Custom { value, .. } => value(z),
        }
    }

    pub fn as_piecewise(&self) -> Option<&PiecewiseLinearLoss> {
        match &self.kind {
            LossKind::Piecewise(p) => Some(p),
            _ => None,
        }
    }

    pub fn subderivative(&self, z: f64) -> f64 {
        match &self.kind {
            LossKind::Builtin(s) => s.derivative(z),
            LossKind::Piecewise(p) => p.derivative(z),
            LossKind::Custom { deriv, .. } => deriv(z),
        }
    }

    /// Subderivative evaluated in the caller's precision. Builtins are
    /// evaluated natively in `T`; other losses go through `f64`.
    pub fn subderivative_as<T: Float>(&self, z: T) -> T {
        match &self.kind {
            LossKind::Builtin(s) => s.derivative(z),
            _ => {
                let d = self.subderivative(z.to_f64().unwrap_or(f64::NAN));
                T::from(d).unwrap_or_else(T::nan)
            }
        }
    }

    pub fn value_as<T: Float>(&self, z: T) -> T {
        match &self.kind {
            LossKind::Builtin(s) => s.value(z),
            _ => {
                let v = self.value(z.to_f64().unwrap_or(f64::NAN));
                T::from(v).unwrap_or_else(T::nan)
            }
        }
    }
}

/// Names accepted by [`builtin_loss`], canonical names first.
pub fn builtin_names() -> Vec<&'static str> {
    Surrogate::ALL.iter().map(|s| s.name()).collect()
}

/// Looks up a builtin loss by name (`bce` and `exp` are accepted aliases).
pub fn builtin_loss(name: &str) -> Result<LossSpec> {
    Surrogate::from_name(name)
        .map(LossSpec::from_surrogate)
        .ok_or_else(|| Error::UnknownLoss {
            name: name.to_string(),
            valid: builtin_names().join(", "),
        })
}
