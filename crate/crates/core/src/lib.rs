//! Stochastic calibrated loss ensembles for binary classification.
//!
//! Instead of committing to one surrogate loss, every SGD step draws a fresh
//! random loss-derivative vector for the minibatch. The draws are sorted and
//! rescaled so that they always correspond to *some* bounded-below, convex,
//! classification-calibrated loss, which keeps the ensemble consistent for
//! the zero-one risk.
//!
//! Crate layout:
//!
//! - [`numerics`]: seeded RNG, normal sampling and the Box-Cox transforms.
//! - [`losses`]: fixed surrogate losses, numeric validity checkers, the
//!   piecewise-linear loss reconstruction and the psi-transform for finite
//!   loss mixtures.
//! - [`derivgen`]: random RC loss-derivative generation and certification.
//! - [`models`]: dense feed-forward classifiers with manual backprop.
//! - [`trainer`]: the doubly-stochastic training loop.
//! - [`datasets`]: CSV ingestion, splitting, standardization and synthetic data.
//! - [`evaluation`]: metrics, paired t-tests and the replication harness.
//! - [`manifest`]: flat key-value run configuration and manifests.
//!
//! Models, datasets and the trainer are generic over the floating point
//! type; the aliases at the crate root fix the common choices.

pub mod datasets;
pub mod derivgen;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod manifest;
pub mod models;
pub mod numerics;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use derivgen::{certify_rc, generate_rc_derivatives, GenConfig, RcWitness};
pub use losses::{builtin_loss, FiniteLossMixture, LossSpec, PiecewiseLinearLoss};
pub use numerics::{BoxCoxParam, Rng};
pub use trainer::{train, LrSchedule, RunRecord, TrainConfig, TrainMode};

/// Double precision network.
pub type MlpModel = models::Mlp<f64>;
/// Single precision network, used for the wide overparameterized benchmarks.
pub type MlpModelF32 = models::Mlp<f32>;
/// Double precision train/test split.
pub type SplitDataset = datasets::SplitDataset<f64>;
/// Single precision train/test split.
pub type SplitDatasetF32 = datasets::SplitDataset<f32>;
pub type MarginBatch = derivgen::MarginBatch<f64>;
pub type DerivativeBatch = derivgen::DerivativeBatch<f64>;
