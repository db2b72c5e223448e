use serde::{Deserialize, Serialize};

use super::{split_standardize, RawDataset, SplitDataset};
use crate::error::{Error, Result};
use crate::numerics::{normal_cdf, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Two unit-variance isotropic Gaussians at `±(class_sep/2) e_1`.
    GaussianBlobs,
    /// Same class-conditional model, with the mean shift spread evenly over
    /// the first `informative` of `d` coordinates.
    HighDimSparse,
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::GaussianBlobs => "gaussian_blobs",
            SyntheticKind::HighDimSparse => "high_dim_sparse",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "gaussian_blobs" | "blobs" => Some(SyntheticKind::GaussianBlobs),
            "high_dim_sparse" | "sparse" => Some(SyntheticKind::HighDimSparse),
            _ => None,
        }
    }
}

/// Synthetic binary problem with equal class priors.
///
/// Labels are fair coin flips; features are `y * mu + N(0, I)` with
/// `|mu| = class_sep / 2`, and each label is then flipped with probability
/// `noise`. The Bayes rule thresholds the projection onto `mu`, so
/// `bayes_accuracy = (1 - noise) Phi(sep/2) + noise (1 - Phi(sep/2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    /// Total samples before splitting.
    pub n: usize,
    pub d: usize,
    pub class_sep: f64,
    /// Label flip probability, in `[0, 0.5)`.
    pub noise: f64,
    /// Coordinates carrying signal (always 1 for blobs).
    pub informative: usize,
    pub test_fraction: f64,
}

impl SyntheticSpec {
    pub fn gaussian_blobs(n: usize, d: usize, class_sep: f64) -> Self {
        Self {
            kind: SyntheticKind::GaussianBlobs,
            n,
            d,
            class_sep,
            noise: 0.0,
            informative: 1,
            test_fraction: 0.25,
        }
    }

    pub fn high_dim_sparse(n: usize, d: usize, informative: usize, class_sep: f64) -> Self {
        Self {
            kind: SyntheticKind::HighDimSparse,
            n,
            d,
            class_sep,
            noise: 0.0,
            informative,
            test_fraction: 0.25,
        }
    }

    pub fn bayes_accuracy(&self) -> f64 {
        let p = normal_cdf(self.class_sep / 2.0);
        (1.0 - self.noise) * p + self.noise * (1.0 - p)
    }

    pub fn validate(&self) -> Result<()> {
        let informative = match self.kind {
            SyntheticKind::GaussianBlobs => 1,
            SyntheticKind::HighDimSparse => self.informative,
        };
        if self.n < 4 || self.d == 0 || informative == 0 || informative > self.d {
            return Err(Error::Config(format!(
                "invalid synthetic shape n={} d={} informative={}",
                self.n, self.d, self.informative
            )));
        }
        if !(self.noise >= 0.0 && self.noise < 0.5) {
            return Err(Error::Config(format!("label noise must lie in [0, 0.5), got {}", self.noise)));
        }
        let bayes = self.bayes_accuracy();
        if !(self.class_sep.is_finite() && bayes > 0.5 && bayes <= 1.0) {
            return Err(Error::Config(format!(
                "class_sep={} gives Bayes accuracy {bayes}, which must lie in (0.5, 1]",
                self.class_sep
            )));
        }
        Ok(())
    }

    /// Unsplit samples.
    pub fn sample(&self, seed: u64) -> Result<RawDataset> {
        self.validate()?;
        let k = match self.kind {
            SyntheticKind::GaussianBlobs => 1,
            SyntheticKind::HighDimSparse => self.informative,
        };
        let shift = self.class_sep / 2.0 / (k as f64).sqrt();
        let mut rng = Rng::new(seed);
        let mut x = ndarray::Array2::zeros((self.n, self.d));
        let mut y = Vec::with_capacity(self.n);
        for mut row in x.rows_mut() {
            let label = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
            for (j, v) in row.iter_mut().enumerate() {
                *v = rng.standard_normal() + if j < k { label * shift } else { 0.0 };
            }
            let flip = self.noise > 0.0 && rng.uniform() < self.noise;
            y.push(if flip { -label } else { label });
        }
        Ok(RawDataset {
            x,
            y,
            feature_names: (0..self.d).map(|j| format!("x{j}")).collect(),
        })
    }
}

/// Samples `spec` and splits it with the same seed.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SplitDataset<f64>> {
    let raw = spec.sample(seed)?;
    let mut split = split_standardize(&raw, spec.test_fraction, seed)?;
    split.name = spec.kind.name().to_string();
    split.bayes_accuracy = Some(spec.bayes_accuracy());
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bayes_accuracy_values() {
        let s = SyntheticSpec::gaussian_blobs(100, 2, 2.0);
        assert!((s.bayes_accuracy() - 0.8413447460685429).abs() < 1e-12);
        let s = SyntheticSpec::gaussian_blobs(100, 2, 4.0);
        assert!((s.bayes_accuracy() - 0.9772498680518208).abs() < 1e-12);
        assert!(SyntheticSpec::gaussian_blobs(100, 2, 0.0).validate().is_err());
    }

    #[test]
    fn class_balance() {
        let raw = SyntheticSpec::gaussian_blobs(20_000, 2, 2.0).sample(3).unwrap();
        let frac = raw.y.iter().filter(|v| **v > 0.0).count() as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn bayes_rule_attains_bayes_accuracy() {
        let spec = SyntheticSpec::high_dim_sparse(40_000, 30, 5, 2.0);
        let raw = spec.sample(8).unwrap();
        let correct = raw
            .x
            .rows()
            .into_iter()
            .zip(&raw.y)
            .filter(|(row, y)| row.iter().take(5).sum::<f64>() * **y > 0.0)
            .count();
        let acc = correct as f64 / 40_000.0;
        assert!((acc - spec.bayes_accuracy()).abs() < 0.01, "{acc}");
    }

    #[test]
    fn make_synthetic_records_metadata() {
        let s = make_synthetic(&SyntheticSpec::gaussian_blobs(400, 3, 2.0), 1).unwrap();
        assert_eq!(s.name, "gaussian_blobs");
        assert_eq!(s.n_train() + s.n_test(), 400);
        assert_eq!(s.bayes_accuracy, Some(SyntheticSpec::gaussian_blobs(1, 1, 2.0).bayes_accuracy()));
    }
}
