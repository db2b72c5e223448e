use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Significance level of the one-tailed comparison.
pub const ALPHA: f64 = 0.05;

const CF_MAX_ITER: usize = 300;
const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

/// Continued fraction of the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("inc_beta({a}, {b}, {x})")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x) / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x) / b)
    }
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || t.is_nan() {
        return Err(Error::Domain(format!("student t with df={df}, t={t}")));
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 0.0 } else { 1.0 });
    }
    let x = df / (df + t * t);
    let tail = 0.5 * inc_beta(df / 2.0, 0.5, x)?;
    Ok(if t > 0.0 { tail } else { 1.0 - tail })
}

/// Student's t cumulative distribution function.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    student_t_sf(-t, df)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// `sample_std / sqrt(n)`.
pub fn std_error(v: &[f64]) -> f64 {
    sample_std(v) / (v.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Better,
    NoDiff,
    Worse,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Better => "better",
            Verdict::NoDiff => "no_diff",
            Verdict::Worse => "worse",
        }
    }
}

/// One-tailed paired comparison of method A against method B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method_a: String,
    pub method_b: String,
    pub n: usize,
    pub mean_diff: f64,
    /// `None` when every difference is identical.
    pub t_statistic: Option<f64>,
    /// p-value for `H1: Acc_A > Acc_B`.
    pub p_value: f64,
    /// p-value of the reversed test.
    pub p_value_reversed: f64,
    pub verdict: Verdict,
}

/// Tests `H0: Acc_A <= Acc_B` against `H1: Acc_A > Acc_B` on paired samples.
///
/// When all differences are equal the statistic is undefined: all-zero
/// differences give `no_diff` with both p-values 1, otherwise the sign
/// decides and the p-values are 0 and 1.
pub fn paired_t_test_one_tailed(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::Stats(format!("paired samples of lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Stats(format!("need at least 2 pairs, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Stats("non-finite sample value".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let m = mean(&d);
    let (t, p, p_rev) = if d.iter().all(|v| *v == d[0]) {
        match d[0].partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => (None, 0.0, 1.0),
            Some(std::cmp::Ordering::Less) => (None, 1.0, 0.0),
            _ => (None, 1.0, 1.0),
        }
    } else {
        let t = m / (sample_std(&d) / (n as f64).sqrt());
        let df = (n - 1) as f64;
        (Some(t), student_t_sf(t, df)?, student_t_cdf(t, df)?)
    };
    let verdict = if p <= ALPHA {
        Verdict::Better
    } else if p_rev <= ALPHA {
        Verdict::Worse
    } else {
        Verdict::NoDiff
    };
    Ok(TestResult {
        method_a: String::new(),
        method_b: String::new(),
        n,
        mean_diff: m,
        t_statistic: t,
        p_value: p,
        p_value_reversed: p_rev,
        verdict,
    })
}

/// [`paired_t_test_one_tailed`] with method labels attached.
pub fn compare(name_a: &str, a: &[f64], name_b: &str, b: &[f64]) -> Result<TestResult> {
    let mut r = paired_t_test_one_tailed(a, b)?;
    r.method_a = name_a.to_string();
    r.method_b = name_b.to_string();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference values from scipy.stats.t.cdf.
    const DF4: [(f64, f64); 5] = [
        (-5.0, 0.003745216940637263),
        (-1.5, 0.10399999999999991),
        (0.5, 0.6783350184090684),
        (2.0, 0.9419417382415922),
        (5.0, 0.9962547830593628),
    ];
    const DF9: [(f64, f64); 5] = [
        (-5.0, 0.0003694839549016212),
        (-1.5, 0.08392532802853743),
        (0.5, 0.6854643500869868),
        (2.0, 0.9617235881146495),
        (5.0, 0.9996305160450983),
    ];

    #[test]
    fn t_cdf_reference_values() {
        for (df, table) in [(4.0, DF4), (9.0, DF9)] {
            for (t, want) in table {
                let got = student_t_cdf(t, df).unwrap();
                assert!((got - want).abs() < 1e-12, "df={df} t={t}: {got} vs {want}");
            }
        }
        assert_eq!(student_t_cdf(0.0, 3.0).unwrap(), 0.5);
        // df = 1 is the Cauchy distribution
        let c = student_t_cdf(1.0, 1.0).unwrap();
        assert!((c - 0.75).abs() < 1e-14);
    }

    #[test]
    fn paired_reference() {
        let a = [0.9, 0.92, 0.91, 0.93, 0.90];
        let b = [0.85, 0.86, 0.84, 0.88, 0.85];
        let r = paired_t_test_one_tailed(&a, &b).unwrap();
        assert!((r.t_statistic.unwrap() - 14.0).abs() < 1e-10);
        assert!((r.p_value - 7.550570111090027e-05).abs() < 1e-10);
        assert_eq!(r.verdict, Verdict::Better);
    }

    #[test]
    fn degenerate_and_error_cases() {
        let a = [0.8, 0.9, 0.7];
        let same = paired_t_test_one_tailed(&a, &a).unwrap();
        assert_eq!(same.verdict, Verdict::NoDiff);
        assert_eq!(same.t_statistic, None);

        let below: Vec<f64> = a.iter().map(|v| v - 0.01).collect();
        let r = paired_t_test_one_tailed(&below, &a).unwrap();
        assert!(r.p_value > 0.95);
        assert_eq!(r.verdict, Verdict::Worse);

        assert!(matches!(paired_t_test_one_tailed(&[1.0], &[1.0]), Err(Error::Stats(_))));
        assert!(matches!(paired_t_test_one_tailed(&[1.0, 2.0], &[1.0]), Err(Error::Stats(_))));
    }

    #[test]
    fn std_error_value() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!((sample_std(&v) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((std_error(&v) - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn antisymmetric(a in prop::collection::vec(0.0f64..1.0, 2..12), shift in -0.2f64..0.2, seed in 0u64..1000) {
            let mut rng = crate::numerics::Rng::new(seed);
            let b: Vec<f64> = a.iter().map(|v| v + shift + 0.05 * rng.standard_normal()).collect();
            let ab = paired_t_test_one_tailed(&a, &b).unwrap();
            let ba = paired_t_test_one_tailed(&b, &a).unwrap();
            let flipped = match ab.verdict {
                Verdict::Better => Verdict::Worse,
                Verdict::Worse => Verdict::Better,
                Verdict::NoDiff => Verdict::NoDiff,
            };
            prop_assert_eq!(ba.verdict, flipped);
            prop_assert!((ab.p_value - ba.p_value_reversed).abs() < 1e-12);
        }

        #[test]
        fn cdf_is_monotone(t1 in -20.0f64..20.0, dt in 0.0f64..5.0, df in 1u32..40) {
            let lo = student_t_cdf(t1, df as f64).unwrap();
            let hi = student_t_cdf(t1 + dt, df as f64).unwrap();
            prop_assert!(lo <= hi + 1e-15);
            prop_assert!((0.0..=1.0).contains(&lo));
        }
    }
}
