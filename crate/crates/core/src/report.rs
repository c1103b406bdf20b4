//! Verdict tables over Monte Carlo samples: Gaussianity of the averaged
//! field against its exact variance, log against linear fields, and tail
//! against full fields.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{
    fourth_moment_ratio, ks_normality, moment_summary, paired_variance_diff_se, variance_with_se, within,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    pub value: f64,
    pub reference: f64,
    pub tolerance: String,
    pub pass: bool,
}

impl Verdict {
    fn new(criterion: impl Into<String>, value: f64, reference: f64, tolerance: impl Into<String>, pass: bool) -> Self {
        Self {
            criterion: criterion.into(),
            value,
            reference,
            tolerance: tolerance.into(),
            pass,
        }
    }
}

/// Sample variance, skewness, excess kurtosis, KS and fourth-moment checks
/// of `samples` against `N(0, exact_var)`.
pub fn gaussianity(label: &str, samples: &[f64], exact_var: f64, b: usize, seed: u64) -> Result<Vec<Verdict>> {
    let (var, se) = variance_with_se(samples);
    let summary = moment_summary(samples, b, seed)?;
    let m = &summary.moments;
    let skew = m.skewness.unwrap_or(f64::NAN);
    let kurt = m.excess_kurtosis.unwrap_or(f64::NAN);
    let ks = ks_normality(samples, 0.0, exact_var)?;
    let ratio = fourth_moment_ratio(samples, b, seed);
    Ok(vec![
        Verdict::new(
            format!("{label}: sample variance vs exact"),
            var,
            exact_var,
            format!("3 SE (SE {se:.2e})"),
            (var - exact_var).abs() <= 3.0 * se,
        ),
        Verdict::new(
            format!("{label}: |skewness|"),
            skew,
            0.0,
            format!("0.2 + 4 SE (SE {:.2e})", summary.se_skewness.unwrap_or(f64::NAN)),
            within(skew, summary.se_skewness.unwrap_or(f64::NAN), 0.2, 4.0),
        ),
        Verdict::new(
            format!("{label}: |excess kurtosis|"),
            kurt,
            0.0,
            format!("0.5 + 4 SE (SE {:.2e})", summary.se_kurtosis.unwrap_or(f64::NAN)),
            within(kurt, summary.se_kurtosis.unwrap_or(f64::NAN), 0.5, 4.0),
        ),
        Verdict::new(
            format!("{label}: KS p-value vs N(0, exact)"),
            ks.p_value,
            0.01,
            "p > 0.01",
            ks.p_value > 0.01,
        ),
        match ratio {
            Ok(r) => Verdict::new(
                format!("{label}: fourth-moment ratio"),
                r.ratio,
                1.0,
                "[0.85, 1.15]",
                (0.85..=1.15).contains(&r.ratio),
            ),
            Err(Error::NoSamples(_)) => Verdict::new(
                format!("{label}: fourth-moment ratio"),
                f64::NAN,
                1.0,
                "needs 100 samples",
                false,
            ),
            Err(e) => return Err(e),
        },
    ])
}

/// Sample variance of the log field within `rel` of the linear field's.
pub fn log_vs_linear(label: &str, log: &[f64], linear: &[f64], rel: f64) -> Verdict {
    let (vl, _) = variance_with_se(log);
    let (vz, _) = variance_with_se(linear);
    Verdict::new(
        format!("{label}: log-field variance vs linear"),
        vl,
        vz,
        format!("{:.0}% relative", rel * 100.0),
        ((vl - vz) / vz).abs() <= rel,
    )
}

/// Paired variances of two fields on common disorder within `k` joint SEs.
pub fn paired_variances(label: &str, a: &[f64], b: &[f64], k: f64) -> Verdict {
    let (va, _) = variance_with_se(a);
    let (vb, _) = variance_with_se(b);
    let se = paired_variance_diff_se(a, b);
    Verdict::new(
        label,
        va,
        vb,
        format!("{k} joint SE (SE {se:.2e})"),
        (va - vb).abs() <= k * se,
    )
}

/// Fixed-width text rendering.
pub fn render(verdicts: &[Verdict]) -> String {
    let w = verdicts
        .iter()
        .map(|v| v.criterion.chars().count())
        .max()
        .unwrap_or(9)
        .max(9);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<w$}  {:>12}  {:>12}  {:<28}  result",
        "criterion", "value", "reference", "tolerance"
    );
    for v in verdicts {
        let _ = writeln!(
            out,
            "{:<w$}  {:>12.5e}  {:>12.5e}  {:<28}  {}",
            v.criterion,
            v.value,
            v.reference,
            v.tolerance,
            if v.pass { "PASS" } else { "FAIL" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(n: usize, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect()
    }

    #[test]
    fn gaussian_samples_pass() {
        let x = normal(2000, 0.3, 1);
        let v = gaussianity("g", &x, 0.09, 200, 3).unwrap();
        assert_eq!(v.len(), 5);
        assert!(v.iter().all(|v| v.pass), "{}", render(&v));
    }

    #[test]
    fn wrong_reference_fails() {
        let x = normal(2000, 0.3, 2);
        let v = gaussianity("g", &x, 0.2, 200, 3).unwrap();
        assert!(!v[0].pass);
        assert!(!v[3].pass);
        let e: Vec<f64> = x.iter().map(|v: &f64| v.abs()).collect();
        assert!(!gaussianity("e", &e, 0.09, 200, 3).unwrap()[1].pass);
        let few = gaussianity("f", &x[..50], 0.09, 200, 3).unwrap();
        assert!(!few[4].pass && few[4].value.is_nan());
    }

    #[test]
    fn comparisons() {
        let x = normal(1000, 1.0, 4);
        let y: Vec<f64> = x.iter().map(|v| 1.05 * v).collect();
        assert!(log_vs_linear("c", &y, &x, 0.15).pass);
        assert!(!log_vs_linear("c", &y, &x, 0.05).pass);
        let z: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        assert!(!paired_variances("p", &z, &x, 3.0).pass);
        assert!(paired_variances("p", &x, &x, 3.0).pass);
        assert!(render(&[paired_variances("p", &x, &x, 3.0)]).contains("PASS"));
    }
}
