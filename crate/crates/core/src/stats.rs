//! Verdict statistics for replica samples: moments with bootstrap standard
//! errors, a Kolmogorov-Smirnov normality test and the fourth-moment ratio.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::disorder::{mix64, SiteStream};
use crate::error::{Error, Result};

/// Default bootstrap resample count.
pub const BOOTSTRAP_DEFAULT: usize = 1000;

const MIN_SAMPLES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// Unbiased.
    pub variance: f64,
    /// Adjusted Fisher-Pearson `G₁`; `None` for zero variance.
    pub skewness: Option<f64>,
    /// Bias-adjusted `G₂`; `None` for zero variance.
    pub excess_kurtosis: Option<f64>,
}

fn moments(x: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let c = v - mean;
        let c2 = c * c;
        m2 += c2;
        m3 += c2 * c;
        m4 += c2 * c2;
    }
    let variance = m2 / (n - 1.0);
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let scale = mean.abs().max(x.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    if m2 <= (1e-14 * scale).powi(2) {
        return Moments {
            mean,
            variance: variance.max(0.0),
            skewness: None,
            excess_kurtosis: None,
        };
    }
    let g1 = m3 / m2.powf(1.5);
    let g2 = m4 / (m2 * m2) - 3.0;
    Moments {
        mean,
        variance,
        skewness: Some(g1 * (n * (n - 1.0)).sqrt() / (n - 2.0)),
        excess_kurtosis: Some(((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0))),
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Resample indices `0..n` with replacement, deterministically from `seed`.
struct Resampler {
    rng: SiteStream,
    n: usize,
}

impl Resampler {
    fn new(seed: u64, n: usize) -> Self {
        Self {
            rng: SiteStream::new(mix64(seed ^ 0x6a09_e667_f3bc_c908)),
            n,
        }
    }

    fn draw(&mut self, src: &[f64], dst: &mut Vec<f64>) {
        dst.clear();
        for _ in 0..self.n {
            // multiply-shift: unbiased enough for n ≪ 2^32
            let i = ((self.rng.next_u64() >> 32) * self.n as u64) >> 32;
            dst.push(src[i as usize]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n: usize,
    pub moments: Moments,
    pub se_mean: f64,
    pub se_variance: f64,
    pub se_skewness: Option<f64>,
    pub se_kurtosis: Option<f64>,
    /// `(μ₀, σ₀²)` when compared against a reference law.
    pub reference: Option<(f64, f64)>,
    /// `(mean - μ₀) / (σ₀/√n)`.
    pub standardized_mean: Option<f64>,
}

impl MomentSummary {
    pub fn with_reference(mut self, mu0: f64, var0: f64) -> Self {
        self.reference = Some((mu0, var0));
        self.standardized_mean = Some((self.moments.mean - mu0) / (var0 / self.n as f64).sqrt());
        self
    }
}

/// Moments of `samples` with bootstrap standard errors from `b` resamples.
pub fn moment_summary(samples: &[f64], b: usize, seed: u64) -> Result<MomentSummary> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::NoSamples(format!(
            "{} samples, at least {MIN_SAMPLES} required",
            samples.len()
        )));
    }
    let m = moments(samples);
    let mut rs = Resampler::new(seed, samples.len());
    let mut buf = Vec::with_capacity(samples.len());
    let (mut means, mut vars, mut skews, mut kurts) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..b {
        rs.draw(samples, &mut buf);
        let r = moments(&buf);
        means.push(r.mean);
        vars.push(r.variance);
        if let (Some(s), Some(k)) = (r.skewness, r.excess_kurtosis) {
            skews.push(s);
            kurts.push(k);
        }
    }
    let defined = m.skewness.is_some() && skews.len() >= 2;
    Ok(MomentSummary {
        n: samples.len(),
        moments: m,
        se_mean: sample_sd(&means),
        se_variance: sample_sd(&vars),
        se_skewness: defined.then(|| sample_sd(&skews)),
        se_kurtosis: defined.then(|| sample_sd(&kurts)),
        reference: None,
        standardized_mean: None,
    })
}

/// `|value| < bound` allowing `k` standard errors of sampling noise.
pub fn within(value: f64, se: f64, bound: f64, k: f64) -> bool {
    value.abs() < bound + k * se
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi-transformed series, accurate for small λ
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1..=20 {
            let j = (2 * k - 1) as f64;
            s += (-j * j * c).exp();
        }
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test against `N(μ₀, σ₀²)` with the asymptotic p-value
/// `P(K > D√n)`.
pub fn ks_normality(samples: &[f64], mu0: f64, var0: f64) -> Result<KsResult> {
    if !(var0 > 0.0) {
        return Err(Error::invalid(format!(
            "reference variance must be positive, got {var0}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::NoSamples("KS test on empty sample".into()));
    }
    let sd = var0.sqrt();
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mu0) / sd).collect();
    z.sort_by(|a, b| a.total_cmp(b));
    let n = z.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in z.iter().enumerate() {
        let f = normal_cdf(*v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(d * n.sqrt()),
        n: z.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioResult {
    pub ratio: f64,
    /// 95% percentile bootstrap interval.
    pub ci: (f64, f64),
}

fn ratio_of(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in x {
        let c2 = (v - mean).powi(2);
        m2 += c2;
        m4 += c2 * c2;
    }
    let (m2, m4) = (m2 / n, m4 / n);
    m4 / (3.0 * m2 * m2)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `E[(X - X̄)⁴] / (3 Var²)` with a bootstrap interval.
pub fn fourth_moment_ratio(samples: &[f64], b: usize, seed: u64) -> Result<RatioResult> {
    if samples.len() < 100 {
        return Err(Error::NoSamples(format!(
            "{} samples, at least 100 required for the fourth-moment ratio",
            samples.len()
        )));
    }
    let ratio = ratio_of(samples);
    if !ratio.is_finite() {
        return Err(Error::invalid("zero variance: fourth-moment ratio undefined"));
    }
    let mut rs = Resampler::new(seed ^ 0x4, samples.len());
    let mut buf = Vec::with_capacity(samples.len());
    let mut boot: Vec<f64> = (0..b)
        .map(|_| {
            rs.draw(samples, &mut buf);
            ratio_of(&buf)
        })
        .filter(|r| r.is_finite())
        .collect();
    boot.sort_by(|a, b| a.total_cmp(b));
    let ci = if boot.is_empty() {
        (ratio, ratio)
    } else {
        (quantile(&boot, 0.025), quantile(&boot, 0.975))
    };
    Ok(RatioResult { ratio, ci })
}

/// Standard error of `mean(a) - mean(b)` for paired samples.
pub fn paired_se(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    sample_sd(&d) / (d.len() as f64).sqrt()
}

/// Standard error of the sample mean.
pub fn mean_se(x: &[f64]) -> f64 {
    sample_sd(x) / (x.len() as f64).sqrt()
}

/// Sample variance and its delta-method standard error
/// `sqrt((m₄ - s⁴ (n-3)/(n-1)) / n)`.
pub fn variance_with_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let se = ((m4 - var * var * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt();
    (var, se)
}

/// Standard error of `Var(a) - Var(b)` for paired samples, by the delta
/// method on the centered squares.
pub fn paired_variance_diff_se(a: &[f64], b: &[f64]) -> f64 {
    let center = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).collect::<Vec<_>>()
    };
    paired_se(&center(a), &center(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_samples() {
        let s = moment_summary(&[2.5; 20], 50, 1).unwrap();
        assert_eq!(s.moments.variance, 0.0);
        assert!(s.moments.skewness.is_none() && s.moments.excess_kurtosis.is_none());
        assert!(moment_summary(&[1.0; 7], 10, 1).is_err());
    }

    #[test]
    fn plus_minus_one() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let s = moment_summary(&x, 100, 3).unwrap();
        assert!(s.moments.mean.abs() < 1e-15);
        assert!((s.moments.variance - 1000.0 / 999.0).abs() < 1e-12);
        let r = fourth_moment_ratio(&x, 100, 3).unwrap();
        assert!((r.ratio - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let x = normals(200, 5);
        assert_eq!(moment_summary(&x, 200, 9).unwrap(), moment_summary(&x, 200, 9).unwrap());
        assert_ne!(
            moment_summary(&x, 200, 9).unwrap().se_mean,
            moment_summary(&x, 200, 10).unwrap().se_mean
        );
    }

    #[test]
    fn kolmogorov_series_agree() {
        for l in [0.9, 1.0, 1.1] {
            let small = {
                let c = std::f64::consts::PI.powi(2) / (8.0 * l * l);
                let s: f64 = (1..=20).map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp()).sum();
                1.0 - (2.0 * std::f64::consts::PI).sqrt() / l * s
            };
            let large: f64 = 2.0
                * (1..=50)
                    .map(|k| {
                        let t = (-2.0 * (k * k) as f64 * l * l).exp();
                        if k % 2 == 1 {
                            t
                        } else {
                            -t
                        }
                    })
                    .sum::<f64>();
            assert!((small - large).abs() < 1e-12);
            assert!((kolmogorov_survival(l) - large).abs() < 1e-12);
        }
        // classical 5% critical value
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn ks_on_quantiles_and_wrong_scale() {
        let n = 400;
        let q: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                statrs::distribution::ContinuousCDF::inverse_cdf(&statrs::distribution::Normal::standard(), p)
            })
            .collect();
        let r = ks_normality(&q, 0.0, 1.0).unwrap();
        assert!((r.statistic - 0.5 / n as f64).abs() < 1e-9);
        assert!(r.p_value > 0.999);
        let x = normals(2000, 17);
        assert!(ks_normality(&x, 0.0, 4.0).unwrap().p_value < 1e-6);
        assert!(ks_normality(&x, 0.0, 0.0).is_err());
    }

    #[test]
    fn synthetic_normal_moments() {
        let x = normals(10_000, 23);
        let s = moment_summary(&x, 1000, 1).unwrap();
        assert!(within(s.moments.skewness.unwrap(), s.se_skewness.unwrap(), 0.08, 4.0));
        assert!(within(
            s.moments.excess_kurtosis.unwrap(),
            s.se_kurtosis.unwrap(),
            0.16,
            4.0
        ));
        let r = fourth_moment_ratio(&x, 1000, 1).unwrap();
        assert!(r.ci.0 <= 1.0 && 1.0 <= r.ci.1, "{r:?}");
    }

    #[test]
    fn variance_se_matches_normal_theory() {
        let x = normals(20_000, 29);
        let (v, se) = variance_with_se(&x);
        let theory = (2.0 / 20_000f64).sqrt();
        assert!((v - 1.0).abs() < 4.0 * theory);
        assert!((se / theory - 1.0).abs() < 0.1);
    }
}
