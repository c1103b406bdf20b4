//! Separable, compactly supported test functions `φ(x) = a Π_i ψ(x_i - c_i)`
//! and their diffusive lattice sampling `φ_N(x) = φ(x/√N) N^{-d/2}`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::CubeGrid;
use crate::quadrature::composite_rule;

/// Default cutoff of a Gaussian bump in units of its scale.
pub const GAUSSIAN_DEFAULT_CUTOFF: f64 = 8.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `ψ(u) = (e^{-u²/2s²} - e^{-c²/2s²})_+`, continuous.
    GaussianBump { scale: f64, cutoff: f64 },
    /// `ψ(u) = 1_{|u| ≤ a}`. Discontinuous: admitted only as an extension.
    IndicatorBox { half_width: f64 },
    /// `ψ(u) = (1 - |u|/a)_+`.
    Hat { half_width: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub profile: Profile,
    pub center: Vec<f64>,
    pub amplitude: f64,
}

/// `φ_N` on the lattice box covering its support.
#[derive(Clone, Debug)]
pub struct SampledTest {
    pub grid: CubeGrid,
    pub weights: Vec<f64>,
}

impl SampledTest {
    /// Sites with nonzero weight.
    pub fn support(&self) -> impl Iterator<Item = (Vec<i64>, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (self.grid.coords(i), *w))
    }
}

impl TestFunction {
    pub fn gaussian_bump(dim: usize, scale: f64) -> Result<Self> {
        Self::gaussian_bump_cut(dim, scale, GAUSSIAN_DEFAULT_CUTOFF * scale)
    }

    pub fn gaussian_bump_cut(dim: usize, scale: f64, cutoff: f64) -> Result<Self> {
        if !(scale > 0.0 && cutoff > 0.0) {
            return Err(Error::invalid("gaussian bump needs positive scale and cutoff"));
        }
        Self::build(dim, Profile::GaussianBump { scale, cutoff })
    }

    /// The indicator of `[-a, a]^d`; `extension` must be set since it is not
    /// continuous.
    pub fn indicator_box(dim: usize, half_width: f64, extension: bool) -> Result<Self> {
        if !extension {
            return Err(Error::invalid(
                "indicator test functions are discontinuous; enable the extension flag",
            ));
        }
        if !(half_width > 0.0) {
            return Err(Error::invalid("indicator half-width must be positive"));
        }
        Self::build(dim, Profile::IndicatorBox { half_width })
    }

    pub fn hat(dim: usize, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::invalid("hat half-width must be positive"));
        }
        Self::build(dim, Profile::Hat { half_width })
    }

    fn build(dim: usize, profile: Profile) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        Ok(Self {
            profile,
            center: vec![0.0; dim],
            amplitude: 1.0,
        })
    }

    pub fn centered_at(mut self, center: Vec<f64>) -> Self {
        assert_eq!(center.len(), self.center.len());
        self.center = center;
        self
    }

    pub fn scaled(mut self, a: f64) -> Self {
        self.amplitude *= a;
        self
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self.profile, Profile::IndicatorBox { .. })
    }

    /// Sup-norm radius of the support around the center.
    pub fn support_radius(&self) -> f64 {
        match self.profile {
            Profile::GaussianBump { cutoff, .. } => cutoff,
            Profile::IndicatorBox { half_width } | Profile::Hat { half_width } => half_width,
        }
    }

    /// The one-dimensional profile `ψ`.
    pub fn psi(&self, u: f64) -> f64 {
        match self.profile {
            Profile::GaussianBump { scale, cutoff } => {
                if u.abs() >= cutoff {
                    0.0
                } else {
                    let s2 = 2.0 * scale * scale;
                    (-u * u / s2).exp() - (-cutoff * cutoff / s2).exp()
                }
            }
            Profile::IndicatorBox { half_width } => {
                if u.abs() <= half_width {
                    1.0
                } else {
                    0.0
                }
            }
            Profile::Hat { half_width } => (1.0 - u.abs() / half_width).max(0.0),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.amplitude;
        for (xi, ci) in x.iter().zip(&self.center) {
            v *= self.psi(xi - ci);
            if v == 0.0 {
                break;
            }
        }
        v
    }

    /// `∫ψ`.
    pub fn psi_integral(&self) -> f64 {
        match self.profile {
            Profile::GaussianBump { scale, cutoff } => {
                let erf = libm::erf(cutoff / (scale * std::f64::consts::SQRT_2));
                scale * (2.0 * PI).sqrt() * erf - 2.0 * cutoff * (-cutoff * cutoff / (2.0 * scale * scale)).exp()
            }
            Profile::IndicatorBox { half_width } => 2.0 * half_width,
            Profile::Hat { half_width } => half_width,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.amplitude.abs() * self.psi(0.0).powi(self.dim() as i32)
    }

    pub fn l1_norm(&self) -> f64 {
        self.amplitude.abs() * self.psi_integral().powi(self.dim() as i32)
    }

    /// Lattice box containing every site `x` with `φ(x/√N) ≠ 0`.
    pub fn lattice_box(&self, n: usize) -> CubeGrid {
        let sn = (n as f64).sqrt();
        let center: Vec<i64> = self.center.iter().map(|c| (c * sn).round() as i64).collect();
        let radius = (self.support_radius() * sn).ceil() as i64 + 1;
        CubeGrid::new(center, radius).expect("valid test-function box")
    }

    /// `φ_N(x) = φ(x/√N) N^{-d/2}` on `lattice_box(N)`.
    pub fn sample(&self, n: usize) -> SampledTest {
        let grid = self.lattice_box(n);
        let sn = (n as f64).sqrt();
        let norm = (n as f64).powf(-0.5 * self.dim() as f64);
        let weights = grid
            .sites()
            .map(|x| {
                let y: Vec<f64> = x.iter().map(|&v| v as f64 / sn).collect();
                self.eval(&y) * norm
            })
            .collect();
        SampledTest { grid, weights }
    }

    /// `|ψ̂(k)|²` with `ψ̂(k) = ∫ ψ(u) e^{-iku} du`; closed form except for a
    /// Gaussian bump with a short cutoff.
    pub fn psi_hat_sq(&self, k: f64) -> f64 {
        match self.profile {
            Profile::GaussianBump { scale, cutoff } => {
                if self.gaussian_is_untruncated() {
                    2.0 * PI * scale * scale * (-scale * scale * k * k).exp()
                } else {
                    let v = truncated_bump_hat(scale, cutoff, k);
                    v * v
                }
            }
            Profile::IndicatorBox { half_width: a } => {
                if k == 0.0 {
                    4.0 * a * a
                } else {
                    (2.0 * (a * k).sin() / k).powi(2)
                }
            }
            Profile::Hat { half_width: a } => {
                if k == 0.0 {
                    a * a
                } else {
                    16.0 * (0.5 * a * k).sin().powi(4) / (a * a * k.powi(4))
                }
            }
        }
    }

    /// Whether the cutoff shift is below double precision relative to `ψ(0)`.
    pub fn gaussian_is_untruncated(&self) -> bool {
        match self.profile {
            Profile::GaussianBump { scale, cutoff } => cutoff / scale >= GAUSSIAN_DEFAULT_CUTOFF,
            _ => false,
        }
    }
}

// ∫_{-c}^{c} (e^{-u²/2s²} - e^{-c²/2s²}) cos(ku) du by composite Gauss–Legendre.
fn truncated_bump_hat(s: f64, c: f64, k: f64) -> f64 {
    let panels = 4 + (c * k.abs() / (2.0 * PI)).ceil() as usize;
    let edges: Vec<f64> = (0..=panels).map(|i| c * i as f64 / panels as f64).collect();
    let (x, w) = composite_rule(&edges, 16);
    let shift = (-c * c / (2.0 * s * s)).exp();
    2.0 * x
        .iter()
        .zip(&w)
        .map(|(u, wi)| wi * ((-u * u / (2.0 * s * s)).exp() - shift) * (k * u).cos())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_compact_and_continuous() {
        let g = TestFunction::gaussian_bump_cut(3, 0.5, 1.5).unwrap();
        assert_eq!(g.psi(1.5), 0.0);
        assert!(g.psi(1.5 - 1e-9) < 1e-8);
        let h = TestFunction::hat(2, 0.3).unwrap();
        assert_eq!(h.eval(&[0.3, 0.0]), 0.0);
        assert!((h.eval(&[0.15, 0.0]) - 0.5).abs() < 1e-15);
        assert!(TestFunction::indicator_box(3, 1.0, false).is_err());
        let ind = TestFunction::indicator_box(3, 1.0, true).unwrap();
        assert!(!ind.is_continuous());
    }

    #[test]
    fn sampling_covers_support() {
        let g = TestFunction::gaussian_bump_cut(3, 0.5, 1.5)
            .unwrap()
            .centered_at(vec![0.25, 0.0, -0.1]);
        let n = 64;
        let s = g.sample(n);
        let sn = 8.0;
        let r = (1.5 * sn) as i64 + 4;
        for x in CubeGrid::new(vec![2, 0, -1], r).unwrap().sites() {
            let y: Vec<f64> = x.iter().map(|&v| v as f64 / sn).collect();
            if g.eval(&y) != 0.0 {
                assert!(s.grid.contains(&x));
                let w = s.weights[s.grid.index(&x).unwrap()];
                assert!((w - g.eval(&y) / 512.0).abs() < 1e-18);
            }
        }
    }

    #[test]
    fn integrals_match_quadrature() {
        for f in [
            TestFunction::gaussian_bump_cut(1, 0.7, 1.2).unwrap(),
            TestFunction::hat(1, 0.4).unwrap(),
        ] {
            let r = f.support_radius();
            let (x, w) = composite_rule(
                &(0..=64).map(|i| -r + 2.0 * r * i as f64 / 64.0).collect::<Vec<_>>(),
                16,
            );
            let q: f64 = x.iter().zip(&w).map(|(u, wi)| wi * f.psi(*u)).sum();
            assert!((q - f.psi_integral()).abs() < 1e-12, "{q} vs {}", f.psi_integral());
            // Parseval: (1/2π) ∫ |ψ̂|² = ∫ ψ²
            let q2: f64 = x.iter().zip(&w).map(|(u, wi)| wi * f.psi(*u).powi(2)).sum();
            let kmax = 800.0 / r;
            let (k, wk) = composite_rule(&(0..=800).map(|i| kmax * i as f64 / 800.0).collect::<Vec<_>>(), 8);
            let p: f64 = k.iter().zip(&wk).map(|(k, w)| w * f.psi_hat_sq(*k)).sum::<f64>() / PI;
            assert!((p - q2).abs() < 1e-6 * q2, "{p} vs {q2}");
        }
    }

    #[test]
    fn untruncated_gaussian_transform() {
        let f = TestFunction::gaussian_bump(1, 0.8).unwrap();
        assert!(f.gaussian_is_untruncated());
        let direct = truncated_bump_hat(0.8, 6.8, 1.3).powi(2);
        assert!((f.psi_hat_sq(1.3) - direct).abs() < 1e-12);
    }
}
