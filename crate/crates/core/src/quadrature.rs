//! Gauss–Legendre / Gauss–Hermite rules and a few summation helpers.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the weight
/// `e^{-x²}` on the real line.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[n - 1],
            3 => 1.91 * z - 0.91 * x[n - 2],
            _ => 2.0 * z - x[n - i + 1],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let (p, d) = hermite_normalized(n, z);
            pp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = hermite_normalized(n, z);
        if d != 0.0 {
            pp = d;
        }
        x[n - 1 - i] = z;
        x[i] = -z;
        w[n - 1 - i] = 2.0 / (pp * pp);
        w[i] = w[n - 1 - i];
    }
    (x, w)
}

// Orthonormal Hermite recurrence (Numerical Recipes `gauher`).
fn hermite_normalized(n: usize, z: f64) -> (f64, f64) {
    let pim4 = PI.powf(-0.25);
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = (j + 1) as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    let pp = (2.0 * n as f64).sqrt() * p2;
    (p1, pp)
}

/// A composite Gauss–Legendre rule on a list of panel edges.
pub fn composite_rule(edges: &[f64], points: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(points);
    let mut x = Vec::with_capacity((edges.len() - 1) * points);
    let mut w = Vec::with_capacity(x.capacity());
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let h = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (xi, wi) in gx.iter().zip(&gw) {
            x.push(mid + h * xi);
            w.push(h * wi);
        }
    }
    (x, w)
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `Σ_{n ≥ a} n^{-s}` for `s > 1`, `a ≥ 1`, via Euler–Maclaurin.
pub fn zeta_tail(s: f64, a: u64) -> f64 {
    assert!(s > 1.0 && a >= 1);
    // sum explicitly up to a cutoff where the expansion is very accurate
    let start = a.max(1);
    let cut = start.max(32);
    let mut acc = CompensatedSum::new();
    for n in start..cut {
        acc.add((n as f64).powf(-s));
    }
    let m = cut as f64;
    let f = m.powf(-s);
    let f1 = -s * m.powf(-s - 1.0);
    let f3 = -s * (s + 1.0) * (s + 2.0) * m.powf(-s - 3.0);
    let f5 = -s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * m.powf(-s - 5.0);
    let integral = m.powf(1.0 - s) / (s - 1.0);
    acc.add(integral + 0.5 * f - f1 / 12.0 + f3 / 720.0 - f5 / 30240.0);
    acc.value()
}

/// `log Γ(n + 1)` for integer `n`, exact summation for small `n`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(12);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite(20);
        let m0: f64 = w.iter().sum();
        assert!((m0 - PI.sqrt()).abs() < 1e-12);
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 0.75 * PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zeta_tail_matches_brute_force() {
        let direct: f64 = (10u64..2_000_000).map(|n| (n as f64).powf(-2.0)).sum::<f64>() + 1.0 / 2_000_000.0;
        assert!((zeta_tail(2.0, 10) - direct).abs() < 1e-12);
        // ζ(3/2) = 2.612375348685...
        assert!((zeta_tail(1.5, 1) - 2.612_375_348_685_488).abs() < 1e-12);
    }
}
