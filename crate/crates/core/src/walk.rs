//! Simple random walk on `Z^d`: exact transition kernels, return
//! probabilities, the return-count series `R_N`, `π_d`, the heat kernel and
//! local-limit diagnostics.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{average_neighbors, CubeGrid, L1Constraint, RowRegion};
use crate::quadrature::{composite_rule, ln_factorial, zeta_tail, CompensatedSum};

/// Largest `n` for which `q_{2n}(0)` is obtained by the lattice DP.
pub const EXACT_RETURN_STEPS: usize = 64;

/// Safety factor applied to the local-limit envelope when bounding tails.
pub const ENVELOPE_SAFETY: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truncation {
    /// Reject tables whose box cannot hold the full support.
    Forbid,
    /// Accept a box smaller than the support; values stay exact but the
    /// table no longer sums to one for `n > radius`.
    Allow,
}

/// `q_n(x) = P(S_n = x)` for `1 ≤ n ≤ n_max`, `|x|_∞ ≤ radius`.
#[derive(Clone, Debug)]
pub struct WalkKernelTable {
    dim: usize,
    n_max: usize,
    grid: CubeGrid,
    values: Vec<f64>,
}

impl WalkKernelTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn radius(&self) -> i64 {
        self.grid.radius()
    }

    pub fn grid(&self) -> &CubeGrid {
        &self.grid
    }

    /// Steps up to which the table holds the whole support.
    pub fn complete_upto(&self) -> usize {
        self.n_max.min(self.grid.radius() as usize)
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        assert!(n >= 1 && n <= self.n_max, "step {n} outside table");
        let len = self.grid.len();
        &self.values[(n - 1) * len..n * len]
    }

    /// `q_n(x)`; zero outside the box.
    pub fn get(&self, n: usize, x: &[i64]) -> f64 {
        match self.grid.index(x) {
            Some(i) => self.slice(n)[i],
            None => 0.0,
        }
    }

    pub fn mass(&self, n: usize) -> f64 {
        let mut s = CompensatedSum::new();
        for &v in self.slice(n) {
            s.add(v);
        }
        s.value()
    }
}

/// Runs the forward DP `q_m = (1/2d) Σ_e q_{m-1}(· - e)` from `δ_0` and hands
/// the exact values on `target` to `visit(m, target_values)` for every
/// `1 ≤ m ≤ m_max`. Only the part of the light cone that can still reach
/// `target` is propagated.
pub(crate) fn exact_kernel_sweep<F>(dim: usize, m_max: usize, target: &CubeGrid, mut visit: F)
where
    F: FnMut(usize, &[f64]),
{
    let m_max_i = m_max as i64;
    let tc = target.center().to_vec();
    let tr = target.radius();
    let reach_extent = tc.iter().map(|c| c.abs()).max().unwrap_or(0) + tr;
    // largest sup-norm coordinate any region touches
    let mut extent = 0i64;
    for m in 1..=m_max_i {
        extent = extent.max(m.min(reach_extent + m_max_i - m));
    }
    let storage = CubeGrid::centered(dim, extent + 1).expect("valid storage grid");
    let mut cur = vec![0.0; storage.len()];
    let mut next = vec![0.0; storage.len()];
    cur[storage.index(&vec![0; dim]).unwrap()] = 1.0;
    let origin = vec![0i64; dim];
    let mut out = vec![0.0; target.len()];
    for m in 1..=m_max_i {
        let cap = CubeGrid::centered(dim, extent).unwrap();
        let region = RowRegion {
            cap,
            l1: vec![
                L1Constraint {
                    center: origin.clone(),
                    half: 0,
                    budget: m,
                },
                L1Constraint {
                    center: tc.clone(),
                    half: tr,
                    budget: m_max_i - m,
                },
            ],
            ball: None,
        };
        average_neighbors(&storage, &cur, &mut next, &region);
        std::mem::swap(&mut cur, &mut next);
        for (i, x) in target.sites().enumerate() {
            // |x|_1 > m is outside the cone and never written
            let l1: i64 = x.iter().map(|v| v.abs()).sum();
            out[i] = if l1 <= m {
                storage.index(&x).map_or(0.0, |j| cur[j])
            } else {
                0.0
            };
        }
        visit(m as usize, &out);
    }
}

/// Exact kernel table by lattice DP.
pub fn kernel_table(dim: usize, n_max: usize, radius: i64, truncation: Truncation) -> Result<WalkKernelTable> {
    if dim == 0 || n_max == 0 {
        return Err(Error::invalid("kernel_table needs d ≥ 1 and n_max ≥ 1"));
    }
    if radius < n_max as i64 && truncation == Truncation::Forbid {
        return Err(Error::LossyKernel { radius, n_max });
    }
    let grid = CubeGrid::centered(dim, radius)?;
    let mut values = Vec::with_capacity(n_max * grid.len());
    exact_kernel_sweep(dim, n_max, &grid, |_, v| values.extend_from_slice(v));
    Ok(WalkKernelTable {
        dim,
        n_max,
        grid,
        values,
    })
}

/// Exact `q_m(x)` by lattice DP.
pub fn kernel_value_exact(dim: usize, m: usize, x: &[i64]) -> f64 {
    let target = CubeGrid::new(x.to_vec(), 0).unwrap();
    let mut val = 0.0;
    exact_kernel_sweep(dim, m, &target, |step, v| {
        if step == m {
            val = v[0];
        }
    });
    val
}

/// Result of a Fourier-integral evaluation with its error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureValue {
    pub value: f64,
    pub error: f64,
}

fn graded_edges(m: usize) -> Vec<f64> {
    let h = 0.5 / (m.max(1) as f64).sqrt();
    let half = 0.5 * PI;
    let mut left = vec![0.0];
    let mut e = h.min(half);
    while e < half {
        left.push(e);
        e *= 2.0;
    }
    left.push(half);
    let mut edges = left.clone();
    for &v in left.iter().rev().skip(1) {
        edges.push(PI - v);
    }
    edges
}

fn fourier_kernel_rule(dim: usize, m: usize, x: &[i64], points: usize) -> f64 {
    let (nodes, weights) = composite_rule(&graded_edges(m), points);
    let g = nodes.len();
    let cosk: Vec<f64> = nodes.iter().map(|k| k.cos()).collect();
    // per-axis weight × cos(k x_i)
    let axis: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            nodes
                .iter()
                .zip(&weights)
                .map(|(k, w)| w * (k * x[i] as f64).cos())
                .collect()
        })
        .collect();
    let inv_d = 1.0 / dim as f64;
    let exp = m as i32;
    // iterate the tensor product with an odometer over axes 1..d
    let mut total = CompensatedSum::new();
    let mut idx = vec![0usize; dim];
    loop {
        let mut c_rest = 0.0;
        let mut w_rest = 1.0;
        for i in 1..dim {
            c_rest += cosk[idx[i]];
            w_rest *= axis[i][idx[i]];
        }
        let mut row = 0.0;
        for j in 0..g {
            let c = (cosk[j] + c_rest) * inv_d;
            row += axis[0][j] * c.powi(exp);
        }
        total.add(row * w_rest);
        let mut a = 1;
        loop {
            if a >= dim {
                return total.value() * PI.powi(-(dim as i32));
            }
            idx[a] += 1;
            if idx[a] < g {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// `q_m(x) = (2π)^{-d} ∫ ((Σ cos k_i)/d)^m e^{i k·x} dk` by graded
/// composite Gauss–Legendre quadrature, with an error estimate from two
/// resolutions.
pub fn kernel_value_quadrature(dim: usize, m: usize, x: &[i64]) -> Result<QuadratureValue> {
    if dim == 0 || x.len() != dim {
        return Err(Error::invalid("dimension mismatch"));
    }
    let coarse = fourier_kernel_rule(dim, m, x, 12);
    let fine = fourier_kernel_rule(dim, m, x, 18);
    let error = (fine - coarse).abs();
    let tolerance = 1e-9 * fine.abs() + 1e-15;
    if error > tolerance {
        return Err(Error::Quadrature {
            achieved: error,
            tolerance,
        });
    }
    Ok(QuadratureValue { value: fine, error })
}

/// `q_{2n}(0)`: lattice DP for `n ≤ EXACT_RETURN_STEPS`, Fourier quadrature
/// beyond.
pub fn return_prob(dim: usize, n: usize) -> Result<f64> {
    if dim == 0 || n == 0 {
        return Err(Error::invalid("return_prob needs d ≥ 1 and n ≥ 1"));
    }
    if n <= EXACT_RETURN_STEPS {
        Ok(kernel_value_exact(dim, 2 * n, &vec![0; dim]))
    } else {
        kernel_value_quadrature(dim, 2 * n, &vec![0; dim]).map(|q| q.value)
    }
}

/// `q_{2n}(0)` for `n = 1..=n_max` from the coordinate-multinomial identity
/// `q_{2n}(0) = (2n)! (2d)^{-2n} Σ_{j_1+…+j_d=n} Π_i (j_i!)^{-2}`,
/// evaluated as a log-space power-series convolution.
pub fn return_probs(dim: usize, n_max: usize) -> Vec<f64> {
    assert!(dim >= 1);
    let base: Vec<f64> = (0..=n_max as u64).map(|j| -2.0 * ln_factorial(j)).collect();
    let mut acc = base.clone();
    for _ in 1..dim {
        acc = log_convolve(&acc, &base);
    }
    let ln2d = ((2 * dim) as f64).ln();
    (1..=n_max)
        .map(|n| (ln_factorial(2 * n as u64) - 2.0 * n as f64 * ln2d + acc[n]).exp())
        .collect()
}

fn log_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().min(b.len());
    let mut out = vec![f64::NEG_INFINITY; n];
    let mut terms = Vec::with_capacity(n);
    for (k, slot) in out.iter_mut().enumerate() {
        terms.clear();
        let mut mx = f64::NEG_INFINITY;
        for i in 0..=k {
            let t = a[i] + b[k - i];
            mx = mx.max(t);
            terms.push(t);
        }
        let s: f64 = terms.iter().map(|t| (t - mx).exp()).sum();
        *slot = mx + s.ln();
    }
    out
}

/// Leading local-limit envelope `2 (d / (4πn))^{d/2}` for `q_{2n}(0)`.
pub fn llt_envelope(dim: usize, n: usize) -> f64 {
    2.0 * (dim as f64 / (4.0 * PI * n as f64)).powf(0.5 * dim as f64)
}

/// `Σ_{n > m} llt_envelope(d, n)`.
pub fn envelope_tail(dim: usize, m: usize) -> f64 {
    let s = 0.5 * dim as f64;
    2.0 * (dim as f64 / (4.0 * PI)).powf(s) * zeta_tail(s, m as u64 + 1)
}

/// `q_{2n}(0)`, partial sums `R_N` and the resulting `R_∞`, `π_d`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub dim: usize,
    pub n_max: usize,
    /// `q_{2n}(0)` for `n = 1..=n_max`.
    pub values: Vec<f64>,
    /// `R_N` for `N = 1..=n_max`.
    pub partial_sums: Vec<f64>,
    /// Envelope estimate of `Σ_{n > n_max} q_{2n}(0)`.
    pub tail_estimate: f64,
    /// Upper bound on that remainder (envelope with safety factor).
    pub tail_bound: f64,
    pub r_inf: f64,
    pub pi_d: f64,
    /// Bound on `|π_d(estimate) - π_d|`.
    pub pi_error: f64,
}

impl ReturnSeries {
    /// `R_N`, with `R_0 = 0`; values past `n_max` are the `R_∞` estimate.
    pub fn r(&self, n: usize) -> f64 {
        match n {
            0 => 0.0,
            n if n <= self.n_max => self.partial_sums[n - 1],
            _ => self.r_inf,
        }
    }

    /// `q_{2n}(0)`; past `n_max` falls back to the envelope.
    pub fn q(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else if n <= self.n_max {
            self.values[n - 1]
        } else {
            llt_envelope(self.dim, n)
        }
    }

    /// Certified upper bound on `Σ_{n > m} q_{2n}(0)`.
    pub fn tail_upper(&self, m: usize) -> f64 {
        if m >= self.n_max {
            ENVELOPE_SAFETY * envelope_tail(self.dim, m)
        } else {
            self.r(self.n_max) - self.r(m) + self.tail_bound
        }
    }
}

/// Return series with `π_d` accurate to `tol`.
pub fn return_series(dim: usize, tol: f64) -> Result<ReturnSeries> {
    if dim <= 2 {
        return Err(Error::Recurrent(dim));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    // the estimate's error is at most (safety - 1) × envelope tail, and
    // |dπ/dR| = 1/(1+R)² ≤ 1
    let mut n_max = EXACT_RETURN_STEPS;
    while (ENVELOPE_SAFETY - 1.0) * envelope_tail(dim, n_max) > tol {
        n_max = (n_max as f64 * 1.25).ceil() as usize;
    }
    let values = return_probs(dim, n_max);
    let mut partial_sums = Vec::with_capacity(n_max);
    let mut acc = CompensatedSum::new();
    for &v in &values {
        acc.add(v);
        partial_sums.push(acc.value());
    }
    let tail_estimate = envelope_tail(dim, n_max);
    let tail_bound = ENVELOPE_SAFETY * tail_estimate;
    let r_inf = acc.value() + tail_estimate;
    let pi_d = r_inf / (1.0 + r_inf);
    Ok(ReturnSeries {
        dim,
        n_max,
        values,
        partial_sums,
        tail_estimate,
        tail_bound,
        r_inf,
        pi_d,
        pi_error: (ENVELOPE_SAFETY - 1.0) * tail_estimate,
    })
}

/// Default tolerance of the shared return series.
pub const DEFAULT_SERIES_TOL: f64 = 1e-3;

/// Process-wide `return_series(d, DEFAULT_SERIES_TOL)`.
pub fn shared_return_series(dim: usize) -> Result<Arc<ReturnSeries>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ReturnSeries>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(s) = cache.lock().unwrap().get(&dim) {
        return Ok(s.clone());
    }
    let s = Arc::new(return_series(dim, DEFAULT_SERIES_TOL)?);
    cache.lock().unwrap().insert(dim, s.clone());
    Ok(s)
}

/// Process-wide `return_probs(d, n)`, grown on demand.
pub fn shared_return_probs(dim: usize, n_max: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().unwrap().get(&dim) {
        if v.len() >= n_max {
            return v.clone();
        }
    }
    let v = Arc::new(return_probs(dim, n_max.max(EXACT_RETURN_STEPS)));
    cache.lock().unwrap().insert(dim, v.clone());
    v
}

/// `π_d` with error below 1e-3 (in practice far smaller).
pub fn pi_d(dim: usize) -> Result<f64> {
    Ok(shared_return_series(dim)?.pi_d)
}

/// `g_t(x) = (2πt)^{-d/2} exp(-|x|²/(2t))`.
pub fn heat_kernel(t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("heat kernel needs t > 0, got {t}")));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let d = x.len() as f64;
    Ok((2.0 * PI * t).powf(-0.5 * d) * (-r2 / (2.0 * t)).exp())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LltDiagnostic {
    pub dim: usize,
    pub n: usize,
    /// `sup_x |q_{2n}(x) - 2 g_{2n/d}(x)| n^{d/2}` over even sites.
    pub scaled_error: f64,
    pub argmax: Vec<i64>,
    /// `|q_{2n}(0) / (2 g_{2n/d}(0)) - 1|`.
    pub origin_relative_error: f64,
}

/// Local-limit diagnostic on the window `|x|_∞ ≤ window`, even sites only.
pub fn llt_error(dim: usize, n: usize, window: i64) -> Result<LltDiagnostic> {
    if dim == 0 || n == 0 || window < 0 {
        return Err(Error::invalid("llt_error needs d ≥ 1, n ≥ 1, window ≥ 0"));
    }
    let grid = CubeGrid::centered(dim, window)?;
    let m = 2 * n;
    let t = m as f64 / dim as f64;
    let exact: Vec<f64> = if n <= EXACT_RETURN_STEPS {
        let mut last = Vec::new();
        exact_kernel_sweep(dim, m, &grid, |step, v| {
            if step == m {
                last = v.to_vec();
            }
        });
        last
    } else {
        // q depends only on the sorted absolute coordinates
        let mut cache: std::collections::HashMap<Vec<i64>, f64> = Default::default();
        let mut out = Vec::with_capacity(grid.len());
        for x in grid.sites() {
            if x.iter().sum::<i64>().rem_euclid(2) != 0 {
                out.push(0.0);
                continue;
            }
            let mut key: Vec<i64> = x.iter().map(|v| v.abs()).collect();
            key.sort_unstable();
            let v = match cache.get(&key) {
                Some(&v) => v,
                None => {
                    let v = kernel_value_quadrature(dim, m, &key)?.value;
                    cache.insert(key, v);
                    v
                }
            };
            out.push(v);
        }
        out
    };
    let scale = (n as f64).powf(0.5 * dim as f64);
    let mut best = (-1.0, Vec::new());
    for (i, x) in grid.sites().enumerate() {
        if x.iter().sum::<i64>().rem_euclid(2) != 0 {
            continue;
        }
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let g = 2.0 * heat_kernel(t, &xf)?;
        let err = (exact[i] - g).abs() * scale;
        if err > best.0 {
            best = (err, x);
        }
    }
    let origin = grid.index(&vec![0; dim]).unwrap();
    let g0 = 2.0 * heat_kernel(t, &vec![0.0; dim])?;
    Ok(LltDiagnostic {
        dim,
        n,
        scaled_error: best.0,
        argmax: best.1,
        origin_relative_error: (exact[origin] / g0 - 1.0).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Counts `(2d)^n` nearest-neighbour paths ending at `x`.
    fn enumerate_paths(dim: usize, n: usize, x: &[i64]) -> f64 {
        let steps = 2 * dim;
        let total = steps.pow(n as u32);
        let mut hits = 0u64;
        for mut code in 0..total {
            let mut pos = vec![0i64; dim];
            for _ in 0..n {
                let s = code % steps;
                code /= steps;
                pos[s / 2] += if s.is_multiple_of(2) { 1 } else { -1 };
            }
            if pos == x {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn kernel_examples() {
        let t = kernel_table(3, 4, 4, Truncation::Forbid).unwrap();
        assert!((t.get(1, &[1, 0, 0]) - 1.0 / 6.0).abs() < 1e-15);
        assert!((t.get(2, &[0, 0, 0]) - 1.0 / 6.0).abs() < 1e-15);
        let oracle = enumerate_paths(3, 4, &[0, 0, 0]);
        assert!((t.get(4, &[0, 0, 0]) - oracle).abs() < 1e-15);
        // q_4(0) in d=3 is 90/1296 × … : 1296-path enumeration gives 15/216
        assert!((oracle - 15.0 / 216.0).abs() < 1e-15);
        let oracle = enumerate_paths(3, 4, &[1, 1, 0]);
        assert!((t.get(4, &[1, 1, 0]) - oracle).abs() < 1e-15);
    }

    #[test]
    fn lossy_table_rejected_unless_allowed() {
        assert!(matches!(
            kernel_table(3, 5, 3, Truncation::Forbid),
            Err(Error::LossyKernel { .. })
        ));
        let full = kernel_table(3, 8, 8, Truncation::Forbid).unwrap();
        let cut = kernel_table(3, 8, 3, Truncation::Allow).unwrap();
        for n in 1..=8 {
            for x in cut.grid().sites() {
                assert!((cut.get(n, &x) - full.get(n, &x)).abs() < 1e-16);
            }
        }
        assert!(cut.mass(8) < 1.0 - 1e-6);
        assert_eq!(cut.complete_upto(), 3);
    }

    #[test]
    fn table_invariants() {
        let t = kernel_table(3, 10, 10, Truncation::Forbid).unwrap();
        for n in 1..=10 {
            assert!((t.mass(n) - 1.0).abs() < 1e-12);
            for x in t.grid().sites() {
                let v = t.get(n, &x);
                if (x.iter().sum::<i64>() - n as i64).rem_euclid(2) != 0 {
                    assert_eq!(v, 0.0);
                }
                let neg: Vec<i64> = x.iter().map(|v| -v).collect();
                assert_eq!(v, t.get(n, &neg));
                let perm = vec![x[2], x[0], x[1]];
                assert!((v - t.get(n, &perm)).abs() <= 1e-15 * v);
                let flip = vec![x[0], -x[1], x[2]];
                assert!((v - t.get(n, &flip)).abs() <= 1e-15 * v);
            }
        }
    }

    #[test]
    fn chapman_kolmogorov_and_time_reversal() {
        let t = kernel_table(3, 12, 12, Truncation::Forbid).unwrap();
        let (m, n) = (5, 7);
        for x in [[0, 0, 0], [2, 1, -1], [3, 0, 2]] {
            let mut s = 0.0;
            for z in t.grid().sites() {
                let y: Vec<i64> = x.iter().zip(&z).map(|(a, b)| a - b).collect();
                s += t.get(m, &z) * t.get(n, &y);
            }
            assert!((s - t.get(m + n, &x)).abs() < 1e-12);
        }
        for n in 1..=6 {
            let s: f64 = t.slice(n).iter().map(|v| v * v).sum();
            assert!((s - t.get(2 * n, &[0, 0, 0])).abs() < 1e-12);
        }
    }

    #[test]
    fn return_prob_examples() {
        assert!((return_prob(3, 1).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((return_prob(1, 1).unwrap() - 0.5).abs() < 1e-15);
        let oracle = enumerate_paths(3, 4, &[0, 0, 0]);
        assert!((return_prob(3, 2).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn multinomial_series_matches_dp() {
        let series = return_probs(3, 64);
        for n in [1usize, 2, 5, 17, 40, 64] {
            let dp = return_prob(3, n).unwrap();
            assert!(
                (series[n - 1] - dp).abs() < 1e-11 * dp,
                "n = {n}: {}",
                series[n - 1] / dp - 1.0
            );
        }
        let series = return_probs(4, 20);
        let dp = kernel_value_exact(4, 40, &[0, 0, 0, 0]);
        assert!((series[19] - dp).abs() < 1e-11 * dp);
    }

    #[test]
    fn quadrature_agrees_with_dp_on_overlap() {
        for n in [40usize, 64] {
            let dp = kernel_value_exact(3, 2 * n, &[0, 0, 0]);
            let q = kernel_value_quadrature(3, 2 * n, &[0, 0, 0]).unwrap();
            assert!((q.value - dp).abs() < 1e-10 * dp, "n = {n}: {} vs {dp}", q.value);
        }
        let dp = kernel_value_exact(3, 60, &[2, 1, 1]);
        let q = kernel_value_quadrature(3, 60, &[2, 1, 1]).unwrap();
        assert!((q.value - dp).abs() < 1e-10 * dp);
        let series = return_probs(3, 300);
        let q = return_prob(3, 300).unwrap();
        assert!((q - series[299]).abs() < 1e-9 * q);
    }

    #[test]
    fn envelope_within_safety_band() {
        let series = return_probs(3, 3000);
        for n in EXACT_RETURN_STEPS..=3000 {
            let ratio = series[n - 1] / llt_envelope(3, n);
            assert!((ratio - 1.0).abs() < ENVELOPE_SAFETY - 1.0, "n = {n}: {ratio}");
        }
    }

    #[test]
    fn return_series_examples() {
        let s3 = return_series(3, 1e-3).unwrap();
        assert!((s3.pi_d - 0.34).abs() < 0.005, "π_3 = {}", s3.pi_d);
        // known value 0.340537329...
        assert!((s3.pi_d - 0.340_537_329_5).abs() < 1e-5);
        assert!((s3.r_inf - s3.pi_d / (1.0 - s3.pi_d)).abs() < 1e-12);
        assert!(s3.partial_sums.windows(2).all(|w| w[0] <= w[1]));
        assert!(s3.r(s3.n_max) <= s3.r_inf + s3.tail_bound);
        assert!(matches!(return_series(2, 1e-3), Err(Error::Recurrent(2))));
        let s4 = return_series(4, 1e-3).unwrap();
        assert!(s4.pi_d < s3.pi_d);
        assert!(s3.pi_d < 0.5);
    }

    #[test]
    fn heat_kernel_examples() {
        let g = heat_kernel(1.0, &[0.0]).unwrap();
        assert!((g - (2.0 * PI).powf(-0.5)).abs() < 1e-15);
        assert!(heat_kernel(0.0, &[0.0]).is_err());
        assert_eq!(
            heat_kernel(0.7, &[0.3, -1.2, 2.0]).unwrap(),
            heat_kernel(0.7, &[-0.3, 1.2, -2.0]).unwrap()
        );
        // ∫ g_t over R^2 by tensor Gauss–Legendre on [-L, L]^2
        let (x, w) = composite_rule(&(0..=40).map(|i| -10.0 + 0.5 * i as f64).collect::<Vec<_>>(), 16);
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            for (yj, wj) in x.iter().zip(&w) {
                s += wi * wj * heat_kernel(0.8, &[*xi, *yj]).unwrap();
            }
        }
        assert!((s - 1.0).abs() < 1e-8);
    }

    #[test]
    fn llt_error_decreases() {
        let e25 = llt_error(3, 25, 4).unwrap();
        let e100 = llt_error(3, 100, 4).unwrap();
        assert!(e100.scaled_error < e25.scaled_error);
        let e200 = llt_error(3, 200, 0).unwrap();
        assert!(e200.origin_relative_error < 0.02);
        // odd sites are excluded from the sup
        assert!(e25.argmax.iter().sum::<i64>().rem_euclid(2) == 0);
    }
}
