//! Second-moment analytics from the chaos expansion: the overlap moment
//! generating function `e_M = E[e^{λ₂ L_M}]`, its degree-resolved pieces,
//! exact finite-`N` variances of the averaged field, the limiting variance
//! and the first chaos term.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderField, DisorderLaw};
use crate::error::{Error, Result};
use crate::lattice::{average_neighbors, CubeGrid, L1Constraint, RowRegion};
use crate::quadrature::{composite_rule, gauss_legendre, CompensatedSum};
use crate::testfn::{Profile, SampledTest, TestFunction};
use crate::walk::{shared_return_probs, shared_return_series, ReturnSeries};

/// `e_M = E[e^{λ₂(β) L_M}]` for `M = 0..=M_max`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OverlapMgf {
    pub dim: usize,
    pub law: DisorderLaw,
    pub beta: f64,
    pub lambda2: f64,
    pub sigma2: f64,
    pub values: Vec<f64>,
    /// `(1 - π_d)/(1 - π_d e^{λ₂})` below the L² threshold.
    pub limit: Option<f64>,
    /// Certified bound on `limit - e_{M_max}` (given `π_d`).
    pub tail_bound: Option<f64>,
    pub warning: Option<String>,
}

impl OverlapMgf {
    pub fn m_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn get(&self, m: usize) -> f64 {
        self.values[m]
    }
}

fn check_params(d: usize, beta: f64) -> Result<()> {
    if d <= 2 {
        return Err(Error::Recurrent(d));
    }
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("β must be nonnegative, got {beta}")));
    }
    Ok(())
}

/// Renewal recursion `e_M = 1 + σ² Σ_{ℓ=1}^{M} q_{2ℓ}(0) e_{M-ℓ}`.
pub fn overlap_mgf(d: usize, law: DisorderLaw, beta: f64, m_max: usize) -> Result<OverlapMgf> {
    check_params(d, beta)?;
    let sigma2 = law.sigma2(beta);
    let lambda2 = law.lambda2(beta);
    let q = shared_return_probs(d, m_max);
    let mut values = Vec::with_capacity(m_max + 1);
    values.push(1.0);
    for m in 1..=m_max {
        let mut acc = CompensatedSum::new();
        for l in 1..=m {
            acc.add(q[l - 1] * values[m - l]);
        }
        values.push(1.0 + sigma2 * acc.value());
    }
    let series = shared_return_series(d)?;
    let pi = series.pi_d;
    let (limit, tail_bound, warning) = if pi * lambda2.exp() < 1.0 {
        let limit = (1.0 - pi) / (1.0 - pi * lambda2.exp());
        (Some(limit), overlap_tail_bound(&series, sigma2, m_max), None)
    } else {
        (None, None, Some("supercritical for L², limit infinite".to_string()))
    };
    Ok(OverlapMgf {
        dim: d,
        law,
        beta,
        lambda2,
        sigma2,
        values,
        limit,
        tail_bound,
        warning,
    })
}

/// `Σ_k min(ρ^k, k ρ^{k-1} σ² T(a_k))` with `ρ = σ² R_∞` and `T(a)` the
/// return-probability tail past `a = ⌈(M+1)/k⌉ - 1`: a degree-`k` overlap
/// that exceeds `M` has some gap longer than `a`.
fn overlap_tail_bound(series: &ReturnSeries, sigma2: f64, m: usize) -> Option<f64> {
    let r_up = series.r(series.n_max) + series.tail_bound;
    let rho = sigma2 * r_up;
    if rho >= 1.0 {
        return None;
    }
    if rho == 0.0 {
        return Some(0.0);
    }
    let mut total = CompensatedSum::new();
    let mut pow = 1.0; // ρ^{k-1}
    let mut k = 1usize;
    loop {
        let a = (m + 1).div_ceil(k) - 1;
        let term = if k > m {
            pow * rho
        } else {
            (pow * rho).min(k as f64 * pow * sigma2 * series.tail_upper(a))
        };
        total.add(term);
        pow *= rho;
        if k > m {
            // remaining Σ_{j>k} ρ^j
            total.add(pow * rho / (1.0 - rho));
            break;
        }
        if pow * rho / (1.0 - rho) < 1e-300 {
            break;
        }
        k += 1;
    }
    Some(total.value())
}

/// `e_{M,k}` for `k ≤ K`, `M ≤ M_max`: contributions of exactly `k` returns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegreeMgf {
    pub sigma2: f64,
    /// `table[k][M] = e_{M,k}`.
    pub table: Vec<Vec<f64>>,
}

impl DegreeMgf {
    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.table.get(k).map_or(0.0, |row| row[m])
    }
}

/// `e_{M,0} = 1`, `e_{M,k} = σ² Σ_ℓ q_{2ℓ}(0) e_{M-ℓ,k-1}`.
pub fn degree_resolved_mgf(d: usize, law: DisorderLaw, beta: f64, m_max: usize, k_max: usize) -> Result<DegreeMgf> {
    check_params(d, beta)?;
    let sigma2 = law.sigma2(beta);
    let q = shared_return_probs(d, m_max.max(1));
    let mut table = vec![vec![1.0; m_max + 1]];
    for k in 1..=k_max {
        let prev = &table[k - 1];
        let mut row = vec![0.0; m_max + 1];
        for (m, slot) in row.iter_mut().enumerate().skip(k) {
            let mut acc = CompensatedSum::new();
            for l in 1..=m - (k - 1) {
                acc.add(q[l - 1] * prev[m - l]);
            }
            *slot = sigma2 * acc.value();
        }
        table.push(row);
    }
    Ok(DegreeMgf { sigma2, table })
}

/// Forward DP of `h_n = φ_N * q_n` on the exact (zero-halo) light cone of
/// the sampled support; `visit(n, grid, h_n, region_n)` for `n = 0..=n_max`.
pub(crate) fn smoothing_sweep<F>(phi: &SampledTest, n_max: usize, mut visit: F) -> Result<()>
where
    F: FnMut(usize, &CubeGrid, &[f64], &RowRegion),
{
    let src = &phi.grid;
    let storage = CubeGrid::new(src.center().to_vec(), src.radius() + n_max as i64 + 1)?;
    let mut cur = vec![0.0; storage.len()];
    let mut next = vec![0.0; storage.len()];
    for (i, x) in src.sites().enumerate() {
        cur[storage.index_unchecked(&x)] = phi.weights[i];
    }
    let region_at = |n: usize| RowRegion {
        cap: CubeGrid::new(src.center().to_vec(), src.radius() + n as i64).unwrap(),
        l1: vec![L1Constraint {
            center: src.center().to_vec(),
            half: src.radius(),
            budget: n as i64,
        }],
        ball: None,
    };
    visit(0, &storage, &cur, &region_at(0));
    for n in 1..=n_max {
        let region = region_at(n);
        average_neighbors(&storage, &cur, &mut next, &region);
        std::mem::swap(&mut cur, &mut next);
        visit(n, &storage, &cur, &region);
    }
    Ok(())
}

/// `S_n = ‖φ_N * q_n‖² = Σ_{x,y} φ_N(x) φ_N(y) q_{2n}(x - y)` for
/// `n = 0..=n_max`.
pub fn smoothed_norms(phi: &SampledTest, n_max: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n_max + 1);
    let strides_dim = phi.grid.dim();
    smoothing_sweep(phi, n_max, |_, grid, h, region| {
        let mut acc = CompensatedSum::new();
        let mut coord = vec![0i64; strides_dim];
        region.for_each_row(|rest, lo, hi| {
            coord[1..].copy_from_slice(&rest[1..]);
            coord[0] = lo;
            let base = grid.index_unchecked(&coord);
            let row = &h[base..base + (hi - lo + 1) as usize];
            acc.add(row.iter().map(|v| v * v).sum());
        });
        out.push(acc.value());
    })?;
    Ok(out)
}

/// `N^{d/2 - 1}`.
pub fn diffusive_scale(d: usize, n: usize) -> f64 {
    (n as f64).powf(0.5 * d as f64 - 1.0)
}

/// `Var[N^{(d-2)/4} Z_{N,β}(φ)] = N^{d/2-1} Σ_{n=1}^{N} σ² S_n e_{N-n}`.
pub fn exact_variance(d: usize, law: DisorderLaw, beta: f64, n: usize, phi: &TestFunction) -> Result<f64> {
    exact_variance_after(d, law, beta, n, phi, 0)
}

/// Variance of the averaged field built from disorder in `(cut, N]` only:
/// the same sum restricted to first-collision times `n > cut`.
pub fn exact_variance_after(
    d: usize,
    law: DisorderLaw,
    beta: f64,
    n: usize,
    phi: &TestFunction,
    cut: usize,
) -> Result<f64> {
    check_params(d, beta)?;
    check_phi(d, phi)?;
    let s = smoothed_norms(&phi.sample(n), n)?;
    let e = overlap_mgf(d, law, beta, n)?;
    let sigma2 = law.sigma2(beta);
    let mut acc = CompensatedSum::new();
    for k in cut + 1..=n {
        acc.add(sigma2 * s[k] * e.values[n - k]);
    }
    Ok(diffusive_scale(d, n) * acc.value())
}

fn check_phi(d: usize, phi: &TestFunction) -> Result<()> {
    if phi.dim() != d {
        return Err(Error::invalid(format!(
            "test function dimension {} differs from d = {d}",
            phi.dim()
        )));
    }
    Ok(())
}

/// `var_k = N^{d/2-1} Σ_n σ² S_n e_{N-n,k-1}` for `k = 1..=k_max`.
pub fn degree_variances(
    d: usize,
    law: DisorderLaw,
    beta: f64,
    n: usize,
    phi: &TestFunction,
    k_max: usize,
) -> Result<Vec<f64>> {
    check_phi(d, phi)?;
    let s = smoothed_norms(&phi.sample(n), n)?;
    degree_variances_from_norms(d, law, beta, n, &s, k_max)
}

fn degree_variances_from_norms(
    d: usize,
    law: DisorderLaw,
    beta: f64,
    n: usize,
    s: &[f64],
    k_max: usize,
) -> Result<Vec<f64>> {
    let k_max = k_max.min(n);
    let table = degree_resolved_mgf(d, law, beta, n, k_max.saturating_sub(1))?;
    let sigma2 = law.sigma2(beta);
    let scale = diffusive_scale(d, n);
    Ok((1..=k_max)
        .map(|k| {
            let mut acc = CompensatedSum::new();
            for j in 1..=n {
                acc.add(sigma2 * s[j] * table.get(n - j, k - 1));
            }
            scale * acc.value()
        })
        .collect())
}

/// `Σ_{k>M} var_k`, the squared L² distance between the averaged field and
/// its degree-`M` chaos truncation.
pub fn truncation_gap(d: usize, law: DisorderLaw, beta: f64, n: usize, phi: &TestFunction, m: usize) -> Result<f64> {
    if m >= n {
        return Ok(0.0);
    }
    let all = degree_variances(d, law, beta, n, phi, n)?;
    let mut acc = CompensatedSum::new();
    for v in &all[m..] {
        acc.add(*v);
    }
    Ok(acc.value())
}

/// `N^{d/2-1} Σ_{n ∈ range} Σ_{x,y} φ_N(x) φ_N(y) q_{2n}(x - y)`.
pub fn kernel_riemann_sum(d: usize, n: usize, phi: &TestFunction, range: RangeInclusive<usize>) -> Result<f64> {
    check_phi(d, phi)?;
    let hi = *range.end();
    let s = smoothed_norms(&phi.sample(n), hi)?;
    let mut acc = CompensatedSum::new();
    for k in range {
        if k >= 1 {
            acc.add(s[k]);
        }
    }
    Ok(diffusive_scale(d, n) * acc.value())
}

/// The heat-kernel energy `∫₀¹ dt ∫∫ φ(x) g_{2t/d}(x - y) φ(y) dx dy` with a
/// quadrature error estimate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HeatIntegral {
    pub value: f64,
    pub error: f64,
    /// Closed form, for untruncated Gaussian bumps.
    pub closed_form: Option<f64>,
}

// k-space rule for F(t) = (1/π) ∫_0^∞ |ψ̂(k)|² e^{-t k²/d} dk:
// nodes, weights already multiplied by |ψ̂|²/π, and a bound on the dropped tail.
struct FourierRule {
    k2: Vec<f64>,
    w: Vec<f64>,
    tail: f64,
    k_max: f64,
    // coefficient of an analytically integrated `c/(π k²)` tail beyond k_max
    inv_sq_tail: f64,
}

impl FourierRule {
    fn eval(&self, tau: f64) -> f64 {
        let body: f64 = self.k2.iter().zip(&self.w).map(|(k2, w)| w * (-tau * k2).exp()).sum();
        if self.inv_sq_tail == 0.0 {
            return body;
        }
        // ∫_K^∞ e^{-τk²}/k² dk
        let k = self.k_max;
        let tail = (-tau * k * k).exp() / k - (PI * tau).sqrt() * libm::erfc(k * tau.sqrt());
        body + self.inv_sq_tail * tail / PI
    }
}

fn fourier_rule(phi: &TestFunction, points: usize) -> FourierRule {
    let (k_max, period, tail) = match phi.profile {
        Profile::GaussianBump { scale, .. } if phi.gaussian_is_untruncated() => (40.0 / scale, 1.0 / scale, 0.0),
        Profile::GaussianBump { scale: s, cutoff: c } => {
            // |ψ̂| ≤ ψ̂_G + 2T/k² with T = |ψ_G'(c)| + ∫_c^∞ |ψ_G''|
            let dpsi = |u: f64| u / (s * s) * (-u * u / (2.0 * s * s)).exp();
            let t = if c >= s { 2.0 * dpsi(c) } else { 2.0 * dpsi(s) };
            let f0 = s * PI.sqrt();
            let mut k = 16.0 / s;
            let bound = |k: f64| (2.0 * PI.powf(1.5) * s * libm::erfc(s * k) + 8.0 * t * t / (3.0 * k.powi(3))) / PI;
            while bound(k) > 1e-9 * f0 && k < 4000.0 / s {
                k *= 1.25;
            }
            (k, PI / (2.0 * c), bound(k))
        }
        Profile::Hat { half_width: a } => {
            let f0 = 2.0 * a / 3.0;
            let mut k = 64.0 / a;
            let bound = |k: f64| 16.0 / (3.0 * PI * a * a * k.powi(3));
            while bound(k) > 1e-11 * f0 && k < 1e5 / a {
                k *= 1.25;
            }
            (k, PI / a, bound(k))
        }
        Profile::IndicatorBox { half_width: a } => {
            // |ψ̂|² = 2/k² - 2cos(2ak)/k²; the oscillating part of the tail is
            // at most 2/(π a K²)
            let k = 1e4 / a;
            (k, PI / (2.0 * a), 2.0 / (PI * a * k * k))
        }
    };
    let inv_sq_tail = if matches!(phi.profile, Profile::IndicatorBox { .. }) {
        2.0
    } else {
        0.0
    };
    let panels = (k_max / period).ceil().max(8.0) as usize;
    let edges: Vec<f64> = (0..=panels).map(|i| k_max * i as f64 / panels as f64).collect();
    let (k, w) = composite_rule(&edges, points);
    let w = k.iter().zip(&w).map(|(k, w)| w * phi.psi_hat_sq(*k) / PI).collect();
    FourierRule {
        k2: k.iter().map(|k| k * k).collect(),
        w,
        tail,
        k_max,
        inv_sq_tail,
    }
}

fn t_rule(points: usize) -> (Vec<f64>, Vec<f64>) {
    let mut edges = vec![0.0];
    let mut e = 1.0 / 256.0;
    while e < 1.0 {
        edges.push(e);
        e *= 2.0;
    }
    edges.push(1.0);
    composite_rule(&edges, points)
}

fn heat_integral_fourier_at(phi: &TestFunction, k_points: usize, t_points: usize) -> (f64, f64) {
    let d = phi.dim() as i32;
    let rule = fourier_rule(phi, k_points);
    let (u, wu) = t_rule(t_points);
    let inv_d = 1.0 / d as f64;
    let mut acc = CompensatedSum::new();
    let mut f_max: f64 = 0.0;
    for (ui, wi) in u.iter().zip(&wu) {
        let t = ui * ui;
        let f = rule.eval(t * inv_d);
        f_max = f_max.max(f);
        acc.add(wi * 2.0 * ui * f.powi(d));
    }
    let tail_err = d as f64 * (f_max + rule.tail).powi(d - 1) * rule.tail;
    (acc.value(), tail_err)
}

/// `∫₀¹ ∫ |φ̂(k)|² e^{-t|k|²/d} dk/(2π)^d dt`, using separability so the inner
/// integral is `F(t)^d` with a one-dimensional `F`.
pub fn heat_integral(phi: &TestFunction) -> HeatIntegral {
    let (fine, tail) = heat_integral_fourier_at(phi, 12, 24);
    let (coarse, _) = heat_integral_fourier_at(phi, 8, 16);
    let amp2 = phi.amplitude * phi.amplitude;
    HeatIntegral {
        value: amp2 * fine,
        error: amp2 * ((fine - coarse).abs() + tail),
        closed_form: gaussian_closed_form(phi),
    }
}

fn gaussian_closed_form(phi: &TestFunction) -> Option<f64> {
    if !phi.gaussian_is_untruncated() {
        return None;
    }
    let Profile::GaussianBump { scale: s, .. } = phi.profile else {
        return None;
    };
    let d = phi.dim() as f64;
    let s2 = s * s;
    // F(t) = s²√(π/(s² + t/d)), integrated in closed form
    let pref = (s2 * PI.sqrt()).powf(d);
    let integral = if phi.dim() == 2 {
        d * ((s2 + 1.0 / d) / s2).ln()
    } else {
        let p = 1.0 - 0.5 * d;
        d * ((s2 + 1.0 / d).powf(p) - s2.powf(p)) / p
    };
    Some(phi.amplitude * phi.amplitude * pref * integral)
}

/// Position-space evaluation of the same integral: `F(t) = ∫ A(r) g_{2t/d}(r) dr`
/// with the autocorrelation `A(r) = ∫ ψ(u) ψ(u + r) du`.
pub fn heat_integral_position(phi: &TestFunction) -> f64 {
    let d = phi.dim() as i32;
    let r_sup = phi.support_radius();
    let (gx, gw) = gauss_legendre(24);
    let autocorr = |r: f64| -> f64 {
        let lo = -r_sup;
        let hi = r_sup - r;
        if hi <= lo {
            return 0.0;
        }
        let mut s = 0.0;
        let panels = 6;
        let h = (hi - lo) / panels as f64;
        for p in 0..panels {
            let a = lo + p as f64 * h;
            for (x, w) in gx.iter().zip(&gw) {
                let u = a + 0.5 * h * (x + 1.0);
                s += 0.5 * h * w * phi.psi(u) * phi.psi(u + r);
            }
        }
        s
    };
    let (u, wu) = t_rule(16);
    let mut acc = CompensatedSum::new();
    for (ui, wi) in u.iter().zip(&wu) {
        let v = 2.0 * ui * ui / d as f64;
        let sd = v.sqrt();
        let mut edges = vec![0.0];
        let mut e = 0.25 * sd;
        while e < 2.0 * r_sup {
            edges.push(e);
            e *= 2.0;
        }
        edges.push(r_sup);
        edges.push(2.0 * r_sup);
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.dedup();
        let (r, wr) = composite_rule(&edges, 16);
        let f: f64 = 2.0
            * r.iter()
                .zip(&wr)
                .map(|(r, w)| w * autocorr(*r) * (-r * r / (2.0 * v)).exp() / (2.0 * PI * v).sqrt())
                .sum::<f64>();
        acc.add(wi * 2.0 * ui * f.powi(d));
    }
    phi.amplitude * phi.amplitude * acc.value()
}

/// `C_β = σ²(β) (1 - π_d)/(1 - π_d e^{λ₂(β)})`.
pub fn c_beta(d: usize, law: DisorderLaw, beta: f64) -> Result<f64> {
    check_params(d, beta)?;
    let pi = shared_return_series(d)?.pi_d;
    let l2 = law.lambda2(beta);
    if pi * l2.exp() >= 1.0 {
        let beta_l2 = crate::disorder::beta_l2_with_pi(law, pi).beta;
        return Err(Error::Supercritical { beta, beta_l2 });
    }
    Ok(law.sigma2(beta) * (1.0 - pi) / (1.0 - pi * l2.exp()))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LimitVariance {
    pub value: f64,
    pub c_beta: f64,
    pub heat: HeatIntegral,
    /// `C_β ×` the closed-form heat integral, when available.
    pub closed_form: Option<f64>,
}

/// `C_β ∫₀¹ dt ∫∫ φ(x) g_{2t/d}(x - y) φ(y) dx dy`.
pub fn limit_variance(d: usize, law: DisorderLaw, beta: f64, phi: &TestFunction) -> Result<LimitVariance> {
    check_phi(d, phi)?;
    let c = c_beta(d, law, beta)?;
    let heat = heat_integral(phi);
    Ok(LimitVariance {
        value: c * heat.value,
        c_beta: c,
        heat,
        closed_form: heat.closed_form.map(|v| c * v),
    })
}

/// Exact and limiting variances with the degree decomposition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarianceReport {
    pub n: usize,
    pub exact: f64,
    /// `var_k`, `k = 1..=M`.
    pub per_degree: Vec<f64>,
    /// `Σ_{k>M} var_k`.
    pub tail: f64,
    pub limit: Option<LimitVariance>,
    pub m: usize,
}

pub fn variance_report(
    d: usize,
    law: DisorderLaw,
    beta: f64,
    n: usize,
    phi: &TestFunction,
    m: usize,
) -> Result<VarianceReport> {
    check_params(d, beta)?;
    check_phi(d, phi)?;
    let s = smoothed_norms(&phi.sample(n), n)?;
    let all = degree_variances_from_norms(d, law, beta, n, &s, n)?;
    let m = m.min(n);
    let mut tail = CompensatedSum::new();
    for v in &all[m..] {
        tail.add(*v);
    }
    let e = overlap_mgf(d, law, beta, n)?;
    let sigma2 = law.sigma2(beta);
    let mut acc = CompensatedSum::new();
    for k in 1..=n {
        acc.add(sigma2 * s[k] * e.values[n - k]);
    }
    let limit = match limit_variance(d, law, beta, phi) {
        Ok(l) => Some(l),
        Err(Error::Supercritical { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(VarianceReport {
        n,
        exact: diffusive_scale(d, n) * acc.value(),
        per_degree: all[..m].to_vec(),
        tail: tail.value(),
        limit,
        m,
    })
}

/// `Z^{(1)}(φ) = σ Σ_{n ≤ N, z} (φ_N * q_n)(z) η_{n,z}` for an environment
/// given as `omega(n, z)`.
pub fn chaos_term_1_with<F>(
    d: usize,
    n: usize,
    law: DisorderLaw,
    beta: f64,
    phi: &TestFunction,
    omega: F,
) -> Result<f64>
where
    F: Fn(u64, &[i64]) -> f64,
{
    let mut coord = vec![0i64; d];
    chaos_term_1_rows(d, n, law, beta, phi, |step, rest, lo, out| {
        coord[1..].copy_from_slice(&rest[1..]);
        for (i, w) in out.iter_mut().enumerate() {
            coord[0] = lo + i as i64;
            *w = omega(step, &coord);
        }
    })
}

/// `Z^{(1)}(φ)` for a sampled disorder field.
pub fn chaos_term_1(d: usize, n: usize, beta: f64, phi: &TestFunction, disorder: &DisorderField) -> Result<f64> {
    let packing = disorder.packing();
    let mut end = vec![0i64; d];
    chaos_term_1_rows(d, n, disorder.law(), beta, phi, |step, rest, lo, out| {
        end[1..].copy_from_slice(&rest[1..]);
        for x0 in [lo, lo + out.len() as i64 - 1] {
            end[0] = x0;
            packing.check(step, &end).expect("site inside packing range");
        }
        disorder.fill_row(step, rest, lo, out);
    })
}

fn chaos_term_1_rows<F>(d: usize, n: usize, law: DisorderLaw, beta: f64, phi: &TestFunction, mut fill: F) -> Result<f64>
where
    F: FnMut(u64, &[i64], i64, &mut [f64]),
{
    check_phi(d, phi)?;
    if beta == 0.0 {
        return Ok(0.0);
    }
    let sigma = law.sigma2(beta).sqrt();
    let lam = law.cgf(beta);
    let mut acc = CompensatedSum::new();
    let mut coord = vec![0i64; d];
    let mut omega = Vec::new();
    smoothing_sweep(&phi.sample(n), n, |step, grid, h, region| {
        if step == 0 {
            return;
        }
        region.for_each_row(|rest, lo, hi| {
            omega.resize((hi - lo + 1) as usize, 0.0);
            fill(step as u64, rest, lo, &mut omega);
            coord[1..].copy_from_slice(&rest[1..]);
            coord[0] = lo;
            let start = grid.index_unchecked(&coord);
            let row = &h[start..start + omega.len()];
            let mut sum = 0.0;
            for (v, w) in row.iter().zip(&omega) {
                if *v != 0.0 {
                    sum += v * (beta * w - lam).exp_m1();
                }
            }
            acc.add(sum / sigma);
        });
    })?;
    Ok(sigma * acc.value())
}

/// `σ² Σ_{n=1}^{N} S_n`, the variance of `Z^{(1)}(φ)`.
pub fn chaos_term_1_variance(d: usize, n: usize, law: DisorderLaw, beta: f64, phi: &TestFunction) -> Result<f64> {
    check_phi(d, phi)?;
    let s = smoothed_norms(&phi.sample(n), n)?;
    Ok(law.sigma2(beta) * s[1..].iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::{kernel_table, Truncation};

    const G: DisorderLaw = DisorderLaw::Gaussian;

    #[test]
    fn overlap_examples() {
        let e = overlap_mgf(3, G, 0.3, 40).unwrap();
        assert_eq!(e.get(0), 1.0);
        assert!((e.get(1) - (1.0 + G.sigma2(0.3) / 6.0)).abs() < 1e-15);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let lim = e.limit.unwrap();
        assert!(e.values.iter().all(|&v| v <= lim));
        assert!(lim - e.get(40) <= e.tail_bound.unwrap());
        let hot = overlap_mgf(3, G, 1.2, 10).unwrap();
        assert!(hot.limit.is_none() && hot.warning.is_some());
    }

    #[test]
    fn degree_resolved_examples() {
        let b = 0.3;
        let dm = degree_resolved_mgf(3, G, b, 10, 10).unwrap();
        let e = overlap_mgf(3, G, b, 10).unwrap();
        for m in 0..=10 {
            assert_eq!(dm.get(m, 0), 1.0);
            let s: f64 = (0..=10).map(|k| dm.get(m, k)).sum();
            assert!((s - e.get(m)).abs() < 1e-12);
        }
        let q = crate::walk::return_probs(3, 10);
        let r10: f64 = q.iter().sum();
        assert!((dm.get(10, 1) - G.sigma2(b) * r10).abs() < 1e-15);
    }

    #[test]
    fn smoothed_norms_match_kernel_table() {
        let phi = TestFunction::hat(3, 0.6).unwrap().centered_at(vec![0.1, 0.0, -0.2]);
        let n = 9;
        let sampled = phi.sample(n);
        let s = smoothed_norms(&sampled, n).unwrap();
        let support: Vec<_> = sampled.support().collect();
        let table = kernel_table(3, 2 * n, 2 * sampled.grid.radius(), Truncation::Allow).unwrap();
        for k in 1..=n {
            let mut direct = 0.0;
            for (x, wx) in &support {
                for (y, wy) in &support {
                    let diff: Vec<i64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                    direct += wx * wy * table.get(2 * k, &diff);
                }
            }
            assert!((s[k] - direct).abs() < 1e-12 * direct.abs().max(1e-300), "n = {k}");
        }
    }

    #[test]
    fn exact_variance_trivial_cases() {
        let phi = TestFunction::hat(3, 0.5).unwrap();
        assert_eq!(exact_variance(3, G, 0.0, 8, &phi).unwrap(), 0.0);
        // N = 1: σ² Σ φ_1(x) φ_1(y) q_2(x - y)
        let b = 0.4;
        let sampled = phi.sample(1);
        let table = kernel_table(3, 2, 4, Truncation::Forbid).unwrap();
        let mut direct = 0.0;
        for (x, wx) in sampled.support() {
            for (y, wy) in sampled.support() {
                let diff: Vec<i64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
                direct += wx * wy * table.get(2, &diff);
            }
        }
        let v = exact_variance(3, G, b, 1, &phi).unwrap();
        assert!((v - G.sigma2(b) * direct).abs() < 1e-15);
    }

    #[test]
    fn exact_variance_translation_invariant() {
        let n = 16;
        let phi = TestFunction::gaussian_bump_cut(3, 0.3, 0.9).unwrap();
        let shifted = phi.clone().centered_at(vec![0.5, -0.25, 1.0]);
        let a = exact_variance(3, G, 0.4, n, &phi).unwrap();
        let b = exact_variance(3, G, 0.4, n, &shifted).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn degree_decomposition_reconstructs_total() {
        let phi = TestFunction::gaussian_bump_cut(3, 0.3, 0.9).unwrap();
        let n = 16;
        let rep = variance_report(3, G, 0.4, n, &phi, 5).unwrap();
        let s: f64 = rep.per_degree.iter().sum::<f64>() + rep.tail;
        assert!((s - rep.exact).abs() < 1e-10 * rep.exact);
        assert!(rep.per_degree.iter().all(|&v| v >= 0.0));
        assert_eq!(truncation_gap(3, G, 0.4, n, &phi, n).unwrap(), 0.0);
        let full = truncation_gap(3, G, 0.4, n, &phi, 0).unwrap();
        assert!((full - rep.exact).abs() < 1e-10 * rep.exact);
    }

    #[test]
    fn gaussian_heat_integral_matches_closed_form() {
        let phi = TestFunction::gaussian_bump(3, 1.0).unwrap();
        let h = heat_integral(&phi);
        let c = h.closed_form.unwrap();
        assert!((h.value - c).abs() < 1e-8 * c, "{} vs {c}", h.value);
        assert!(h.error < 1e-8 * c);
        let p = heat_integral_position(&phi);
        assert!((p - c).abs() < 1e-6 * c, "{p} vs {c}");
    }

    #[test]
    fn heat_integral_routes_agree() {
        for phi in [
            TestFunction::gaussian_bump_cut(3, 0.4, 1.2).unwrap(),
            TestFunction::hat(3, 0.5).unwrap(),
            TestFunction::indicator_box(3, 0.4, true).unwrap(),
        ] {
            let f = heat_integral(&phi);
            let p = heat_integral_position(&phi);
            assert!(
                (f.value - p).abs() < 1e-5 * f.value + f.error,
                "{phi:?}: {} vs {p}",
                f.value
            );
        }
    }

    #[test]
    fn limit_variance_examples() {
        let phi = TestFunction::gaussian_bump(3, 1.0).unwrap();
        assert_eq!(limit_variance(3, G, 0.3, &phi.clone().scaled(0.0)).unwrap().value, 0.0);
        let a = limit_variance(3, G, 1e-3, &phi).unwrap();
        let b = limit_variance(3, G, 2e-3, &phi).unwrap();
        let ratio = b.value / a.value;
        assert!((ratio - G.sigma2(2e-3) / G.sigma2(1e-3)).abs() < 1e-3);
        assert!(matches!(
            limit_variance(3, G, 2.0, &phi),
            Err(Error::Supercritical { .. })
        ));
    }

    #[test]
    fn riemann_sum_examples() {
        let n = 64;
        let phi = TestFunction::gaussian_bump_cut(3, 0.3, 0.9).unwrap();
        let theta_n = (0.1 * n as f64) as usize;
        let prefix = kernel_riemann_sum(3, n, &phi, 1..=theta_n).unwrap();
        assert!(prefix <= phi.sup_norm() * phi.l1_norm() * 0.1);
        // one-point support: φ(x/√N) ≠ 0 only at x = 0
        let point = TestFunction::hat(3, 0.1).unwrap();
        let val = kernel_riemann_sum(3, n, &point, 1..=n).unwrap();
        let q = crate::walk::return_probs(3, n);
        let w = point.eval(&[0.0; 3]) / (n as f64).powf(1.5);
        let want = diffusive_scale(3, n) * w * w * q.iter().sum::<f64>();
        assert!((val - want).abs() < 1e-12 * want);
    }

    #[test]
    fn chaos_term_1_degenerate_field() {
        let phi = TestFunction::hat(3, 0.5).unwrap();
        let n = 8;
        let law = DisorderLaw::Rademacher;
        let b = 0.3;
        let v = chaos_term_1_with(3, n, law, b, &phi, |_, _| 1.0).unwrap();
        let eta = law.eta(b, 1.0).unwrap();
        let mass: f64 = phi.sample(n).weights.iter().sum();
        let want = law.sigma2(b).sqrt() * eta * n as f64 * mass;
        assert!((v - want).abs() < 1e-12 * want.abs());
        assert_eq!(
            chaos_term_1_with(3, n, law, b, &phi.clone().scaled(0.0), |_, _| 1.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn chaos_term_1_rows_match_site_lookup() {
        let phi = TestFunction::gaussian_bump_cut(3, 0.5, 1.0).unwrap();
        for law in [G, DisorderLaw::Rademacher] {
            let dis = DisorderField::new(law, 3, 1, 3).unwrap();
            let a = chaos_term_1(3, 12, 0.4, &phi, &dis).unwrap();
            let b = chaos_term_1_with(3, 12, law, 0.4, &phi, |t, z| dis.value(t, z).unwrap()).unwrap();
            assert!((a - b).abs() <= 1e-13 * b.abs());
        }
    }
}
