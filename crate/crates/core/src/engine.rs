//! Backward transfer-matrix sweep for partition-function fields
//! `Z^Λ_{N,β}(x)` over a query box.
//!
//! With `V_N ≡ 1` and `U_m = w_m V_m`, the sweep computes
//! `V_{m-1}(x) = (1/2d) Σ_e U_m(x + e)` where `w_m(z) = e^{βω_{m,z} - λ(β)}` on
//! `Λ` and `1` elsewhere; `Z^Λ = V_0` on the query box. Only the light cone of
//! the query box (L1 excess `≤ m` at time `m`) inside the padded box is
//! updated; sites beyond the pad are frozen at `1`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderField, DisorderLaw};
use crate::error::{Error, Result};
use crate::fastmath;
use crate::lattice::{average_neighbors, CubeGrid, L1Constraint, RowRegion};

/// `2d · exp(-padding² / (2N))`: Hoeffding bound, per coordinate and sign,
/// on a walk leaving the pad within `N` steps.
pub fn truncation_bound(n: usize, padding: i64, d: usize) -> f64 {
    2.0 * d as f64 * (-(padding as f64).powi(2) / (2.0 * n as f64)).exp()
}

/// `ceil(5 √N)`.
pub fn default_padding(n: usize) -> i64 {
    (5.0 * (n as f64).sqrt()).ceil() as i64
}

/// `⌊N^p⌋`, robust to rounding at exact powers.
pub fn floor_pow(n: usize, p: f64) -> usize {
    ((n as f64).powf(p) * (1.0 + 1e-12)).floor() as usize
}

/// Space-time window parameters `(ε, α)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowParams {
    pub eps: f64,
    pub alpha: f64,
}

impl WindowParams {
    /// Validates `ε ∈ (7/8, 1)` and `α ∈ (0, ε/2)`.
    pub fn validated(eps: f64, alpha: f64) -> Result<Self> {
        if !(eps > 7.0 / 8.0 && eps < 1.0) {
            return Err(Error::Config(format!(
                "ε must exceed 7/8 and stay below 1 (window exponent), got {eps}"
            )));
        }
        if !(alpha > 0.0 && alpha < eps / 2.0) {
            return Err(Error::Config(format!("α must lie in (0, ε/2), got {alpha}")));
        }
        Ok(Self { eps, alpha })
    }

    /// `⌊N^ε⌋`.
    pub fn time_cut(&self, n: usize) -> usize {
        floor_pow(n, self.eps)
    }

    /// `N^{ε/2 + α}` (strict Euclidean radius).
    pub fn radius(&self, n: usize) -> f64 {
        (n as f64).powf(0.5 * self.eps + self.alpha)
    }
}

/// Disorder mask `Λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSpec {
    Full,
    Empty,
    /// `(⌊N^ρ⌋, N] × Z^d`.
    Tail {
        rho: f64,
    },
    /// `(cut, N] × Z^d`.
    TailCut {
        cut: usize,
    },
    /// `{(n, z) : 1 ≤ n ≤ cut, |z - center| < radius}`.
    Window {
        center: Vec<i64>,
        cut: usize,
        radius: f64,
    },
    /// Explicit finite set of space-time sites.
    Explicit(Vec<(usize, Vec<i64>)>),
}

impl MaskSpec {
    /// The window `A_N^x`.
    pub fn window(x: &[i64], n: usize, params: WindowParams) -> Self {
        MaskSpec::Window {
            center: x.to_vec(),
            cut: params.time_cut(n).min(n),
            radius: params.radius(n),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            MaskSpec::Full => "full",
            MaskSpec::Empty => "empty",
            MaskSpec::Tail { .. } | MaskSpec::TailCut { .. } => "tail",
            MaskSpec::Window { .. } => "window",
            MaskSpec::Explicit(_) => "explicit",
        }
    }
}

// Mask resolved against a horizon, ready for the sweep.
#[derive(Clone, Debug)]
enum Mask {
    Empty,
    Times { first: usize },
    Ball { center: Vec<i64>, cut: usize, radius: f64 },
    Sites(HashSet<(usize, Vec<i64>)>),
}

impl Mask {
    fn resolve(spec: &MaskSpec, n: usize) -> Result<Self> {
        Ok(match spec {
            MaskSpec::Full => Mask::Times { first: 1 },
            MaskSpec::Empty => Mask::Empty,
            MaskSpec::Tail { rho } => {
                if !(*rho >= 0.0) {
                    return Err(Error::Config(format!("ρ must be nonnegative, got {rho}")));
                }
                let cut = floor_pow(n, *rho);
                if cut >= n {
                    return Err(Error::Config(format!("tail mask empty: ⌊N^ρ⌋ = {cut} ≥ N = {n}")));
                }
                Mask::Times { first: cut + 1 }
            }
            MaskSpec::TailCut { cut } => {
                if *cut >= n {
                    return Err(Error::Config(format!("tail cut {cut} must be below N = {n}")));
                }
                Mask::Times { first: cut + 1 }
            }
            MaskSpec::Window { center, cut, radius } => {
                if *cut == 0 || *radius <= 0.0 {
                    Mask::Empty
                } else {
                    Mask::Ball {
                        center: center.clone(),
                        cut: (*cut).min(n),
                        radius: *radius,
                    }
                }
            }
            MaskSpec::Explicit(sites) => {
                let set: HashSet<_> = sites.iter().filter(|(t, _)| *t >= 1 && *t <= n).cloned().collect();
                if set.is_empty() {
                    Mask::Empty
                } else {
                    Mask::Sites(set)
                }
            }
        })
    }

    /// Last time carrying disorder.
    fn last_time(&self, n: usize) -> usize {
        match self {
            Mask::Empty => 0,
            Mask::Times { first } => {
                if *first <= n {
                    n
                } else {
                    0
                }
            }
            Mask::Ball { cut, .. } => *cut,
            Mask::Sites(s) => s.iter().map(|(t, _)| *t).max().unwrap_or(0),
        }
    }

    fn active_at(&self, m: usize) -> bool {
        match self {
            Mask::Empty => false,
            Mask::Times { first } => m >= *first,
            Mask::Ball { cut, .. } => m <= *cut,
            Mask::Sites(s) => s.iter().any(|(t, _)| *t == m),
        }
    }
}

/// Sweep geometry and numerical policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub dim: usize,
    pub n: usize,
    pub law: DisorderLaw,
    /// Starting sites.
    pub query: CubeGrid,
    pub padding: i64,
    /// Largest acceptable truncation bound.
    pub leak_threshold: f64,
}

impl EngineConfig {
    pub fn new(dim: usize, n: usize, law: DisorderLaw, query: CubeGrid) -> Self {
        Self {
            dim,
            n,
            law,
            query,
            padding: default_padding(n),
            leak_threshold: 1e-3,
        }
    }

    /// Padding `N`: the sweep is exact.
    pub fn exact(mut self) -> Self {
        self.padding = self.padding.max(self.n as i64);
        self
    }

    pub fn is_exact(&self) -> bool {
        self.padding >= self.n as i64
    }

    /// Zero when exact, else the Hoeffding bound.
    pub fn leak_bound(&self) -> f64 {
        if self.is_exact() {
            0.0
        } else {
            truncation_bound(self.n, self.padding, self.dim)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("horizon N must be at least 1"));
        }
        if self.dim != self.query.dim() {
            return Err(Error::invalid("query box dimension mismatch"));
        }
        if self.padding < 1 {
            return Err(Error::invalid("padding must be positive"));
        }
        let bound = self.leak_bound();
        if bound > self.leak_threshold {
            return Err(Error::Leak {
                bound,
                threshold: self.leak_threshold,
            });
        }
        Ok(())
    }
}

/// One `(β, Λ)` pair of a multi-channel sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub beta: f64,
    pub mask: MaskSpec,
}

impl Channel {
    pub fn new(beta: f64, mask: MaskSpec) -> Self {
        Self { beta, mask }
    }
}

/// `x ↦ Z^Λ_{N,β}(x)` on the query box.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionField {
    pub query: CubeGrid,
    pub values: Vec<f64>,
    pub beta: f64,
    pub mask: MaskSpec,
    /// Bound on the probability mass of walks leaving the padded box.
    pub leak_bound: f64,
    pub exact: bool,
}

impl PartitionField {
    pub fn get(&self, x: &[i64]) -> Option<f64> {
        self.query.index(x).map(|i| self.values[i])
    }
}

/// `Z_{N,β}` over the query box with mask `Λ`.
pub fn partition_field(
    config: &EngineConfig,
    beta: f64,
    mask: &MaskSpec,
    disorder: &DisorderField,
) -> Result<PartitionField> {
    let mut out = partition_fields(config, &[Channel::new(beta, mask.clone())], disorder)?;
    Ok(out.pop().unwrap())
}

/// `Z^A_{N,β}(x)` with `Λ = A_N^x`.
pub fn window_partition(
    x: &[i64],
    config: &EngineConfig,
    beta: f64,
    params: WindowParams,
    disorder: &DisorderField,
) -> Result<f64> {
    if params.time_cut(config.n) < 2 {
        return Err(Error::Config(format!(
            "degenerate window: ⌊N^ε⌋ = {} < 2",
            params.time_cut(config.n)
        )));
    }
    let mut cfg = config.clone();
    cfg.query = CubeGrid::new(x.to_vec(), 0)?;
    let f = partition_field(&cfg, beta, &MaskSpec::window(x, config.n, params), disorder)?;
    Ok(f.values[0])
}

/// `Z^{B≥}_{N,β}` over the query box.
pub fn tail_partition(config: &EngineConfig, beta: f64, rho: f64, disorder: &DisorderField) -> Result<PartitionField> {
    partition_field(config, beta, &MaskSpec::Tail { rho }, disorder)
}

struct ChannelState {
    beta: f64,
    lambda: f64,
    mask: Mask,
    weight_slot: usize,
    cur: Vec<f64>,
    next: Vec<f64>,
}

/// Several `(β, Λ)` fields from one sweep sharing the disorder draws.
pub fn partition_fields(
    config: &EngineConfig,
    channels: &[Channel],
    disorder: &DisorderField,
) -> Result<Vec<PartitionField>> {
    config.validate()?;
    if disorder.law() != config.law {
        return Err(Error::invalid("disorder law differs from engine config"));
    }
    if config.dim != disorder.packing().dim() {
        return Err(Error::invalid("disorder dimension differs from engine config"));
    }
    let d = config.dim;
    let n = config.n;
    let query = &config.query;
    let cap_radius = query.radius() + config.padding;
    let far: Vec<i64> = query.center().iter().map(|c| c.abs() + cap_radius).collect();
    disorder.packing().check(n as u64, &far)?;

    let mut betas: Vec<f64> = Vec::new();
    let mut states = Vec::with_capacity(channels.len());
    for ch in channels {
        if !(ch.beta >= 0.0) {
            return Err(Error::invalid(format!("β must be nonnegative, got {}", ch.beta)));
        }
        let mut mask = Mask::resolve(&ch.mask, n)?;
        if ch.beta == 0.0 {
            mask = Mask::Empty;
        }
        let slot = match betas.iter().position(|&b| b == ch.beta) {
            Some(i) => i,
            None => {
                betas.push(ch.beta);
                betas.len() - 1
            }
        };
        states.push(ChannelState {
            beta: ch.beta,
            lambda: config.law.cgf(ch.beta),
            mask,
            weight_slot: slot,
            cur: Vec::new(),
            next: Vec::new(),
        });
    }
    let t_start = states.iter().map(|s| s.mask.last_time(n)).max().unwrap_or(0);

    // a lone window channel only needs sites that can still reach it
    let lone_ball = match states.as_slice() {
        [ChannelState {
            mask: Mask::Ball { center, radius, .. },
            ..
        }] => Some((center.clone(), *radius)),
        _ => None,
    };
    let reach = lone_ball.as_ref().map(|(center, radius)| L1Constraint {
        center: center.clone(),
        half: radius.ceil() as i64,
        budget: 0,
    });
    // sup-norm extent of the swept region around the query center
    let extent = match &reach {
        Some(r) => {
            let off = r
                .center
                .iter()
                .zip(query.center())
                .map(|(a, b)| (a - b).abs())
                .max()
                .unwrap_or(0);
            (0..=t_start as i64)
                .map(|m| (query.radius() + m).min(off + r.half + t_start as i64 - m))
                .max()
                .unwrap_or(0)
                .max(query.radius())
        }
        None => cap_radius,
    };
    let cap = CubeGrid::new(query.center().to_vec(), cap_radius.min(extent))?;
    let storage = CubeGrid::new(query.center().to_vec(), cap.radius() + 1)?;

    let mut results: Vec<Vec<f64>> = vec![vec![1.0; query.len()]; channels.len()];
    if t_start > 0 {
        for s in states.iter_mut() {
            if !matches!(s.mask, Mask::Empty) {
                s.cur = vec![1.0; storage.len()];
                s.next = vec![1.0; storage.len()];
            }
        }
        let region_at = |m: usize| -> RowRegion {
            let mut l1 = vec![L1Constraint {
                center: query.center().to_vec(),
                half: query.radius(),
                budget: m as i64,
            }];
            if let Some(r) = &reach {
                let mut r = r.clone();
                r.budget = t_start as i64 - m as i64;
                l1.push(r);
            }
            RowRegion {
                cap: cap.clone(),
                l1,
                ball: None,
            }
        };

        let side = storage.side();
        let mut omega = vec![0.0; side];
        let mut weights: Vec<Vec<f64>> = vec![vec![0.0; side]; betas.len()];
        let mut need = vec![false; betas.len()];
        let strides = storage.strides().to_vec();
        let s_center = storage.center().to_vec();
        let s_radius = storage.radius();

        for m in (1..=t_start).rev() {
            let region = region_at(m);
            let active: Vec<bool> = states
                .iter()
                .map(|s| !s.cur.is_empty() && s.mask.active_at(m))
                .collect();
            if active.iter().any(|&a| a) {
                region.for_each_row(|rest, lo, hi| {
                    let (lo, hi) = match &lone_ball {
                        Some((c, r)) => {
                            let r2: f64 = (1..d).map(|i| ((rest[i] - c[i]) as f64).powi(2)).sum();
                            let left = r * r - r2;
                            if left <= 0.0 {
                                return;
                            }
                            let half = left.sqrt().ceil() as i64;
                            (lo.max(c[0] - half), hi.min(c[0] + half))
                        }
                        None => (lo, hi),
                    };
                    if lo > hi {
                        return;
                    }
                    let len = (hi - lo + 1) as usize;
                    disorder.fill_row(m as u64, rest, lo, &mut omega[..len]);
                    need.iter_mut().for_each(|v| *v = false);
                    for (s, &a) in states.iter().zip(&active) {
                        if a && !matches!(s.mask, Mask::Sites(_)) {
                            need[s.weight_slot] = true;
                        }
                    }
                    for (slot, w) in weights.iter_mut().enumerate() {
                        if need[slot] {
                            let b = betas[slot];
                            let lam = config.law.cgf(b);
                            fastmath::exp_affine(&mut w[..len], &omega[..len], b, -lam);
                        }
                    }
                    let mut base = 0usize;
                    for i in 1..d {
                        base += (rest[i] - s_center[i] + s_radius) as usize * strides[i];
                    }
                    base += (lo - s_center[0] + s_radius) as usize;
                    for (s, &a) in states.iter_mut().zip(&active) {
                        if !a {
                            continue;
                        }
                        let v = &mut s.cur[base..base + len];
                        match &s.mask {
                            Mask::Times { .. } => {
                                for (vi, wi) in v.iter_mut().zip(&weights[s.weight_slot][..len]) {
                                    *vi *= wi;
                                }
                            }
                            Mask::Ball { center, radius, .. } => {
                                let mut r2 = 0.0;
                                for i in 1..d {
                                    r2 += ((rest[i] - center[i]) as f64).powi(2);
                                }
                                let w = &weights[s.weight_slot];
                                for (i, vi) in v.iter_mut().enumerate() {
                                    let dx = (lo + i as i64 - center[0]) as f64;
                                    if r2 + dx * dx < radius * radius {
                                        *vi *= w[i];
                                    }
                                }
                            }
                            Mask::Sites(set) => {
                                let mut key = (m, rest.to_vec());
                                for (i, vi) in v.iter_mut().enumerate() {
                                    key.1[0] = lo + i as i64;
                                    if set.contains(&key) {
                                        *vi *= fastmath::exp(s.beta * omega[i] - s.lambda);
                                    }
                                }
                            }
                            Mask::Empty => {}
                        }
                    }
                });
            }
            let prev = region_at(m - 1);
            for s in states.iter_mut() {
                if s.cur.is_empty() {
                    continue;
                }
                average_neighbors(&storage, &s.cur, &mut s.next, &prev);
                std::mem::swap(&mut s.cur, &mut s.next);
            }
        }
        for (s, out) in states.iter().zip(results.iter_mut()) {
            if s.cur.is_empty() {
                continue;
            }
            for (i, x) in query.sites().enumerate() {
                out[i] = s.cur[storage.index_unchecked(&x)];
            }
        }
    }
    let exact = config.is_exact();
    let leak = config.leak_bound();
    let mut fields = Vec::with_capacity(channels.len());
    for (ch, values) in channels.iter().zip(results) {
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!(
                "partition function left the floating-point range ({bad}); a log-space sweep is required"
            )));
        }
        fields.push(PartitionField {
            query: query.clone(),
            values,
            beta: ch.beta,
            mask: ch.mask.clone(),
            leak_bound: leak,
            exact,
        });
    }
    Ok(fields)
}
