//! Window decomposition of `log Z` at desk scale: `Z = Z^A + Ẑ^A`, the
//! remainder `O_N = log(1 + r) - r` with `r = Ẑ^A/Z^A`, the factorization
//! residual against the tail field `Z^{B≥}`, left tails and inverse moments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderField, DisorderLaw};
use crate::engine::{floor_pow, partition_fields, window_partition, Channel, EngineConfig, MaskSpec, WindowParams};
use crate::error::{Error, Result};
use crate::estimator::field_scale;
use crate::lattice::CubeGrid;
use crate::quadrature::CompensatedSum;
use crate::stats::mean_se;
use crate::testfn::{SampledTest, TestFunction};

/// Window parameters checked against a horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub params: WindowParams,
    pub cut: usize,
    pub radius: f64,
}

impl WindowSpec {
    pub fn new(params: WindowParams, n: usize) -> Result<Self> {
        let cut = params.time_cut(n);
        let radius = params.radius(n);
        if cut < 2 {
            return Err(Error::Config(format!(
                "window time cut ⌊N^ε⌋ = {cut} must be at least 2"
            )));
        }
        if radius < 1.0 {
            return Err(Error::Config(format!("window radius {radius} must be at least 1")));
        }
        Ok(Self { params, cut, radius })
    }
}

/// `(cε + (d-2)/4)/(c + (d-2)/4)`, the lower end for `ρ` given the knob `c`.
pub fn rho_lower_bound(eps: f64, c: f64, d: usize) -> f64 {
    let a = 0.25 * (d as f64 - 2.0);
    (c * eps + a) / (c + a)
}

/// Checks `ρ ∈ (ε, 1)` and `ρ` above [`rho_lower_bound`].
pub fn check_rho(rho: f64, eps: f64, c: f64, d: usize) -> Result<()> {
    if !(rho > eps && rho < 1.0) {
        return Err(Error::Config(format!("ρ must lie in (ε, 1) = ({eps}, 1), got {rho}")));
    }
    let lo = rho_lower_bound(eps, c, d);
    if rho <= lo {
        return Err(Error::Config(format!(
            "ρ = {rho} must exceed (cε + (d-2)/4)/(c + (d-2)/4) = {lo} for c = {c}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagConfig {
    pub dim: usize,
    pub n: usize,
    pub law: DisorderLaw,
    pub beta: f64,
    pub window: WindowParams,
    pub rho: f64,
    /// Constant in the lower bound for `ρ`.
    pub rho_c: f64,
    pub padding: Option<i64>,
}

impl DiagConfig {
    pub fn validate(&self) -> Result<WindowSpec> {
        check_rho(self.rho, self.window.eps, self.rho_c, self.dim)?;
        WindowSpec::new(self.window, self.n)
    }

    fn engine(&self, query: CubeGrid) -> EngineConfig {
        let mut cfg = EngineConfig::new(self.dim, self.n, self.law, query);
        if let Some(p) = self.padding {
            cfg.padding = p;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRecord {
    pub x: Vec<i64>,
    pub z: f64,
    pub z_window: f64,
    /// `Ẑ^A = Z - Z^A`.
    pub z_hat: f64,
    /// `r = Ẑ^A / Z^A`.
    pub ratio: f64,
    /// `O_N = log(1 + r) - r`.
    pub remainder: f64,
    pub z_tail: f64,
}

impl DecompositionRecord {
    pub fn from_values(x: Vec<i64>, z: f64, z_window: f64, z_tail: f64) -> Self {
        let z_hat = z - z_window;
        let ratio = z_hat / z_window;
        Self {
            x,
            z,
            z_window,
            z_hat,
            ratio,
            remainder: ratio.ln_1p() - ratio,
            z_tail,
        }
    }

    /// `log Z - log Z^A - log(1 + r)`.
    pub fn identity_defect(&self) -> f64 {
        self.z.ln() - self.z_window.ln() - self.ratio.ln_1p()
    }
}

fn tail_mask(cfg: &DiagConfig) -> MaskSpec {
    MaskSpec::Tail { rho: cfg.rho }
}

/// The decomposition of `Z_{N,β}(x)` for one disorder realization.
pub fn decomposition(x: &[i64], cfg: &DiagConfig, disorder: &DisorderField) -> Result<DecompositionRecord> {
    cfg.validate()?;
    let engine = cfg.engine(CubeGrid::new(x.to_vec(), 0)?);
    let fields = partition_fields(
        &engine,
        &[
            Channel::new(cfg.beta, MaskSpec::Full),
            Channel::new(cfg.beta, tail_mask(cfg)),
        ],
        disorder,
    )?;
    let z_window = window_partition(x, &engine, cfg.beta, cfg.window, disorder)?;
    Ok(DecompositionRecord::from_values(
        x.to_vec(),
        fields[0].values[0],
        z_window,
        fields[1].values[0],
    ))
}

/// Decompositions at every site of the sampled support.
pub fn decompose_support(
    cfg: &DiagConfig,
    phi: &SampledTest,
    disorder: &DisorderField,
) -> Result<Vec<(DecompositionRecord, f64)>> {
    cfg.validate()?;
    let engine = cfg.engine(phi.grid.clone());
    let fields = partition_fields(
        &engine,
        &[
            Channel::new(cfg.beta, MaskSpec::Full),
            Channel::new(cfg.beta, tail_mask(cfg)),
        ],
        disorder,
    )?;
    let mut out = Vec::new();
    for (x, w) in phi.support() {
        let z_window = window_partition(&x, &engine, cfg.beta, cfg.window, disorder)?;
        let z = fields[0].get(&x).unwrap();
        let z_tail = fields[1].get(&x).unwrap();
        out.push((DecompositionRecord::from_values(x, z, z_window, z_tail), w));
    }
    Ok(out)
}

/// Per-replica diagnostic statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagReplica {
    pub replica: u64,
    /// `N^{(d-2)/4} Σ φ_N O_N`, uncentered.
    pub remainder_pairing: f64,
    /// `N^{(d-2)/4} Σ φ_N (r - (Z^{B≥} - 1))`.
    pub residual: f64,
    /// `Ẑ^A` at the support center, one per entry of the ε grid.
    pub z_hat_center: Vec<f64>,
    /// Site means over the support of `Z^{-2}` and `Z²`.
    pub inv_sq_mean: f64,
    pub sq_mean: f64,
    /// `log Z` at the support center.
    pub log_z_center: f64,
    pub max_identity_defect: f64,
}

/// Mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of(x: &[f64]) -> Self {
        Self {
            value: x.iter().sum::<f64>() / x.len() as f64,
            se: mean_se(x),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagSummary {
    pub n: usize,
    pub replicas: u64,
    pub window: WindowSpec,
    pub remainder_norm: Estimate,
    pub factorization_residual: Estimate,
    pub eps_grid: Vec<f64>,
    /// `E[(Ẑ^A)²]` at the center per ε.
    pub z_hat_sq: Vec<Estimate>,
    /// Replica mean of `Ẑ^A` at the center (default ε).
    pub z_hat_mean: Estimate,
    pub inv_sq_moment: Estimate,
    pub sq_moment: Estimate,
    pub max_identity_defect: f64,
    pub records: Vec<DiagReplica>,
}

fn diag_replica(
    cfg: &DiagConfig,
    sampled: &SampledTest,
    seed: u64,
    replica: u64,
    eps_grid: &[f64],
) -> Result<DiagReplica> {
    let disorder = DisorderField::new(cfg.law, seed, replica, cfg.dim)?;
    let recs = decompose_support(cfg, sampled, &disorder)?;
    let scale = field_scale(cfg.dim, cfg.n);
    let (mut rem, mut res) = (CompensatedSum::new(), CompensatedSum::new());
    let (mut inv, mut sq) = (CompensatedSum::new(), CompensatedSum::new());
    let mut defect: f64 = 0.0;
    for (r, w) in &recs {
        rem.add(w * r.remainder);
        res.add(w * (r.ratio - (r.z_tail - 1.0)));
        inv.add(1.0 / (r.z * r.z));
        sq.add(r.z * r.z);
        defect = defect.max(r.identity_defect().abs());
    }
    let center = sampled.grid.center().to_vec();
    let z_center = recs
        .iter()
        .find(|(r, _)| r.x == center)
        .map(|(r, _)| r.z)
        .ok_or_else(|| Error::invalid("test function vanishes at the support center"))?;
    let engine = cfg.engine(CubeGrid::new(center.clone(), 0)?);
    let mut z_hat_center = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let params = WindowParams::validated(eps, cfg.window.alpha)?;
        let za = window_partition(&center, &engine, cfg.beta, params, &disorder)?;
        z_hat_center.push(z_center - za);
    }
    let m = recs.len() as f64;
    Ok(DiagReplica {
        replica,
        remainder_pairing: scale * rem.value(),
        residual: scale * res.value(),
        z_hat_center,
        inv_sq_mean: inv.value() / m,
        sq_mean: sq.value() / m,
        log_z_center: z_center.ln(),
        max_identity_defect: defect,
    })
}

/// Runs `replicas` replicas of the window decomposition over the support of
/// `φ_N`. The ε grid (which should contain `cfg.window.eps`) drives the
/// `E[(Ẑ^A)²]` trend at the support center with common disorder.
pub fn run_diagnostics(
    cfg: &DiagConfig,
    phi: &TestFunction,
    replicas: u64,
    seed: u64,
    eps_grid: &[f64],
) -> Result<DiagSummary> {
    let window = cfg.validate()?;
    if replicas < 2 {
        return Err(Error::NoSamples("diagnostics need at least two replicas".into()));
    }
    let sampled = phi.sample(cfg.n);
    if sampled.support().next().is_none() {
        return Err(Error::invalid("test function has empty lattice support"));
    }
    let records: Vec<DiagReplica> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            diag_replica(cfg, &sampled, seed, r, eps_grid).map_err(|e| Error::Replica {
                replica: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let pairings: Vec<f64> = records.iter().map(|r| r.remainder_pairing).collect();
    let mean_p = pairings.iter().sum::<f64>() / pairings.len() as f64;
    let abs_dev: Vec<f64> = pairings.iter().map(|p| (p - mean_p).abs()).collect();
    let abs_res: Vec<f64> = records.iter().map(|r| r.residual.abs()).collect();
    let z_hat_sq = (0..eps_grid.len())
        .map(|i| Estimate::of(&records.iter().map(|r| r.z_hat_center[i].powi(2)).collect::<Vec<_>>()))
        .collect();
    let default_eps = eps_grid.iter().position(|&e| e == cfg.window.eps);
    let z_hat_mean = match default_eps {
        Some(i) => Estimate::of(&records.iter().map(|r| r.z_hat_center[i]).collect::<Vec<_>>()),
        None => Estimate {
            value: f64::NAN,
            se: f64::NAN,
        },
    };
    Ok(DiagSummary {
        n: cfg.n,
        replicas,
        window,
        remainder_norm: Estimate::of(&abs_dev),
        factorization_residual: Estimate::of(&abs_res),
        eps_grid: eps_grid.to_vec(),
        z_hat_sq,
        z_hat_mean,
        inv_sq_moment: Estimate::of(&records.iter().map(|r| r.inv_sq_mean).collect::<Vec<_>>()),
        sq_moment: Estimate::of(&records.iter().map(|r| r.sq_mean).collect::<Vec<_>>()),
        max_identity_defect: records.iter().map(|r| r.max_identity_defect).fold(0.0, f64::max),
        records,
    })
}

/// `E|N^{(d-2)/4} Σ_x φ_N(x)(O_N(x) - E O_N(x))|`, empirically centered.
pub fn remainder_norm(cfg: &DiagConfig, phi: &TestFunction, replicas: u64, seed: u64) -> Result<Estimate> {
    if replicas < 100 {
        return Err(Error::NoSamples(format!("{replicas} replicas, at least 100 required")));
    }
    Ok(run_diagnostics(cfg, phi, replicas, seed, &[cfg.window.eps])?.remainder_norm)
}

/// `E|N^{(d-2)/4} Σ_x φ_N(x)(Ẑ^A/Z^A - (Z^{B≥} - 1))|`.
pub fn factorization_residual(cfg: &DiagConfig, phi: &TestFunction, replicas: u64, seed: u64) -> Result<Estimate> {
    Ok(run_diagnostics(cfg, phi, replicas, seed, &[cfg.window.eps])?.factorization_residual)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub t: f64,
    /// Empirical `P(log Z ≤ -t)`.
    pub p: f64,
    pub count: u64,
    /// Fewer than ten hits: below the resolution of the sample.
    pub unresolved: bool,
}

/// Empirical `P(log Z ≤ -t)` from pooled `log Z` values.
pub fn left_tail_curve(log_z: &[f64], t_grid: &[f64]) -> Vec<TailPoint> {
    let counts: Vec<u64> = t_grid
        .iter()
        .map(|t| log_z.iter().filter(|v| **v <= -t).count() as u64)
        .collect();
    tail_curve_from_counts(&counts, log_z.len() as u64, t_grid)
}

pub fn tail_curve_from_counts(counts: &[u64], total: u64, t_grid: &[f64]) -> Vec<TailPoint> {
    t_grid
        .iter()
        .zip(counts)
        .map(|(&t, &count)| TailPoint {
            t,
            p: count as f64 / total as f64,
            count,
            unresolved: count < 10,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub estimates: Vec<(usize, Estimate)>,
    /// Largest pairwise `|a - b| / sqrt(se_a² + se_b²)`.
    pub max_z: f64,
    pub stable: bool,
}

/// Moment estimates along an `N` grid are stable when every pair agrees
/// within `k` joint standard errors.
pub fn moment_stability(estimates: &[(usize, Estimate)], k: f64) -> Stability {
    let mut max_z: f64 = 0.0;
    for (i, (_, a)) in estimates.iter().enumerate() {
        for (_, b) in &estimates[i + 1..] {
            let se = (a.se * a.se + b.se * b.se).sqrt();
            let z = if se > 0.0 {
                (a.value - b.value).abs() / se
            } else if a.value == b.value {
                0.0
            } else {
                f64::INFINITY
            };
            max_z = max_z.max(z);
        }
    }
    Stability {
        estimates: estimates.to_vec(),
        max_z,
        stable: max_z <= k,
    }
}

/// `⌊N^ρ⌋`, the last time excluded from the tail field.
pub fn tail_cut(n: usize, rho: f64) -> usize {
    floor_pow(n, rho)
}
