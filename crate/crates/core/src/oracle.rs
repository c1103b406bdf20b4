//! Brute-force ground truth on tiny instances: explicit path enumeration and
//! exact joint moments of partition functions, integrating the disorder site
//! by site through `E[e^{mβω}] = e^{λ(mβ)}`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chaos::{diffusive_scale, exact_variance, overlap_mgf};
use crate::disorder::{DisorderField, DisorderLaw};
use crate::engine::{partition_fields, Channel, EngineConfig, MaskSpec, WindowParams};
use crate::error::{Error, Result};
use crate::lattice::CubeGrid;
use crate::report::Verdict;
use crate::testfn::TestFunction;

/// Longest path length enumerated by [`PathSet`].
pub const MAX_PATH_LEN: usize = 6;

/// Default cap on the number of path tuples summed by the moment oracles.
pub const TUPLE_BUDGET: u128 = 6u128.pow(12);

fn unit_steps(d: usize) -> Vec<Vec<i64>> {
    let mut steps = Vec::with_capacity(2 * d);
    for i in 0..d {
        for s in [1, -1] {
            let mut e = vec![0; d];
            e[i] = s;
            steps.push(e);
        }
    }
    steps
}

/// All `(2d)^N` nearest-neighbour paths of length `N` from `start`.
#[derive(Clone, Debug)]
pub struct PathSet {
    pub start: Vec<i64>,
    pub len: usize,
    /// `paths[k][n-1]` is the position at time `n`.
    pub paths: Vec<Vec<Vec<i64>>>,
}

impl PathSet {
    pub fn new(start: &[i64], len: usize) -> Result<Self> {
        if len > MAX_PATH_LEN {
            return Err(Error::Budget {
                required: (2 * start.len() as u128).pow(len as u32),
                budget: (2 * start.len() as u128).pow(MAX_PATH_LEN as u32),
            });
        }
        let steps = unit_steps(start.len());
        let mut paths: Vec<Vec<Vec<i64>>> = vec![Vec::new()];
        for _ in 0..len {
            let mut grown = Vec::with_capacity(paths.len() * steps.len());
            for p in &paths {
                let here = p.last().map_or(start, |v| v.as_slice());
                for e in &steps {
                    let mut q = p.clone();
                    q.push(here.iter().zip(e).map(|(a, b)| a + b).collect());
                    grown.push(q);
                }
            }
            paths = grown;
        }
        Ok(Self {
            start: start.to_vec(),
            len,
            paths,
        })
    }

    pub fn count(&self) -> usize {
        self.paths.len()
    }
}

/// `(2d)^{-N} Σ_paths Π_{n ≤ N} w(n, S_n)` with `w = e^{βω - λ(β)}` on the
/// sites accepted by `in_mask` and `1` elsewhere.
pub fn path_partition<M>(x: &[i64], n: usize, beta: f64, disorder: &DisorderField, in_mask: M) -> Result<f64>
where
    M: Fn(usize, &[i64]) -> bool,
{
    let set = PathSet::new(x, n)?;
    let lam = disorder.law().cgf(beta);
    let norm = (set.count() as f64).recip();
    let mut total = 0.0;
    for p in &set.paths {
        let mut energy = 0.0;
        for (i, z) in p.iter().enumerate() {
            if in_mask(i + 1, z) {
                energy += beta * disorder.value((i + 1) as u64, z)? - lam;
            }
        }
        total += energy.exp();
    }
    Ok(total * norm)
}

fn site_factors(law: DisorderLaw, beta: f64, k: usize) -> Vec<f64> {
    // e^{λ(mβ) - mλ(β)} for multiplicity m
    let lam = law.cgf(beta);
    (0..=k)
        .map(|m| (law.cgf(m as f64 * beta) - m as f64 * lam).exp())
        .collect()
}

/// `E[Π_i Z_{N,β}(x_i)]`, summing over all tuples of paths.
pub fn exact_joint_moment(starts: &[Vec<i64>], n: usize, law: DisorderLaw, beta: f64) -> Result<f64> {
    exact_joint_moment_with_budget(starts, n, law, beta, TUPLE_BUDGET)
}

pub fn exact_joint_moment_with_budget(
    starts: &[Vec<i64>],
    n: usize,
    law: DisorderLaw,
    beta: f64,
    budget: u128,
) -> Result<f64> {
    let k = starts.len();
    if k == 0 {
        return Ok(1.0);
    }
    let d = starts[0].len();
    if d == 0 || starts.iter().any(|s| s.len() != d) {
        return Err(Error::invalid("starts must share a positive dimension"));
    }
    let required = (2 * d as u128).checked_pow((n * k) as u32).unwrap_or(u128::MAX);
    if required > budget {
        return Err(Error::Budget { required, budget });
    }
    let factors = site_factors(law, beta, k);
    let steps = unit_steps(d);
    let mut pos: Vec<Vec<i64>> = starts.to_vec();
    let total = tuple_sum(&mut pos, n, &steps, &factors);
    Ok(total / required as f64)
}

// Σ over all step choices of the remaining `left` times of the product of
// per-time multiplicity factors.
#[allow(clippy::ptr_arg)]
fn tuple_sum(pos: &mut Vec<Vec<i64>>, left: usize, steps: &[Vec<i64>], factors: &[f64]) -> f64 {
    if left == 0 {
        return 1.0;
    }
    let k = pos.len();
    let s = steps.len();
    let mut choice = vec![0usize; k];
    let mut total = 0.0;
    loop {
        let mut moved = pos.clone();
        for (p, &c) in moved.iter_mut().zip(&choice) {
            for (a, b) in p.iter_mut().zip(&steps[c]) {
                *a += b;
            }
        }
        let mut weight = 1.0;
        for i in 0..k {
            if moved[..i].contains(&moved[i]) {
                continue;
            }
            let m = moved[i..].iter().filter(|q| **q == moved[i]).count();
            weight *= factors[m];
        }
        total += weight * tuple_sum(&mut moved, left - 1, steps, factors);
        let mut j = 0;
        loop {
            if j == k {
                return total;
            }
            choice[j] += 1;
            if choice[j] < s {
                break;
            }
            choice[j] = 0;
            j += 1;
        }
    }
}

fn support_sites(phi: &TestFunction, n: usize, max_sites: usize) -> Result<Vec<(Vec<i64>, f64)>> {
    let sites: Vec<_> = phi.sample(n).support().collect();
    if sites.len() > max_sites {
        return Err(Error::Budget {
            required: sites.len() as u128,
            budget: max_sites as u128,
        });
    }
    Ok(sites)
}

// Joint moments keyed by the sorted start tuple.
struct MomentCache {
    n: usize,
    law: DisorderLaw,
    beta: f64,
    memo: HashMap<Vec<Vec<i64>>, f64>,
}

impl MomentCache {
    fn get(&mut self, starts: &[Vec<i64>]) -> Result<f64> {
        let mut key = starts.to_vec();
        key.sort();
        if let Some(v) = self.memo.get(&key) {
            return Ok(*v);
        }
        let v = exact_joint_moment(&key, self.n, self.law, self.beta)?;
        self.memo.insert(key, v);
        Ok(v)
    }
}

/// `Var[Σ_x φ_N(x) Z_{N,β}(x)] = Σ_{x,y} φ_N(x) φ_N(y) (E[Z(x)Z(y)] - 1)`.
pub fn exact_avg_variance(phi: &TestFunction, n: usize, law: DisorderLaw, beta: f64) -> Result<f64> {
    let sites = support_sites(phi, n, 8)?;
    let mut cache = MomentCache {
        n,
        law,
        beta,
        memo: HashMap::new(),
    };
    let mut total = 0.0;
    for (x, wx) in &sites {
        for (y, wy) in &sites {
            total += wx * wy * (cache.get(&[x.clone(), y.clone()])? - 1.0);
        }
    }
    Ok(total)
}

/// `E[(X - E X)⁴]` for `X = Σ_x φ_N(x) Z_{N,β}(x)`, by inclusion-exclusion
/// over joint moments of up to four starts.
pub fn exact_fourth_moment(phi: &TestFunction, n: usize, law: DisorderLaw, beta: f64) -> Result<f64> {
    let sites = support_sites(phi, n, 2)?;
    let mut cache = MomentCache {
        n,
        law,
        beta,
        memo: HashMap::new(),
    };
    let m = sites.len();
    let mut total = 0.0;
    for idx in 0..m.pow(4) {
        let pick: Vec<usize> = (0..4).map(|j| idx / m.pow(j) % m).collect();
        let w: f64 = pick.iter().map(|&i| sites[i].1).product();
        // E[Π (Z_i - 1)] = Σ_S (-1)^{4-|S|} E[Π_{i∈S} Z_i]
        let mut centered = 0.0;
        for mask in 0u32..16 {
            let subset: Vec<Vec<i64>> = (0..4)
                .filter(|j| mask >> j & 1 == 1)
                .map(|j| sites[pick[j]].0.clone())
                .collect();
            let sign = if (4 - subset.len()).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            };
            centered += sign * cache.get(&subset)?;
        }
        total += w * centered;
    }
    Ok(total)
}

/// Moments of `X = Σ φ_N Z` from the oracle.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FourthMomentReport {
    pub variance: f64,
    pub fourth: f64,
    /// `E[(X - EX)⁴] / (3 Var²)`.
    pub ratio: f64,
}

pub fn fourth_moment_report(phi: &TestFunction, n: usize, law: DisorderLaw, beta: f64) -> Result<FourthMomentReport> {
    let variance = exact_avg_variance(phi, n, law, beta)?;
    let fourth = exact_fourth_moment(phi, n, law, beta)?;
    if variance <= 0.0 {
        return Err(Error::invalid("zero variance: fourth-moment ratio undefined"));
    }
    Ok(FourthMomentReport {
        variance,
        fourth,
        ratio: fourth / (3.0 * variance * variance),
    })
}

/// A hat supported on the two sites `0` and `e₁` at `N = 3`, with unequal
/// weights.
pub fn two_site_test(d: usize) -> Result<TestFunction> {
    let mut c = vec![0.0; d];
    c[0] = 0.25;
    Ok(TestFunction::hat(d, 0.35)?.centered_at(c))
}

fn in_mask(mask: &MaskSpec, n: usize, t: usize, z: &[i64]) -> bool {
    match mask {
        MaskSpec::Full => true,
        MaskSpec::Empty => false,
        MaskSpec::Tail { rho } => t > crate::engine::floor_pow(n, *rho),
        MaskSpec::TailCut { cut } => t > *cut,
        MaskSpec::Window { center, cut, radius } => {
            let r2: i64 = z.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            t <= *cut && (r2 as f64) < radius * radius
        }
        MaskSpec::Explicit(sites) => sites.iter().any(|(s, y)| *s == t && y.as_slice() == z),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Largest relative gap between the transfer-matrix engine (exact mode) and
/// path enumeration over `N ≤ n_max`, a unit query box and full, tail and
/// window masks.
pub fn engine_vs_paths(d: usize, law: DisorderLaw, beta: f64, n_max: usize, seed: u64) -> Result<f64> {
    let disorder = DisorderField::new(law, seed, 0, d)?;
    let window = WindowParams::validated(0.9, 0.05)?;
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        let query = CubeGrid::centered(d, 1)?;
        let cfg = EngineConfig::new(d, n, law, query.clone()).exact();
        let masks = [
            MaskSpec::Full,
            MaskSpec::TailCut { cut: n / 2 },
            MaskSpec::Window {
                center: vec![0; d],
                cut: window.time_cut(n).max(1),
                radius: 1.5,
            },
        ];
        let channels: Vec<Channel> = masks.iter().map(|m| Channel::new(beta, m.clone())).collect();
        let fields = partition_fields(&cfg, &channels, &disorder)?;
        for x in query.sites() {
            for (mask, field) in masks.iter().zip(&fields) {
                let want = path_partition(&x, n, beta, &disorder, |t, z| in_mask(mask, n, t, z))?;
                worst = worst.max(rel(field.get(&x).unwrap(), want));
            }
        }
    }
    Ok(worst)
}

/// Relative gap between the analytic variance of the averaged field and
/// the path-pair oracle for [`two_site_test`].
pub fn variance_vs_pairs(d: usize, law: DisorderLaw, beta: f64, n: usize) -> Result<f64> {
    let phi = two_site_test(d)?;
    let oracle = diffusive_scale(d, n) * exact_avg_variance(&phi, n, law, beta)?;
    Ok(rel(exact_variance(d, law, beta, n, &phi)?, oracle))
}

/// Largest relative gap between `E[Z_N(0)²]` by path pairs and the overlap
/// recursion `e_N` over `N ≤ n_max`.
pub fn second_moment_vs_overlap(d: usize, law: DisorderLaw, beta: f64, n_max: usize) -> Result<f64> {
    let e = overlap_mgf(d, law, beta, n_max)?;
    let x = vec![0; d];
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        let m2 = exact_joint_moment(&[x.clone(), x.clone()], n, law, beta)?;
        worst = worst.max(rel(e.get(n), m2));
    }
    Ok(worst)
}

/// The three exactness checks at their acceptance tolerances.
pub fn equivalence_suite(d: usize, law: DisorderLaw, beta: f64, seed: u64) -> Result<Vec<Verdict>> {
    let a = engine_vs_paths(d, law, beta, 4, seed)?;
    let b = variance_vs_pairs(d, law, beta, 3)?;
    let c = second_moment_vs_overlap(d, law, beta, 5)?;
    Ok(vec![
        Verdict {
            criterion: "engine vs path enumeration, N ≤ 4".into(),
            value: a,
            reference: 0.0,
            tolerance: "1e-12 relative".into(),
            pass: a <= 1e-12,
        },
        Verdict {
            criterion: "exact variance vs path pairs, N = 3, two sites".into(),
            value: b,
            reference: 0.0,
            tolerance: "1e-10 relative".into(),
            pass: b <= 1e-10,
        },
        Verdict {
            criterion: "E[Z²] vs e_N, N ≤ 5".into(),
            value: c,
            reference: 0.0,
            tolerance: "1e-10 relative".into(),
            pass: c <= 1e-10,
        },
    ])
}
