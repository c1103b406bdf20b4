//! Disorder laws and reproducible, counter-based sampling of the space-time
//! environment `ω_{n,z}`.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::CubeGrid;
use crate::walk;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisorderLaw {
    Gaussian,
    Rademacher,
}

impl DisorderLaw {
    pub fn name(self) -> &'static str {
        match self {
            DisorderLaw::Gaussian => "gaussian",
            DisorderLaw::Rademacher => "rademacher",
        }
    }

    /// `λ(β) = log E[e^{βω}]`.
    pub fn cgf(self, beta: f64) -> f64 {
        match self {
            DisorderLaw::Gaussian => 0.5 * beta * beta,
            DisorderLaw::Rademacher => ln_cosh(beta),
        }
    }

    /// `λ₂(β) = λ(2β) - 2λ(β)`.
    pub fn lambda2(self, beta: f64) -> f64 {
        match self {
            DisorderLaw::Gaussian => beta * beta,
            DisorderLaw::Rademacher => ln_cosh(2.0 * beta) - 2.0 * ln_cosh(beta),
        }
    }

    /// `σ²(β) = e^{λ₂(β)} - 1`.
    pub fn sigma2(self, beta: f64) -> f64 {
        self.lambda2(beta).exp_m1()
    }

    /// `sup_β λ₂(β)`; `None` when unbounded.
    pub fn lambda2_sup(self) -> Option<f64> {
        match self {
            DisorderLaw::Gaussian => None,
            DisorderLaw::Rademacher => Some(std::f64::consts::LN_2),
        }
    }

    /// Exponent γ of the concentration inequality the law satisfies.
    pub fn concentration_gamma(self) -> f64 {
        2.0
    }

    /// `E[W^k]` for `W = e^{βω - λ(β)}`.
    pub fn weight_moment(self, k: u32, beta: f64) -> f64 {
        (self.cgf(k as f64 * beta) - k as f64 * self.cgf(beta)).exp()
    }

    /// `η = (e^{βω - λ(β)} - 1) / σ(β)`.
    pub fn eta(self, beta: f64, omega: f64) -> Result<f64> {
        if !(beta > 0.0) {
            return Err(Error::invalid("η is undefined at β = 0"));
        }
        Ok((beta * omega - self.cgf(beta)).exp_m1() / self.sigma2(beta).sqrt())
    }

    /// `E[η³]`.
    pub fn eta_moment3(self, beta: f64) -> Result<f64> {
        if !(beta > 0.0) {
            return Err(Error::invalid("η is undefined at β = 0"));
        }
        let m = |k| self.weight_moment(k, beta);
        Ok((m(3) - 3.0 * m(2) + 2.0) / self.sigma2(beta).powf(1.5))
    }

    /// `E[η⁴]`.
    pub fn eta_moment4(self, beta: f64) -> Result<f64> {
        if !(beta > 0.0) {
            return Err(Error::invalid("η is undefined at β = 0"));
        }
        let m = |k| self.weight_moment(k, beta);
        Ok((m(4) - 4.0 * m(3) + 6.0 * m(2) - 3.0) / self.sigma2(beta).powi(2))
    }

    /// One draw from the law.
    #[inline]
    pub fn sample<R: RngCore + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            DisorderLaw::Gaussian => StandardNormal.sample(rng),
            DisorderLaw::Rademacher => {
                if rng.next_u64() >> 63 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// The L² critical inverse temperature, possibly infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaL2 {
    /// Root of `λ₂(β) = log(1/π_d)`, or `+∞`.
    pub beta: f64,
    /// `false` when `λ₂` never reaches the threshold.
    pub finite: bool,
    pub pi_d: f64,
    pub threshold: f64,
}

/// `sup{β : λ₂(β) < log(1/π_d)}` by bisection to 1e-10.
pub fn beta_l2(law: DisorderLaw, d: usize) -> Result<BetaL2> {
    if d <= 2 {
        return Err(Error::Recurrent(d));
    }
    let pi_d = walk::pi_d(d)?;
    Ok(beta_l2_with_pi(law, pi_d))
}

pub fn beta_l2_with_pi(law: DisorderLaw, pi_d: f64) -> BetaL2 {
    let threshold = (1.0 / pi_d).ln();
    if let Some(sup) = law.lambda2_sup() {
        if sup <= threshold {
            return BetaL2 {
                beta: f64::INFINITY,
                finite: false,
                pi_d,
                threshold,
            };
        }
    }
    let mut hi = 1.0;
    while law.lambda2(hi) < threshold {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if law.lambda2(mid) < threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    BetaL2 {
        beta: 0.5 * (lo + hi),
        finite: true,
        pi_d,
        threshold,
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const REPLICA_SALT: u64 = 0x5851_f42d_4c95_7f2d;

/// Stream key of a replica under a master seed.
pub fn stream_key(master_seed: u64, replica: u64) -> u64 {
    mix64(master_seed ^ mix64(replica ^ REPLICA_SALT))
}

/// SplitMix64 generator seeded per site.
#[derive(Clone, Debug)]
pub struct SiteStream {
    state: u64,
}

impl SiteStream {
    #[inline]
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }
}

impl RngCore for SiteStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

// A `SiteStream` whose first output was computed ahead of time.
struct PrimedStream {
    first: Option<u64>,
    inner: SiteStream,
}

impl RngCore for PrimedStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        match self.first.take() {
            Some(v) => v,
            None => self.inner.next_u64(),
        }
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Packs `(n, z)` into 64 bits: 16 bits of time and `48/d` bits per
/// coordinate (offset binary).
#[derive(Clone, Copy, Debug)]
pub struct SitePacking {
    dim: usize,
    bits: u32,
}

pub const TIME_BITS: u32 = 16;

impl SitePacking {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > 48 {
            return Err(Error::invalid(format!("cannot pack dimension {dim}")));
        }
        Ok(Self {
            dim,
            bits: 48 / dim as u32,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest `|z_i|` the packing represents.
    pub fn max_coord(&self) -> i64 {
        (1i64 << (self.bits - 1)) - 1
    }

    pub fn max_time(&self) -> u64 {
        (1u64 << TIME_BITS) - 1
    }

    pub fn check(&self, n: u64, z: &[i64]) -> Result<()> {
        if n > self.max_time() || z.iter().any(|v| v.abs() > self.max_coord()) {
            return Err(Error::invalid(format!("site ({n}, {z:?}) overflows the index packing")));
        }
        Ok(())
    }

    /// Packed index of the site; `z_0` occupies the low bits.
    #[inline]
    pub fn pack(&self, n: u64, z: &[i64]) -> u64 {
        let off = 1i64 << (self.bits - 1);
        let mut key = n;
        for i in (0..self.dim).rev() {
            key = (key << self.bits) | (z[i] + off) as u64;
        }
        key
    }

    /// Packed index of `(n, z)` with `z_0 = 0` removed, so that
    /// `pack(n, z) = row_base(n, z) + z_0 + offset`.
    #[inline]
    pub fn row_base(&self, n: u64, z: &[i64]) -> u64 {
        let off = 1i64 << (self.bits - 1);
        let mut key = n;
        for i in (1..self.dim).rev() {
            key = (key << self.bits) | (z[i] + off) as u64;
        }
        (key << self.bits).wrapping_add(off as u64)
    }
}

/// A space-time region `{1..=n_max} × box`.
#[derive(Clone, Debug)]
pub struct SpaceTimeRegion {
    pub n_max: usize,
    pub space: CubeGrid,
}

/// A lazily materialized disorder realization keyed by
/// `(master seed, replica id)`.
#[derive(Clone, Debug)]
pub struct DisorderField {
    law: DisorderLaw,
    master_seed: u64,
    replica: u64,
    key: u64,
    packing: SitePacking,
    region: Option<SpaceTimeRegion>,
}

/// Field over `region`; each site value is a pure function of
/// `(master_seed, replica, n, z)`.
pub fn sample_field(
    law: DisorderLaw,
    master_seed: u64,
    replica: u64,
    region: SpaceTimeRegion,
) -> Result<DisorderField> {
    let mut f = DisorderField::new(law, master_seed, replica, region.space.dim())?;
    let packing = f.packing;
    let far: Vec<i64> = region
        .space
        .center()
        .iter()
        .map(|c| c.abs() + region.space.radius())
        .collect();
    packing.check(region.n_max as u64, &far)?;
    f.region = Some(region);
    Ok(f)
}

impl DisorderField {
    /// Unbounded field; callers must keep sites inside the packing range.
    pub fn new(law: DisorderLaw, master_seed: u64, replica: u64, dim: usize) -> Result<Self> {
        Ok(Self {
            law,
            master_seed,
            replica,
            key: stream_key(master_seed, replica),
            packing: SitePacking::new(dim)?,
            region: None,
        })
    }

    pub fn law(&self) -> DisorderLaw {
        self.law
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    pub fn packing(&self) -> SitePacking {
        self.packing
    }

    pub fn region(&self) -> Option<&SpaceTimeRegion> {
        self.region.as_ref()
    }

    #[inline]
    pub(crate) fn value_packed(&self, packed: u64) -> f64 {
        let mut s = SiteStream::new(mix64(packed ^ self.key));
        self.law.sample(&mut s)
    }

    /// `ω_{n,(lo + i, rest[1..])}` into `out[i]`; `rest[0]` is ignored.
    /// The caller guarantees the row fits the packing.
    pub fn fill_row(&self, n: u64, rest: &[i64], lo: i64, out: &mut [f64]) {
        let base = self.packing.row_base(n, rest).wrapping_add(lo as u64);
        const CHUNK: usize = 64;
        let mut seeds = [0u64; CHUNK];
        let mut first = [0u64; CHUNK];
        for (c, block) in out.chunks_mut(CHUNK).enumerate() {
            let start = base.wrapping_add((c * CHUNK) as u64);
            // hashing pass, branch-free so it vectorizes
            for (i, (s, f)) in seeds.iter_mut().zip(first.iter_mut()).enumerate() {
                *s = mix64(start.wrapping_add(i as u64) ^ self.key);
                *f = mix64(s.wrapping_add(GOLDEN));
            }
            for (i, w) in block.iter_mut().enumerate() {
                let mut rng = PrimedStream {
                    first: Some(first[i]),
                    inner: SiteStream::new(seeds[i].wrapping_add(GOLDEN)),
                };
                *w = self.law.sample(&mut rng);
            }
        }
    }

    /// `ω_{n,z}`.
    pub fn value(&self, n: u64, z: &[i64]) -> Result<f64> {
        self.packing.check(n, z)?;
        if let Some(r) = &self.region {
            if n == 0 || n as usize > r.n_max || !r.space.contains(z) {
                return Err(Error::invalid(format!("site ({n}, {z:?}) outside region")));
            }
        }
        Ok(self.value_packed(self.packing.pack(n, z)))
    }

    /// Time slice `ω_{n,·}` over the region's box, in packing order.
    pub fn slice(&self, n: u64) -> Result<Vec<f64>> {
        let r = self
            .region
            .as_ref()
            .ok_or_else(|| Error::invalid("unbounded field has no slices"))?;
        r.space.sites().map(|z| self.value(n, &z)).collect()
    }
}
