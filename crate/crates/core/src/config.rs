//! Experiment configuration: a strict TOML schema, validation against the
//! admissible parameter ranges, and conversion into the per-`N` run configs.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::diagnostics::{check_rho, DiagConfig};
use crate::disorder::{beta_l2, DisorderLaw};
use crate::engine::{MaskSpec, WindowParams};
use crate::error::{Error, Result};
use crate::estimator::{ChannelSpec, McConfig};
use crate::testfn::{TestFunction, GAUSSIAN_DEFAULT_CUTOFF};

pub const CONFIG_SCHEMA: u32 = 1;

/// Inverse temperature, absolute or as a multiple of `β_{L²}(d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaSpec {
    Absolute(f64),
    /// Written `"0.5*betaL2"`.
    Fraction(f64),
}

impl BetaSpec {
    pub fn resolve(self, law: DisorderLaw, d: usize) -> Result<f64> {
        match self {
            BetaSpec::Absolute(b) => Ok(b),
            BetaSpec::Fraction(f) => {
                let crit = beta_l2(law, d)?;
                if !crit.finite {
                    return Err(Error::Config(format!(
                        "β_L2 is infinite for the {} law in d = {d}; give β as a number",
                        law.name()
                    )));
                }
                Ok(f * crit.beta)
            }
        }
    }

    fn parse(s: &str) -> Option<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if t == "betaL2" {
            return Some(BetaSpec::Fraction(1.0));
        }
        if let Some(f) = t.strip_suffix("*betaL2").or_else(|| t.strip_prefix("betaL2*")) {
            return f.parse().ok().map(BetaSpec::Fraction);
        }
        t.parse().ok().map(BetaSpec::Absolute)
    }
}

impl fmt::Display for BetaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaSpec::Absolute(b) => write!(f, "{b}"),
            BetaSpec::Fraction(x) => write!(f, "{x}*betaL2"),
        }
    }
}

impl Serialize for BetaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BetaSpec::Absolute(b) => s.serialize_f64(*b),
            BetaSpec::Fraction(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for BetaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(b) => Ok(BetaSpec::Absolute(b)),
            Raw::Int(b) => Ok(BetaSpec::Absolute(b as f64)),
            Raw::Str(s) => BetaSpec::parse(&s)
                .ok_or_else(|| de::Error::custom(format!("β must be a number or \"<x>*betaL2\", got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    GaussianBump,
    Hat,
    Indicator,
}

/// Test function `φ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSpec {
    pub kind: PhiKind,
    /// Gaussian scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// Gaussian cutoff (default 8.5 scales).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    /// Hat and indicator half-width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Admit discontinuous test functions.
    #[serde(default)]
    pub extension: bool,
}

impl PhiSpec {
    pub fn build(&self, dim: usize) -> Result<TestFunction> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("phi.{name} is required for kind {:?}", self.kind)))
        };
        let mut phi = match self.kind {
            PhiKind::GaussianBump => {
                let s = need(self.scale, "scale")?;
                TestFunction::gaussian_bump_cut(dim, s, self.cutoff.unwrap_or(GAUSSIAN_DEFAULT_CUTOFF * s))?
            }
            PhiKind::Hat => TestFunction::hat(dim, need(self.half_width, "half_width")?)?,
            PhiKind::Indicator => {
                TestFunction::indicator_box(dim, need(self.half_width, "half_width")?, self.extension)?
            }
        };
        if let Some(c) = &self.center {
            if c.len() != dim {
                return Err(Error::Config(format!("phi.center has {} entries, d = {dim}", c.len())));
            }
            phi = phi.centered_at(c.clone());
        }
        Ok(phi.scaled(self.amplitude))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Full,
    /// Disorder after `⌊N^ρ⌋` only.
    Tail,
}

/// One simulated field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub name: String,
    /// Defaults to the experiment `β`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<BetaSpec>,
    #[serde(default = "full_mask")]
    pub mask: MaskKind,
    /// Overrides the experiment `ρ` for a tail mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema")]
    pub schema: u32,
    #[serde(default = "three")]
    pub dim: usize,
    /// The `N` grid.
    #[serde(default = "n_grid")]
    pub n: Vec<usize>,
    #[serde(default = "gaussian")]
    pub law: DisorderLaw,
    pub beta: BetaSpec,
    pub phi: PhiSpec,
    /// Defaults to a single full channel at `β`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<ChannelConfig>,
    #[serde(default = "hundred")]
    pub replicas: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "eps")]
    pub eps: f64,
    #[serde(default = "alpha")]
    pub alpha: f64,
    #[serde(default = "rho")]
    pub rho: f64,
    /// Constant `c` in the lower bound for `ρ`.
    #[serde(default = "one")]
    pub rho_c: f64,
    /// Lattice padding; `None` for `ceil(5√N)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<i64>,
    /// Chaos truncation degree `M`.
    #[serde(default = "degree")]
    pub truncation_degree: usize,
    /// Thresholds `t` for the left tail `log Z ≤ -t`.
    #[serde(default = "tail_grid")]
    pub tail_grid: Vec<f64>,
    /// `ε` values for the window-remainder trend.
    #[serde(default = "eps_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "hundred_usize")]
    pub checkpoint_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn schema() -> u32 {
    CONFIG_SCHEMA
}
fn three() -> usize {
    3
}
fn n_grid() -> Vec<usize> {
    vec![16, 32, 64, 128]
}
fn gaussian() -> DisorderLaw {
    DisorderLaw::Gaussian
}
fn hundred() -> u64 {
    100
}
fn hundred_usize() -> usize {
    100
}
fn eps() -> f64 {
    0.9
}
fn alpha() -> f64 {
    0.05
}
fn rho() -> f64 {
    0.95
}
fn one() -> f64 {
    1.0
}
fn degree() -> usize {
    16
}
fn tail_grid() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn eps_grid() -> Vec<f64> {
    vec![0.88, 0.9, 0.95]
}
fn full_mask() -> MaskKind {
    MaskKind::Full
}

/// `β` values after resolution against `β_{L²}(d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedBeta {
    pub beta: f64,
    /// `None` when infinite.
    pub beta_l2: Option<f64>,
    pub channels: Vec<(String, f64)>,
}

impl ExperimentConfig {
    /// A config with every default filled in.
    pub fn new(beta: BetaSpec, phi: PhiSpec) -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            dim: three(),
            n: n_grid(),
            law: gaussian(),
            beta,
            phi,
            channels: Vec::new(),
            replicas: hundred(),
            seed: 0,
            eps: eps(),
            alpha: alpha(),
            rho: rho(),
            rho_c: one(),
            padding: None,
            truncation_degree: degree(),
            tail_grid: tail_grid(),
            eps_grid: eps_grid(),
            out: None,
            checkpoint_every: hundred_usize(),
            threads: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Every range check, including `β` below `β_{L²}`.
    pub fn validate(&self) -> Result<ResolvedBeta> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "schema {} unsupported, expected {CONFIG_SCHEMA}",
                self.schema
            )));
        }
        if self.dim < 3 {
            return Err(Error::Config(format!(
                "d = {} is recurrent: the weak-disorder L² region needs d ≥ 3",
                self.dim
            )));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(Error::Config("the N grid must be nonempty with N ≥ 1".into()));
        }
        WindowParams::validated(self.eps, self.alpha)?;
        for &e in &self.eps_grid {
            WindowParams::validated(e, self.alpha)?;
        }
        check_rho(self.rho, self.eps, self.rho_c, self.dim)?;
        if !(self.rho_c > 0.0) {
            return Err(Error::Config(format!("rho_c must be positive, got {}", self.rho_c)));
        }
        if self.tail_grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("tail_grid entries must be finite".into()));
        }
        if let Some(p) = self.padding {
            if p < 0 {
                return Err(Error::Config(format!("padding must be nonnegative, got {p}")));
            }
        }
        self.phi.build(self.dim).map_err(|e| Error::Config(e.to_string()))?;

        let crit = beta_l2(self.law, self.dim)?;
        let check = |b: f64, what: &str| -> Result<f64> {
            if !(b >= 0.0) {
                return Err(Error::Config(format!("{what} must be nonnegative, got {b}")));
            }
            if crit.finite && b >= crit.beta {
                return Err(Error::Config(format!(
                    "{what} = {b} is not below β_L2 = {}: outside the L² region",
                    crit.beta
                )));
            }
            Ok(b)
        };
        let beta = check(self.beta.resolve(self.law, self.dim)?, "β")?;
        let mut channels = Vec::new();
        for c in self.channel_list() {
            let b = check(
                c.beta.unwrap_or(self.beta).resolve(self.law, self.dim)?,
                &format!("β of channel {}", c.name),
            )?;
            if let Some(r) = c.rho {
                check_rho(r, self.eps, self.rho_c, self.dim)?;
            }
            channels.push((c.name.clone(), b));
        }
        let mut names: Vec<&str> = channels.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("channel names must be unique".into()));
        }
        Ok(ResolvedBeta {
            beta,
            beta_l2: crit.finite.then_some(crit.beta),
            channels,
        })
    }

    pub fn channel_list(&self) -> Vec<ChannelConfig> {
        if self.channels.is_empty() {
            vec![ChannelConfig {
                name: "full".into(),
                beta: None,
                mask: MaskKind::Full,
                rho: None,
            }]
        } else {
            self.channels.clone()
        }
    }

    /// Short hash of the result-determining fields. Run-size and execution
    /// knobs are excluded so a run can be extended or moved.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.replicas = 0;
        c.out = None;
        c.threads = None;
        c.checkpoint_every = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }

    pub fn phi_function(&self) -> Result<TestFunction> {
        self.phi.build(self.dim)
    }

    pub fn window(&self) -> Result<WindowParams> {
        WindowParams::validated(self.eps, self.alpha)
    }

    pub fn mc_config(&self, n: usize) -> Result<McConfig> {
        let resolved = self.validate()?;
        let channels = self
            .channel_list()
            .into_iter()
            .zip(&resolved.channels)
            .map(|(c, (_, beta))| ChannelSpec {
                name: c.name,
                beta: *beta,
                mask: match c.mask {
                    MaskKind::Full => MaskSpec::Full,
                    MaskKind::Tail => MaskSpec::Tail {
                        rho: c.rho.unwrap_or(self.rho),
                    },
                },
            })
            .collect();
        Ok(McConfig {
            dim: self.dim,
            n,
            law: self.law,
            phi: self.phi_function()?,
            channels,
            replicas: self.replicas,
            seed: self.seed,
            padding: self.padding,
            tail_grid: self.tail_grid.clone(),
        })
    }

    pub fn diag_config(&self, n: usize) -> Result<DiagConfig> {
        let resolved = self.validate()?;
        Ok(DiagConfig {
            dim: self.dim,
            n,
            law: self.law,
            beta: resolved.beta,
            window: self.window()?,
            rho: self.rho,
            rho_c: self.rho_c,
            padding: self.padding,
        })
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml()?)?;
    Ok(())
}
