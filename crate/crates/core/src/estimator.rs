//! Monte Carlo orchestration: replica disorder, multi-channel engine sweeps,
//! scaled averaged fields, per-replica JSONL records with checkpoint/resume.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::disorder::{DisorderField, DisorderLaw};
use crate::engine::{partition_fields, Channel, EngineConfig, MaskSpec, PartitionField};
use crate::error::{Error, Result};
use crate::quadrature::CompensatedSum;
use crate::testfn::{SampledTest, TestFunction};

/// Version tag written into every record.
pub const RECORD_SCHEMA: u32 = 1;

/// `N^{(d-2)/4}`.
pub fn field_scale(d: usize, n: usize) -> f64 {
    (n as f64).powf(0.25 * (d as f64 - 2.0))
}

fn check_cover(field: &PartitionField, phi: &SampledTest) -> Result<()> {
    if !field.query.covers(&phi.grid) {
        return Err(Error::invalid(
            "query box does not cover the scaled test-function support",
        ));
    }
    Ok(())
}

/// `N^{(d-2)/4} Σ_x (Z(x) - 1) φ_N(x)`.
pub fn averaged_field(field: &PartitionField, phi: &SampledTest, d: usize, n: usize) -> Result<f64> {
    check_cover(field, phi)?;
    let mut acc = CompensatedSum::new();
    for (x, w) in phi.support() {
        acc.add((field.get(&x).unwrap() - 1.0) * w);
    }
    Ok(field_scale(d, n) * acc.value())
}

/// `N^{(d-2)/4} Σ_x log Z(x) φ_N(x)`, before centering.
pub fn log_pairing(field: &PartitionField, phi: &SampledTest, d: usize, n: usize) -> Result<f64> {
    check_cover(field, phi)?;
    let mut acc = CompensatedSum::new();
    for (x, w) in phi.support() {
        let z = field.get(&x).unwrap();
        if !(z > 0.0) {
            return Err(Error::invalid(format!("nonpositive partition function {z} at {x:?}")));
        }
        acc.add(z.ln() * w);
    }
    Ok(field_scale(d, n) * acc.value())
}

/// Per-replica `N^{(d-2)/4} Σ_x (log Z(x) - c(x)) φ_N(x)` with `c(x)` the
/// across-replica mean of `log Z(x)`.
pub fn log_averaged_field(fields: &[PartitionField], phi: &SampledTest, d: usize, n: usize) -> Result<Vec<f64>> {
    if fields.is_empty() {
        return Err(Error::NoSamples("no replica fields".into()));
    }
    let support: Vec<_> = phi.support().collect();
    let mut logs = Vec::with_capacity(fields.len());
    for f in fields {
        check_cover(f, phi)?;
        let mut row = Vec::with_capacity(support.len());
        for (x, _) in &support {
            let z = f.get(x).unwrap();
            if !(z > 0.0) {
                return Err(Error::invalid(format!("nonpositive partition function {z} at {x:?}")));
            }
            row.push(z.ln());
        }
        logs.push(row);
    }
    let r = fields.len() as f64;
    let center: Vec<f64> = (0..support.len())
        .map(|i| logs.iter().map(|row| row[i]).sum::<f64>() / r)
        .collect();
    let scale = field_scale(d, n);
    Ok(logs
        .iter()
        .map(|row| {
            let mut acc = CompensatedSum::new();
            for (i, (_, w)) in support.iter().enumerate() {
                acc.add((row[i] - center[i]) * w);
            }
            scale * acc.value()
        })
        .collect())
}

/// Empirical centering of raw log pairings; equivalent to per-site centering
/// because the pairing is linear in `log Z`.
pub fn center_samples(raw: &[f64]) -> Vec<f64> {
    if raw.is_empty() {
        return Vec::new();
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.iter().map(|v| v - mean).collect()
}

/// One named `(β, Λ)` channel of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub beta: f64,
    pub mask: MaskSpec,
}

/// Everything that determines the replica records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dim: usize,
    pub n: usize,
    pub law: DisorderLaw,
    pub phi: TestFunction,
    pub channels: Vec<ChannelSpec>,
    pub replicas: u64,
    pub seed: u64,
    /// `None` for the default `ceil(5√N)`.
    pub padding: Option<i64>,
    /// Thresholds `t` for the pooled counts of `log Z ≤ -t`.
    pub tail_grid: Vec<f64>,
}

impl McConfig {
    /// Hash of the fields that affect results (the replica count excluded, so
    /// a run can be extended).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.replicas = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }

    pub fn engine_config(&self) -> Result<EngineConfig> {
        let mut cfg = EngineConfig::new(self.dim, self.n, self.law, self.phi.lattice_box(self.n));
        if let Some(p) = self.padding {
            cfg.padding = p;
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.phi.dim() != self.dim {
            return Err(Error::Config("test function dimension differs from d".into()));
        }
        if self.channels.is_empty() {
            return Err(Error::Config("at least one channel required".into()));
        }
        let mut names: Vec<&str> = self.channels.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("channel names must be unique".into()));
        }
        Ok(())
    }
}

/// Statistics of one channel in one replica.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub name: String,
    /// `N^{(d-2)/4} Σ (Z - 1) φ_N`.
    pub linear: f64,
    /// `N^{(d-2)/4} Σ log Z φ_N`, uncentered.
    pub log_raw: f64,
    /// Number of query sites pooled below.
    pub sites: u64,
    /// `#{x : log Z(x) ≤ -t}` per threshold.
    pub log_tail_counts: Vec<u64>,
    /// Site means of `Z^{-2}` and `Z²`.
    pub inv_sq_mean: f64,
    pub sq_mean: f64,
    /// `Z` at the query-box center.
    pub center_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub schema: u32,
    pub config_hash: String,
    pub replica: u64,
    pub seed: u64,
    pub channels: Vec<ChannelRecord>,
}

/// Per-channel replica statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelSamples {
    pub name: String,
    pub beta: f64,
    pub linear: Vec<f64>,
    /// Empirically centered log averages.
    pub log: Vec<f64>,
    pub center_z: Vec<f64>,
    pub inv_sq_mean: Vec<f64>,
    pub sq_mean: Vec<f64>,
    pub sites: u64,
    /// Pooled `#{log Z ≤ -t}` over all replicas and sites.
    pub log_tail_counts: Vec<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McSummary {
    pub config_hash: String,
    pub replicas: u64,
    pub seed: u64,
    pub tail_grid: Vec<f64>,
    pub channels: Vec<ChannelSamples>,
}

impl McSummary {
    pub fn channel(&self, name: &str) -> Option<&ChannelSamples> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn from_records(cfg: &McConfig, records: &[ReplicaRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NoSamples("no replica records".into()));
        }
        let hash = cfg.hash();
        let mut channels = Vec::new();
        for (i, spec) in cfg.channels.iter().enumerate() {
            let mut s = ChannelSamples {
                name: spec.name.clone(),
                beta: spec.beta,
                linear: Vec::new(),
                log: Vec::new(),
                center_z: Vec::new(),
                inv_sq_mean: Vec::new(),
                sq_mean: Vec::new(),
                sites: 0,
                log_tail_counts: vec![0; cfg.tail_grid.len()],
            };
            let mut raw = Vec::new();
            for r in records {
                if r.config_hash != hash {
                    return Err(Error::Config(format!(
                        "record for replica {} has config hash {}, expected {hash}",
                        r.replica, r.config_hash
                    )));
                }
                let c = &r.channels[i];
                s.linear.push(c.linear);
                raw.push(c.log_raw);
                s.center_z.push(c.center_z);
                s.inv_sq_mean.push(c.inv_sq_mean);
                s.sq_mean.push(c.sq_mean);
                s.sites = c.sites;
                for (acc, v) in s.log_tail_counts.iter_mut().zip(&c.log_tail_counts) {
                    *acc += v;
                }
            }
            s.log = center_samples(&raw);
            channels.push(s);
        }
        Ok(Self {
            config_hash: hash,
            replicas: records.len() as u64,
            seed: cfg.seed,
            tail_grid: cfg.tail_grid.clone(),
            channels,
        })
    }
}

/// Sweep all channels of one replica and reduce to its record.
pub fn run_replica(cfg: &McConfig, sampled: &SampledTest, replica: u64) -> Result<ReplicaRecord> {
    let wrap = |e: Error| Error::Replica {
        replica,
        source: Box::new(e),
    };
    let engine = cfg.engine_config().map_err(wrap)?;
    let disorder = DisorderField::new(cfg.law, cfg.seed, replica, cfg.dim).map_err(wrap)?;
    let channels: Vec<Channel> = cfg
        .channels
        .iter()
        .map(|c| Channel::new(c.beta, c.mask.clone()))
        .collect();
    let fields = partition_fields(&engine, &channels, &disorder).map_err(wrap)?;
    let mut out = Vec::with_capacity(fields.len());
    for (spec, field) in cfg.channels.iter().zip(&fields) {
        let linear = averaged_field(field, sampled, cfg.dim, cfg.n).map_err(wrap)?;
        let log_raw = log_pairing(field, sampled, cfg.dim, cfg.n).map_err(wrap)?;
        let mut counts = vec![0u64; cfg.tail_grid.len()];
        let mut inv_sq = CompensatedSum::new();
        let mut sq = CompensatedSum::new();
        for &z in &field.values {
            let lz = z.ln();
            for (c, t) in counts.iter_mut().zip(&cfg.tail_grid) {
                if lz <= -t {
                    *c += 1;
                }
            }
            inv_sq.add(1.0 / (z * z));
            sq.add(z * z);
        }
        let sites = field.values.len() as u64;
        out.push(ChannelRecord {
            name: spec.name.clone(),
            linear,
            log_raw,
            sites,
            log_tail_counts: counts,
            inv_sq_mean: inv_sq.value() / sites as f64,
            sq_mean: sq.value() / sites as f64,
            center_z: field.get(field.query.center()).unwrap(),
        });
    }
    Ok(ReplicaRecord {
        schema: RECORD_SCHEMA,
        config_hash: cfg.hash(),
        replica,
        seed: cfg.seed,
        channels: out,
    })
}

/// Execution knobs that do not change the results.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Replicas per checkpoint batch (0 for a single batch).
    pub checkpoint_every: usize,
    /// Worker threads (`None` for the rayon default).
    pub threads: Option<usize>,
    /// Keep valid records already present in the JSONL sink.
    pub resume: bool,
}

/// Read the records of a JSONL file that belong to `cfg`, in replica order
/// `0, 1, ...`; stops at the first gap or unparsable line.
pub fn read_records(path: &Path, cfg: &McConfig) -> Result<Vec<ReplicaRecord>> {
    let hash = cfg.hash();
    let file = File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let Ok(rec) = serde_json::from_str::<ReplicaRecord>(&line) else {
            break;
        };
        if rec.config_hash != hash {
            return Err(Error::Config(format!(
                "{} holds records of config {}, not {hash}",
                path.display(),
                rec.config_hash
            )));
        }
        if rec.replica != out.len() as u64 || rec.channels.len() != cfg.channels.len() {
            break;
        }
        out.push(rec);
        if out.len() as u64 == cfg.replicas {
            break;
        }
    }
    Ok(out)
}

fn write_records(path: &Path, records: &[ReplicaRecord], append: bool) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    file.write_all(&buf)?;
    file.sync_data()?;
    Ok(())
}

/// Run `cfg.replicas` replicas. With a sink, records are appended in replica
/// order after every batch, so the file content does not depend on the
/// thread count and an interrupted run can resume.
pub fn run_monte_carlo(cfg: &McConfig, sink: Option<&Path>, opts: &RunOptions) -> Result<McSummary> {
    cfg.validate()?;
    let sampled = cfg.phi.sample(cfg.n);
    let mut records = match sink {
        Some(p) if opts.resume && p.exists() => read_records(p, cfg)?,
        _ => Vec::new(),
    };
    if let Some(p) = sink {
        // rewrite so a torn trailing line from an interrupted run is dropped
        write_records(p, &records, false)?;
    }
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = opts.threads {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?
    };
    let batch = if opts.checkpoint_every == 0 {
        cfg.replicas.max(1)
    } else {
        opts.checkpoint_every as u64
    };
    let mut next = records.len() as u64;
    while next < cfg.replicas {
        let end = (next + batch).min(cfg.replicas);
        let fresh: Vec<ReplicaRecord> = pool.install(|| {
            (next..end)
                .into_par_iter()
                .map(|r| run_replica(cfg, &sampled, r))
                .collect::<Result<Vec<_>>>()
        })?;
        if let Some(p) = sink {
            write_records(p, &fresh, true)?;
        }
        records.extend(fresh);
        next = end;
    }
    McSummary::from_records(cfg, &records)
}
