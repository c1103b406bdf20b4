use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

mod commands;

/// Directed polymers in d ≥ 3: exact fields, chaos analytics and Monte Carlo
/// checks of Edwards-Wilkinson fluctuations.
#[derive(Parser, Debug)]
#[command(name = "polymer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Experiment config (TOML). A built-in default is used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the replica count.
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory. Defaults to the config's `out`, then $POLYMER_OUT,
    /// then ./polymer-out.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep valid replica records from an earlier, interrupted run.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Return probabilities q_{2n}(0), partial sums R_n, π_d and β_L2.
    Kernels(Common),
    /// Exact and limiting variances of the averaged field with the degree table.
    Analytics(Common),
    /// Monte Carlo replicas of the averaged fields.
    Simulate(Common),
    /// Exactness checks against brute-force path enumeration.
    Oracle(Common),
    /// Window decomposition, remainders, tails and moments of log Z.
    Diagnose(Common),
    /// Verdict table over earlier simulate and diagnose outputs.
    Report(Common),
    /// One replica's fields as CSV (x, Z, log Z).
    DumpField {
        #[command(flatten)]
        common: Common,
        /// Replica index.
        #[arg(long, default_value_t = 0)]
        replica: u64,
        /// Horizon (defaults to the first entry of the N grid).
        #[arg(long)]
        n: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Kernels(c) => commands::kernels(&Ctx::new(&c)?),
        Command::Analytics(c) => commands::analytics(&Ctx::new(&c)?),
        Command::Simulate(c) => commands::simulate(&Ctx::new(&c)?),
        Command::Oracle(c) => commands::oracle(&Ctx::new(&c)?),
        Command::Diagnose(c) => commands::diagnose(&Ctx::new(&c)?),
        Command::Report(c) => commands::report(&Ctx::new(&c)?),
        Command::DumpField { common, replica, n } => commands::dump_field(&Ctx::new(&common)?, replica, n),
    }
}

const DEFAULT_CONFIG: &str = r#"
beta = "0.5*betaL2"

[phi]
kind = "gaussian_bump"
scale = 0.5
cutoff = 1.0
"#;

/// Resolved config, output directory and execution knobs.
pub struct Ctx {
    pub cfg: polymer_core::config::ExperimentConfig,
    pub out: PathBuf,
    pub resume: bool,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self> {
        let mut cfg = match &c.config {
            Some(p) => polymer_core::config::load_config(p)?,
            None => polymer_core::config::ExperimentConfig::from_toml(DEFAULT_CONFIG)?,
        };
        if let Some(r) = c.replicas {
            cfg.replicas = r;
        }
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        if let Some(t) = c.threads {
            if t == 0 {
                bail!("--threads must be positive");
            }
            cfg.threads = Some(t);
        }
        if let Some(t) = cfg.threads {
            // ignore a second initialization, the pool is process-wide
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
        let out = polymer_core::io::output_root(c.out.as_deref().or(cfg.out.as_deref()));
        ensure_dir(&out)?;
        Ok(Self {
            cfg,
            out,
            resume: c.resume,
        })
    }
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating output directory {}", p.display()))
}
