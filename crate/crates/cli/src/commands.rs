use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use polymer_core::chaos::{exact_variance_after, overlap_mgf, variance_report, VarianceReport};
use polymer_core::diagnostics::{left_tail_curve, moment_stability, run_diagnostics, DiagSummary, Estimate, TailPoint};
use polymer_core::disorder::{beta_l2, DisorderField};
use polymer_core::engine::{floor_pow, partition_fields, Channel, MaskSpec};
use polymer_core::estimator::{run_monte_carlo, McConfig, McSummary, RunOptions};
use polymer_core::io::{fmt_f64, read_json, unix_now, write_csv, write_json, write_sidecar};
use polymer_core::oracle::equivalence_suite;
use polymer_core::report::{self, Verdict};
use polymer_core::stats::BOOTSTRAP_DEFAULT;
use polymer_core::walk::{llt_envelope, shared_return_series};

use crate::Ctx;

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

#[derive(Serialize)]
struct KernelsOutput {
    config_hash: String,
    dim: usize,
    pi_d: f64,
    pi_error: f64,
    r_inf: f64,
    tail_bound: f64,
    law: String,
    beta_l2: Option<f64>,
}

pub fn kernels(ctx: &Ctx) -> Result<bool> {
    let started = unix_now();
    let cfg = &ctx.cfg;
    let hash = cfg.hash();
    let series = shared_return_series(cfg.dim)?;
    let crit = beta_l2(cfg.law, cfg.dim)?;
    let n_max = cfg.n.iter().copied().max().unwrap_or(1).max(1);
    let rows: Vec<Vec<String>> = (1..=n_max)
        .map(|n| {
            let q = series.q(n);
            let llt = llt_envelope(cfg.dim, n);
            vec![
                n.to_string(),
                fmt_f64(q),
                fmt_f64(series.r(n)),
                fmt_f64(llt),
                fmt_f64(q / llt),
            ]
        })
        .collect();
    let csv = ctx.out.join("kernels.csv");
    write_csv(&csv, &hash, &["n", "q2n_0", "r_n", "llt", "q_over_llt"], &rows)?;
    let json = ctx.out.join("kernels.json");
    write_json(
        &json,
        &KernelsOutput {
            config_hash: hash,
            dim: cfg.dim,
            pi_d: series.pi_d,
            pi_error: series.pi_error,
            r_inf: series.r_inf,
            tail_bound: series.tail_bound,
            law: cfg.law.name().into(),
            beta_l2: crit.finite.then_some(crit.beta),
        },
    )?;
    println!(
        "d = {}: π_d = {:.7} (± {:.1e}), R_∞ = {:.7}, β_L2 = {}",
        cfg.dim,
        series.pi_d,
        series.pi_error,
        series.r_inf,
        if crit.finite {
            format!("{:.7}", crit.beta)
        } else {
            "∞".into()
        }
    );
    let side = write_sidecar(&ctx.out, "kernels", "kernels", started)?;
    print_written(&[csv, json, side]);
    Ok(true)
}

#[derive(Serialize)]
struct AnalyticsOutput {
    config_hash: String,
    beta: f64,
    beta_l2: Option<f64>,
    overlap_limit: Option<f64>,
    rows: Vec<AnalyticsRow>,
}

#[derive(Serialize)]
struct AnalyticsRow {
    overlap_mgf: f64,
    report: VarianceReport,
}

pub fn analytics(ctx: &Ctx) -> Result<bool> {
    let started = unix_now();
    let cfg = &ctx.cfg;
    let resolved = cfg.validate()?;
    let phi = cfg.phi_function()?;
    let hash = cfg.hash();
    let n_max = cfg.n.iter().copied().max().unwrap();
    let e = overlap_mgf(cfg.dim, cfg.law, resolved.beta, n_max)?;
    let mut rows = Vec::new();
    let (mut table, mut degrees) = (Vec::new(), Vec::new());
    for &n in &cfg.n {
        let r = variance_report(cfg.dim, cfg.law, resolved.beta, n, &phi, cfg.truncation_degree)?;
        let limit = r.limit.map(|l| l.value);
        table.push(vec![
            n.to_string(),
            fmt_f64(r.exact),
            limit.map(fmt_f64).unwrap_or_default(),
            limit.map(|l| fmt_f64((r.exact - l).abs() / l)).unwrap_or_default(),
            r.m.to_string(),
            fmt_f64(r.tail),
            fmt_f64(e.get(n)),
        ]);
        for (k, v) in r.per_degree.iter().enumerate() {
            degrees.push(vec![n.to_string(), (k + 1).to_string(), fmt_f64(*v)]);
        }
        println!(
            "N = {n}: exact variance {:.6e}, limit {}, truncation gap (M = {}) {:.3e}",
            r.exact,
            limit.map(|l| format!("{l:.6e}")).unwrap_or_else(|| "∞".into()),
            r.m,
            r.tail
        );
        rows.push(AnalyticsRow {
            overlap_mgf: e.get(n),
            report: r,
        });
    }
    let csv = ctx.out.join("analytics.csv");
    write_csv(
        &csv,
        &hash,
        &[
            "n",
            "exact_variance",
            "limit_variance",
            "relative_gap",
            "m",
            "truncation_gap",
            "overlap_mgf",
        ],
        &table,
    )?;
    let deg = ctx.out.join("analytics_degrees.csv");
    write_csv(&deg, &hash, &["n", "k", "var_k"], &degrees)?;
    let json = ctx.out.join("analytics.json");
    write_json(
        &json,
        &AnalyticsOutput {
            config_hash: hash,
            beta: resolved.beta,
            beta_l2: resolved.beta_l2,
            overlap_limit: e.limit,
            rows,
        },
    )?;
    let side = write_sidecar(&ctx.out, "analytics", "analytics", started)?;
    print_written(&[csv, deg, json, side]);
    Ok(true)
}

/// Exact variance of one channel's averaged field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelReference {
    pub name: String,
    pub beta: f64,
    /// Disorder before this time is masked out.
    pub cut: usize,
    pub exact_variance: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulateOutput {
    pub config_hash: String,
    pub n: usize,
    pub mc: McConfig,
    pub mc_hash: String,
    pub references: Vec<ChannelReference>,
    pub summary: McSummary,
}

fn channel_cut(mask: &MaskSpec, n: usize) -> Result<usize> {
    Ok(match mask {
        MaskSpec::Full => 0,
        MaskSpec::Tail { rho } => floor_pow(n, *rho),
        MaskSpec::TailCut { cut } => *cut,
        other => bail!("no exact variance for mask {}", other.label()),
    })
}

pub fn simulate(ctx: &Ctx) -> Result<bool> {
    let cfg = &ctx.cfg;
    let hash = cfg.hash();
    let opts = RunOptions {
        checkpoint_every: cfg.checkpoint_every,
        threads: cfg.threads,
        resume: ctx.resume,
    };
    for &n in &cfg.n {
        let started = unix_now();
        let mc = cfg.mc_config(n)?;
        let stem = format!("simulate_N{n}");
        let jsonl = ctx.out.join(format!("{stem}.jsonl"));
        let summary = run_monte_carlo(&mc, Some(&jsonl), &opts)?;
        let mut references = Vec::new();
        for c in &mc.channels {
            let cut = channel_cut(&c.mask, n)?;
            references.push(ChannelReference {
                name: c.name.clone(),
                beta: c.beta,
                cut,
                exact_variance: exact_variance_after(cfg.dim, cfg.law, c.beta, n, &mc.phi, cut)?,
            });
        }
        let mut header = vec!["replica".to_string()];
        for c in &summary.channels {
            for f in ["linear", "log", "center_z"] {
                header.push(format!("{}_{f}", c.name));
            }
        }
        let rows: Vec<Vec<String>> = (0..summary.replicas as usize)
            .map(|r| {
                let mut row = vec![r.to_string()];
                for c in &summary.channels {
                    row.extend([fmt_f64(c.linear[r]), fmt_f64(c.log[r]), fmt_f64(c.center_z[r])]);
                }
                row
            })
            .collect();
        let csv = ctx.out.join(format!("{stem}.csv"));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&csv, &hash, &header_refs, &rows)?;
        let json = ctx.out.join(format!("{stem}.summary.json"));
        let mc_hash = mc.hash();
        for (c, r) in summary.channels.iter().zip(&references) {
            let (var, se) = polymer_core::stats::variance_with_se(&c.linear);
            println!(
                "N = {n} {}: {} replicas, sample variance {var:.5e} ± {se:.1e}, exact {:.5e}",
                c.name, summary.replicas, r.exact_variance
            );
        }
        write_json(
            &json,
            &SimulateOutput {
                config_hash: hash.clone(),
                n,
                mc,
                mc_hash,
                references,
                summary,
            },
        )?;
        let side = write_sidecar(&ctx.out, &stem, "simulate", started)?;
        print_written(&[jsonl, csv, json, side]);
    }
    Ok(true)
}

pub fn oracle(ctx: &Ctx) -> Result<bool> {
    let cfg = &ctx.cfg;
    let resolved = cfg.validate()?;
    let verdicts = equivalence_suite(cfg.dim, cfg.law, resolved.beta, cfg.seed)?;
    print!("{}", report::render(&verdicts));
    let json = ctx.out.join("oracle.json");
    write_json(&json, &verdicts)?;
    print_written(&[json]);
    Ok(verdicts.iter().all(|v| v.pass))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DiagnoseOutput {
    pub config_hash: String,
    pub n: usize,
    pub beta: f64,
    /// `E[Z_N²] = e_N`.
    pub second_moment: f64,
    /// `P(log Z ≤ -t)` at the support center.
    pub left_tail: Vec<TailPoint>,
    pub summary: DiagSummary,
}

pub fn diagnose(ctx: &Ctx) -> Result<bool> {
    let cfg = &ctx.cfg;
    let hash = cfg.hash();
    let phi = cfg.phi_function()?;
    let mut rows = Vec::new();
    let mut written = Vec::new();
    let started = unix_now();
    for &n in &cfg.n {
        let dc = cfg.diag_config(n)?;
        let s = run_diagnostics(&dc, &phi, cfg.replicas, cfg.seed, &cfg.eps_grid)?;
        let log_z: Vec<f64> = s.records.iter().map(|r| r.log_z_center).collect();
        let out = DiagnoseOutput {
            config_hash: hash.clone(),
            n,
            beta: dc.beta,
            second_moment: overlap_mgf(cfg.dim, cfg.law, dc.beta, n)?.get(n),
            left_tail: left_tail_curve(&log_z, &cfg.tail_grid),
            summary: s,
        };
        let s = &out.summary;
        println!(
            "N = {n}: remainder {:.4e} ± {:.1e}, residual {:.4e} ± {:.1e}, E[Z^-2] {:.4} ± {:.4}",
            s.remainder_norm.value,
            s.remainder_norm.se,
            s.factorization_residual.value,
            s.factorization_residual.se,
            s.inv_sq_moment.value,
            s.inv_sq_moment.se
        );
        let mut row = vec![n.to_string()];
        for e in [s.remainder_norm, s.factorization_residual, s.inv_sq_moment, s.sq_moment] {
            row.extend([fmt_f64(e.value), fmt_f64(e.se)]);
        }
        row.push(fmt_f64(out.second_moment));
        for e in &s.z_hat_sq {
            row.extend([fmt_f64(e.value), fmt_f64(e.se)]);
        }
        rows.push(row);
        let json = ctx.out.join(format!("diagnose_N{n}.json"));
        write_json(&json, &out)?;
        written.push(json);
    }
    let mut header: Vec<String> = [
        "n",
        "remainder_norm",
        "remainder_se",
        "residual",
        "residual_se",
        "inv_sq",
        "inv_sq_se",
        "sq",
        "sq_se",
        "second_moment",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for e in &cfg.eps_grid {
        header.push(format!("zhat_sq_eps{e}"));
        header.push(format!("zhat_sq_eps{e}_se"));
    }
    let csv = ctx.out.join("diagnose.csv");
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&csv, &hash, &header_refs, &rows)?;
    written.push(csv);
    written.push(write_sidecar(&ctx.out, "diagnose", "diagnose", started)?);
    print_written(&written);
    Ok(true)
}

fn matching_files(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<(usize, PathBuf)> = Vec::new();
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(_) => return Ok(Vec::new()),
    };
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(n) = name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_suffix(suffix))
            .and_then(|n| n.parse().ok())
        {
            out.push((n, path));
        }
    }
    out.sort();
    Ok(out.into_iter().map(|(_, p)| p).collect())
}

fn simulate_verdicts(out: &SimulateOutput, seed: u64) -> Result<Vec<Verdict>> {
    let mut v = Vec::new();
    let n = out.n;
    for (c, r) in out.summary.channels.iter().zip(&out.references) {
        let label = format!("N={n} {}", c.name);
        v.extend(report::gaussianity(
            &label,
            &c.linear,
            r.exact_variance,
            BOOTSTRAP_DEFAULT,
            seed,
        )?);
        v.push(report::log_vs_linear(&label, &c.log, &c.linear, 0.15));
    }
    // tail channels against the full channel at the same β
    for (spec, c) in out.mc.channels.iter().zip(&out.summary.channels) {
        if !matches!(spec.mask, MaskSpec::Tail { .. } | MaskSpec::TailCut { .. }) {
            continue;
        }
        let full = out
            .mc
            .channels
            .iter()
            .zip(&out.summary.channels)
            .find(|(s, _)| s.mask == MaskSpec::Full && s.beta == spec.beta);
        if let Some((_, f)) = full {
            v.push(report::paired_variances(
                &format!("N={n} {} vs {}: variance", c.name, f.name),
                &c.linear,
                &f.linear,
                3.0,
            ));
        }
    }
    Ok(v)
}

fn strictly_decreasing(label: &str, points: &[(usize, Estimate)]) -> Verdict {
    let pass = points.windows(2).all(|w| w[1].1.value < w[0].1.value);
    Verdict {
        criterion: format!(
            "{label} strictly decreasing over N = {:?}",
            points.iter().map(|p| p.0).collect::<Vec<_>>()
        ),
        value: points.last().map_or(f64::NAN, |p| p.1.value),
        reference: points.first().map_or(f64::NAN, |p| p.1.value),
        tolerance: "monotone".into(),
        pass,
    }
}

fn diagnose_verdicts(outs: &[DiagnoseOutput]) -> Vec<Verdict> {
    let mut v = Vec::new();
    if outs.len() >= 2 {
        let rem: Vec<_> = outs.iter().map(|o| (o.n, o.summary.remainder_norm)).collect();
        let res: Vec<_> = outs.iter().map(|o| (o.n, o.summary.factorization_residual)).collect();
        v.push(strictly_decreasing("remainder norm", &rem));
        v.push(strictly_decreasing("factorization residual", &res));
        let inv: Vec<_> = outs.iter().map(|o| (o.n, o.summary.inv_sq_moment)).collect();
        let st = moment_stability(&inv, 3.0);
        v.push(Verdict {
            criterion: "E[Z^-2] stable across N".into(),
            value: st.max_z,
            reference: 3.0,
            tolerance: "3 joint SE".into(),
            pass: st.stable,
        });
    }
    for o in outs {
        let s = &o.summary;
        let mut by_eps: Vec<(f64, Estimate)> = s.eps_grid.iter().copied().zip(s.z_hat_sq.iter().copied()).collect();
        by_eps.sort_by(|a, b| a.0.total_cmp(&b.0));
        if by_eps.len() >= 2 {
            v.push(Verdict {
                criterion: format!("N={} E[(Ẑ^A)²] decreasing in ε", o.n),
                value: by_eps.last().unwrap().1.value,
                reference: by_eps[0].1.value,
                tolerance: "monotone".into(),
                pass: by_eps.windows(2).all(|w| w[1].1.value < w[0].1.value),
            });
        }
        let e = s.sq_moment;
        v.push(Verdict {
            criterion: format!("N={} E[Z²] vs e_N", o.n),
            value: e.value,
            reference: o.second_moment,
            tolerance: format!("3 SE (SE {:.2e})", e.se),
            pass: (e.value - o.second_moment).abs() <= 3.0 * e.se,
        });
        if let Some(p) = o.left_tail.iter().find(|p| p.t == 2.0) {
            v.push(Verdict {
                criterion: format!("N={} P(log Z ≤ -2)", o.n),
                value: p.p,
                reference: 0.01,
                tolerance: "< 0.01".into(),
                pass: p.p < 0.01,
            });
        }
    }
    v
}

pub fn report(ctx: &Ctx) -> Result<bool> {
    let sims = matching_files(&ctx.out, "simulate_N", ".summary.json")?;
    let diags = matching_files(&ctx.out, "diagnose_N", ".json")?;
    let oracle_file = ctx.out.join("oracle.json");
    if sims.is_empty() && diags.is_empty() && !oracle_file.exists() {
        bail!(
            "no samples: no simulate, diagnose or oracle outputs in {}",
            ctx.out.display()
        );
    }
    let mut verdicts = Vec::new();
    if oracle_file.exists() {
        verdicts.extend(read_json::<Vec<Verdict>>(&oracle_file)?);
    }
    for p in &sims {
        let out: SimulateOutput = read_json(p).with_context(|| format!("reading {}", p.display()))?;
        if out.summary.replicas == 0 {
            bail!("no samples in {}", p.display());
        }
        verdicts.extend(simulate_verdicts(&out, ctx.cfg.seed).with_context(|| format!("{}", p.display()))?);
    }
    let mut outs = Vec::new();
    for p in &diags {
        outs.push(read_json::<DiagnoseOutput>(p).with_context(|| format!("reading {}", p.display()))?);
    }
    verdicts.extend(diagnose_verdicts(&outs));
    print!("{}", report::render(&verdicts));
    let json = ctx.out.join("report.json");
    write_json(&json, &verdicts)?;
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("{} checks, {failed} failed", verdicts.len());
    Ok(failed == 0)
}

pub fn dump_field(ctx: &Ctx, replica: u64, n: Option<usize>) -> Result<bool> {
    let cfg = &ctx.cfg;
    let n = n.unwrap_or(cfg.n[0]);
    let mc = cfg.mc_config(n)?;
    let engine = mc.engine_config()?;
    let disorder = DisorderField::new(cfg.law, cfg.seed, replica, cfg.dim)?;
    let channels: Vec<Channel> = mc
        .channels
        .iter()
        .map(|c| Channel::new(c.beta, c.mask.clone()))
        .collect();
    let fields = partition_fields(&engine, &channels, &disorder)?;
    let mut header: Vec<String> = (0..cfg.dim).map(|i| format!("x{i}")).collect();
    header.extend(["channel".into(), "z".into(), "log_z".into()]);
    let mut rows = Vec::new();
    for (spec, f) in mc.channels.iter().zip(&fields) {
        for (i, x) in f.query.sites().enumerate() {
            let z = f.values[i];
            let mut row: Vec<String> = x.iter().map(|c| c.to_string()).collect();
            row.extend([spec.name.clone(), fmt_f64(z), fmt_f64(z.ln())]);
            rows.push(row);
        }
    }
    let csv = ctx.out.join(format!("field_N{n}_r{replica}.csv"));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&csv, &cfg.hash(), &header_refs, &rows)?;
    print_written(&[csv]);
    Ok(true)
}
