//! Batch front end: subcommand dispatch, config handling, and artifact
//! emission (JSON summaries, CSV tables, PGM heatmaps).
//!
//! Subcommands: `solve`, `envelope`, `duality`, `alpha`, `mt`,
//! `sweep-beta-inf`, `report`. Every subcommand takes `--config <path>`
//! plus optional overrides `--beta <f>`, `--grid <n>`, `--out <dir>`.
//!
//! Exit codes: 0 on success, 2 on configuration errors (with a
//! line-numbered message), 3 when a solve ends in `Diverged` or
//! `CoercivityFailed` (numeric artifacts are still written).
//!
//! All emitted files are deterministic for a fixed config and seed, except
//! for the `wall_time_ms` field of the JSON summaries.

use crate::alpha::{alpha_estimate, coercivity_probe, frostman_exponent, mt_constant_fit};
use crate::config::RunConfig;
use crate::envelope::{envelope_zero, orthogonality_residual, EnvelopeParams};
use crate::error::Result;
use crate::functionals::{ding, free_energy, functional_report, ma_measure, SolverParams};
use crate::grid::ScalarField;
use crate::io::{fmt_f64, json_f64, write_csv, write_json, write_pgm};
use crate::mean_field::{beta_infinity_sweep, solve, SolveResult, Verdict};
use crate::probes::random_admissible;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::time::Instant;

const USAGE: &str = "usage: mfme <solve|envelope|duality|alpha|mt|sweep-beta-inf|report> \
--config <path> [--beta <f>] [--grid <n>] [--out <dir>]";

/// Run the CLI; returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    match run_inner(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run_inner(args: Vec<String>) -> Result<i32> {
    let mut iter = args.into_iter();
    let sub = match iter.next() {
        Some(s) => s,
        None => {
            eprintln!("{USAGE}");
            return Ok(2);
        }
    };
    if sub == "help" || sub == "--help" || sub == "-h" {
        println!("{USAGE}");
        return Ok(0);
    }
    let mut config_path: Option<PathBuf> = None;
    let mut beta_override: Option<f64> = None;
    let mut grid_override: Option<usize> = None;
    let mut out_override: Option<PathBuf> = None;
    while let Some(flag) = iter.next() {
        let mut value = |name: &str| {
            iter.next()
                .ok_or_else(|| crate::Error::Invalid(format!("{name} requires a value")))
        };
        match flag.as_str() {
            "--config" => config_path = Some(PathBuf::from(value("--config")?)),
            "--beta" => {
                beta_override = Some(
                    value("--beta")?
                        .parse()
                        .map_err(|_| crate::Error::Invalid("invalid --beta value".into()))?,
                )
            }
            "--grid" => {
                grid_override = Some(
                    value("--grid")?
                        .parse()
                        .map_err(|_| crate::Error::Invalid("invalid --grid value".into()))?,
                )
            }
            "--out" => out_override = Some(PathBuf::from(value("--out")?)),
            other => {
                return Err(crate::Error::Invalid(format!(
                    "unknown flag `{other}`; {USAGE}"
                )))
            }
        }
    }
    let mut cfg = match config_path {
        Some(p) => RunConfig::from_file(&p)?,
        None => RunConfig::default(),
    };
    if let Some(b) = beta_override {
        cfg.beta = b;
    }
    if let Some(n) = grid_override {
        cfg.n_side = n;
    }
    if let Some(o) = out_override {
        cfg.output_dir = o;
    }
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| crate::Error::Invalid(format!("cannot create output dir: {e}")))?;

    match sub.as_str() {
        "solve" => cmd_solve(&cfg),
        "envelope" => cmd_envelope(&cfg),
        "duality" => cmd_duality(&cfg),
        "alpha" => cmd_alpha(&cfg),
        "mt" => cmd_mt(&cfg),
        "sweep-beta-inf" => cmd_sweep(&cfg),
        "report" => cmd_report(&cfg),
        other => Err(crate::Error::Invalid(format!(
            "unknown subcommand `{other}`; {USAGE}"
        ))),
    }
}

fn solver_params(cfg: &RunConfig) -> Result<SolverParams> {
    let grid = cfg.grid()?;
    let mut params = SolverParams::for_beta(cfg.beta, grid);
    params.tol_residual = cfg.tol_residual;
    params.tol_gap = cfg.tol_gap;
    params.max_iter = cfg.max_iter;
    if let Some(d) = cfg.damping {
        params.damping = d;
    }
    params.coercivity_override = cfg.override_coercivity;
    Ok(params)
}

fn history_csv(path: &Path, sol: &SolveResult) -> std::io::Result<()> {
    let rows: Vec<Vec<String>> = sol
        .history
        .iter()
        .map(|r| {
            vec![
                r.iter.to_string(),
                fmt_f64(r.residual),
                fmt_f64(r.f),
                fmt_f64(r.g),
                fmt_f64(r.gap),
            ]
        })
        .collect();
    write_csv(path, &["iter", "residual", "F", "G", "gap"], &rows)
}

fn verdict_exit(verdict: Verdict) -> i32 {
    match verdict {
        Verdict::Diverged | Verdict::CoercivityFailed => 3,
        _ => 0,
    }
}

fn cmd_solve(cfg: &RunConfig) -> Result<i32> {
    let start = Instant::now();
    let omega = cfg.background_form()?;
    let mu0 = cfg.measure()?;
    let params = solver_params(cfg)?;
    let sol = solve(cfg.beta, &mu0, &omega, &params)?;
    let out = &cfg.output_dir;
    history_csv(&out.join("history.csv"), &sol).map_err(io_err)?;
    if cfg.heatmaps {
        write_pgm(&out.join("u.pgm"), sol.u_star.field()).map_err(io_err)?;
        write_pgm(&out.join("mu.pgm"), &sol.mu_star.grid_density()).map_err(io_err)?;
    }
    let mut summary = json!({
        "config": cfg.echo(),
        "verdict": format!("{:?}", sol.verdict),
        "beta": json_f64(sol.beta),
        "iterations": sol.iterations,
        "residual_linf": json_f64(sol.residual_linf),
        "gap": json_f64(sol.gap),
        "sup_u": json_f64(sol.u_star.field().max()),
        "slack": json_f64(sol.u_star.slack()),
    });
    if sol.verdict == Verdict::Converged && cfg.beta != 0.0 {
        let report = functional_report(&sol.u_star, &mu0, cfg.beta, &omega)?;
        let obj = summary.as_object_mut().unwrap();
        obj.insert("E".into(), json_f64(report.e));
        obj.insert("I".into(), json_f64(report.i));
        obj.insert("J".into(), json_f64(report.j));
        obj.insert("D".into(), json_f64(report.d));
        obj.insert("L".into(), json_f64(report.l));
        obj.insert("F".into(), json_f64(report.f));
        obj.insert("G".into(), json_f64(report.g));
        obj.insert("K".into(), json_f64(report.k));
    }
    summary.as_object_mut().unwrap().insert(
        "wall_time_ms".into(),
        json!(start.elapsed().as_millis() as u64),
    );
    write_json(&out.join("solution.json"), &summary).map_err(io_err)?;
    Ok(verdict_exit(sol.verdict))
}

fn cmd_envelope(cfg: &RunConfig) -> Result<i32> {
    let start = Instant::now();
    let omega = cfg.background_form()?;
    let env = envelope_zero(&omega, EnvelopeParams::default())?;
    let orth = orthogonality_residual(
        &ScalarField::zeros(omega.grid()),
        &omega,
        EnvelopeParams::default(),
    )?;
    let out = &cfg.output_dir;
    if cfg.heatmaps {
        write_pgm(&out.join("pu.pgm"), env.pu.field()).map_err(io_err)?;
        let mask = ScalarField::from_values(
            omega.grid(),
            env.contact_set
                .iter()
                .map(|&c| if c { 1.0 } else { 0.0 })
                .collect(),
        )?;
        write_pgm(&out.join("contact_set.pgm"), &mask).map_err(io_err)?;
    }
    let contact_fraction =
        env.contact_set.iter().filter(|&&c| c).count() as f64 / env.contact_set.len() as f64;
    let summary = json!({
        "config": cfg.echo(),
        "lcp_residual": json_f64(env.lcp_residual),
        "iterations": env.iterations,
        "contact_fraction": json_f64(contact_fraction),
        "orthogonality_residual": json_f64(orth),
        "max_ma_off_contact": json_f64(env.max_ma_off_contact(&omega)),
        "min_pu": json_f64(env.pu.field().min()),
        "sup_pu": json_f64(env.pu.field().max()),
        "wall_time_ms": start.elapsed().as_millis() as u64,
    });
    write_json(&out.join("envelope.json"), &summary).map_err(io_err)?;
    Ok(0)
}

fn cmd_duality(cfg: &RunConfig) -> Result<i32> {
    let start = Instant::now();
    if cfg.beta == 0.0 {
        return Err(crate::Error::Invalid(
            "duality requires a non-zero beta".into(),
        ));
    }
    let omega = cfg.background_form()?;
    let mu0 = cfg.measure()?;
    let params = solver_params(cfg)?;
    let sol = solve(cfg.beta, &mu0, &omega, &params)?;
    let mut probes_checked = 0usize;
    let mut sandwich_ok = true;
    let mut worst_defect = f64::NEG_INFINITY;
    if sol.verdict == Verdict::Converged && omega.rho().min() > 0.0 {
        let g_star = ding(&sol.u_star, &mu0, cfg.beta, &omega)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..50 {
            let probe = random_admissible(&omega, &mut rng);
            let g = ding(&probe, &mu0, cfg.beta, &omega)?;
            let f = free_energy(&ma_measure(&probe, &omega)?, &mu0, cfg.beta, &omega)?;
            let (lo, hi, apex) = if cfg.beta > 0.0 {
                // F(MA(u)) >= G(u), and the optimum pins inf F = G(u*)
                (g, f, g_star <= f + 1e-9)
            } else {
                // F(MA(u)) <= G(u) <= G(u*)
                (f, g, g <= g_star + 1e-9)
            };
            if lo > hi + 1e-9 || !apex {
                sandwich_ok = false;
            }
            worst_defect = worst_defect.max(lo - hi);
            probes_checked += 1;
        }
    }
    let summary = json!({
        "config": cfg.echo(),
        "verdict": format!("{:?}", sol.verdict),
        "gap": json_f64(sol.gap),
        "residual_linf": json_f64(sol.residual_linf),
        "probes_checked": probes_checked,
        "sandwich_ok": sandwich_ok,
        "worst_sandwich_defect": json_f64(worst_defect),
        "wall_time_ms": start.elapsed().as_millis() as u64,
    });
    write_json(&cfg.output_dir.join("duality.json"), &summary).map_err(io_err)?;
    Ok(verdict_exit(sol.verdict))
}

fn cmd_alpha(cfg: &RunConfig) -> Result<i32> {
    let start = Instant::now();
    let omega = cfg.background_form()?;
    let mu0 = cfg.measure()?;
    let report = alpha_estimate(&mu0, &omega)?;
    let frostman = frostman_exponent(&mu0);
    let rows: Vec<Vec<String>> = report
        .t_samples
        .iter()
        .flat_map(|s| {
            s.trace.iter().map(move |&(level, partial)| {
                vec![
                    fmt_f64(s.t),
                    level.to_string(),
                    fmt_f64(partial),
                    format!("{:?}", s.verdict),
                ]
            })
        })
        .collect();
    write_csv(
        &cfg.output_dir.join("alpha_trace.csv"),
        &["t", "level", "partial_integral", "verdict"],
        &rows,
    )
    .map_err(io_err)?;
    let summary = json!({
        "config": cfg.echo(),
        "alpha_hat": json_f64(report.alpha_hat),
        "probe_family": report.probe_family,
        "grid_levels": report.grid_levels,
        "per_probe": report.per_probe.iter()
            .map(|(n, t)| json!({"probe": n, "threshold": json_f64(*t)}))
            .collect::<Vec<_>>(),
        "frostman_d_hat": json_f64(frostman.d_hat),
        "frostman_lower_bound": json_f64(frostman.d_hat / 2.0),
        "wall_time_ms": start.elapsed().as_millis() as u64,
    });
    write_json(&cfg.output_dir.join("alpha.json"), &summary).map_err(io_err)?;
    Ok(0)
}

fn cmd_mt(cfg: &RunConfig) -> Result<i32> {
    let start = Instant::now();
    let omega = cfg.background_form()?;
    let mu0 = cfg.measure()?;
    let fit = mt_constant_fit(&mu0, &omega)?;
    let gamma = (cfg.beta.abs()).max(0.5);
    let probe = coercivity_probe(gamma, &mu0, &omega)?;
    let summary = json!({
        "config": cfg.echo(),
        "a_fit": json_f64(fit.a_fit),
        "C_fit": json_f64(fit.c_fit),
        "gamma_max": json_f64(fit.gamma_max),
        "witness": fit.witness,
        "coercivity": {
            "gamma": json_f64(probe.gamma),
            "pass": probe.pass,
            "alpha_hat": json_f64(probe.alpha_hat),
            "gamma_threshold": json_f64(probe.gamma_threshold),
            "best_probe_value": json_f64(probe.best_probe_value),
            "witness": probe.witness,
        },
        "wall_time_ms": start.elapsed().as_millis() as u64,
    });
    write_json(&cfg.output_dir.join("mt.json"), &summary).map_err(io_err)?;
    Ok(0)
}

fn cmd_sweep(cfg: &RunConfig) -> Result<i32> {
    let start = Instant::now();
    let omega = cfg.background_form()?;
    let mu0 = cfg.measure()?;
    let mut params = solver_params(cfg)?;
    params.max_iter = params.max_iter.max(60_000);
    let (rows, consistency) = beta_infinity_sweep(&cfg.sweep_betas, &mu0, &omega, &params)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.beta),
                fmt_f64(r.l1_dist),
                fmt_f64(r.linf_dist),
                fmt_f64(r.sup_u),
            ]
        })
        .collect();
    write_csv(
        &cfg.output_dir.join("sweep.csv"),
        &["beta", "l1_dist", "linf_dist", "sup_u"],
        &csv_rows,
    )
    .map_err(io_err)?;
    let decreasing = rows.windows(2).all(|w| w[1].l1_dist < w[0].l1_dist + 1e-9);
    let summary = json!({
        "config": cfg.echo(),
        "rows": rows.len(),
        "l1_decreasing": decreasing,
        "final_over_initial_l1": json_f64(
            rows.last().map(|r| r.l1_dist).unwrap_or(0.0)
                / rows.first().map(|r| r.l1_dist.max(1e-300)).unwrap_or(1.0)
        ),
        "max_consistency_defect": json_f64(
            consistency.iter().cloned().fold(0.0, f64::max)
        ),
        "wall_time_ms": start.elapsed().as_millis() as u64,
    });
    write_json(&cfg.output_dir.join("sweep.json"), &summary).map_err(io_err)?;
    Ok(0)
}

fn cmd_report(cfg: &RunConfig) -> Result<i32> {
    let start = Instant::now();
    if cfg.beta == 0.0 {
        return Err(crate::Error::Invalid(
            "report requires a non-zero beta".into(),
        ));
    }
    let omega = cfg.background_form()?;
    let mu0 = cfg.measure()?;
    let params = solver_params(cfg)?;
    let sol = solve(cfg.beta, &mu0, &omega, &params)?;
    let mut checks = serde_json::Map::new();
    let mut summary = json!({
        "config": cfg.echo(),
        "verdict": format!("{:?}", sol.verdict),
        "residual_linf": json_f64(sol.residual_linf),
        "gap": json_f64(sol.gap),
    });
    if sol.verdict == Verdict::Converged {
        let report = functional_report(&sol.u_star, &mu0, cfg.beta, &omega)?;
        let obj = summary.as_object_mut().unwrap();
        for (k, v) in [
            ("E", report.e),
            ("I", report.i),
            ("J", report.j),
            ("D", report.d),
            ("L", report.l),
            ("F", report.f),
            ("G", report.g),
            ("K", report.k),
        ] {
            obj.insert(k.into(), json_f64(v));
        }
        checks.insert(
            "residual_le_tol".into(),
            json!(sol.residual_linf <= params.tol_residual),
        );
        checks.insert("gap_le_tol".into(), json!(sol.gap <= params.tol_gap));
        checks.insert(
            "i_equals_2j".into(),
            json!((report.i - 2.0 * report.j).abs() <= 1e-9 * (1.0 + report.i.abs())),
        );
        checks.insert(
            "g_equals_e_plus_l".into(),
            json!((report.g - report.e - report.l).abs() <= 1e-10 * (1.0 + report.g.abs())),
        );
        checks.insert("j_nonnegative".into(), json!(report.j >= -1e-12));
        checks.insert("d_nonnegative".into(), json!(report.d >= -1e-12));
    }
    if cfg.beta < 0.0 {
        let alpha = alpha_estimate(&mu0, &omega)?;
        summary
            .as_object_mut()
            .unwrap()
            .insert("alpha_hat".into(), json_f64(alpha.alpha_hat));
    }
    summary
        .as_object_mut()
        .unwrap()
        .insert("checks".into(), serde_json::Value::Object(checks));
    summary.as_object_mut().unwrap().insert(
        "wall_time_ms".into(),
        json!(start.elapsed().as_millis() as u64),
    );
    write_json(&cfg.output_dir.join("report.json"), &summary).map_err(io_err)?;
    Ok(verdict_exit(sol.verdict))
}

fn io_err(e: std::io::Error) -> crate::Error {
    crate::Error::Invalid(format!("i/o error: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_and_unknown_flags() {
        assert_eq!(run(vec![]), 2);
        assert_eq!(run(vec!["help".into()]), 0);
        assert_eq!(run(vec!["frobnicate".into()]), 2);
    }

    #[test]
    fn missing_config_file_is_exit_2() {
        assert_eq!(
            run(vec![
                "solve".into(),
                "--config".into(),
                "/nonexistent/x.cfg".into()
            ]),
            2
        );
    }
}
