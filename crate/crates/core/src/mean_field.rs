//! Solvers for the mean-field equation `MA(u) = e^{beta u} mu_0 / Z` in the
//! regimes beta > 0, beta = 0 and beta < 0, a measure-side mirror descent on
//! the free energy, and the beta -> infinity sweep towards the zero
//! envelope.
//!
//! The potential-side solver is a damped fixed-point (Ricci-iteration
//! style): each step is one Poisson solve
//! `u <- (1 - delta) u + delta * potential(e^{beta u} mu_0 / Z)` in the
//! zero-mean gauge. Convergence is certified independently of the iteration
//! by the duality gap between the Ding functional and the free energy.

use crate::alpha::{alpha_estimate, ALPHA_CRITERION_MARGIN};
use crate::envelope::{envelope_zero, EnvelopeParams};
use crate::error::Result;
use crate::functionals::{
    ding, energy_raw, free_energy, ma_density_raw, ma_measure, potential_of_measure, SolverParams,
};
use crate::grid::{poisson_solve, BackgroundForm, Potential, ScalarField};
use crate::measure::Measure;
use serde::Serialize;
use std::f64::consts::PI;

/// Outcome classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Converged,
    MaxIter,
    Diverged,
    CoercivityFailed,
}

/// One logged iteration: residual and the duality certificate values.
#[derive(Debug, Clone, Copy)]
pub struct HistoryRow {
    pub iter: usize,
    pub residual: f64,
    pub f: f64,
    pub g: f64,
    pub gap: f64,
}

/// Converged (or terminated) potential/measure pair with certificates.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u_star: Potential,
    pub mu_star: Measure,
    pub residual_linf: f64,
    pub gap: f64,
    pub beta: f64,
    pub iterations: usize,
    pub history: Vec<HistoryRow>,
    pub verdict: Verdict,
}

/// L-infinity residual `|| MA(u) - e^{beta u} mu_0 / Z ||`; invariant under
/// `u -> u + c`.
pub fn residual(u: &Potential, beta: f64, mu0: &Measure, omega: &BackgroundForm) -> f64 {
    let target = gibbs_density(u.field(), beta, &mu0.grid_density());
    ma_density_raw(u.field(), omega).linf_dist(&target)
}

/// Normalized density `e^{beta u} rho_0 / Z` on the grid, with
/// max-subtraction for overflow safety.
fn gibbs_density(u: &ScalarField, beta: f64, rho0: &ScalarField) -> ScalarField {
    let m = u
        .values()
        .iter()
        .map(|&v| beta * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = u
        .values()
        .iter()
        .zip(rho0.values())
        .map(|(&uv, &rv)| (beta * uv - m).exp() * rv)
        .collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    for v in &mut w {
        *v /= mean;
    }
    ScalarField::from_values(u.grid(), w).expect("finite after max-subtraction")
}

/// Whether the beta < 0 coercivity precheck passes: gamma below
/// `(2 - margin) * alpha_hat` with the estimated alpha invariant.
pub fn coercivity_precheck(gamma: f64, mu0: &Measure, omega: &BackgroundForm) -> Result<bool> {
    let report = alpha_estimate(mu0, omega)?;
    Ok(gamma < (2.0 - ALPHA_CRITERION_MARGIN) * report.alpha_hat)
}

/// Solve the mean-field equation. For beta = 0 this is one Poisson solve;
/// otherwise the damped fixed-point iteration with the duality-gap
/// certificate. `Converged` requires both the residual and gap tolerances.
pub fn solve(
    beta: f64,
    mu0: &Measure,
    omega: &BackgroundForm,
    params: &SolverParams,
) -> Result<SolveResult> {
    solve_with_init(beta, mu0, omega, params, None)
}

/// `solve` with an explicit initial potential (zero-mean gauge is applied).
pub fn solve_with_init(
    beta: f64,
    mu0: &Measure,
    omega: &BackgroundForm,
    params: &SolverParams,
    init: Option<&ScalarField>,
) -> Result<SolveResult> {
    let grid = omega.grid();
    let rho0 = mu0.grid_density();

    if beta == 0.0 {
        let u = potential_of_measure(mu0, omega)?;
        let res = ma_density_raw(u.field(), omega).linf_dist(&rho0);
        let mu_star = ma_measure(&u, omega)?;
        let verdict = if res <= params.tol_residual {
            Verdict::Converged
        } else {
            Verdict::MaxIter
        };
        return Ok(SolveResult {
            u_star: u,
            mu_star,
            residual_linf: res,
            gap: f64::NAN,
            beta,
            iterations: 1,
            history: vec![HistoryRow {
                iter: 0,
                residual: res,
                f: f64::NAN,
                g: f64::NAN,
                gap: f64::NAN,
            }],
            verdict,
        });
    }

    if beta < 0.0 && !params.coercivity_override {
        let gamma = -beta;
        if !coercivity_precheck(gamma, mu0, omega)? {
            let u = Potential::new(ScalarField::zeros(grid), omega);
            let mu_star = Measure::from_density(rho0.clone())?;
            return Ok(SolveResult {
                u_star: u,
                mu_star,
                residual_linf: f64::NAN,
                gap: f64::NAN,
                beta,
                iterations: 0,
                history: Vec::new(),
                verdict: Verdict::CoercivityFailed,
            });
        }
    }

    let mut u = match init {
        Some(f) => f.zero_mean(),
        None => ScalarField::zeros(grid),
    };
    let mut delta = params.damping.clamp(1e-6, 1.0);
    let mut history: Vec<HistoryRow> = Vec::new();
    let mut residual_log: Vec<f64> = Vec::new();
    let mut prev_res = f64::INFINITY;
    let mut verdict = Verdict::MaxIter;
    let mut gap = f64::INFINITY;
    let mut res = f64::INFINITY;
    let mut iter = 0;

    let log_cadence = |k: usize| k < 16 || k % 32 == 0;
    while iter < params.max_iter {
        let target = gibbs_density(&u, beta, &rho0);
        res = ma_density_raw(&u, omega).linf_dist(&target);
        residual_log.push(res);

        let mut logged_gap = f64::NAN;
        let mut logged_f = f64::NAN;
        let mut logged_g = f64::NAN;
        let need_duality = res <= params.tol_residual || log_cadence(iter);
        if need_duality {
            let pot = Potential::new(u.clone(), omega);
            if pot.is_admissible(params.epsilon_psh) {
                let mu = ma_measure(&pot, omega)?;
                let f = free_energy(&mu, mu0, beta, omega)?;
                let g = ding(&pot, mu0, beta, omega)?;
                logged_f = f;
                logged_g = g;
                logged_gap = if beta > 0.0 { f - g } else { g - f };
            }
        }
        if log_cadence(iter) {
            history.push(HistoryRow {
                iter,
                residual: res,
                f: logged_f,
                g: logged_g,
                gap: logged_gap,
            });
        }
        if res <= params.tol_residual && logged_gap.is_finite() {
            gap = logged_gap;
            if gap <= params.tol_gap {
                verdict = Verdict::Converged;
                break;
            }
        }
        // divergence: sustained growth over a 50-iteration window
        if iter >= 50 {
            let old = residual_log[iter - 50];
            if res.is_finite() && old.is_finite() && res > 10.0 * old && res > 100.0 * params.tol_residual
            {
                verdict = Verdict::Diverged;
                break;
            }
            if !res.is_finite() {
                verdict = Verdict::Diverged;
                break;
            }
        }
        if res > prev_res && res > params.tol_residual {
            delta = (delta * 0.5).max(1e-6);
        }
        prev_res = res;

        let mut rhs = target.clone();
        for (v, r) in rhs.values_mut().iter_mut().zip(omega.rho().values()) {
            *v = (*v - r) * 4.0 * PI;
        }
        let t_u = poisson_solve(&rhs.zero_mean())?;
        u = u.scale(1.0 - delta).axpy(delta, &t_u).zero_mean();
        iter += 1;
    }

    let pot = Potential::new(u, omega);
    if verdict != Verdict::Converged {
        // final certificates for the report
        let target = gibbs_density(pot.field(), beta, &rho0);
        res = ma_density_raw(pot.field(), omega).linf_dist(&target);
        if pot.is_admissible(params.epsilon_psh) {
            let mu = ma_measure(&pot, omega)?;
            let f = free_energy(&mu, mu0, beta, omega)?;
            let g = ding(&pot, mu0, beta, omega)?;
            gap = if beta > 0.0 { f - g } else { g - f };
        }
    }
    history.push(HistoryRow {
        iter,
        residual: res,
        f: f64::NAN,
        g: f64::NAN,
        gap,
    });
    let mu_star = ma_measure(&pot, omega)?;
    Ok(SolveResult {
        u_star: pot,
        mu_star,
        residual_linf: res,
        gap,
        beta,
        iterations: iter,
        history,
        verdict,
    })
}

/// Measure-side optimizer: entropic mirror descent on grid densities over
/// the probability simplex, with backtracking on the free energy. The
/// returned measure must agree with the potential-side solve in L1.
pub fn measure_descent(
    beta: f64,
    mu0: &Measure,
    omega: &BackgroundForm,
    params: &SolverParams,
) -> Result<SolveResult> {
    assert!(beta != 0.0, "measure_descent requires beta != 0");
    let grid = omega.grid();
    let rho0 = mu0.grid_density();
    if beta < 0.0 && !params.coercivity_override {
        let gamma = -beta;
        if !coercivity_precheck(gamma, mu0, omega)? {
            let u = Potential::new(ScalarField::zeros(grid), omega);
            return Ok(SolveResult {
                u_star: u,
                mu_star: Measure::from_density(rho0.clone())?,
                residual_linf: f64::NAN,
                gap: f64::NAN,
                beta,
                iterations: 0,
                history: Vec::new(),
                verdict: Verdict::CoercivityFailed,
            });
        }
    }

    let h2 = grid.cell_area();
    let mut m = rho0.clone(); // density iterate, mass 1
    let eps = 1e-300;
    let f_of = |mm: &ScalarField| -> Result<f64> {
        let mu = Measure::from_density(mm.clone())?;
        free_energy(&mu, mu0, beta, omega)
    };
    let mut f_cur = f_of(&m)?;
    let mut eta = 1.0;
    let mut history = Vec::new();
    let mut verdict = Verdict::MaxIter;
    let mut grad_norm = f64::INFINITY;
    let mut iter = 0;
    let improves = |new: f64, old: f64| {
        if beta > 0.0 {
            new <= old + 1e-14 * (1.0 + old.abs())
        } else {
            new >= old - 1e-14 * (1.0 + old.abs())
        }
    };
    while iter < params.max_iter {
        let mu = Measure::from_density(m.clone())?;
        let u_mu = potential_of_measure(&mu, omega)?;
        // dF/dmu = -u_mu + (log(m / rho0) + 1) / beta, centered on the simplex
        let grad: Vec<f64> = m
            .values()
            .iter()
            .zip(rho0.values())
            .zip(u_mu.field().values())
            .map(|((&mi, &ri), &ui)| {
                let ratio = (mi.max(eps) / ri.max(eps)).ln();
                -ui + (ratio + 1.0) / beta
            })
            .collect();
        let mean_grad: f64 = grad
            .iter()
            .zip(m.values())
            .map(|(&g, &mi)| g * mi)
            .sum::<f64>()
            * h2;
        let centered: Vec<f64> = grad.iter().map(|&g| g - mean_grad).collect();
        grad_norm = centered
            .iter()
            .zip(m.values())
            .map(|(&g, &mi)| g * g * mi)
            .sum::<f64>()
            .sqrt()
            * h2.sqrt();
        if iter < 16 || iter % 32 == 0 {
            history.push(HistoryRow {
                iter,
                residual: grad_norm,
                f: f_cur,
                g: f64::NAN,
                gap: f64::NAN,
            });
        }
        if grad_norm <= params.tol_residual {
            verdict = Verdict::Converged;
            break;
        }
        let sign = if beta > 0.0 { 1.0 } else { -1.0 };
        let mut accepted = false;
        let mut step = eta;
        for _ in 0..40 {
            let cand_vals: Vec<f64> = m
                .values()
                .iter()
                .zip(&centered)
                .map(|(&mi, &g)| {
                    let arg = (-step * sign * g).clamp(-60.0, 60.0);
                    (mi * arg.exp()).max(0.0)
                })
                .collect();
            let cand = ScalarField::from_values(grid, cand_vals)
                .expect("finite mirror update")
                .scale(1.0);
            let cand = {
                let mean = cand.mean();
                cand.scale(1.0 / mean)
            };
            let f_new = f_of(&cand)?;
            if f_new.is_finite() && improves(f_new, f_cur) {
                m = cand;
                f_cur = f_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if accepted {
            eta = (step * 1.2).min(8.0);
        } else {
            // gradient is numerically stationary
            verdict = Verdict::Converged;
            break;
        }
        iter += 1;
    }
    let mu_star = Measure::from_density(m)?;
    let u_star = potential_of_measure(&mu_star, omega)?;
    let res = residual(&u_star, beta, mu0, omega);
    let g = ding(&u_star, mu0, beta, omega)?;
    let gap = if beta > 0.0 { f_cur - g } else { g - f_cur };
    history.push(HistoryRow {
        iter,
        residual: grad_norm,
        f: f_cur,
        g,
        gap,
    });
    Ok(SolveResult {
        u_star,
        mu_star,
        residual_linf: res,
        gap,
        beta,
        iterations: iter,
        history,
        verdict,
    })
}

/// One row of the beta -> infinity sweep.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub l1_dist: f64,
    pub linf_dist: f64,
    pub sup_u: f64,
}

/// Sweep increasing positive betas: solve the normalized equation, shift to
/// the non-normalized solution `v = u - (1/beta) log int e^{beta u} mu_0`,
/// and measure distances to the zero envelope `P 0`. Also returns the
/// non-normalized consistency defect `|int e^{beta v} mu_0 - 1|` per row.
pub fn beta_infinity_sweep(
    betas: &[f64],
    mu0: &Measure,
    omega: &BackgroundForm,
    params: &SolverParams,
) -> Result<(Vec<SweepRow>, Vec<f64>)> {
    assert!(
        betas.windows(2).all(|w| w[0] < w[1]) && betas.iter().all(|&b| b > 0.0),
        "betas must be positive and increasing"
    );
    let grid = omega.grid();
    let h2 = grid.cell_area();
    let p0 = envelope_zero(omega, EnvelopeParams::default())?;
    let rho0 = mu0.grid_density();
    let mut rows = Vec::new();
    let mut consistency = Vec::new();
    for &beta in betas {
        let mut p = *params;
        p.beta = beta;
        // keep the fixed-point stable for stiff betas
        p.damping = params.damping.min(1.5 / (1.0 + beta / PI));
        let sol = solve(beta, mu0, omega, &p)?;
        let u = sol.u_star.field();
        // L^+ = (1/beta) log int e^{beta u} mu_0 on the grid
        let m = u
            .values()
            .iter()
            .map(|&v| beta * v)
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = u
            .values()
            .iter()
            .zip(rho0.values())
            .map(|(&uv, &rv)| (beta * uv - m).exp() * rv)
            .sum::<f64>()
            * h2;
        let l_plus = (m + z.ln()) / beta;
        let v = u.map(|x| x - l_plus);
        let zv: f64 = v
            .values()
            .iter()
            .zip(rho0.values())
            .map(|(&uv, &rv)| (beta * uv).exp() * rv)
            .sum::<f64>()
            * h2;
        consistency.push((zv - 1.0).abs());
        rows.push(SweepRow {
            beta,
            l1_dist: v.l1_dist(p0.pu.field()),
            linf_dist: v.linf_dist(p0.pu.field()),
            sup_u: v.max(),
        });
    }
    Ok((rows, consistency))
}

/// Probe evidence that the free energy is unbounded above: the best value
/// of `G_{-gamma}` along the scaled Green-pole family `s * g` (grid
/// integrals, so the growth shows up as the grid refines).
pub fn pole_family_best_g(
    gamma: f64,
    mu0: &Measure,
    omega: &BackgroundForm,
) -> Result<(f64, f64)> {
    let g = crate::grid::green_function(crate::grid::Point::new(0.5, 0.5), omega)?;
    let rho0 = mu0.grid_density();
    let h2 = omega.grid().cell_area();
    let mut best = f64::NEG_INFINITY;
    let mut best_s = 0.0;
    for k in 0..=40 {
        let s = k as f64 / 40.0;
        let us = g.scale(s);
        let e = energy_raw(&us, omega);
        let m = us
            .values()
            .iter()
            .map(|&v| -gamma * v)
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = us
            .values()
            .iter()
            .zip(rho0.values())
            .map(|(&uv, &rv)| (-gamma * uv - m).exp() * rv)
            .sum::<f64>()
            * h2;
        let value = e + (m + z.ln()) / gamma;
        if value > best {
            best = value;
            best_s = s;
        }
    }
    Ok((best_s, best))
}
