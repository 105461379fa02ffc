//! Alpha-invariant estimation, Frostman exponents, coercivity prechecks and
//! Moser-Trudinger constant fitting.
//!
//! The alpha invariant of `(omega, mu0)` is the supremum of exponents t such
//! that `int e^{-t (u - sup u)} dmu0` stays bounded over all admissible u.
//! Green functions with poles at and away from the measure's klt centers
//! realize the extremal blow-up on the torus, so the estimate bisects t on
//! exp-integral verdicts over a pole-aware family of Green probes. Near-pole
//! integrability is decided by the declared analytic models (a probe pole of
//! coefficient a against a measure exponent c gives the local power
//! `d^{-2(t a + c)}`), with the refinement ladder of the quadrature engine
//! supplying the Bounded / Diverging / Inconclusive verdicts.

use crate::error::Result;
use crate::functionals::{aubin_j_raw, energy_raw};
use crate::grid::{dirichlet, green_function, BackgroundForm, GridSpec, Point, ScalarField};
use crate::measure::{
    exp_pairing, min_pole_separation, same_center, ExpOutcome, LogPole, Measure, ProbeField,
    QuadDepth,
};
use crate::probes::mt_probe_suite;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Safety margin in the coercivity criterion `gamma < (2 - margin) *
/// alpha_hat`.
pub const ALPHA_CRITERION_MARGIN: f64 = 0.1;

/// Bisection width for alpha and gamma estimates.
pub const BISECTION_WIDTH: f64 = 0.02;

/// Upper end of the t-bisection; probes with larger thresholds are reported
/// as not binding at this cap.
const T_CAP: f64 = 1.6;

/// A klt measure `prod_i d(x, p_i)^{-2 c_i}` normalized to mass 1.
pub fn klt_measure(grid: GridSpec, poles: &[(Point, f64)]) -> Result<Measure> {
    Measure::klt(grid, poles)
}

/// Verdict of one exponential integral under refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ExpVerdict {
    Bounded,
    Diverging,
    Inconclusive,
}

/// One t-sample of the bisection: verdict plus the refinement trace.
#[derive(Debug, Clone, Serialize)]
pub struct TSample {
    pub t: f64,
    pub probe: String,
    pub verdict: ExpVerdict,
    /// (level, partial integral), saturating to infinity
    pub trace: Vec<(usize, f64)>,
}

/// `int e^{-t (u - sup u)} dmu0` with refinement verdicts.
pub fn exp_integral(
    u: &ProbeField,
    t: f64,
    mu0: &Measure,
) -> Result<(ExpVerdict, Option<f64>, Vec<(usize, f64)>)> {
    let sup = u.field().max();
    let trace = exp_pairing(u, -t, mu0, QuadDepth::default())?;
    let shift = (t * sup).exp();
    let partials: Vec<(usize, f64)> = trace
        .partials
        .iter()
        .map(|&(l, v)| (l, v * shift))
        .collect();
    match trace.outcome {
        ExpOutcome::Bounded { log_value } => Ok((
            ExpVerdict::Bounded,
            Some((log_value + t * sup).exp()),
            partials,
        )),
        ExpOutcome::Diverging => Ok((ExpVerdict::Diverging, None, partials)),
        ExpOutcome::Inconclusive => Ok((ExpVerdict::Inconclusive, None, partials)),
    }
}

/// Alpha-invariant estimate with its probe evidence.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaReport {
    pub alpha_hat: f64,
    pub probe_family: String,
    pub grid_levels: Vec<usize>,
    /// per-probe bisected thresholds (capped at T_CAP when not binding)
    pub per_probe: Vec<(String, f64)>,
    /// all t-samples of the binding probe, sorted by t
    pub t_samples: Vec<TSample>,
}

struct GreenProbe {
    name: String,
    field: ProbeField,
}

/// Pole-aware probe family: single Green poles on a coarse grid of centers
/// (snapped onto klt centers when close) plus two-pole combinations.
fn green_probe_family(mu0: &Measure, omega: &BackgroundForm) -> Result<Vec<GreenProbe>> {
    let grid = omega.grid();
    let min_sep = min_pole_separation(grid);
    let mut centers: Vec<Point> = mu0.poles().iter().map(|p| p.center).collect();
    for i in 0..3 {
        for j in 0..3 {
            let cand = Point::new((i as f64 + 0.5) / 3.0, (j as f64 + 0.5) / 3.0);
            let too_close = centers.iter().any(|c| {
                let dx = crate::grid::axis_delta(c.x, cand.x).abs();
                let dy = crate::grid::axis_delta(c.y, cand.y).abs();
                dx.max(dy) < min_sep && !same_center(c, &cand, grid)
            });
            let dup = centers.iter().any(|c| same_center(c, &cand, grid));
            if !too_close && !dup {
                centers.push(cand);
            }
        }
    }
    let mut probes = Vec::new();
    let mut fields = Vec::new();
    for (k, &c) in centers.iter().enumerate() {
        let g = green_function(c, omega)?;
        fields.push(g.clone());
        probes.push(GreenProbe {
            name: format!("green[{k}]@({:.3},{:.3})", c.x, c.y),
            field: ProbeField::with_poles(g, vec![LogPole { center: c, coeff: 1.0 }]),
        });
    }
    // two-pole combinations (g_a + g_b)/2 over a few admissible pairs
    let mut pairs = 0;
    'outer: for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            if pairs >= 3 {
                break 'outer;
            }
            let a = centers[i];
            let b = centers[j];
            let dx = crate::grid::axis_delta(a.x, b.x).abs();
            let dy = crate::grid::axis_delta(a.y, b.y).abs();
            if dx.max(dy) < min_sep {
                continue;
            }
            let combo = fields[i].axpy(1.0, &fields[j]).scale(0.5);
            probes.push(GreenProbe {
                name: format!("green-pair[{i},{j}]"),
                field: ProbeField::with_poles(
                    combo,
                    vec![
                        LogPole { center: a, coeff: 0.5 },
                        LogPole { center: b, coeff: 0.5 },
                    ],
                ),
            });
            pairs += 1;
        }
    }
    Ok(probes)
}

/// Bisect the integrability threshold of one probe. Inconclusive verdicts
/// count as not-yet-diverging, which biases the bracket upward by at most
/// the (narrow) inconclusive band of the quadrature engine.
fn bisect_threshold(
    probe: &GreenProbe,
    mu0: &Measure,
    samples: &mut Vec<TSample>,
) -> Result<f64> {
    let mut record = |t: f64, verdict: ExpVerdict, trace: Vec<(usize, f64)>| {
        samples.push(TSample {
            t,
            probe: probe.name.clone(),
            verdict,
            trace,
        });
    };
    let (v_hi, _, trace_hi) = exp_integral(&probe.field, T_CAP, mu0)?;
    record(T_CAP, v_hi, trace_hi);
    if v_hi != ExpVerdict::Diverging {
        return Ok(T_CAP);
    }
    let mut lo = 0.0;
    let mut hi = T_CAP;
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        let (v, _, trace) = exp_integral(&probe.field, mid, mu0)?;
        record(mid, v, trace);
        if v == ExpVerdict::Diverging {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Estimate the alpha invariant of `(omega, mu0)` by bisection over the
/// Green-probe family; `alpha_hat` is the smallest probe threshold.
pub fn alpha_estimate(mu0: &Measure, omega: &BackgroundForm) -> Result<AlphaReport> {
    let probes = green_probe_family(mu0, omega)?;
    let mut per_probe = Vec::new();
    let mut all_samples: Vec<(usize, Vec<TSample>)> = Vec::new();
    let mut alpha_hat = f64::INFINITY;
    let mut binding = 0;
    for (k, probe) in probes.iter().enumerate() {
        let mut samples = Vec::new();
        let threshold = bisect_threshold(probe, mu0, &mut samples)?;
        if threshold < alpha_hat {
            alpha_hat = threshold;
            binding = k;
        }
        per_probe.push((probe.name.clone(), threshold));
        all_samples.push((k, samples));
    }
    let mut t_samples = all_samples
        .into_iter()
        .find(|&(k, _)| k == binding)
        .map(|(_, s)| s)
        .unwrap_or_default();
    t_samples.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    Ok(AlphaReport {
        alpha_hat,
        probe_family: format!(
            "green poles on a pole-aware 3x3 grid plus {} two-pole combos",
            probes.len().saturating_sub(9)
        ),
        grid_levels: vec![omega.grid().n_side()],
        per_probe,
        t_samples,
    })
}

/// Frostman exponent report: per-center mass-growth slopes and their
/// minimum.
#[derive(Debug, Clone, Serialize)]
pub struct FrostmanReport {
    pub d_hat: f64,
    pub slopes: Vec<(String, f64)>,
}

/// Area of `cell ∩ disk` by recursive subdivision.
fn disk_cell_overlap(x0: f64, y0: f64, size: f64, center: Point, r: f64, depth: usize) -> f64 {
    // nearest and farthest points of the square to the center (unwrapped)
    let cx = crate::grid::axis_delta(center.x, x0 + 0.5 * size);
    let cy = crate::grid::axis_delta(center.y, y0 + 0.5 * size);
    let half = 0.5 * size;
    let nx = (cx.abs() - half).max(0.0);
    let ny = (cy.abs() - half).max(0.0);
    let nearest = nx.hypot(ny);
    if nearest >= r {
        return 0.0;
    }
    let fx = cx.abs() + half;
    let fy = cy.abs() + half;
    let farthest = fx.hypot(fy);
    if farthest <= r {
        return size * size;
    }
    if depth == 0 {
        // boundary cell: fraction by center test
        return if nearest + 0.5 * (farthest - nearest) <= r {
            size * size * 0.5
        } else {
            size * size * 0.25
        };
    }
    let s = 0.5 * size;
    let mut acc = 0.0;
    for dy in 0..2 {
        for dx in 0..2 {
            acc += disk_cell_overlap(
                x0 + dx as f64 * s,
                y0 + dy as f64 * s,
                s,
                center,
                r,
                depth - 1,
            );
        }
    }
    acc
}

/// Mass of the ball `B_r(center)` under `mu`.
pub fn disk_mass(mu: &Measure, center: Point, r: f64) -> f64 {
    let grid = mu.grid();
    // a ball centered exactly on a pole is integrated in polar coordinates
    for (k, pf) in mu.poles().iter().enumerate() {
        if same_center(&pf.center, &center, grid) {
            return mu.pole_disk_mass(k, r);
        }
    }
    let h = grid.h();
    let n = grid.n_side();
    let mut mass = 0.0;
    for i in 0..grid.num_nodes() {
        let node = grid.node(i);
        let dx = crate::grid::axis_delta(center.x, node.x).abs();
        let dy = crate::grid::axis_delta(center.y, node.y).abs();
        if dx > r + h || dy > r + h {
            continue;
        }
        let overlap = disk_cell_overlap(node.x - 0.5 * h, node.y - 0.5 * h, h, center, r, 11);
        if overlap > 0.0 {
            mass += mu.cell_masses()[i] * overlap / (h * h);
        }
        let _ = n;
    }
    mass
}

/// Least-squares slope of `log mass(B_r)` against `log r` over
/// r = 2^-2 .. 2^-6, minimized over grid and pole centers.
pub fn frostman_exponent(mu0: &Measure) -> FrostmanReport {
    let radii: Vec<f64> = (2..=6).map(|k| 2f64.powi(-k)).collect();
    let mut centers: Vec<(String, Point)> = Vec::new();
    for (k, pf) in mu0.poles().iter().enumerate() {
        centers.push((format!("pole[{k}]"), pf.center));
    }
    for i in 0..4 {
        for j in 0..4 {
            let p = Point::new((i as f64 + 0.5) / 4.0, (j as f64 + 0.5) / 4.0);
            centers.push((format!("grid[{i},{j}]"), p));
        }
    }
    let mut slopes = Vec::new();
    let mut d_hat = f64::INFINITY;
    for (name, c) in centers {
        let pts: Vec<(f64, f64)> = radii
            .iter()
            .map(|&r| (r.ln(), disk_mass(mu0, c, r).max(1e-300).ln()))
            .collect();
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        d_hat = d_hat.min(slope);
        slopes.push((name, slope));
    }
    FrostmanReport { d_hat, slopes }
}

/// Coercivity verdict for `gamma`, with the probe sweep evidence.
#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    pub gamma: f64,
    pub pass: bool,
    pub alpha_hat: f64,
    /// the criterion boundary `(2 - margin) * alpha_hat`
    pub gamma_threshold: f64,
    /// largest observed `G_{-gamma}(u) - eps J(u)` over the probe suite
    pub best_probe_value: f64,
    pub witness: Option<String>,
    pub sweep: Vec<(String, f64)>,
}

/// `G_{-gamma}(u)` on the grid (integrals without pole models, so Green
/// peaks see the grid cutoff).
pub fn ding_grid(u: &ScalarField, gamma: f64, mu0: &Measure, omega: &BackgroundForm) -> f64 {
    let rho0 = mu0.grid_density();
    let h2 = omega.grid().cell_area();
    let m = u
        .values()
        .iter()
        .map(|&v| -gamma * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = u
        .values()
        .iter()
        .zip(rho0.values())
        .map(|(&uv, &rv)| (-gamma * uv - m).exp() * rv)
        .sum::<f64>()
        * h2;
    energy_raw(u, omega) + (m + z.ln()) / gamma
}

/// Pass iff `gamma < (2 - margin) * alpha_hat`; additionally sweeps
/// `G_{-gamma} - eps J` over the probe suite and scaled Green poles,
/// reporting the largest value and (on failure) the witness probe.
pub fn coercivity_probe(
    gamma: f64,
    mu0: &Measure,
    omega: &BackgroundForm,
) -> Result<CoercivityReport> {
    assert!(gamma > 0.0, "coercivity_probe requires gamma > 0");
    let alpha = alpha_estimate(mu0, omega)?;
    let gamma_threshold = (2.0 - ALPHA_CRITERION_MARGIN) * alpha.alpha_hat;
    let pass = gamma < gamma_threshold;
    let eps = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(4243);
    let probes = mt_probe_suite(omega, "coercivity", &mut rng, 10)?;
    let mut sweep = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut witness = None;
    for p in &probes {
        let value = ding_grid(&p.field, gamma, mu0, omega) - eps * aubin_j_raw(&p.field, omega);
        if value > best {
            best = value;
            witness = Some(p.name.clone());
        }
        sweep.push((p.name.clone(), value));
    }
    // scaled Green poles t * g, t increasing towards full strength
    let g = green_function(Point::new(0.5, 0.5), omega)?;
    for k in 1..=10 {
        let t = k as f64 / 10.0;
        let u = g.scale(t);
        let value = ding_grid(&u, gamma, mu0, omega) - eps * aubin_j_raw(&u, omega);
        let name = format!("scaled-green[t={t:.1}]");
        if value > best {
            best = value;
            witness = Some(name.clone());
        }
        sweep.push((name, value));
    }
    Ok(CoercivityReport {
        gamma,
        pass,
        alpha_hat: alpha.alpha_hat,
        gamma_threshold,
        best_probe_value: best,
        witness: if pass { None } else { witness },
        sweep,
    })
}

/// Moser-Trudinger fit: `log int e^u dmu0 <= a_fit * dirichlet(u,u) + C_fit`
/// over the probe suite.
#[derive(Debug, Clone, Serialize)]
pub struct MtReport {
    pub a_fit: f64,
    pub c_fit: f64,
    pub gamma_max: f64,
    pub witness: String,
}

/// `log int e^u dmu0` as a grid integral, with max-subtraction.
pub fn log_exp_grid(u: &ScalarField, mu0: &Measure) -> f64 {
    let rho0 = mu0.grid_density();
    let h2 = u.grid().cell_area();
    let m = u.max();
    let z: f64 = u
        .values()
        .iter()
        .zip(rho0.values())
        .map(|(&uv, &rv)| (uv - m).exp() * rv)
        .sum::<f64>()
        * h2;
    m + z.ln()
}

/// Fit the Moser-Trudinger coefficient: `gamma_max` is the bisected
/// supremum of coercive gammas, `a_fit = 1/(2 gamma_max)` by the quadratic
/// scaling of the energy, and `C_fit` is the largest defect over the probe
/// suite.
pub fn mt_constant_fit(mu0: &Measure, omega: &BackgroundForm) -> Result<MtReport> {
    let alpha = alpha_estimate(mu0, omega)?;
    let threshold = (2.0 - ALPHA_CRITERION_MARGIN) * alpha.alpha_hat;
    // bisection of the pass predicate, pinned to the cached alpha
    let mut lo: f64 = 0.0;
    let mut hi: f64 = 4.0;
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mid < threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gamma_max = 0.5 * (lo + hi);
    let a_fit = 1.0 / (2.0 * gamma_max);
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let probes = mt_probe_suite(omega, "mt", &mut rng, 30)?;
    let mut c_fit = f64::NEG_INFINITY;
    let mut witness = String::new();
    for p in &probes {
        let defect = log_exp_grid(&p.field, mu0) - a_fit * dirichlet(&p.field, &p.field);
        if defect > c_fit {
            c_fit = defect;
            witness = p.name.clone();
        }
    }
    Ok(MtReport {
        a_fit,
        c_fit,
        gamma_max,
        witness,
    })
}

/// Best violation of `log int e^u <= a dirichlet(u,u) + C` along the scaled
/// Green-peak family `u = -t g`; grows with the grid when `a < 1/4` on
/// Lebesgue data, which is the sharpness witness.
pub fn mt_sharpness_witness(
    a: f64,
    mu0: &Measure,
    omega: &BackgroundForm,
) -> Result<(f64, f64)> {
    let g = green_function(Point::new(0.5, 0.5), omega)?;
    let mut best = f64::NEG_INFINITY;
    let mut best_t = 0.0;
    for k in 1..=30 {
        let t = k as f64 * 0.1;
        let u = omega.omega_mean_normalize(&g.scale(-t));
        let value = log_exp_grid(&u, mu0) - a * dirichlet(&u, &u);
        if value > best {
            best = value;
            best_t = t;
        }
    }
    Ok((best_t, best))
}
