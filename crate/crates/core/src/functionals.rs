//! Scalar functionals of the variational theory: the Monge-Ampère energy E,
//! Aubin's I and J, the pluricomplex energy E(mu) of a measure, relative
//! entropy D, the log-moment functional L_beta, free energy F_beta, the Ding
//! functional G_beta, and the generic K-energy K = beta F_beta(MA(u)).
//!
//! In complex dimension one all of these reduce to quadratic/entropic
//! expressions in the potential:
//!
//! ```text
//! MA(u)  has density rho + lap(u)/4pi
//! E(u)   = <u, omega> - (1/2) dirichlet(u, u),   dE|_u = MA(u)
//! I(u)   = dirichlet(u, u),   J(u) = (1/2) dirichlet(u, u) = -E(u) + <u, omega>
//! E(mu)  = E(u_mu) - <u_mu, mu>  with MA(u_mu) = mu   (= J(u_mu) when n = 1)
//! D(mu)  = int log(mu / mu_0) dmu
//! L_beta(u) = -(1/beta) log int e^{beta u} dmu_0      (so L(c) = -c)
//! F_beta(mu) = E(mu) + D(mu)/beta
//! G_beta(u)  = E(u) + L_beta(u)
//! K(u)       = beta F_beta(MA(u))
//! ```

use crate::error::{Error, Result};
use crate::grid::{
    default_eps_psh, dirichlet, laplacian, poisson_solve, BackgroundForm, Potential, ScalarField,
};
use crate::measure::{exp_pairing, ExpOutcome, Measure, ProbeField, QuadDepth};
use serde::Serialize;
use std::f64::consts::PI;

/// Parameters shared by the mean-field solvers.
#[derive(Debug, Clone, Copy)]
pub struct SolverParams {
    pub beta: f64,
    pub tol_residual: f64,
    pub tol_gap: f64,
    pub max_iter: usize,
    /// Damping of the fixed-point update, in (0, 1]; halved on residual
    /// increase.
    pub damping: f64,
    pub epsilon_psh: f64,
    /// Run beta < 0 solves even when the coercivity precheck fails.
    pub coercivity_override: bool,
}

impl SolverParams {
    /// Defaults for a given beta: full steps for beta > 0, damping 0.3 for
    /// beta < 0.
    pub fn for_beta(beta: f64, grid: crate::grid::GridSpec) -> Self {
        Self {
            beta,
            tol_residual: 1e-9,
            tol_gap: 1e-8,
            max_iter: 20_000,
            damping: if beta < 0.0 { 0.3 } else { 1.0 },
            epsilon_psh: default_eps_psh(grid),
            coercivity_override: false,
        }
    }
}

/// All functional values at one potential/measure pair. Extended values are
/// stored as the IEEE infinities and serialized as the strings "inf"/"-inf"
/// by the JSON emitter.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FunctionalReport {
    pub e: f64,
    pub i: f64,
    pub j: f64,
    pub d: f64,
    pub l: f64,
    pub f: f64,
    pub g: f64,
    pub k: f64,
    pub beta: f64,
}

/// Unclamped Monge-Ampère density `rho + lap(u)/4pi`. Linear in `u`; used
/// by the exact identity chains.
pub fn ma_density_raw(u: &ScalarField, omega: &BackgroundForm) -> ScalarField {
    let lap = laplacian(u);
    let mut out = lap.scale(1.0 / (4.0 * PI));
    for (v, r) in out.values_mut().iter_mut().zip(omega.rho().values()) {
        *v += r;
    }
    out
}

/// The Monge-Ampère measure of an admissible potential: density
/// `rho + lap(u)/4pi` with rounding-level negatives clamped to zero and the
/// mass renormalized to 1.
pub fn ma_measure(u: &Potential, omega: &BackgroundForm) -> Result<Measure> {
    u.ensure_admissible(default_eps_psh(omega.grid()))?;
    let density = ma_density_raw(u.field(), omega).map(|v| v.max(0.0));
    Measure::from_density(density)
}

/// Monge-Ampère energy on arbitrary grid fields (at n = 1 the functional is
/// concave on all of C^0, not only on the psh cone).
pub fn energy_raw(u: &ScalarField, omega: &BackgroundForm) -> f64 {
    omega.pair(u) - 0.5 * dirichlet(u, u)
}

/// Monge-Ampère energy of an admissible potential, normalized by E(0) = 0.
pub fn energy(u: &Potential, omega: &BackgroundForm) -> Result<f64> {
    u.ensure_admissible(default_eps_psh(omega.grid()))?;
    Ok(energy_raw(u.field(), omega))
}

/// Aubin's I functional, `-int u (MA(u) - omega)`; equals dirichlet(u, u)
/// at n = 1 but is computed through its defining route.
pub fn aubin_i(u: &Potential, omega: &BackgroundForm) -> Result<f64> {
    u.ensure_admissible(default_eps_psh(omega.grid()))?;
    Ok(aubin_i_raw(u.field(), omega))
}

pub fn aubin_i_raw(u: &ScalarField, omega: &BackgroundForm) -> f64 {
    let ma = ma_density_raw(u, omega);
    let h2 = omega.grid().cell_area();
    let mut acc = 0.0;
    for ((uv, mv), rv) in u
        .values()
        .iter()
        .zip(ma.values())
        .zip(omega.rho().values())
    {
        acc += uv * (mv - rv);
    }
    -acc * h2
}

/// Aubin's J functional, `-E(u) + <u, omega>`; nonnegative.
pub fn aubin_j(u: &Potential, omega: &BackgroundForm) -> Result<f64> {
    u.ensure_admissible(default_eps_psh(omega.grid()))?;
    Ok(aubin_j_raw(u.field(), omega))
}

pub fn aubin_j_raw(u: &ScalarField, omega: &BackgroundForm) -> f64 {
    -energy_raw(u, omega) + omega.pair(u)
}

/// The zero-mean potential of a measure: solves `MA(u) = mu` through the
/// grid representation of `mu` (poles are splatted to cell masses first).
pub fn potential_of_measure(mu: &Measure, omega: &BackgroundForm) -> Result<Potential> {
    let rho_mu = mu.grid_density();
    let mut rhs = rho_mu.clone();
    for (v, r) in rhs.values_mut().iter_mut().zip(omega.rho().values()) {
        *v = (*v - r) * 4.0 * PI;
    }
    let mean = rhs.mean();
    if mean.abs() > 1e-10 {
        return Err(Error::NonZeroMeanRhs { mean, tol: 1e-10 });
    }
    let u = poisson_solve(&rhs.zero_mean())?;
    Ok(Potential::new(u, omega))
}

/// Pluricomplex energy `E(mu) = E(u_mu) - <u_mu, mu>`; equals J(u_mu) at
/// n = 1 and vanishes exactly on the background form.
pub fn measure_energy(mu: &Measure, omega: &BackgroundForm) -> Result<f64> {
    let u = potential_of_measure(mu, omega)?;
    Ok(energy_raw(u.field(), omega) - mu.pair(u.field()))
}

/// Relative entropy `D(mu || mu0) = int log(mu/mu0) dmu` on the grid
/// representations; returns +infinity when `mu` carries mass where `mu0`
/// has (numerically) none.
pub fn entropy(mu: &Measure, mu0: &Measure) -> f64 {
    assert_eq!(mu.grid(), mu0.grid());
    let h2 = mu.grid().cell_area();
    let mut d = 0.0;
    for (&m, &m0) in mu.cell_masses().iter().zip(mu0.cell_masses()) {
        if m <= 0.0 {
            continue;
        }
        if m0 / h2 < 1e-300 {
            return f64::INFINITY;
        }
        d += m * (m / m0).ln();
    }
    d.max(0.0)
}

/// `L_beta(u) = -(1/beta) log int e^{beta u} dmu0`, evaluated with
/// max-subtraction; `L(u + c) = L(u) - c` and `L` tends to `-<u, mu0>` as
/// beta tends to 0.
pub fn log_moment(u: &ScalarField, beta: f64, mu0: &Measure) -> Result<f64> {
    log_moment_probe(&ProbeField::smooth(u.clone()), beta, mu0)
}

/// `L_beta` for a probe field with declared log poles; errors with
/// `DivergentIntegral` when the pole-refined integral diverges.
pub fn log_moment_probe(u: &ProbeField, beta: f64, mu0: &Measure) -> Result<f64> {
    assert!(beta != 0.0, "log_moment requires beta != 0");
    let trace = exp_pairing(u, beta, mu0, QuadDepth::default())?;
    match trace.outcome {
        ExpOutcome::Bounded { log_value } => Ok(-log_value / beta),
        _ => Err(Error::DivergentIntegral {
            partial: trace.partials.last().map(|&(_, v)| v).unwrap_or(f64::NAN),
        }),
    }
}

/// Free energy `F_beta(mu) = E(mu) + D(mu || mu0) / beta`, with the
/// absolute-continuity failure mapped to +infinity for beta > 0 and
/// -infinity for beta < 0.
pub fn free_energy(mu: &Measure, mu0: &Measure, beta: f64, omega: &BackgroundForm) -> Result<f64> {
    assert!(beta != 0.0, "free_energy requires beta != 0");
    let e = measure_energy(mu, omega)?;
    let d = entropy(mu, mu0);
    if d.is_infinite() {
        return Ok(if beta > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        });
    }
    Ok(e + d / beta)
}

/// Ding functional `G_beta(u) = E(u) + L_beta(u)`; invariant under
/// `u -> u + c`.
pub fn ding(u: &Potential, mu0: &Measure, beta: f64, omega: &BackgroundForm) -> Result<f64> {
    let e = energy(u, omega)?;
    let l = log_moment(u.field(), beta, mu0)?;
    Ok(e + l)
}

/// Duality gap between the measure and potential sides: `F(MA(u)) - G(u)`
/// for beta > 0 and `G(u) - F(MA(u))` for beta < 0. Nonnegative, zero
/// exactly at solutions of the mean-field equation.
pub fn duality_gap(
    u: &Potential,
    mu0: &Measure,
    beta: f64,
    omega: &BackgroundForm,
) -> Result<f64> {
    let g = ding(u, mu0, beta, omega)?;
    let f = free_energy(&ma_measure(u, omega)?, mu0, beta, omega)?;
    Ok(if beta > 0.0 { f - g } else { g - f })
}

/// Generic K-energy `K(u) = beta F_beta(MA(u))`.
pub fn mabuchi_k(u: &Potential, mu0: &Measure, beta: f64, omega: &BackgroundForm) -> Result<f64> {
    let f = free_energy(&ma_measure(u, omega)?, mu0, beta, omega)?;
    Ok(beta * f)
}

/// Evaluate every functional at one potential.
pub fn functional_report(
    u: &Potential,
    mu0: &Measure,
    beta: f64,
    omega: &BackgroundForm,
) -> Result<FunctionalReport> {
    let e = energy(u, omega)?;
    let i = aubin_i(u, omega)?;
    let j = aubin_j(u, omega)?;
    let mu = ma_measure(u, omega)?;
    let d = entropy(&mu, mu0);
    let l = log_moment(u.field(), beta, mu0)?;
    let f = free_energy(&mu, mu0, beta, omega)?;
    let g = e + l;
    let k = beta * f;
    Ok(FunctionalReport {
        e,
        i,
        j,
        d,
        l,
        f,
        g,
        k,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::probes::{random_admissible, random_bandlimited};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn grid64() -> GridSpec {
        GridSpec::new(64).unwrap()
    }

    #[test]
    fn ma_of_zero_is_omega() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let u = Potential::new(ScalarField::zeros(grid), &omega);
        let mu = ma_measure(&u, &omega).unwrap();
        assert!(mu.grid_density().linf_dist(omega.rho()) < 1e-12);
    }

    #[test]
    fn ma_linear_in_cosine() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let lam = crate::grid::laplacian_eigenvalue(grid, 1, 0);
        let a = 0.9 / PI; // keeps 1 + a*lam/4pi >= 0
        let f = ScalarField::from_fn(grid, |p| a * (2.0 * PI * p.x).cos());
        let u = Potential::new(f, &omega);
        let mu = ma_measure(&u, &omega).unwrap();
        let want =
            ScalarField::from_fn(grid, |p| 1.0 + a * lam / (4.0 * PI) * (2.0 * PI * p.x).cos());
        assert!(mu.grid_density().linf_dist(&want) < 1e-10);
    }

    #[test]
    fn ma_mass_one_on_random_admissible() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let u = random_admissible(&omega, &mut rng);
            let mu = ma_measure(&u, &omega).unwrap();
            assert!((mu.total_mass() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn ma_rejects_inadmissible() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let lam = crate::grid::laplacian_eigenvalue(grid, 1, 0).abs();
        let a = 2.0 * 4.0 * PI / lam;
        let u = Potential::new(
            ScalarField::from_fn(grid, |p| a * (2.0 * PI * p.x).cos()),
            &omega,
        );
        assert!(matches!(ma_measure(&u, &omega), Err(Error::NotPsh { .. })));
    }

    #[test]
    fn energy_of_constant_is_constant() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        for c in [-2.0, 0.0, 7.5] {
            let u = Potential::new(ScalarField::constant(grid, c), &omega);
            assert!((energy(&u, &omega).unwrap() - c).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_of_cosine_converges() {
        // E(cos 2 pi x) -> -pi/4 at order >= 1.9
        let mut errs = Vec::new();
        for n in [32usize, 64, 128] {
            let grid = GridSpec::new(n).unwrap();
            let omega = BackgroundForm::lebesgue(grid);
            let u = ScalarField::from_fn(grid, |p| (2.0 * PI * p.x).cos());
            let e = energy_raw(&u, &omega);
            errs.push((e + PI / 4.0).abs());
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1]);
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.9, "order {order}");
    }

    #[test]
    fn energy_gradient_is_ma() {
        // central differences of E match <MA(u), v>
        let grid = grid64();
        let omega = BackgroundForm::cosine(grid, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u = random_admissible(&omega, &mut rng);
            let v = random_bandlimited(grid, &mut rng, 6, 1.0);
            let t = 1e-5;
            let up = u.field().axpy(t, &v);
            let dn = u.field().axpy(-t, &v);
            let fd = (energy_raw(&up, &omega) - energy_raw(&dn, &omega)) / (2.0 * t);
            let mu = ma_measure(&u, &omega).unwrap();
            let pairing = mu.pair(&v);
            assert!(
                (fd - pairing).abs() <= 1e-4 * (1.0 + pairing.abs()),
                "fd={fd} pairing={pairing}"
            );
        }
    }

    #[test]
    fn energy_concave_and_nondecreasing() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_admissible(&omega, &mut rng);
        let v = random_admissible(&omega, &mut rng);
        let mid = u.field().axpy(1.0, v.field()).scale(0.5);
        let e_mid = energy_raw(&mid, &omega);
        let avg = 0.5 * (energy_raw(u.field(), &omega) + energy_raw(v.field(), &omega));
        assert!(e_mid >= avg - 1e-12);
        // adding a nonnegative bump does not decrease E
        let bump = ScalarField::from_fn(grid, |p| {
            0.01 * (1.0 + (2.0 * PI * p.x).cos()) * (1.0 + (2.0 * PI * p.y).cos())
        });
        let up = u.field().axpy(1.0, &bump);
        assert!(energy_raw(&up, &omega) >= energy_raw(u.field(), &omega) - 1e-12);
    }

    #[test]
    fn aubin_identities() {
        let grid = grid64();
        let omega = BackgroundForm::cosine(grid, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let u = random_admissible(&omega, &mut rng);
            let i = aubin_i(&u, &omega).unwrap();
            let j = aubin_j(&u, &omega).unwrap();
            assert!(j >= -1e-12);
            assert!((i - 2.0 * j).abs() <= 1e-9 * (1.0 + i.abs()), "i={i} j={j}");
            // translation invariance
            let shifted = Potential::new(u.field().map(|v| v + 3.1), &omega);
            assert!((aubin_i(&shifted, &omega).unwrap() - i).abs() < 1e-9);
            assert!((aubin_j(&shifted, &omega).unwrap() - j).abs() < 1e-9);
        }
    }

    #[test]
    fn aubin_j_quadratic_scaling() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_admissible(&omega, &mut rng);
        let j1 = aubin_j(&u, &omega).unwrap();
        for t in [0.25, 0.5, 0.75, 1.0] {
            let ut = Potential::new(u.field().scale(t), &omega);
            let jt = aubin_j(&ut, &omega).unwrap();
            assert!((jt - t * t * j1).abs() < 1e-10 * (1.0 + j1));
        }
    }

    #[test]
    fn potential_of_omega_is_zero() {
        let grid = grid64();
        let omega = BackgroundForm::cosine(grid, 0.5);
        let mu = Measure::from_density(omega.rho().clone()).unwrap();
        let u = potential_of_measure(&mu, &omega).unwrap();
        assert!(u.field().linf_dist(&ScalarField::zeros(grid)) < 1e-11);
    }

    #[test]
    fn potential_round_trip() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let dens = ScalarField::from_fn(grid, |p| 1.0 + 0.4 * (2.0 * PI * p.x).cos());
        let mu = Measure::from_density(dens).unwrap();
        let u = potential_of_measure(&mu, &omega).unwrap();
        assert!(u.slack() >= 0.0 || u.slack() > -default_eps_psh(grid));
        let back = ma_measure(&u, &omega).unwrap();
        assert!(back.grid_density().linf_dist(&mu.grid_density()) < 1e-9);
    }

    #[test]
    fn potential_unique_mod_constants() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let dens = ScalarField::from_fn(grid, |p| 1.0 + 0.3 * (2.0 * PI * p.y).sin());
        // two normalizations of the same density
        let mu1 = Measure::from_density(dens.clone()).unwrap();
        let mu2 = Measure::from_density(dens.scale(5.0)).unwrap();
        let u1 = potential_of_measure(&mu1, &omega).unwrap();
        let u2 = potential_of_measure(&mu2, &omega).unwrap();
        assert!(u1.field().zero_mean().linf_dist(&u2.field().zero_mean()) < 1e-12);
    }

    #[test]
    fn measure_energy_identities() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        // E(omega) = 0
        let mu_omega = Measure::from_density(omega.rho().clone()).unwrap();
        assert!(measure_energy(&mu_omega, &omega).unwrap().abs() < 1e-12);
        // E(MA(u)) = J(u)
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let u = random_admissible(&omega, &mut rng);
            let mu = ma_measure(&u, &omega).unwrap();
            let em = measure_energy(&mu, &omega).unwrap();
            let j = aubin_j(&u, &omega).unwrap();
            assert!((em - j).abs() < 1e-9, "em={em} j={j}");
        }
    }

    #[test]
    fn measure_energy_convex() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..5 {
            let u0 = random_admissible(&omega, &mut rng);
            let u1 = random_admissible(&omega, &mut rng);
            let m0 = ma_measure(&u0, &omega).unwrap();
            let m1 = ma_measure(&u1, &omega).unwrap();
            let mid_density = m0.grid_density().axpy(1.0, &m1.grid_density()).scale(0.5);
            let mid = Measure::from_density(mid_density).unwrap();
            let lhs = measure_energy(&mid, &omega).unwrap();
            let rhs = 0.5 * measure_energy(&m0, &omega).unwrap()
                + 0.5 * measure_energy(&m1, &omega).unwrap();
            assert!(lhs <= rhs + 1e-10);
        }
    }

    #[test]
    fn measure_energy_subgradient() {
        // E(mu1) >= E(mu0) + <-u_mu0, mu1 - mu0>
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let u0 = random_admissible(&omega, &mut rng);
            let u1 = random_admissible(&omega, &mut rng);
            let m0 = ma_measure(&u0, &omega).unwrap();
            let m1 = ma_measure(&u1, &omega).unwrap();
            let pot0 = potential_of_measure(&m0, &omega).unwrap();
            let e0 = measure_energy(&m0, &omega).unwrap();
            let e1 = measure_energy(&m1, &omega).unwrap();
            let cross = m1.pair(pot0.field()) - m0.pair(pot0.field());
            assert!(e1 >= e0 - cross - 1e-10);
        }
    }

    #[test]
    fn entropy_basics() {
        let grid = grid64();
        let mu0 = Measure::lebesgue(grid);
        assert_eq!(entropy(&mu0, &mu0), 0.0);
        // doubled density on half the torus: D = log 2 exactly on the grid
        let ind = ScalarField::from_fn(grid, |p| if p.x < 0.5 { 2.0 } else { 0.0 });
        let mu = Measure::from_density(ind).unwrap();
        let d = entropy(&mu, &mu0);
        assert!((d - 2f64.ln()).abs() < 1e-12, "d={d}");
        assert!(entropy(&mu0, &mu).is_infinite());
    }

    #[test]
    fn entropy_matches_quadrature_oracle() {
        let grid = grid64();
        let mu0 = Measure::lebesgue(grid);
        let mu = Measure::from_density(ScalarField::from_fn(grid, |p| {
            1.0 + 0.7 * (2.0 * PI * p.x).cos() * (2.0 * PI * p.y).sin()
        }))
        .unwrap();
        let d = entropy(&mu, &mu0);
        assert!(d > 0.0);
        // oracle: sub-cell quadrature of the same cell-constant densities;
        // constants integrate exactly, so the refined sum must agree
        let h2 = grid.cell_area();
        let sub = 4;
        let mut oracle = 0.0;
        for (m, m0) in mu.cell_masses().iter().zip(mu0.cell_masses()) {
            let rho = m / h2;
            let rho0 = m0 / h2;
            for _ in 0..(sub * sub) {
                oracle += rho * (rho / rho0).ln() * h2 / (sub * sub) as f64;
            }
        }
        assert!((d - oracle).abs() < 1e-6 * (1.0 + d));
    }

    #[test]
    fn log_moment_constant_and_zero_beta_limit() {
        let grid = grid64();
        let mu0 = Measure::lebesgue(grid);
        let c = ScalarField::constant(grid, 1.7);
        for beta in [2.0, -1.3] {
            let l = log_moment(&c, beta, &mu0).unwrap();
            assert!((l + 1.7).abs() < 1e-12, "beta={beta} l={l}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let u = random_bandlimited(grid, &mut rng, 5, 0.8);
        let l = log_moment(&u, 1e-4, &mu0).unwrap();
        let lim = -mu0.pair(&u);
        assert!((l - lim).abs() < 1e-3, "l={l} lim={lim}");
    }

    #[test]
    fn entropy_duality_for_gibbs_measures() {
        // for mu = e^{-gamma u} mu0 / Z:  D(mu||mu0)/gamma = L-(u) - <u, mu>
        let grid = grid64();
        let mu0 = Measure::lebesgue(grid);
        let gamma = 1.4;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u = random_bandlimited(grid, &mut rng, 5, 0.7);
        let dens = ScalarField::from_values(
            grid,
            u.values()
                .iter()
                .zip(mu0.grid_density().values())
                .map(|(&v, &r)| (-gamma * v).exp() * r)
                .collect(),
        )
        .unwrap();
        let mu = Measure::from_density(dens).unwrap();
        let lhs = entropy(&mu, &mu0) / gamma;
        let l_minus = -log_moment(&u, -gamma, &mu0).unwrap();
        let rhs = l_minus - mu.pair(&u);
        assert!(
            (lhs - rhs).abs() < 1e-8 * (1.0 + lhs.abs()),
            "lhs={lhs} rhs={rhs}"
        );
    }

    #[test]
    fn entropy_directional_derivative() {
        // finite differences of D along measure segments match
        // int log(mu^0 / mu_0) dnu
        let grid = grid64();
        let mu0 = Measure::lebesgue(grid);
        let a = Measure::from_density(ScalarField::from_fn(grid, |p| {
            1.0 + 0.4 * (2.0 * PI * p.x).cos()
        }))
        .unwrap();
        let b = Measure::from_density(ScalarField::from_fn(grid, |p| {
            1.0 + 0.4 * (2.0 * PI * p.y).sin()
        }))
        .unwrap();
        let t = 1e-5;
        let da = a.grid_density();
        let db = b.grid_density();
        let seg = |t: f64| Measure::from_density(da.scale(1.0 - t).axpy(t, &db)).unwrap();
        let fd = (entropy(&seg(t), &mu0) - entropy(&a, &mu0)) / t;
        let h2 = grid.cell_area();
        let exact: f64 = da
            .values()
            .iter()
            .zip(db.values())
            .zip(mu0.grid_density().values())
            .map(|((&x, &y), &r)| (x / r).ln() * (y - x))
            .sum::<f64>()
            * h2;
        assert!(
            (fd - exact).abs() < 1e-4 * (1.0 + exact.abs()),
            "fd={fd} exact={exact}"
        );
    }

    #[test]
    fn free_energy_and_ding_basics() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let mu0 = Measure::lebesgue(grid);
        let mu_omega = Measure::from_density(omega.rho().clone()).unwrap();
        for beta in [1.0, -1.0] {
            assert!(free_energy(&mu_omega, &mu0, beta, &omega).unwrap().abs() < 1e-12);
            let zero = Potential::new(ScalarField::zeros(grid), &omega);
            assert!(ding(&zero, &mu0, beta, &omega).unwrap().abs() < 1e-12);
            assert!(mabuchi_k(&zero, &mu0, beta, &omega).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn ding_translation_invariant() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let mu0 = Measure::from_density(ScalarField::from_fn(grid, |p| {
            1.0 + 0.5 * (2.0 * PI * p.x).cos()
        }))
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u = random_admissible(&omega, &mut rng);
        for beta in [2.5, -1.2] {
            let g0 = ding(&u, &mu0, beta, &omega).unwrap();
            let shifted = Potential::new(u.field().map(|v| v - 4.2), &omega);
            let g1 = ding(&shifted, &mu0, beta, &omega).unwrap();
            assert!((g0 - g1).abs() < 1e-10, "beta={beta} g0={g0} g1={g1}");
            let k0 = mabuchi_k(&u, &mu0, beta, &omega).unwrap();
            let k1 = mabuchi_k(&shifted, &mu0, beta, &omega).unwrap();
            assert!((k0 - k1).abs() < 1e-9);
        }
    }

    #[test]
    fn gap_positive_off_solutions() {
        let grid = grid64();
        let omega = BackgroundForm::lebesgue(grid);
        let mu0 = Measure::from_density(ScalarField::from_fn(grid, |p| {
            1.0 + 0.5 * (2.0 * PI * p.x).cos()
        }))
        .unwrap();
        let zero = Potential::new(ScalarField::zeros(grid), &omega);
        for beta in [1.0, -1.0] {
            let gap = duality_gap(&zero, &mu0, beta, &omega).unwrap();
            assert!(gap > 1e-3, "beta={beta} gap={gap}");
            let shifted = Potential::new(ScalarField::constant(grid, 2.0), &omega);
            let gap2 = duality_gap(&shifted, &mu0, beta, &omega).unwrap();
            assert!((gap - gap2).abs() < 1e-10);
        }
    }

    #[test]
    fn pairing_energy_identity_with_omega_gauge() {
        // with <u, omega> = 0: -<u, MA(u)> = 2 E(MA(u)) exactly at n = 1
        let grid = grid64();
        let omega = BackgroundForm::cosine(grid, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..5 {
            let u0 = random_admissible(&omega, &mut rng);
            let u = Potential::new(omega.omega_mean_normalize(u0.field()), &omega);
            let mu = ma_measure(&u, &omega).unwrap();
            let lhs = -mu.pair(u.field());
            let rhs = 2.0 * measure_energy(&mu, &omega).unwrap();
            assert!((lhs - rhs).abs() < 1e-9, "lhs={lhs} rhs={rhs}");
        }
    }
}
