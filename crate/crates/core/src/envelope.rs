//! The psh projection (upper envelope below an obstacle) as a linear
//! complementarity problem, solved by projected Gauss-Seidel with
//! over-relaxation.
//!
//! `P u` is the largest field `v <= u` with `rho + lap(v)/4pi >= 0`. At each
//! node the solution satisfies the complementarity condition
//! `min(u - v, rho + lap(v)/4pi) = 0`: either the envelope touches the
//! obstacle or its Monge-Ampère density vanishes there.

use crate::error::{Error, Result};
use crate::functionals::{ma_density_raw, ma_measure};
use crate::grid::{BackgroundForm, Potential, ScalarField};
use std::f64::consts::PI;

/// Projected SOR parameters.
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeParams {
    pub omega_relax: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        Self {
            omega_relax: 1.7,
            tol: 1e-9,
            max_sweeps: 400_000,
        }
    }
}

/// Converged envelope with its contact set and complementarity residual.
#[derive(Debug, Clone)]
pub struct EnvelopeResult {
    pub pu: Potential,
    /// nodes where the envelope touches the obstacle (within 1e-8)
    pub contact_set: Vec<bool>,
    pub lcp_residual: f64,
    pub iterations: usize,
}

impl EnvelopeResult {
    /// Largest Monge-Ampère density off the contact set; the free-boundary
    /// equation requires this to vanish.
    pub fn max_ma_off_contact(&self, omega: &BackgroundForm) -> f64 {
        let ma = ma_density_raw(self.pu.field(), omega);
        ma.values()
            .iter()
            .zip(&self.contact_set)
            .filter(|&(_, &c)| !c)
            .map(|(&v, _)| v.abs())
            .fold(0.0, f64::max)
    }
}

fn complementarity_residual(
    v: &ScalarField,
    obstacle: &ScalarField,
    omega: &BackgroundForm,
) -> f64 {
    let ma = ma_density_raw(v, omega);
    let mut worst = 0.0f64;
    for i in 0..v.values().len() {
        let gap = obstacle.values()[i] - v.values()[i];
        worst = worst.max(gap.min(ma.values()[i]).abs());
    }
    worst
}

/// Solve the obstacle problem `min(obstacle - v, rho + lap(v)/4pi) = 0`.
pub fn psh_project(
    obstacle: &ScalarField,
    omega: &BackgroundForm,
    params: EnvelopeParams,
) -> Result<EnvelopeResult> {
    assert_eq!(obstacle.grid(), omega.grid());
    let grid = omega.grid();
    let n = grid.n_side();
    let h2 = grid.cell_area();
    let four_pi_h2 = 4.0 * PI * h2;
    let mut v = obstacle.clone();
    let rho = omega.rho();
    let mut sweeps = 0;
    let mut residual = f64::INFINITY;
    while sweeps < params.max_sweeps {
        for iy in 0..n {
            let up = if iy == 0 { n - 1 } else { iy - 1 };
            let dn = if iy == n - 1 { 0 } else { iy + 1 };
            for ix in 0..n {
                let lf = if ix == 0 { n - 1 } else { ix - 1 };
                let rt = if ix == n - 1 { 0 } else { ix + 1 };
                let idx = grid.idx(ix, iy);
                let s = v.at(lf, iy) + v.at(rt, iy) + v.at(ix, up) + v.at(ix, dn);
                let gs = 0.25 * (s + four_pi_h2 * rho.values()[idx]);
                let old = v.values()[idx];
                let relaxed = old + params.omega_relax * (gs - old);
                v.values_mut()[idx] = relaxed.min(obstacle.values()[idx]);
            }
        }
        sweeps += 1;
        if sweeps % 16 == 0 || sweeps == params.max_sweeps {
            residual = complementarity_residual(&v, obstacle, omega);
            if residual <= params.tol {
                break;
            }
        }
    }
    if residual > params.tol {
        return Err(Error::LcpNonConvergence {
            residual,
            iterations: sweeps,
        });
    }
    let contact_set = v
        .values()
        .iter()
        .zip(obstacle.values())
        .map(|(&vi, &oi)| oi - vi <= 1e-8)
        .collect();
    Ok(EnvelopeResult {
        pu: Potential::new(v, omega),
        contact_set,
        lcp_residual: residual,
        iterations: sweeps,
    })
}

/// The envelope of the zero obstacle, `P 0`: the reference solution of the
/// free-boundary problem (density vanishes where the envelope is negative).
pub fn envelope_zero(omega: &BackgroundForm, params: EnvelopeParams) -> Result<EnvelopeResult> {
    psh_project(&ScalarField::zeros(omega.grid()), omega, params)
}

/// `|<MA(Pu), u - Pu>|`: the orthogonality defect of the projection. The
/// Monge-Ampère measure of the envelope puts no mass where the envelope is
/// strictly below the obstacle.
pub fn orthogonality_residual(
    obstacle: &ScalarField,
    omega: &BackgroundForm,
    params: EnvelopeParams,
) -> Result<f64> {
    let env = psh_project(obstacle, omega, params)?;
    let mu = ma_measure(&env.pu, omega)?;
    let diff = obstacle.axpy(-1.0, env.pu.field());
    Ok(mu.pair(&diff).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::energy_raw;
    use crate::grid::{default_eps_psh, GridSpec};
    use crate::probes::random_bandlimited;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn benchmark_form(grid: GridSpec) -> BackgroundForm {
        // sign-changing density of unit mass
        BackgroundForm::cosine(grid, 2.0)
    }

    #[test]
    fn zero_obstacle_full_contact_for_positive_rho() {
        let grid = GridSpec::new(32).unwrap();
        let omega = BackgroundForm::lebesgue(grid);
        let env = envelope_zero(&omega, EnvelopeParams::default()).unwrap();
        assert!(env.pu.field().linf_dist(&ScalarField::zeros(grid)) < 1e-9);
        assert!(env.contact_set.iter().all(|&c| c));
    }

    #[test]
    fn admissible_obstacle_is_fixed() {
        let grid = GridSpec::new(32).unwrap();
        let omega = BackgroundForm::lebesgue(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = crate::probes::random_admissible(&omega, &mut rng);
        let env = psh_project(u.field(), &omega, EnvelopeParams::default()).unwrap();
        assert!(env.pu.field().linf_dist(u.field()) < 1e-8);
        let orth = orthogonality_residual(u.field(), &omega, EnvelopeParams::default()).unwrap();
        assert!(orth < 1e-7);
    }

    #[test]
    fn sign_changing_benchmark() {
        let grid = GridSpec::new(64).unwrap();
        let omega = benchmark_form(grid);
        let env = envelope_zero(&omega, EnvelopeParams::default()).unwrap();
        // envelope dips below zero around the band where rho < 0
        assert!(env.pu.field().min() < -1e-3);
        assert!(env.pu.field().max() <= 1e-10);
        assert!(env.pu.slack() >= -default_eps_psh(grid));
        // sup of the zero envelope is 0
        assert!(env.pu.field().max().abs() < 1e-8);
        // nodewise complementarity
        let ma = ma_density_raw(env.pu.field(), &omega);
        for i in 0..grid.num_nodes() {
            let gap = -env.pu.field().values()[i];
            let m = ma.values()[i];
            assert!(gap.min(m) <= 1e-8, "node {i}: gap={gap} ma={m}");
        }
        // density vanishes off the contact set
        assert!(env.max_ma_off_contact(&omega) < 1e-7);
        // orthogonality
        let orth =
            orthogonality_residual(&ScalarField::zeros(grid), &omega, EnvelopeParams::default())
                .unwrap();
        assert!(orth < 1e-7, "orthogonality {orth}");
    }

    #[test]
    fn agrees_with_projected_jacobi_oracle_on_coarse_grid() {
        // independent slow solver from several starting points
        let grid = GridSpec::new(8).unwrap();
        let omega = benchmark_form(grid);
        let obstacle = ScalarField::zeros(grid);
        let env = psh_project(&obstacle, &omega, EnvelopeParams::default()).unwrap();
        let n = grid.n_side();
        let h2 = grid.cell_area();
        let four_pi_h2 = 4.0 * PI * h2;
        for start in [-3.0, -0.5, 0.0] {
            let mut v = ScalarField::constant(grid, start);
            for _ in 0..200_000 {
                let prev = v.clone();
                for iy in 0..n {
                    let up = if iy == 0 { n - 1 } else { iy - 1 };
                    let dn = if iy == n - 1 { 0 } else { iy + 1 };
                    for ix in 0..n {
                        let lf = if ix == 0 { n - 1 } else { ix - 1 };
                        let rt = if ix == n - 1 { 0 } else { ix + 1 };
                        let s = prev.at(lf, iy) + prev.at(rt, iy) + prev.at(ix, up)
                            + prev.at(ix, dn);
                        let gs =
                            0.25 * (s + four_pi_h2 * omega.rho().values()[grid.idx(ix, iy)]);
                        v.values_mut()[grid.idx(ix, iy)] =
                            gs.min(obstacle.values()[grid.idx(ix, iy)]);
                    }
                }
            }
            assert!(
                v.linf_dist(env.pu.field()) < 1e-9,
                "jacobi from {start} disagrees"
            );
        }
    }

    #[test]
    fn monotone_in_the_obstacle() {
        let grid = GridSpec::new(32).unwrap();
        let omega = benchmark_form(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_bandlimited(grid, &mut rng, 4, 0.5);
        let b = a.map(|v| v + 0.3); // a <= b
        let pa = psh_project(&a, &omega, EnvelopeParams::default()).unwrap();
        let pb = psh_project(&b, &omega, EnvelopeParams::default()).unwrap();
        for (x, y) in pa.pu.field().values().iter().zip(pb.pu.field().values()) {
            assert!(x <= &(y + 1e-9));
        }
    }

    #[test]
    fn projection_raises_energy() {
        let grid = GridSpec::new(32).unwrap();
        let omega = benchmark_form(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let u = random_bandlimited(grid, &mut rng, 4, 0.8);
            let env = psh_project(&u, &omega, EnvelopeParams::default()).unwrap();
            assert!(energy_raw(env.pu.field(), &omega) >= energy_raw(&u, &omega) - 1e-9);
        }
    }

    #[test]
    fn energy_of_projection_concave_along_segments() {
        let grid = GridSpec::new(32).unwrap();
        let omega = benchmark_form(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u0 = random_bandlimited(grid, &mut rng, 4, 0.8);
        let u1 = random_bandlimited(grid, &mut rng, 4, 0.8);
        let e = |f: &ScalarField| {
            let env = psh_project(f, &omega, EnvelopeParams::default()).unwrap();
            energy_raw(env.pu.field(), &omega)
        };
        let e0 = e(&u0);
        let e1 = e(&u1);
        for t in [0.25, 0.5, 0.75] {
            let mid = u0.scale(1.0 - t).axpy(t, &u1);
            assert!(e(&mid) >= (1.0 - t) * e0 + t * e1 - 1e-7);
        }
    }

    #[test]
    fn gradient_of_projected_energy() {
        // finite differences of E(P(u + t v)) match <MA(Pu), v>
        let grid = GridSpec::new(32).unwrap();
        let omega = benchmark_form(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = random_bandlimited(grid, &mut rng, 4, 0.8);
        let env = psh_project(&u, &omega, EnvelopeParams::default()).unwrap();
        let mu = ma_measure(&env.pu, &omega).unwrap();
        for _ in 0..3 {
            let v = random_bandlimited(grid, &mut rng, 4, 1.0);
            let t = 1e-5;
            let ep = {
                let e = psh_project(&u.axpy(t, &v), &omega, EnvelopeParams::default()).unwrap();
                energy_raw(e.pu.field(), &omega)
            };
            let em = {
                let e = psh_project(&u.axpy(-t, &v), &omega, EnvelopeParams::default()).unwrap();
                energy_raw(e.pu.field(), &omega)
            };
            let fd = (ep - em) / (2.0 * t);
            let pairing = mu.pair(&v);
            assert!(
                (fd - pairing).abs() <= 1e-3 * (1.0 + pairing.abs()),
                "fd={fd} pairing={pairing}"
            );
        }
    }
}
