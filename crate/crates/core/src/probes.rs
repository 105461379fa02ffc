//! Deterministic probe families: random band-limited fields, random
//! admissible potentials, and the Green-pole families used by the
//! coercivity sweeps and the Moser-Trudinger fit.

use crate::grid::{green_function, BackgroundForm, GridSpec, Point, Potential, ScalarField};
use crate::Result;
use rand::Rng;
use std::f64::consts::{PI, TAU};

/// Random trigonometric polynomial with modes |k|_inf <= kmax and
/// coefficients of size ~ `amplitude / |k|`.
pub fn random_bandlimited(grid: GridSpec, rng: &mut impl Rng, kmax: i32, amplitude: f64) -> ScalarField {
    let mut modes = Vec::new();
    for kx in -kmax..=kmax {
        for ky in -kmax..=kmax {
            if kx == 0 && ky == 0 {
                continue;
            }
            // one representative per +-k pair
            if ky < 0 || (ky == 0 && kx < 0) {
                continue;
            }
            let knorm = ((kx * kx + ky * ky) as f64).sqrt();
            let a = rng.gen_range(-1.0..1.0) * amplitude / knorm;
            let phase = rng.gen_range(0.0..TAU);
            modes.push((kx as f64, ky as f64, a, phase));
        }
    }
    ScalarField::from_fn(grid, |p| {
        modes
            .iter()
            .map(|&(kx, ky, a, phase)| a * (TAU * (kx * p.x + ky * p.y) + phase).cos())
            .sum()
    })
}

/// Random admissible potential: a band-limited field rescaled so the
/// Monge-Ampère density keeps a positive margin. Requires min rho > 0.
pub fn random_admissible(omega: &BackgroundForm, rng: &mut impl Rng) -> Potential {
    let grid = omega.grid();
    let rho_min = omega.rho().min();
    assert!(
        rho_min > 0.0,
        "random_admissible needs a positive background density"
    );
    let raw = random_bandlimited(grid, rng, 5, 1.0);
    let lap = crate::grid::laplacian(&raw);
    let ddc_inf = lap
        .values()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        / (4.0 * PI);
    let margin = rng.gen_range(0.3..0.9);
    let scale = margin * rho_min / ddc_inf.max(1e-300);
    let offset = rng.gen_range(-0.5..0.5);
    Potential::new(raw.scale(scale).map(|v| v + offset), omega)
}

/// A named probe field for functional sweeps.
pub struct Probe {
    pub name: String,
    pub field: ScalarField,
}

/// Probe suite for Moser-Trudinger style bounds: random band-limited
/// fields, scaled Green peaks (`-t g`), and two-pole dipoles, all
/// normalized so `<u, omega> = 0`.
pub fn mt_probe_suite(
    omega: &BackgroundForm,
    mu0_descriptor: &str,
    rng: &mut impl Rng,
    n_random: usize,
) -> Result<Vec<Probe>> {
    let grid = omega.grid();
    let mut probes = Vec::new();
    for k in 0..n_random {
        let amp = rng.gen_range(0.3..2.0);
        let f = random_bandlimited(grid, rng, 6, amp);
        probes.push(Probe {
            name: format!("bandlimited[{k}]"),
            field: omega.omega_mean_normalize(&f),
        });
    }
    let centers = [
        Point::new(0.5, 0.5),
        Point::new(0.171875, 0.328125),
        Point::new(0.75, 0.25),
    ];
    let g0 = green_function(centers[0], omega)?;
    let g1 = green_function(centers[1], omega)?;
    let g2 = green_function(centers[2], omega)?;
    for &t in &[0.5, 1.0, 1.5, 2.0, 2.5] {
        probes.push(Probe {
            name: format!("green-peak[t={t}]@{mu0_descriptor}"),
            field: omega.omega_mean_normalize(&g0.scale(-t)),
        });
        probes.push(Probe {
            name: format!("green-pit[t={t}]"),
            field: omega.omega_mean_normalize(&g1.scale(t)),
        });
    }
    for &t in &[0.5, 1.0, 2.0] {
        let dipole = g1.axpy(-1.0, &g2).scale(t);
        probes.push(Probe {
            name: format!("dipole[t={t}]"),
            field: omega.omega_mean_normalize(&dipole),
        });
    }
    Ok(probes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::default_eps_psh;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn admissible_probes_are_admissible() {
        let grid = GridSpec::new(32).unwrap();
        let omega = BackgroundForm::cosine(grid, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let u = random_admissible(&omega, &mut rng);
            assert!(u.is_admissible(default_eps_psh(grid)));
            assert!(u.slack() > 0.0);
        }
    }

    #[test]
    fn mt_suite_is_omega_normalized() {
        let grid = GridSpec::new(32).unwrap();
        let omega = BackgroundForm::lebesgue(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let probes = mt_probe_suite(&omega, "lebesgue", &mut rng, 3).unwrap();
        assert!(probes.len() > 10);
        for p in &probes {
            assert!(omega.pair(&p.field).abs() < 1e-9, "{}", p.name);
        }
    }
}
