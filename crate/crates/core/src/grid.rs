//! Periodic grid on the unit-square torus.
//!
//! Conventions fixed once for the whole crate:
//! - the domain is [0,1) x [0,1) with total area 1,
//! - `d^c = i(-d+dbar)/4pi`, so the `dd^c`-density of a function u is
//!   `lap(u)/4pi` with respect to the flat area element,
//! - the background form omega has density `rho` and unit total mass,
//! - `dirichlet(u,u) = (1/4pi) int |grad u|^2 = int du wedge d^c u`.
//!
//! The Laplacian is the 5-point periodic stencil scaled by `n_side^2`;
//! `poisson_solve` inverts it exactly in the discrete sense by spectral
//! division with the stencil eigenvalues, so the round trip
//! `laplacian(poisson_solve(f)) = f` holds to rounding for mean-free f.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

/// Resolution of the periodic node grid. Nodes sit at (i/n, j/n) and own the
/// cell of side 1/n centered on them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    n_side: usize,
}

impl GridSpec {
    /// A grid with `n_side` nodes per axis. `n_side` must be even and >= 4.
    pub fn new(n_side: usize) -> Result<Self> {
        if n_side < 4 {
            return Err(Error::Invalid(format!("n_side {n_side} < 4")));
        }
        if n_side % 2 != 0 {
            return Err(Error::Invalid(format!("n_side {n_side} must be even")));
        }
        Ok(Self { n_side })
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    /// Side length of one cell.
    pub fn h(&self) -> f64 {
        1.0 / self.n_side as f64
    }

    /// Area of one cell, 1/n_side^2.
    pub fn cell_area(&self) -> f64 {
        let n = self.n_side as f64;
        1.0 / (n * n)
    }

    pub fn num_nodes(&self) -> usize {
        self.n_side * self.n_side
    }

    /// Row-major node index; rows are y-levels starting at y = 0.
    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.n_side + ix
    }

    /// Node coordinates of a row-major index.
    #[inline]
    pub fn node(&self, index: usize) -> Point {
        let ix = index % self.n_side;
        let iy = index / self.n_side;
        Point::new(ix as f64 * self.h(), iy as f64 * self.h())
    }
}

/// A point on the torus [0,1)^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x: wrap_unit(x),
            y: wrap_unit(y),
        }
    }

    /// Geodesic distance on the flat torus (minimum image convention).
    pub fn dist(&self, other: &Point) -> f64 {
        let dx = axis_dist(self.x, other.x);
        let dy = axis_dist(self.y, other.y);
        dx.hypot(dy)
    }
}

/// Wrap a real number into [0, 1).
pub fn wrap_unit(x: f64) -> f64 {
    let f = x.fract();
    if f < 0.0 {
        f + 1.0
    } else {
        f
    }
}

/// 1D toroidal distance on [0,1).
fn axis_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

/// Signed 1D displacement from `a` to `b` in (-1/2, 1/2].
pub fn axis_delta(a: f64, b: f64) -> f64 {
    let mut d = b - a;
    if d > 0.5 {
        d -= 1.0;
    } else if d <= -0.5 {
        d += 1.0;
    }
    d
}

/// A real-valued function sampled at the grid nodes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.num_nodes()],
        }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.num_nodes()],
        }
    }

    /// Build from raw row-major values; all values must be finite.
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::Invalid(format!(
                "expected {} values, got {}",
                grid.num_nodes(),
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("field contains non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    /// Sample a function of torus position at every node.
    pub fn from_fn(grid: GridSpec, f: impl Fn(Point) -> f64) -> Self {
        let values = (0..grid.num_nodes()).map(|i| f(grid.node(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.idx(ix, iy)]
    }

    /// Plain average of the node values (= integral against Lebesgue).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Returns `self` shifted to zero Lebesgue mean.
    pub fn zero_mean(&self) -> ScalarField {
        let m = self.mean();
        self.map(|v| v - m)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn axpy(&self, a: f64, other: &ScalarField) -> ScalarField {
        assert_eq!(self.grid, other.grid);
        ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&u, &v)| u + a * v)
                .collect(),
        }
    }

    pub fn scale(&self, a: f64) -> ScalarField {
        self.map(|v| a * v)
    }

    pub fn linf_dist(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&u, &v)| (u - v).abs())
            .fold(0.0, f64::max)
    }

    pub fn l1_dist(&self, other: &ScalarField) -> f64 {
        let h2 = self.grid.cell_area();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&u, &v)| (u - v).abs())
            .sum::<f64>()
            * h2
    }

    /// Periodic bilinear interpolation of the node values.
    pub fn interp(&self, p: Point) -> f64 {
        let n = self.grid.n_side;
        let nf = n as f64;
        let gx = wrap_unit(p.x) * nf;
        let gy = wrap_unit(p.y) * nf;
        let ix = gx.floor() as usize % n;
        let iy = gy.floor() as usize % n;
        let fx = gx - gx.floor();
        let fy = gy - gy.floor();
        let ix1 = (ix + 1) % n;
        let iy1 = (iy + 1) % n;
        let v00 = self.at(ix, iy);
        let v10 = self.at(ix1, iy);
        let v01 = self.at(ix, iy1);
        let v11 = self.at(ix1, iy1);
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy
    }
}

/// 5-point periodic Laplacian scaled by n_side^2. The output sums to zero
/// exactly up to rounding because every stencil term telescopes.
pub fn laplacian(u: &ScalarField) -> ScalarField {
    let g = u.grid();
    let n = g.n_side();
    let scale = (n * n) as f64;
    let mut out = vec![0.0; g.num_nodes()];
    for iy in 0..n {
        let up = if iy == 0 { n - 1 } else { iy - 1 };
        let dn = if iy == n - 1 { 0 } else { iy + 1 };
        for ix in 0..n {
            let lf = if ix == 0 { n - 1 } else { ix - 1 };
            let rt = if ix == n - 1 { 0 } else { ix + 1 };
            let c = u.at(ix, iy);
            out[g.idx(ix, iy)] =
                (u.at(lf, iy) + u.at(rt, iy) + u.at(ix, up) + u.at(ix, dn) - 4.0 * c) * scale;
        }
    }
    ScalarField {
        grid: g,
        values: out,
    }
}

/// Density of `dd^c u` with respect to the flat area element.
pub fn ddc_density(u: &ScalarField) -> ScalarField {
    laplacian(u).scale(1.0 / (4.0 * PI))
}

/// The Dirichlet pairing `int du wedge d^c v = (1/4pi) int grad u . grad v`,
/// computed as `-sum u * (lap v / 4pi) * cell_area`.
pub fn dirichlet(u: &ScalarField, v: &ScalarField) -> f64 {
    assert_eq!(u.grid(), v.grid());
    let lv = laplacian(v);
    let h2 = u.grid().cell_area();
    let mut acc = 0.0;
    for (uv, lvv) in u.values().iter().zip(lv.values()) {
        acc += uv * lvv;
    }
    -acc * h2 / (4.0 * PI)
}

fn fft_cache() -> &'static Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn plan_fft(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = fft_cache().lock().unwrap();
    cache
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

fn fft2(data: &mut [Complex64], n: usize, inverse: bool) {
    let fft = plan_fft(n, inverse);
    // rows
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    // columns, via transpose
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for ix in 0..n {
        for iy in 0..n {
            col[iy] = data[iy * n + ix];
        }
        fft.process(&mut col);
        for iy in 0..n {
            data[iy * n + ix] = col[iy];
        }
    }
}

/// Eigenvalue of the scaled 5-point Laplacian on the Fourier mode (k1, k2).
pub fn laplacian_eigenvalue(grid: GridSpec, k1: usize, k2: usize) -> f64 {
    let n = grid.n_side() as f64;
    let w = 2.0 * PI / n;
    -((2.0 - 2.0 * (w * k1 as f64).cos()) + (2.0 - 2.0 * (w * k2 as f64).cos())) * n * n
}

/// Solve `laplacian(u) = f` for the unique zero-mean `u` by spectral
/// inversion. `f` must be mean-free to within `1e-10`.
pub fn poisson_solve(f: &ScalarField) -> Result<ScalarField> {
    let mean = f.mean();
    if mean.abs() > 1e-10 {
        return Err(Error::NonZeroMeanRhs {
            mean,
            tol: 1e-10,
        });
    }
    let g = f.grid();
    let n = g.n_side();
    let mut data: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut data, n, false);
    for k2 in 0..n {
        for k1 in 0..n {
            let idx = k2 * n + k1;
            if k1 == 0 && k2 == 0 {
                data[idx] = Complex64::new(0.0, 0.0);
            } else {
                data[idx] /= laplacian_eigenvalue(g, k1, k2);
            }
        }
    }
    fft2(&mut data, n, true);
    let norm = 1.0 / (n * n) as f64;
    let values: Vec<f64> = data.iter().map(|c| c.re * norm).collect();
    let u = ScalarField { grid: g, values };
    Ok(u.zero_mean())
}

/// Discrete density of the background form omega. The density may change
/// sign; only the total mass is constrained to 1.
#[derive(Debug, Clone)]
pub struct BackgroundForm {
    rho: ScalarField,
}

impl BackgroundForm {
    /// The flat form: density identically 1.
    pub fn lebesgue(grid: GridSpec) -> Self {
        Self {
            rho: ScalarField::constant(grid, 1.0),
        }
    }

    /// Density `1 + a cos(2 pi x)`; sign-changing for |a| > 1, total mass 1
    /// exactly by discrete orthogonality.
    pub fn cosine(grid: GridSpec, a: f64) -> Self {
        Self {
            rho: ScalarField::from_fn(grid, |p| 1.0 + a * (2.0 * PI * p.x).cos()),
        }
    }

    /// Wrap an arbitrary density; total mass must be 1 within 1e-12.
    pub fn from_density(rho: ScalarField) -> Result<Self> {
        let mass = rho.mean();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "background form has mass {mass:.15}, expected 1 within 1e-12"
            )));
        }
        Ok(Self { rho })
    }

    pub fn grid(&self) -> GridSpec {
        self.rho.grid()
    }

    pub fn rho(&self) -> &ScalarField {
        &self.rho
    }

    /// Total mass, `sum rho * cell_area`.
    pub fn total_mass(&self) -> f64 {
        self.rho.mean()
    }

    /// Pairing `<u, omega> = sum u * rho * cell_area`.
    pub fn pair(&self, u: &ScalarField) -> f64 {
        assert_eq!(u.grid(), self.grid());
        let h2 = self.grid().cell_area();
        u.values()
            .iter()
            .zip(self.rho.values())
            .map(|(&a, &b)| a * b)
            .sum::<f64>()
            * h2
    }

    /// Shift `u` so that `<u, omega> = 0`.
    pub fn omega_mean_normalize(&self, u: &ScalarField) -> ScalarField {
        let m = self.pair(u);
        u.map(|v| v - m)
    }
}

/// Admissibility tolerance: discrete Laplacians amplify rounding by n^2.
pub fn default_eps_psh(grid: GridSpec) -> f64 {
    1e-10 * (grid.n_side() * grid.n_side()) as f64
}

/// A candidate potential together with its admissibility slack
/// `min_nodes (rho + lap(u)/4pi)`.
#[derive(Debug, Clone)]
pub struct Potential {
    field: ScalarField,
    slack: f64,
}

impl Potential {
    pub fn new(field: ScalarField, omega: &BackgroundForm) -> Self {
        assert_eq!(field.grid(), omega.grid());
        let lap = laplacian(&field);
        let slack = lap
            .values()
            .iter()
            .zip(omega.rho().values())
            .map(|(&l, &r)| r + l / (4.0 * PI))
            .fold(f64::INFINITY, f64::min);
        Self { field, slack }
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn slack(&self) -> f64 {
        self.slack
    }

    pub fn is_admissible(&self, eps_psh: f64) -> bool {
        self.slack >= -eps_psh
    }

    pub fn ensure_admissible(&self, eps_psh: f64) -> Result<()> {
        if self.is_admissible(eps_psh) {
            Ok(())
        } else {
            Err(Error::NotPsh {
                slack: self.slack,
                eps: eps_psh,
            })
        }
    }

    pub fn into_field(self) -> ScalarField {
        self.field
    }
}

/// Green function of omega with pole at `x0`: the zero-omega-mean solution of
/// `lap(g)/4pi = delta_{x0} - rho`, with the Dirac approximated by a bilinear
/// hat of unit mass. Near the pole `g` behaves like `log d^2(., x0)`.
pub fn green_function(x0: Point, omega: &BackgroundForm) -> Result<ScalarField> {
    let g = omega.grid();
    let mut rhs = omega.rho().scale(-4.0 * PI);
    let n = g.n_side();
    let nf = n as f64;
    let gx = wrap_unit(x0.x) * nf;
    let gy = wrap_unit(x0.y) * nf;
    let ix = gx.floor() as usize % n;
    let iy = gy.floor() as usize % n;
    let fx = gx - gx.floor();
    let fy = gy - gy.floor();
    let ix1 = (ix + 1) % n;
    let iy1 = (iy + 1) % n;
    // hat density value = weight / cell_area, so the hat has unit mass
    let inv_h2 = 1.0 / g.cell_area();
    let four_pi = 4.0 * PI;
    {
        let v = rhs.values_mut();
        v[g.idx(ix, iy)] += four_pi * (1.0 - fx) * (1.0 - fy) * inv_h2;
        v[g.idx(ix1, iy)] += four_pi * fx * (1.0 - fy) * inv_h2;
        v[g.idx(ix, iy1)] += four_pi * (1.0 - fx) * fy * inv_h2;
        v[g.idx(ix1, iy1)] += four_pi * fx * fy * inv_h2;
    }
    // the hat mass and the omega mass cancel exactly; clear rounding residue
    let rhs = rhs.zero_mean();
    let sol = poisson_solve(&rhs)?;
    Ok(omega.omega_mean_normalize(&sol))
}
