//! Probability measures on the torus: nonnegative cell densities plus
//! optional analytic log-pole factors (klt data), and the pole-aware
//! quadrature behind them.
//!
//! A measure has density `N * base(x) * prod_i d(x, p_i)^{-2 c_i}` where
//! `base` is a cell-constant grid density, the `p_i` are pole centers with
//! exponents `c_i < 1`, and `N` normalizes the total mass to 1. Smooth
//! measures are the pole-free case.
//!
//! Quadrature convention: every node owns the cell of side `h` centered on
//! it. Cells away from all poles are integrated by node sums. Each pole owns
//! a square block of whole cells around it; block integrals run in polar
//! coordinates about the pole with exact radial weights for the power
//! factor, Gauss-Legendre panels in the angle, a geometrically graded radial
//! ladder, and an analytic inner completion whenever the local exponent is
//! integrable. Refinement deepens the ladder and the angular rule, which
//! yields the monotone refinement sequences used for divergence detection.

use crate::error::{Error, Result};
use crate::grid::{axis_delta, GridSpec, Point, ScalarField};

/// Analytic pole factor `d(x, center)^{-2c}` of a measure density.
#[derive(Debug, Clone, Copy)]
pub struct PoleFactor {
    pub center: Point,
    pub c: f64,
}

/// Declared log-pole model of a probe field: near `center` the field behaves
/// like `coeff * log d^2(x, center)` plus a smooth remainder.
#[derive(Debug, Clone, Copy)]
pub struct LogPole {
    pub center: Point,
    pub coeff: f64,
}

/// A grid field together with its declared log-pole models, so near-pole
/// quadrature can use the analytic singularity instead of grid suprema.
#[derive(Debug, Clone)]
pub struct ProbeField {
    field: ScalarField,
    poles: Vec<LogPole>,
    /// `field` minus the sampled pole models; smooth across pole cells.
    residual: ScalarField,
}

impl ProbeField {
    pub fn smooth(field: ScalarField) -> Self {
        let residual = field.clone();
        Self {
            field,
            poles: Vec::new(),
            residual,
        }
    }

    pub fn with_poles(field: ScalarField, poles: Vec<LogPole>) -> Self {
        let grid = field.grid();
        let h = grid.h();
        let mut residual = field.clone();
        for lp in &poles {
            let vals = residual.values_mut();
            for i in 0..grid.num_nodes() {
                let d = grid.node(i).dist(&lp.center).max(0.5 * h);
                vals[i] -= lp.coeff * (d * d).ln();
            }
        }
        Self {
            field,
            poles,
            residual,
        }
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn poles(&self) -> &[LogPole] {
        &self.poles
    }

    /// Model value at an off-node point: interpolated smooth remainder plus
    /// the analytic pole terms.
    pub fn model_at(&self, p: Point) -> f64 {
        let mut v = self.residual.interp(p);
        for lp in &self.poles {
            let d = p.dist(&lp.center);
            v += lp.coeff * (d * d).ln();
        }
        v
    }

    /// Smooth remainder only (pole models removed).
    pub fn residual_at(&self, p: Point) -> f64 {
        self.residual.interp(p)
    }
}

/// Half-width of a pole block in cells: the block is (2K+1) x (2K+1) cells.
const BLOCK_K: usize = 3;
/// Radial ladder ratio.
const LADDER_Q: f64 = 0.5;
/// Ladder rungs added per refinement level (inner radius shrinks by 2^27).
const RUNGS_PER_LEVEL: usize = 27;

/// Minimal center separation (torus L-infinity) for distinct poles so that
/// their quadrature blocks stay disjoint.
pub fn min_pole_separation(grid: GridSpec) -> f64 {
    (2 * BLOCK_K + 2) as f64 * grid.h()
}

fn linf_dist(a: &Point, b: &Point) -> f64 {
    axis_delta(a.x, b.x).abs().max(axis_delta(a.y, b.y).abs())
}

/// Whether two centers are close enough to be treated as one pole location.
pub fn same_center(a: &Point, b: &Point, grid: GridSpec) -> bool {
    linf_dist(a, b) < 1e-9 * grid.h()
}

fn check_separation(centers: &[Point], grid: GridSpec) -> Result<()> {
    let min_sep = min_pole_separation(grid);
    for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            let d = linf_dist(&centers[i], &centers[j]);
            if d >= 1e-9 * grid.h() && d < min_sep {
                return Err(Error::PolesTooClose {
                    a: (centers[i].x, centers[i].y),
                    b: (centers[j].x, centers[j].y),
                });
            }
        }
    }
    Ok(())
}

/// Quadrature depth knobs; `deepen` is used by the refinement checks.
#[derive(Debug, Clone, Copy)]
pub struct QuadDepth {
    /// Gauss-Legendre panels per smooth angular arc.
    pub theta_panels: usize,
    /// Refinement levels of the radial ladder.
    pub levels: usize,
    /// Extra tensor-subdivision of near-pole cells in cell-mass quadrature.
    pub subdiv_boost: usize,
}

impl Default for QuadDepth {
    fn default() -> Self {
        Self {
            theta_panels: 2,
            levels: 6,
            subdiv_boost: 0,
        }
    }
}

impl QuadDepth {
    pub fn deeper(self) -> Self {
        Self {
            theta_panels: self.theta_panels * 2,
            levels: self.levels + 1,
            subdiv_boost: self.subdiv_boost + 1,
        }
    }
}

// 16-point Gauss-Legendre rule on [-1, 1].
const GL16_X: [f64; 8] = [
    0.0950125098376374,
    0.2816035507792589,
    0.4580167776572274,
    0.6178762444026438,
    0.7554044083550030,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];
const GL16_W: [f64; 8] = [
    0.1894506104550685,
    0.1826034150449236,
    0.1691565193950025,
    0.1495959888165767,
    0.1246289712555339,
    0.0951585116824928,
    0.0622535239386479,
    0.0271524594117541,
];

fn gauss16(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for k in 0..8 {
        let dx = half * GL16_X[k];
        acc += GL16_W[k] * (f(mid + dx) + f(mid - dx));
    }
    acc * half
}

/// Exact weight of `int_a^b r^{1-2e} dr`.
fn radial_power_weight(e: f64, a: f64, b: f64) -> f64 {
    if (e - 1.0).abs() < 1e-14 {
        (b / a).ln()
    } else {
        let p = 2.0 - 2.0 * e;
        (b.powf(p) - a.powf(p)) / p
    }
}

/// Distance from an interior origin to the boundary of the box
/// [lo.0,hi.0] x [lo.1,hi.1] along direction theta.
fn ray_box_radius(lo: (f64, f64), hi: (f64, f64), cos_t: f64, sin_t: f64) -> f64 {
    let tx = if cos_t > 1e-300 {
        hi.0 / cos_t
    } else if cos_t < -1e-300 {
        lo.0 / cos_t
    } else {
        f64::INFINITY
    };
    let ty = if sin_t > 1e-300 {
        hi.1 / sin_t
    } else if sin_t < -1e-300 {
        lo.1 / sin_t
    } else {
        f64::INFINITY
    };
    tx.min(ty)
}

/// One pole block: a square of whole cells around a singular point, with the
/// combined radial exponent of the integrand there.
struct Block {
    center: Point,
    /// integrand behaves like d^{-2e} near `center`
    e: f64,
    /// rectangle in center-relative coordinates, strictly containing 0
    lo: (f64, f64),
    hi: (f64, f64),
}

impl Block {
    fn around(center: Point, grid: GridSpec, half_cells: usize) -> Self {
        let h = grid.h();
        let n = grid.n_side() as f64;
        // node owning the center
        let cx = (center.x * n).round().rem_euclid(n) * h;
        let cy = (center.y * n).round().rem_euclid(n) * h;
        let half = (half_cells as f64 + 0.5) * h;
        let off_x = axis_delta(center.x, cx);
        let off_y = axis_delta(center.y, cy);
        Block {
            center,
            e: 0.0,
            lo: (off_x - half, off_y - half),
            hi: (off_x + half, off_y + half),
        }
    }

    /// Sorted corner angles splitting the circle into smooth arcs.
    fn corner_angles(&self) -> [f64; 4] {
        let mut a = [
            f64::atan2(self.lo.1, self.lo.0),
            f64::atan2(self.lo.1, self.hi.0),
            f64::atan2(self.hi.1, self.lo.0),
            f64::atan2(self.hi.1, self.hi.0),
        ];
        a.sort_by(|p, q| p.partial_cmp(q).unwrap());
        a
    }

    /// Polar integral of `smooth(x) * d(x, center)^{-2e}` over the block at
    /// a given ladder depth. `freeze` is the inner cutoff radius; when the
    /// exponent is integrable the remaining inner disk is completed
    /// analytically with the smooth factor frozen near the center.
    fn integrate(
        &self,
        depth_level: usize,
        theta_panels: usize,
        smooth: &mut dyn FnMut(Point) -> f64,
        grid: GridSpec,
    ) -> f64 {
        let h = grid.h();
        let freeze = h * LADDER_Q.powi((RUNGS_PER_LEVEL * depth_level) as i32);
        let corners = self.corner_angles();
        let mut total = 0.0;
        for arc in 0..4 {
            let t0 = corners[arc];
            let t1 = if arc == 3 {
                corners[0] + std::f64::consts::TAU
            } else {
                corners[arc + 1]
            };
            if t1 - t0 < 1e-14 {
                continue;
            }
            let panel_w = (t1 - t0) / theta_panels as f64;
            for panel in 0..theta_panels {
                let a = t0 + panel as f64 * panel_w;
                total += gauss16(a, a + panel_w, |theta| {
                    let ct = theta.cos();
                    let st = theta.sin();
                    let rmax = ray_box_radius(self.lo, self.hi, ct, st);
                    let mut ray = 0.0;
                    let mut r_hi = rmax;
                    while r_hi > freeze {
                        let r_lo = (r_hi * LADDER_Q).min(r_hi);
                        let r_lo = if r_lo <= freeze { freeze } else { r_lo };
                        let w = radial_power_weight(self.e, r_lo, r_hi);
                        let rm = (r_hi * r_lo).sqrt();
                        let p = Point::new(self.center.x + rm * ct, self.center.y + rm * st);
                        ray += smooth(p) * w;
                        r_hi = r_lo;
                    }
                    if self.e < 1.0 {
                        // analytic completion of the inner disk
                        let rm = 0.5 * freeze;
                        let p = Point::new(self.center.x + rm * ct, self.center.y + rm * st);
                        let pw = 2.0 - 2.0 * self.e;
                        ray += smooth(p) * freeze.powf(pw) / pw;
                    }
                    ray
                });
            }
        }
        total
    }
}

/// Refinement trace of a pole-aware integral: partial value per level.
#[derive(Debug, Clone)]
pub struct RefinementTrace {
    /// (level, partial integral) pairs; the partial value may be infinite.
    pub partials: Vec<(usize, f64)>,
}

impl RefinementTrace {
    pub fn last(&self) -> f64 {
        self.partials.last().map(|&(_, v)| v).unwrap_or(0.0)
    }

    /// Relative change between the last two levels.
    pub fn last_rel_change(&self) -> f64 {
        if self.partials.len() < 2 {
            return f64::INFINITY;
        }
        let a = self.partials[self.partials.len() - 2].1;
        let b = self.partials[self.partials.len() - 1].1;
        if !a.is_finite() || !b.is_finite() {
            return f64::INFINITY;
        }
        (b - a).abs() / b.abs().max(1e-300)
    }

    /// True if the last two level-to-level ratios are >= 1.5 (or the sums
    /// overflowed): the partial sums grow geometrically under refinement.
    pub fn grows_geometrically(&self) -> bool {
        let n = self.partials.len();
        if self.partials.iter().any(|&(_, v)| !v.is_finite()) {
            return true;
        }
        if n < 3 {
            return false;
        }
        let r1 = self.partials[n - 1].1 / self.partials[n - 2].1.max(1e-300);
        let r2 = self.partials[n - 2].1 / self.partials[n - 3].1.max(1e-300);
        r1 >= 1.5 && r2 >= 1.5
    }
}

/// A probability measure: cell-constant base density, optional analytic
/// pole factors, and the normalization making the total mass 1.
#[derive(Debug, Clone)]
pub struct Measure {
    base: ScalarField,
    poles: Vec<PoleFactor>,
    normalization: f64,
    /// mass of every node cell; sums to 1 exactly
    cell_masses: Vec<f64>,
}

impl Measure {
    /// The flat probability measure.
    pub fn lebesgue(grid: GridSpec) -> Measure {
        Self::from_density(ScalarField::constant(grid, 1.0)).unwrap()
    }

    /// A smooth measure from a nonnegative grid density (normalized here).
    pub fn from_density(density: ScalarField) -> Result<Measure> {
        if density.min() < 0.0 {
            return Err(Error::Invalid(format!(
                "measure density has negative values (min {})",
                density.min()
            )));
        }
        let mean = density.mean();
        if mean <= 0.0 {
            return Err(Error::Invalid("measure density has zero mass".into()));
        }
        let normalization = 1.0 / mean;
        let h2 = density.grid().cell_area();
        let mut cell_masses: Vec<f64> = density
            .values()
            .iter()
            .map(|&v| v * normalization * h2)
            .collect();
        let s: f64 = cell_masses.iter().sum();
        for m in &mut cell_masses {
            *m /= s;
        }
        Ok(Measure {
            base: density,
            poles: Vec::new(),
            normalization,
            cell_masses,
        })
    }

    /// A klt measure `N * base * prod_i d(x, p_i)^{-2 c_i}` with base = 1.
    pub fn klt(grid: GridSpec, poles: &[(Point, f64)]) -> Result<Measure> {
        Self::with_poles(ScalarField::constant(grid, 1.0), poles)
    }

    /// General pole-decorated measure; every exponent must satisfy c < 1 and
    /// pole centers must be pairwise distinct.
    pub fn with_poles(base: ScalarField, poles: &[(Point, f64)]) -> Result<Measure> {
        let grid = base.grid();
        if base.min() < 0.0 {
            return Err(Error::Invalid("measure base density is negative".into()));
        }
        for &(_, c) in poles {
            if c >= 1.0 {
                return Err(Error::KltViolation { c });
            }
        }
        let centers: Vec<Point> = poles.iter().map(|&(p, _)| p).collect();
        for i in 0..centers.len() {
            for j in (i + 1)..centers.len() {
                if same_center(&centers[i], &centers[j], grid) {
                    return Err(Error::Invalid(
                        "duplicate pole centers in measure definition".into(),
                    ));
                }
            }
        }
        check_separation(&centers, grid)?;
        let poles: Vec<PoleFactor> = poles
            .iter()
            .map(|&(center, c)| PoleFactor { center, c })
            .collect();
        let depth = QuadDepth::default();
        let raw = raw_cell_masses(&base, &poles, depth);
        let raw_total: f64 = raw.iter().sum();
        if !(raw_total.is_finite() && raw_total > 0.0) {
            return Err(Error::DivergentIntegral { partial: raw_total });
        }
        let normalization = 1.0 / raw_total;
        let mut cell_masses: Vec<f64> = raw.iter().map(|&m| m * normalization).collect();
        let s: f64 = cell_masses.iter().sum();
        for m in &mut cell_masses {
            *m /= s;
        }
        Ok(Measure {
            base,
            poles,
            normalization,
            cell_masses,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.base.grid()
    }

    pub fn base(&self) -> &ScalarField {
        &self.base
    }

    pub fn poles(&self) -> &[PoleFactor] {
        &self.poles
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// Per-cell masses; they sum to 1 exactly.
    pub fn cell_masses(&self) -> &[f64] {
        &self.cell_masses
    }

    pub fn total_mass(&self) -> f64 {
        self.cell_masses.iter().sum()
    }

    /// Grid representation: cell mass divided by cell area. This is the
    /// density every grid-level consumer (solvers, entropy) sees.
    pub fn grid_density(&self) -> ScalarField {
        let h2 = self.grid().cell_area();
        ScalarField::from_values(
            self.grid(),
            self.cell_masses.iter().map(|&m| m / h2).collect(),
        )
        .expect("cell masses are finite")
    }

    /// Analytic density at a point off the pole centers.
    pub fn density_at(&self, p: Point) -> f64 {
        let mut v = self.normalization * nearest_node_value(&self.base, p);
        for pf in &self.poles {
            let d = p.dist(&pf.center);
            v *= (d * d).powf(-pf.c);
        }
        v
    }

    /// Grid-consistent pairing `<f, mu> = sum f_i * cell_mass_i`.
    pub fn pair(&self, f: &ScalarField) -> f64 {
        assert_eq!(f.grid(), self.grid());
        f.values()
            .iter()
            .zip(&self.cell_masses)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    /// Relative change of the raw total mass when the quadrature depth
    /// increases; small values certify the pole quadrature has converged.
    pub fn mass_refinement_error(&self) -> f64 {
        if self.poles.is_empty() {
            return 0.0;
        }
        let shallow = raw_cell_masses(&self.base, &self.poles, QuadDepth::default());
        let deep = raw_cell_masses(&self.base, &self.poles, QuadDepth::default().deeper());
        let a: f64 = shallow.iter().sum();
        let b: f64 = deep.iter().sum();
        (a - b).abs() / b
    }

    /// Mass of the disk of radius `r` around pole `k`, integrated in polar
    /// coordinates with the analytic radial factor.
    pub fn pole_disk_mass(&self, k: usize, r: f64) -> f64 {
        let pf = self.poles[k];
        let grid = self.grid();
        let depth = QuadDepth::default();
        let norm = self.normalization;
        let base = &self.base;
        let others: Vec<PoleFactor> = self
            .poles
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, &p)| p)
            .collect();
        let smooth = |p: Point| {
            let mut v = norm * nearest_node_value(base, p);
            for o in &others {
                let d = p.dist(&o.center);
                v *= (d * d).powf(-o.c);
            }
            v
        };
        // reuse the ladder with a circular boundary
        let freeze = grid.h() * LADDER_Q.powi((RUNGS_PER_LEVEL * depth.levels) as i32);
        let panels = 8 * depth.theta_panels;
        let mut total = 0.0;
        let tau = std::f64::consts::TAU;
        for panel in 0..panels {
            let a = tau * panel as f64 / panels as f64;
            let b = tau * (panel + 1) as f64 / panels as f64;
            total += gauss16(a, b, |theta| {
                let ct = theta.cos();
                let st = theta.sin();
                let mut ray = 0.0;
                let mut r_hi = r;
                while r_hi > freeze {
                    let r_lo = (r_hi * LADDER_Q).max(freeze * 0.999_999);
                    let w = radial_power_weight(pf.c, r_lo.min(r_hi), r_hi);
                    let rm = (r_hi * r_lo).sqrt();
                    let p = Point::new(pf.center.x + rm * ct, pf.center.y + rm * st);
                    ray += smooth(p) * w;
                    r_hi = r_lo;
                }
                let rm = 0.5 * freeze;
                let p = Point::new(pf.center.x + rm * ct, pf.center.y + rm * st);
                let pw = 2.0 - 2.0 * pf.c;
                ray += smooth(p) * freeze.powf(pw) / pw;
                ray
            });
        }
        total
    }
}

fn nearest_node_value(f: &ScalarField, p: Point) -> f64 {
    let g = f.grid();
    let n = g.n_side();
    let nf = n as f64;
    let ix = (p.x * nf).round() as usize % n;
    let iy = (p.y * nf).round() as usize % n;
    f.at(ix, iy)
}

/// Raw (unnormalized) cell masses of `base * prod d^{-2c}`.
fn raw_cell_masses(base: &ScalarField, poles: &[PoleFactor], depth: QuadDepth) -> Vec<f64> {
    let grid = base.grid();
    let n = grid.n_side();
    let h = grid.h();
    let h2 = grid.cell_area();
    let mut masses = vec![0.0; grid.num_nodes()];
    let mut in_block = vec![false; grid.num_nodes()];

    // mark block cells
    for pf in poles {
        let (cx, cy) = owner_node(grid, pf.center);
        for dy in -(BLOCK_K as isize)..=(BLOCK_K as isize) {
            for dx in -(BLOCK_K as isize)..=(BLOCK_K as isize) {
                let ix = wrap_idx(cx as isize + dx, n);
                let iy = wrap_idx(cy as isize + dy, n);
                in_block[grid.idx(ix, iy)] = true;
            }
        }
    }

    // far cells: node value x cell area
    for i in 0..grid.num_nodes() {
        if !in_block[i] {
            let p = grid.node(i);
            let mut v = base.values()[i];
            for pf in poles {
                let d = p.dist(&pf.center);
                v *= (d * d).powf(-pf.c);
            }
            masses[i] = v * h2;
        }
    }

    // block cells, per pole
    for (k, pf) in poles.iter().enumerate() {
        let (cx, cy) = owner_node(grid, pf.center);
        let others: Vec<PoleFactor> = poles
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, &p)| p)
            .collect();
        for dy in -(BLOCK_K as isize)..=(BLOCK_K as isize) {
            for dx in -(BLOCK_K as isize)..=(BLOCK_K as isize) {
                let ix = wrap_idx(cx as isize + dx, n);
                let iy = wrap_idx(cy as isize + dy, n);
                let node_i = grid.idx(ix, iy);
                let node = grid.node(node_i);
                let base_v = base.values()[node_i];
                let ring = dx.abs().max(dy.abs()) as usize;
                let mass = if ring == 0 {
                    // singular cell: polar integral around the pole
                    let mut block = Block::around(pf.center, grid, 0);
                    block.e = pf.c;
                    let mut smooth = |p: Point| {
                        let mut v = base_v;
                        for o in &others {
                            let d = p.dist(&o.center);
                            v *= (d * d).powf(-o.c);
                        }
                        v
                    };
                    block.integrate(2, depth.theta_panels, &mut smooth, grid)
                } else {
                    // smooth cell: tensor Gauss with distance-graded subdivision
                    let sub = match ring {
                        1 => 4,
                        2 => 2,
                        _ => 1,
                    } << depth.subdiv_boost;
                    let mut acc = 0.0;
                    let s = h / sub as f64;
                    for sy in 0..sub {
                        for sx in 0..sub {
                            let x0 = node.x - 0.5 * h + sx as f64 * s;
                            let y0 = node.y - 0.5 * h + sy as f64 * s;
                            acc += gauss2d(x0, y0, s, |p| {
                                let mut v = base_v;
                                let d = p.dist(&pf.center);
                                v *= (d * d).powf(-pf.c);
                                for o in &others {
                                    let od = p.dist(&o.center);
                                    v *= (od * od).powf(-o.c);
                                }
                                v
                            });
                        }
                    }
                    acc
                };
                masses[node_i] = mass;
            }
        }
    }
    masses
}

fn owner_node(grid: GridSpec, p: Point) -> (usize, usize) {
    let n = grid.n_side();
    let nf = n as f64;
    (
        (p.x * nf).round() as usize % n,
        (p.y * nf).round() as usize % n,
    )
}

fn wrap_idx(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// 8x8 tensor Gauss-Legendre over the square [x0, x0+s] x [y0, y0+s].
fn gauss2d(x0: f64, y0: f64, s: f64, f: impl Fn(Point) -> f64) -> f64 {
    let mut acc = 0.0;
    let mid_x = x0 + 0.5 * s;
    let mid_y = y0 + 0.5 * s;
    let half = 0.5 * s;
    for kx in 0..8 {
        for (sx, wx) in [(1.0, GL16_W[kx]), (-1.0, GL16_W[kx])] {
            let x = mid_x + sx * half * GL16_X[kx];
            let mut inner = 0.0;
            for ky in 0..8 {
                for (sy, wy) in [(1.0, GL16_W[ky]), (-1.0, GL16_W[ky])] {
                    let y = mid_y + sy * half * GL16_X[ky];
                    inner += wy * f(Point::new(x, y));
                }
            }
            acc += wx * inner;
        }
    }
    acc * half * half
}

/// `int f dmu` with pole-refined quadrature: node sums away from poles plus
/// polar block integrals of `f * density` with a refinement sequence; errors
/// with `DivergentIntegral` if the sequence keeps growing geometrically.
pub fn integrate(f: &ScalarField, mu: &Measure) -> Result<f64> {
    let trace = integrate_trace(f, mu, QuadDepth::default())?;
    if trace.grows_geometrically() {
        return Err(Error::DivergentIntegral {
            partial: trace.last(),
        });
    }
    Ok(trace.last())
}

/// Refinement trace of `int f dmu`; exposed for divergence diagnostics.
pub fn integrate_trace(f: &ScalarField, mu: &Measure, depth: QuadDepth) -> Result<RefinementTrace> {
    assert_eq!(f.grid(), mu.grid());
    let grid = mu.grid();
    if mu.poles.is_empty() {
        let v = f
            .values()
            .iter()
            .zip(&mu.cell_masses)
            .map(|(&a, &b)| a * b)
            .sum();
        return Ok(RefinementTrace {
            partials: vec![(1, v)],
        });
    }
    let n = grid.n_side();
    let mut in_block = vec![false; grid.num_nodes()];
    for pf in &mu.poles {
        let (cx, cy) = owner_node(grid, pf.center);
        for dy in -(BLOCK_K as isize)..=(BLOCK_K as isize) {
            for dx in -(BLOCK_K as isize)..=(BLOCK_K as isize) {
                in_block[grid.idx(wrap_idx(cx as isize + dx, n), wrap_idx(cy as isize + dy, n))] =
                    true;
            }
        }
    }
    let mut far = 0.0;
    for i in 0..grid.num_nodes() {
        if !in_block[i] {
            far += f.values()[i] * mu.cell_masses[i];
        }
    }
    let mut partials = Vec::new();
    for level in 1..=depth.levels {
        let mut total = far;
        for (k, pf) in mu.poles.iter().enumerate() {
            let mut block = Block::around(pf.center, grid, BLOCK_K);
            block.e = pf.c;
            let others: Vec<PoleFactor> = mu
                .poles
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &p)| p)
                .collect();
            let norm = mu.normalization;
            let base = &mu.base;
            let mut smooth = |p: Point| {
                let mut v = norm * nearest_node_value(base, p) * f.interp(p);
                for o in &others {
                    let d = p.dist(&o.center);
                    v *= (d * d).powf(-o.c);
                }
                v
            };
            total += block.integrate(level, depth.theta_panels, &mut smooth, grid);
        }
        partials.push((level, total));
        if partials.len() >= 2 {
            let trace = RefinementTrace {
                partials: partials.clone(),
            };
            if trace.last_rel_change() < 1e-8 && level >= 2 {
                return Ok(trace);
            }
        }
    }
    Ok(RefinementTrace { partials })
}

/// Outcome of an exponential pairing under quadrature refinement.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpOutcome {
    /// The refinement sequence is Cauchy; `log_value` is the logarithm of
    /// the integral.
    Bounded { log_value: f64 },
    /// The partial sums grow by >= 1.5x per level (or overflow).
    Diverging,
    /// Neither criterion triggered within the level budget.
    Inconclusive,
}

/// Refinement trace plus verdict for `int e^{s u} dmu`.
#[derive(Debug, Clone)]
pub struct ExpTrace {
    pub outcome: ExpOutcome,
    /// (level, partial integral) in true units, saturating to infinity.
    pub partials: Vec<(usize, f64)>,
}

/// Evaluate `int e^{s u} dmu` where `u` carries declared log-pole models.
/// Near a pole with model coefficient `a` the integrand behaves like
/// `d^{2 s a}`, which combines with any coincident measure exponent; the
/// combined power is handled analytically by the radial ladder and the
/// verdict comes from the refinement sequence.
pub fn exp_pairing(u: &ProbeField, s: f64, mu: &Measure, depth: QuadDepth) -> Result<ExpTrace> {
    assert_eq!(u.field().grid(), mu.grid());
    let grid = mu.grid();
    let n = grid.n_side();

    // group pole centers: coincident probe/measure poles share one block
    struct Centre {
        point: Point,
        e: f64,
        probe_coeffs: Vec<(Point, f64)>, // handled analytically in-block
        measure_cs: Vec<(Point, f64)>,
    }
    let mut centres: Vec<Centre> = Vec::new();
    let mut all_points: Vec<Point> = Vec::new();
    for pf in &mu.poles {
        centres.push(Centre {
            point: pf.center,
            e: pf.c,
            probe_coeffs: Vec::new(),
            measure_cs: vec![(pf.center, pf.c)],
        });
        all_points.push(pf.center);
    }
    for lp in u.poles() {
        if let Some(c) = centres
            .iter_mut()
            .find(|c| same_center(&c.point, &lp.center, grid))
        {
            c.e += -s * lp.coeff;
            c.probe_coeffs.push((lp.center, lp.coeff));
        } else {
            centres.push(Centre {
                point: lp.center,
                e: -s * lp.coeff,
                probe_coeffs: vec![(lp.center, lp.coeff)],
                measure_cs: Vec::new(),
            });
            all_points.push(lp.center);
        }
    }
    check_separation(&all_points, grid)?;

    // max-subtraction over nodes for overflow safety
    let m_shift = u
        .field()
        .values()
        .iter()
        .map(|&v| s * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let m_shift = if m_shift.is_finite() { m_shift } else { 0.0 };

    let mut in_block = vec![false; grid.num_nodes()];
    for c in &centres {
        let (cx, cy) = owner_node(grid, c.point);
        for dy in -(BLOCK_K as isize)..=(BLOCK_K as isize) {
            for dx in -(BLOCK_K as isize)..=(BLOCK_K as isize) {
                in_block[grid.idx(wrap_idx(cx as isize + dx, n), wrap_idx(cy as isize + dy, n))] =
                    true;
            }
        }
    }
    let h2 = grid.cell_area();
    let mut far = 0.0;
    for i in 0..grid.num_nodes() {
        if in_block[i] {
            continue;
        }
        let p = grid.node(i);
        let mut dens = mu.normalization * mu.base.values()[i];
        for pf in &mu.poles {
            let d = p.dist(&pf.center);
            dens *= (d * d).powf(-pf.c);
        }
        far += (s * u.field().values()[i] - m_shift).exp() * dens * h2;
    }

    let mut partials: Vec<(usize, f64)> = Vec::new();
    for level in 1..=depth.levels {
        let mut total = far;
        for c in &centres {
            let mut block = Block::around(c.point, grid, BLOCK_K);
            block.e = c.e;
            let probe_here = &c.probe_coeffs;
            let meas_here = &c.measure_cs;
            let mut smooth = |p: Point| {
                // probe exponent: smooth residual plus models of OTHER centres
                let mut expo = s * u.residual_at(p) - m_shift;
                for lp in u.poles() {
                    let own = probe_here
                        .iter()
                        .any(|&(q, _)| same_center(&q, &lp.center, grid));
                    if !own {
                        let d = p.dist(&lp.center);
                        expo += s * lp.coeff * (d * d).ln();
                    }
                }
                let mut dens = mu.normalization * nearest_node_value(&mu.base, p);
                for pf in &mu.poles {
                    let own = meas_here
                        .iter()
                        .any(|&(q, _)| same_center(&q, &pf.center, grid));
                    if !own {
                        let d = p.dist(&pf.center);
                        dens *= (d * d).powf(-pf.c);
                    }
                }
                expo.exp() * dens
            };
            total += block.integrate(level, depth.theta_panels, &mut smooth, grid);
            if !total.is_finite() {
                break;
            }
        }
        partials.push((level, total));
        if !total.is_finite() {
            break;
        }
    }

    let trace = RefinementTrace {
        partials: partials.clone(),
    };
    let outcome = if trace.grows_geometrically() {
        ExpOutcome::Diverging
    } else if trace.last_rel_change() < 1e-6 {
        ExpOutcome::Bounded {
            log_value: m_shift + trace.last().ln(),
        }
    } else {
        ExpOutcome::Inconclusive
    };
    // report partials in true units, saturating on overflow
    let scale = m_shift.exp();
    let partials = partials
        .into_iter()
        .map(|(l, v)| {
            let t = if scale.is_finite() { v * scale } else { v };
            (l, t)
        })
        .collect();
    Ok(ExpTrace { outcome, partials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn lebesgue_integrates_constants() {
        let grid = GridSpec::new(32).unwrap();
        let mu = Measure::lebesgue(grid);
        let one = ScalarField::constant(grid, 1.0);
        assert!((integrate(&one, &mu).unwrap() - 1.0).abs() < 1e-12);
        let cosx = ScalarField::from_fn(grid, |p| (2.0 * PI * p.x).cos());
        assert!(integrate(&cosx, &mu).unwrap().abs() < 1e-12);
    }

    #[test]
    fn klt_single_pole_mass_one() {
        let grid = GridSpec::new(32).unwrap();
        let mu = Measure::klt(grid, &[(Point::new(0.5, 0.5), 0.5)]).unwrap();
        assert!((mu.total_mass() - 1.0).abs() < 1e-12);
        let one = ScalarField::constant(grid, 1.0);
        let v = integrate(&one, &mu).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "integral {v}");
        assert!(mu.mass_refinement_error() < 1e-6);
        // density unbounded near the pole: grid density at the pole cell is
        // much larger than away from it
        let gd = mu.grid_density();
        let at_pole = nearest_node_value(&gd, Point::new(0.5, 0.5));
        assert!(at_pole > 5.0 * gd.mean());
    }

    #[test]
    fn klt_subklt_pole_vanishes() {
        let grid = GridSpec::new(32).unwrap();
        let mu = Measure::klt(grid, &[(Point::new(0.5, 0.5), -1.0)]).unwrap();
        assert!((mu.total_mass() - 1.0).abs() < 1e-12);
        // density ~ d^2 at the pole: the pole cell is much lighter
        let gd = mu.grid_density();
        let at_pole = nearest_node_value(&gd, Point::new(0.5, 0.5));
        assert!(at_pole < 1e-2 * gd.mean());
        assert!(mu.mass_refinement_error() < 1e-8);
    }

    #[test]
    fn klt_rejects_exponent_one() {
        let grid = GridSpec::new(32).unwrap();
        let err = Measure::klt(grid, &[(Point::new(0.5, 0.5), 1.0)]);
        assert!(matches!(err, Err(Error::KltViolation { .. })));
    }

    #[test]
    fn klt_rejects_close_poles() {
        let grid = GridSpec::new(64).unwrap();
        let err = Measure::klt(
            grid,
            &[
                (Point::new(0.5, 0.5), 0.5),
                (Point::new(0.52, 0.5), 0.25),
            ],
        );
        assert!(matches!(err, Err(Error::PolesTooClose { .. })));
    }

    #[test]
    fn pole_disk_mass_matches_analytic() {
        // disk mass = N * 2 pi r^{2-2c} / (2-2c) for a single pole
        let grid = GridSpec::new(64).unwrap();
        for &c in &[-1.0, 0.25, 0.5, 0.9] {
            let mu = Measure::klt(grid, &[(Point::new(0.5, 0.5), c)]).unwrap();
            let r = 3.0 * grid.h();
            let got = mu.pole_disk_mass(0, r);
            let want = mu.normalization() * 2.0 * PI * r.powf(2.0 - 2.0 * c) / (2.0 - 2.0 * c);
            assert!(
                (got - want).abs() < 1e-6 * want.abs(),
                "c={c} got={got} want={want}"
            );
        }
    }

    #[test]
    fn integrate_smooth_function_against_pole() {
        // f = 1 stays exact; a smooth f integrates consistently under depth
        let grid = GridSpec::new(64).unwrap();
        let mu = Measure::klt(grid, &[(Point::new(0.25, 0.75), 0.5)]).unwrap();
        let f = ScalarField::from_fn(grid, |p| 1.0 + 0.3 * (2.0 * PI * p.y).sin());
        let a = integrate_trace(&f, &mu, QuadDepth::default()).unwrap();
        let b = integrate_trace(&f, &mu, QuadDepth::default().deeper()).unwrap();
        assert!((a.last() - b.last()).abs() < 1e-6 * b.last().abs());
    }

    #[test]
    fn exp_pairing_of_zero_field_is_one() {
        let grid = GridSpec::new(32).unwrap();
        let mu = Measure::lebesgue(grid);
        let u = ProbeField::smooth(ScalarField::zeros(grid));
        let t = exp_pairing(&u, 1.0, &mu, QuadDepth::default()).unwrap();
        match t.outcome {
            ExpOutcome::Bounded { log_value } => assert!(log_value.abs() < 1e-12),
            other => panic!("expected Bounded, got {other:?}"),
        }
    }

    #[test]
    fn exp_pairing_matches_plain_sum_for_smooth_data() {
        let grid = GridSpec::new(32).unwrap();
        let mu = Measure::lebesgue(grid);
        let f = ScalarField::from_fn(grid, |p| 0.5 * (2.0 * PI * p.x).cos());
        let u = ProbeField::smooth(f.clone());
        let t = exp_pairing(&u, -1.3, &mu, QuadDepth::default()).unwrap();
        let direct: f64 = f
            .values()
            .iter()
            .map(|&v| (-1.3 * v).exp())
            .sum::<f64>()
            * grid.cell_area();
        match t.outcome {
            ExpOutcome::Bounded { log_value } => {
                assert!((log_value - direct.ln()).abs() < 1e-10)
            }
            other => panic!("expected Bounded, got {other:?}"),
        }
    }
}
