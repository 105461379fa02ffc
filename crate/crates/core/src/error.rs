//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by grid operations, quadrature, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A Poisson right-hand side was not mean-free. Usually signals an
    /// unnormalized measure upstream.
    #[error("right-hand side has non-zero mean {mean:.3e} (tolerance {tol:.1e})")]
    NonZeroMeanRhs { mean: f64, tol: f64 },

    /// A potential violated the admissibility constraint rho + lap(u)/4pi >= 0.
    #[error("potential is not omega-psh: slack {slack:.3e} < -{eps:.3e}")]
    NotPsh { slack: f64, eps: f64 },

    /// A refined quadrature sequence kept growing without Cauchy behavior,
    /// i.e. the integrand is not integrable against the given measure.
    #[error("integral diverges under refinement (last partial sum {partial:.6e})")]
    DivergentIntegral { partial: f64 },

    /// A pole exponent violated the klt condition c < 1.
    #[error("klt condition violated: pole exponent {c} >= 1")]
    KltViolation { c: f64 },

    /// Projected SOR failed to reach the complementarity tolerance.
    #[error("LCP solver did not converge: residual {residual:.3e} after {iterations} sweeps")]
    LcpNonConvergence { residual: f64, iterations: usize },

    /// Two pole centers are too close for disjoint quadrature blocks
    /// (and not exactly coincident).
    #[error("pole centers ({:.4},{:.4}) and ({:.4},{:.4}) are too close for the grid", .a.0, .a.1, .b.0, .b.1)]
    PolesTooClose { a: (f64, f64), b: (f64, f64) },

    /// Invalid argument outside the contracts above.
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
