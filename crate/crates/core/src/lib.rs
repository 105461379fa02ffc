//! Variational toolkit for mean-field Monge-Ampère equations on the flat
//! 2-torus.
//!
//! The crate works with the complex-dimension-one discretization where the
//! Monge-Ampère operator is linear: on the unit torus with background form
//! omega of unit mass, `MA(u)` has density `rho + lap(u)/4pi`. On top of the
//! grid layer it provides
//!
//! - all the scalar functionals of the variational theory (Monge-Ampère
//!   energy, pluricomplex energy of a measure, relative entropy, free energy
//!   `F_beta`, Ding functional `G_beta`, Aubin I/J, generic K-energy),
//! - psh envelopes (obstacle problem) with the orthogonality relation,
//! - solvers for the mean-field equation `MA(u) = e^{beta u} mu_0 / Z` in
//!   the regimes beta > 0, beta = 0, beta < 0, with duality-gap
//!   certificates, plus a measure-side mirror descent cross-check,
//! - alpha-invariant and Moser-Trudinger constant estimation for smooth and
//!   klt-singular background measures,
//! - a batch CLI (config files, CSV/JSON/PGM artifacts).
//!
//! Start with the runnable examples (`cargo run --example ...`) or the
//! `mfme` binary.

pub mod alpha;
pub mod cli;
pub mod config;
pub mod envelope;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod io;
pub mod mean_field;
pub mod measure;
pub mod probes;

pub use error::{Error, Result};
pub use grid::{BackgroundForm, GridSpec, Point, Potential, ScalarField};
pub use measure::Measure;
