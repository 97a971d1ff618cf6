//! Uniformly-rotating vortex sheets near the circle.
//!
//! The crate computes non-radial equilibria of the vortex-sheet equation in a
//! frame rotating with unit angular velocity. A sheet is the polar graph
//! `z(θ) = (1 + r(θ))(cos θ, sin θ)` carrying strength `γ(θ) = b + g(θ)`;
//! equilibria are zeros of the steady functional `F(b, g, r) = (F₁, F₂)`
//! sampled on a Fourier collocation grid.
//!
//! Module map:
//! - [`spectral`]: even-mode Fourier series, grids, trapezoid quadrature.
//! - [`functional`]: the residual `F` with its singular integrals desingularized.
//! - [`linearization`]: the mode matrices `Mₙ` of `DF(b,0,0)` and Jacobians.
//! - [`oracles`]: closed-form reference values used for verification.
//! - [`solver`]: Levenberg–Marquardt on the Fourier-projected residual.
//! - [`continuation`]: natural-parameter branch tracing and fold location.
//! - [`records`] and [`cli`]: file formats and the command-line surface.

pub mod cli;
pub mod continuation;
pub mod error;
pub mod functional;
pub mod linearization;
pub mod oracles;
pub mod records;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use functional::{assemble_residual, ResidualField, SheetState};
pub use spectral::{FourierSeries, Grid, Parity, Span};
