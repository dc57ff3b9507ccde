//! Singular Sturm–Liouville problems `-(y'/r)' + q y = lambda p y` whose
//! coefficients are measures with self-similar primitives.
//!
//! The substitution `y = u o R` (with `R` the primitive of `r`) moves the
//! problem onto a Lebesgue base, where it is discretized with linear finite
//! elements into a symmetric tridiagonal pencil `A - lambda B`. Eigenvalues
//! are then counted through the inertia of `A - lambda B`.
//!
//! Modules, bottom up:
//!
//! - [`selfsim`]: self-similar functions, their cells and moments.
//! - [`measures`]: composite coefficient measures.
//! - [`reduction`]: the change of variables and the transported coefficients.
//! - [`assembly`]: boundary data and the banded pencil.
//! - [`spectral`]: counting functions, eigenvalues, asymptotics.
//! - [`problem`]: JSON problem files tying the above together.

pub mod assembly;
pub mod error;
pub mod measures;
pub mod problem;
pub mod reduction;
pub mod selfsim;
pub mod spectral;

pub use error::{Error, Result};
