//! Core of the splat animation engine: the Gaussian data model, file formats,
//! convex-hull particle proxies, the rigid / elastic / fluid solvers and the
//! particle-to-Gaussian skinning that turns simulated motion into animation
//! frames.

pub mod error;
pub mod gaussian;
pub mod io;
pub mod proxy;
pub mod sim;
pub mod skinning;
pub mod spatial;

pub use error::{Error, Result};
pub use gaussian::{Decomp, Gaussian, GaussianSet, SymCov};
