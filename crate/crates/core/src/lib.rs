//! Far-field asymptotics of two-dimensional Fourier integrals whose
//! integrands are singular on complex curves with the real property, together
//! with a deformed-surface quadrature used to validate them.

pub mod asym;
pub mod bridge;
pub mod builtin;
pub mod classify;
pub mod error;
pub mod expr;
pub mod geom;
pub mod quad;
pub mod pipeline;
pub mod scenario;
pub mod surface;
pub mod trace;

pub use error::{Error, Result};
