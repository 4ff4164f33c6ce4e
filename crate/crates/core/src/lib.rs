pub mod error;
pub mod grid;

pub use error::{Error, Result};
pub use grid::{GridSpec, ScalarField, Spectral, VectorField};
pub mod fluid;
pub mod kinetic;
pub mod density;
pub mod diagnostics;
pub mod snapshot;
pub mod config;
pub mod scenario;
pub mod suites;
