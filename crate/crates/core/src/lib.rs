pub mod constants;
pub mod cutoff;
pub mod eikonal;
pub mod error;
pub mod ode;
pub mod quad;
pub mod real;
pub mod spectral;
pub mod stationary;
pub mod symbol;
pub mod tauberian;

pub use error::{Error, Result};
