//! Conformal families of metrics on the sphere built from a quartic ODE, with
//! tools to check the integrability criterion, simulate geodesic flow and
//! search for polynomial first integrals.

pub mod chart;
pub mod cheb;
pub mod cli_io;
pub mod criterion;
pub mod dynamics;
pub mod error;
pub mod family;
pub mod integral_finder;
pub mod kovalevskaya;
pub mod ode;
pub mod quad;
pub mod quartic_ode;

pub use error::{Error, Result};
