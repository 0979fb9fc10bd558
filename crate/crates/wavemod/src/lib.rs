//! Periodic wave trains of reaction-diffusion systems and their diffusive phase dynamics.
//!
//! The crate covers the whole chain from a reaction-diffusion model to measured decay
//! rates: wave-train continuation ([`wavetrain`]), Floquet-Bloch spectra and modulation
//! coefficients ([`bloch`]), the decomposition of the linear semigroup ([`semigroup`]),
//! Hamilton-Jacobi/Burgers/Whitham solvers ([`phase_dynamics`]) and full nonlinear
//! simulations with phase extraction ([`experiment`]).

pub mod bloch;
pub mod checks;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod linalg;
pub mod model;
pub mod phase_dynamics;
pub mod quadrature;
pub mod semigroup;
pub mod spectral;
pub mod stepper;
pub mod wavetrain;

pub use error::{Error, Result};
pub use num_complex::Complex64;
