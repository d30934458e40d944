//! Fourier pseudo-spectral solver for a nonlocal Cahn-Hilliard equation
//!
//!   u_t = Laplace( u^3 - u + eps^2 * L u ),   L v = (J * 1) v - J * v,
//!
//! on a periodic rectangle (-X, X) x (-Y, Y), where J is a nonnegative,
//! even, periodic convolution kernel with unit half second moment. Time
//! integration uses a first-order stabilized semi-implicit scheme that is
//! diagonal in Fourier space, conserves mass exactly, and dissipates the
//! discrete free energy when the stabilization constant is large enough.
//!
//! Modules:
//! - [`grid`]: periodic mesh, real grid functions, mesh inner products
//! - [`spectral`]: transforms, derivative and inverse-Laplacian operators
//! - [`kernel`]: convolution kernels, the nonlocal operator, model data
//! - [`energy`]: discrete free energy and its bulk/nonlocal split
//! - [`stepper`]: the semi-implicit step, stabilizer policies, diagnostics
//! - [`harness`]: temporal and spatial refinement studies
//! - [`cli`]: JSON config parsing and the command implementations
//! - [`io`]: plain-text field and kernel snapshot files

pub mod cli;
pub mod energy;
mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod spectral;
pub mod stepper;
mod sum;

pub use error::{Error, Result};
