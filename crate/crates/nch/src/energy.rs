//! Discrete free energy E(v) = <F(v), 1> + (eps^2/2) <L v, v> with the
//! double-well density F(u) = (1/4)(u^2 - 1)^2.
//!
//! The bulk term is nonnegative pointwise; the nonlocal term is a positive
//! semidefinite quadratic form, so it is nonnegative up to round-off. The
//! stabilized semi-implicit stepper dissipates this energy monotonically
//! when its stabilization constant is large enough.

use crate::error::Result;
use crate::grid::{self, GridFunction};
use crate::kernel::{self, Kernel, ModelParams};
use crate::sum::Accumulator;

/// Double-well density F(u) = (1/4)(u^2 - 1)^2.
pub fn double_well(u: f64) -> f64 {
    let w = u * u - 1.0;
    0.25 * w * w
}

/// Pointwise nonlinear term f(v) = v^3 - v, the derivative of F.
pub fn cubic_term(v: &GridFunction) -> GridFunction {
    v.mapped(|u| u * u * u - u)
}

/// Total energy with its bulk/nonlocal split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub total: f64,
    /// <F(v), 1>, nonnegative.
    pub bulk: f64,
    /// (eps^2/2) <L v, v>, nonnegative up to round-off.
    pub nonlocal: f64,
}

/// Evaluate the discrete free energy of a state.
pub fn energy(v: &GridFunction, kernel: &Kernel, params: &ModelParams) -> Result<EnergyBreakdown> {
    kernel.grid().check_same(&v.grid(), "energy")?;
    let mut acc = Accumulator::new();
    for u in v.values() {
        acc.add(double_well(*u));
    }
    let bulk = v.grid().cell_area() * acc.total();
    let lv = kernel::nonlocal_op(kernel, v)?;
    let eps = params.epsilon();
    let nonlocal = 0.5 * eps * eps * grid::inner_product(&lv, v)?;
    Ok(EnergyBreakdown {
        total: bulk + nonlocal,
        bulk,
        nonlocal,
    })
}
