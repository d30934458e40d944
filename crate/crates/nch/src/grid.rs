//! Uniform periodic mesh on a rectangle (-X, X) x (-Y, Y) and real-valued
//! grid functions with mesh-weighted inner products.
//!
//! Nodes are x_i = -X + i*hx, y_j = -Y + j*hy for i = 1..=nx, j = 1..=ny
//! with hx = 2X/nx, hy = 2Y/ny; periodicity identifies index 0 with nx.
//! Storage is row-major: node (i, j) lives at offset (j-1)*nx + (i-1).
//!
//! The discrete inner product is <f, g> = hx*hy * sum_ij f_ij g_ij, so
//! ||1||_2^2 equals the domain area. Reductions use compensated summation.

use crate::error::{Error, Result};
use crate::sum::Accumulator;

/// Mesh descriptor. Cheap to copy; two grids are interchangeable exactly
/// when all stored fields compare equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicGrid {
    half_width_x: f64,
    half_width_y: f64,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
}

impl PeriodicGrid {
    /// Build a grid over (-X, X) x (-Y, Y) with nx x ny nodes.
    /// Both counts must be even and at least 4; half-widths positive.
    pub fn new(half_width_x: f64, half_width_y: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(half_width_x.is_finite() && half_width_x > 0.0)
            || !(half_width_y.is_finite() && half_width_y > 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "domain half-widths must be positive and finite, got ({half_width_x}, {half_width_y})"
            )));
        }
        for (name, n) in [("nx", nx), ("ny", ny)] {
            if n < 4 || n % 2 != 0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be even and >= 4, got {n}"
                )));
            }
        }
        Ok(Self {
            half_width_x,
            half_width_y,
            nx,
            ny,
            hx: 2.0 * half_width_x / nx as f64,
            hy: 2.0 * half_width_y / ny as f64,
        })
    }

    pub fn half_width_x(&self) -> f64 {
        self.half_width_x
    }

    pub fn half_width_y(&self) -> f64 {
        self.half_width_y
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    /// Number of nodes nx*ny.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight hx*hy of one cell.
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Domain measure |Omega| = 4XY.
    pub fn domain_area(&self) -> f64 {
        4.0 * self.half_width_x * self.half_width_y
    }

    /// x-coordinate of storage column i0 (0-based): -X + (i0+1)*hx.
    pub fn x(&self, i0: usize) -> f64 {
        debug_assert!(i0 < self.nx);
        -self.half_width_x + (i0 as f64 + 1.0) * self.hx
    }

    /// y-coordinate of storage row j0 (0-based): -Y + (j0+1)*hy.
    pub fn y(&self, j0: usize) -> f64 {
        debug_assert!(j0 < self.ny);
        -self.half_width_y + (j0 as f64 + 1.0) * self.hy
    }

    /// Storage offset of column i0, row j0.
    pub fn idx(&self, i0: usize, j0: usize) -> usize {
        debug_assert!(i0 < self.nx && j0 < self.ny);
        j0 * self.nx + i0
    }

    pub(crate) fn check_same(&self, other: &PeriodicGrid, context: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{context}: {}x{} on ({}, {}) vs {}x{} on ({}, {})",
                self.nx,
                self.ny,
                self.half_width_x,
                self.half_width_y,
                other.nx,
                other.ny,
                other.half_width_x,
                other.half_width_y
            )));
        }
        Ok(())
    }
}

/// Real nodal values on a [`PeriodicGrid`], row-major.
///
/// Constructors reject non-finite entries; operations that can overflow
/// (time stepping) re-check and surface blow-up instead.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "value vector of length {} does not match {}x{} grid",
                values.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        let f = Self { grid, values };
        f.check_finite()?;
        Ok(f)
    }

    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Transform outputs have the right length by construction and may
    /// legitimately overflow; finiteness is the caller's concern.
    pub(crate) fn from_raw(grid: PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: PeriodicGrid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()])
    }

    /// Sample f(x, y) at every node.
    pub fn from_fn(grid: PeriodicGrid, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            let y = grid.y(j);
            for i in 0..grid.nx() {
                values.push(f(grid.x(i), y));
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, i0: usize, j0: usize) -> f64 {
        self.values[self.grid.idx(i0, j0)]
    }

    /// Error if any entry is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for (n, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite value {v} at offset {n}"
                )));
            }
        }
        Ok(())
    }

    /// Pointwise map over the values; the grid is unchanged.
    pub fn mapped(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<GridFunction> {
        self.grid.check_same(&other.grid, "pointwise combination")?;
        Ok(GridFunction {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        self.mapped(|v| c * v)
    }
}

/// Mesh inner product <f, g> = hx*hy * sum f_ij g_ij, compensated.
pub fn inner_product(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    f.grid().check_same(&g.grid(), "inner product")?;
    let mut acc = Accumulator::new();
    for (a, b) in f.values().iter().zip(g.values()) {
        acc.add(a * b);
    }
    Ok(f.grid().cell_area() * acc.total())
}

/// Discrete L2 norm sqrt(<f, f>).
pub fn norm_l2(f: &GridFunction) -> f64 {
    let mut acc = Accumulator::new();
    for v in f.values() {
        acc.add(v * v);
    }
    (f.grid().cell_area() * acc.total()).sqrt()
}

/// Max norm over nodes.
pub fn norm_linf(f: &GridFunction) -> f64 {
    f.values().iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Arithmetic mean of the nodal values, <f, 1> / |Omega|.
pub fn mean(f: &GridFunction) -> f64 {
    let mut acc = Accumulator::new();
    for v in f.values() {
        acc.add(*v);
    }
    acc.total() / f.grid().len() as f64
}

/// f minus its mean; the result has mean zero to round-off.
pub fn zero_mean(f: &GridFunction) -> GridFunction {
    let m = mean(f);
    f.mapped(|v| v - m)
}
