//! Convolution kernels and the nonlocal operator L v = (J * 1) v - J * v.
//!
//! A kernel J is sampled at the nodes (i*hx, j*hy) and must be nonnegative,
//! even under reflection through the origin, and normalized so that the
//! discrete half second moment (1/2) hx*hy * sum J_ij |x_ij|^2 equals 1,
//! with |x| the periodic minimum-image distance. Normalizing the discrete
//! moment per mesh keeps the diffusivity gamma0 = eps^2 (J * 1) - 1
//! consistent across resolutions up to discretization error.
//!
//! The discrete convolution is (J (*) f)_ij = hx*hy * sum_mn J_{i-m,j-n} f_mn,
//! diagonal in Fourier space with multiplier hx*hy*Jhat_kl. Evenness makes
//! Jhat real, so L is self-adjoint, positive semidefinite, and commutes with
//! the spectral Laplacian; its symbol (J * 1) - hx*hy*Jhat_kl vanishes at
//! (0,0), which is what makes the time stepper conserve mass exactly.

use std::path::Path;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::grid::{self, GridFunction, PeriodicGrid};
use crate::io;
use crate::spectral::{self, SpectralField};
use crate::sum::Accumulator;

/// How to obtain a kernel on a given mesh; used by configs and refinement
/// studies, which rebuild the kernel per grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// Periodized Gaussian exp(-|x|^2 / sigma^2), then normalized.
    Gaussian { sigma: f64 },
    /// Samples from a kernel snapshot file; `renormalize` rescales the
    /// second moment to 1 on load.
    File {
        path: std::path::PathBuf,
        #[serde(default)]
        renormalize: bool,
    },
}

impl KernelSpec {
    pub fn build(&self, grid: PeriodicGrid) -> Result<Kernel> {
        match self {
            KernelSpec::Gaussian { sigma } => Kernel::gaussian(grid, *sigma),
            KernelSpec::File { path, renormalize } => Kernel::load(path, grid, *renormalize),
        }
    }
}

/// Validated kernel samples with their cached real Fourier multiplier.
#[derive(Debug, Clone)]
pub struct Kernel {
    grid: PeriodicGrid,
    values: Vec<f64>,
    /// Real part of the unnormalized transform, bin layout.
    hat: Vec<f64>,
    /// Symbol of L: (J * 1) - hx*hy*Jhat_kl; exactly 0 at the zero mode.
    l_hat: Vec<f64>,
    j_star_one: f64,
}

/// Minimum-image node index: p steps from the origin wrap to the range
/// -n/2 + 1 ..= n/2. Integer arithmetic, so mirrored nodes get exactly
/// opposite indices and |q| is shared bitwise.
fn wrapped_steps(p: usize, n: usize) -> i64 {
    let p = p % n;
    if p <= n / 2 {
        p as i64
    } else {
        p as i64 - n as i64
    }
}

/// Minimum-image coordinate magnitudes of node (i0, j0) in storage order.
fn min_image_abs(grid: PeriodicGrid, i0: usize, j0: usize) -> (f64, f64) {
    let qx = wrapped_steps(i0 + 1, grid.nx()).unsigned_abs() as f64;
    let qy = wrapped_steps(j0 + 1, grid.ny()).unsigned_abs() as f64;
    (qx * grid.hx(), qy * grid.hy())
}

fn discrete_half_second_moment(grid: PeriodicGrid, values: &[f64]) -> f64 {
    let mut acc = Accumulator::new();
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let (ax, ay) = min_image_abs(grid, i, j);
            acc.add(values[grid.idx(i, j)] * (ax * ax + ay * ay));
        }
    }
    0.5 * grid.cell_area() * acc.total()
}

/// Storage index of the reflection through the origin along one axis.
fn mirror(a: usize, n: usize) -> usize {
    (2 * n - 2 - a) % n
}

impl Kernel {
    /// Validate raw samples and build the cached transform. Rejects negative
    /// or non-finite entries and evenness violations above 1e-12 relative.
    /// With `renormalize` the samples are rescaled to unit half second
    /// moment; otherwise the moment must already be within 1e-6 of 1.
    pub fn from_values(grid: PeriodicGrid, mut values: Vec<f64>, renormalize: bool) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "kernel sample vector of length {} does not match {}x{} grid",
                values.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        let mut vmax = 0.0f64;
        for (m, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "kernel samples must be finite and nonnegative, found {v} at offset {m}"
                )));
            }
            vmax = vmax.max(*v);
        }
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let a = values[grid.idx(i, j)];
                let b = values[grid.idx(mirror(i, grid.nx()), mirror(j, grid.ny()))];
                if (a - b).abs() > 1e-12 * vmax {
                    return Err(Error::InvalidParameter(format!(
                        "kernel is not even: J({i},{j}) = {a} vs mirrored {b}"
                    )));
                }
            }
        }

        let moment = discrete_half_second_moment(grid, &values);
        if renormalize {
            if !(moment.is_finite() && moment > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "kernel second moment {moment} is not positive; cannot normalize"
                )));
            }
            let alpha = 1.0 / moment;
            for v in &mut values {
                *v *= alpha;
            }
        } else if (moment - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "kernel half second moment {moment} is not 1; load with renormalization enabled"
            )));
        }

        let hat_complex = spectral::forward_kernel(grid, &values);
        let hat_scale = hat_complex
            .iter()
            .fold(0.0f64, |m, c| m.max(c.re.abs()))
            .max(1e-300);
        let mut hat = vec![0.0; hat_complex.len()];
        for (m, c) in hat_complex.iter().enumerate() {
            if c.im.abs() > 1e-11 * hat_scale {
                return Err(Error::InvalidParameter(format!(
                    "kernel transform has imaginary part {} at bin {m}; samples are not even",
                    c.im
                )));
            }
            hat[m] = c.re;
        }

        let mut sum = Accumulator::new();
        for v in &values {
            sum.add(*v);
        }
        let j_star_one = grid.cell_area() * sum.total();

        let mut l_hat = vec![0.0; hat.len()];
        for (m, h) in hat.iter().enumerate() {
            l_hat[m] = j_star_one - grid.cell_area() * h;
        }
        // L annihilates constants by definition; pin the zero mode so the
        // identity is exact rather than round-off sized.
        l_hat[0] = 0.0;

        Ok(Self { grid, values, hat, l_hat, j_star_one })
    }

    /// Periodized Gaussian exp(-|x|^2/sigma^2): images over the 3x3
    /// neighboring periods of the minimum-image representative, then
    /// normalized. Requires 0 < sigma <= min(X, Y)/4 so the neglected
    /// images are below 1e-12 relative.
    pub fn gaussian(grid: PeriodicGrid, sigma: f64) -> Result<Self> {
        let max_sigma = grid.half_width_x().min(grid.half_width_y()) / 4.0;
        if !(sigma.is_finite() && sigma > 0.0 && sigma <= max_sigma) {
            return Err(Error::InvalidParameter(format!(
                "gaussian kernel width must satisfy 0 < sigma <= min(X, Y)/4 = {max_sigma}, got {sigma}"
            )));
        }
        let px = 2.0 * grid.half_width_x();
        let py = 2.0 * grid.half_width_y();
        let inv_s2 = 1.0 / (sigma * sigma);
        let mut values = vec![0.0; grid.len()];
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                // |xw|, |yw| make mirrored nodes evaluate identically, so
                // evenness holds bitwise.
                let (ax, ay) = min_image_abs(grid, i, j);
                let mut s = 0.0;
                for mx in [-1.0, 0.0, 1.0] {
                    let dx = ax + px * mx;
                    for my in [-1.0, 0.0, 1.0] {
                        let dy = ay + py * my;
                        s += (-(dx * dx + dy * dy) * inv_s2).exp();
                    }
                }
                values[grid.idx(i, j)] = s;
            }
        }
        Self::from_values(grid, values, true)
    }

    /// Read samples from a kernel snapshot file; the stored mesh must match.
    pub fn load(path: &Path, grid: PeriodicGrid, renormalize: bool) -> Result<Self> {
        let (file_grid, values) = io::read_kernel_values(path)?;
        file_grid.check_same(&grid, "kernel file")?;
        Self::from_values(grid, values, renormalize)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_kernel_values(path, self.grid, &self.values)
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Real Fourier multiplier of the samples (unnormalized transform).
    pub fn hat(&self) -> &[f64] {
        &self.hat
    }

    /// Symbol of the nonlocal operator per mode: (J * 1) - hx*hy*Jhat_kl.
    pub fn l_symbols(&self) -> &[f64] {
        &self.l_hat
    }

    /// (J * 1) = hx*hy * sum of samples; constant in space.
    pub fn j_star_one(&self) -> f64 {
        self.j_star_one
    }

    /// Discrete half second moment; 1 to round-off after normalization.
    pub fn second_moment(&self) -> f64 {
        discrete_half_second_moment(self.grid, &self.values)
    }

    /// Kernel samples viewed as a grid function. The storage origin differs
    /// from field labeling by a cyclic shift, which leaves the translation-
    /// invariant functionals (gradient norms, extrema) unchanged.
    pub fn as_field(&self) -> GridFunction {
        GridFunction::new(self.grid, self.values.clone()).expect("validated samples")
    }
}

/// Transport and elastic data of the model: eps and the diffusivity
/// gamma0 = eps^2 (J * 1) - 1, which must be positive.
#[derive(Debug, Clone, Copy)]
pub struct ModelParams {
    epsilon: f64,
    gamma0: f64,
}

impl ModelParams {
    pub fn new(epsilon: f64, kernel: &Kernel) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        let gamma0 = epsilon * epsilon * kernel.j_star_one() - 1.0;
        if gamma0 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "kernel too wide for epsilon: gamma0={gamma0}"
            )));
        }
        Ok(Self { epsilon, gamma0 })
    }

    /// Build from a diffusivity already known to the caller, bypassing the
    /// kernel sum. Useful when gamma0 is prescribed rather than derived.
    pub fn with_gamma0(epsilon: f64, gamma0: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !(gamma0.is_finite() && gamma0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel too wide for epsilon: gamma0={gamma0}"
            )));
        }
        Ok(Self { epsilon, gamma0 })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }
}

/// FFT-route convolution hx*hy * P^{-1}(Jhat . fhat).
pub fn convolve(kernel: &Kernel, f: &GridFunction) -> Result<GridFunction> {
    kernel.grid().check_same(&f.grid(), "convolution")?;
    let grid = f.grid();
    let fhat = spectral::forward(f);
    let area = grid.cell_area();
    let coeffs: Vec<Complex<f64>> = fhat
        .coeffs()
        .iter()
        .zip(kernel.hat())
        .map(|(c, h)| c * (area * h))
        .collect();
    let (re, _im) = spectral::inverse_split(&SpectralField::from_parts(grid, coeffs));
    Ok(re)
}

/// Literal O(N^4) double sum (J (*) f)_ij = hx*hy sum_mn J_{i-m,j-n} f_mn,
/// for cross-validating the FFT route on small grids (nx, ny <= 16).
pub fn convolve_direct(kernel: &Kernel, f: &GridFunction) -> Result<GridFunction> {
    kernel.grid().check_same(&f.grid(), "direct convolution")?;
    let grid = f.grid();
    let nx = grid.nx();
    let ny = grid.ny();
    let k = kernel.values();
    let v = f.values();
    let mut out = vec![0.0; grid.len()];
    for jo in 0..ny {
        for io in 0..nx {
            let mut acc = Accumulator::new();
            for jm in 0..ny {
                // Node arithmetic i - m maps to storage (io - im - 1) mod n.
                let jk = (jo + ny - jm + ny - 1) % ny;
                for im in 0..nx {
                    let ik = (io + nx - im + nx - 1) % nx;
                    acc.add(k[jk * nx + ik] * v[jm * nx + im]);
                }
            }
            out[jo * nx + io] = grid.cell_area() * acc.total();
        }
    }
    GridFunction::new(grid, out)
}

/// Nonlocal operator L f = (J * 1) f - J (*) f, applied through its Fourier
/// symbol so the zero mode is annihilated exactly.
pub fn nonlocal_op(kernel: &Kernel, f: &GridFunction) -> Result<GridFunction> {
    kernel.grid().check_same(&f.grid(), "nonlocal operator")?;
    let grid = f.grid();
    let fhat = spectral::forward(f);
    let coeffs: Vec<Complex<f64>> = fhat
        .coeffs()
        .iter()
        .zip(kernel.l_symbols())
        .map(|(c, s)| c * s)
        .collect();
    let (re, _im) = spectral::inverse_split(&SpectralField::from_parts(grid, coeffs));
    Ok(re)
}

/// One trial of the a-priori bound |<J (*) f, laplacian g>| <=
/// alpha ||f||_2^2 + (C/alpha) ||grad g||_2^2 with the proof's constant
/// C = (1/4) ||grad J||_inf^2 |Omega|^2.
#[derive(Debug, Clone, Copy)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// C = (1/4) c_j^2 |Omega|^2.
    pub constant: f64,
    /// c_j = ||grad J||_inf.
    pub c_j: f64,
    pub satisfied: bool,
}

/// Evaluate the bound for one (f, g, alpha) triple.
pub fn lemma22_check(
    kernel: &Kernel,
    f: &GridFunction,
    g: &GridFunction,
    alpha: f64,
) -> Result<BoundCheck> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bound check weight alpha must be positive, got {alpha}"
        )));
    }
    kernel.grid().check_same(&f.grid(), "bound check")?;
    f.grid().check_same(&g.grid(), "bound check")?;
    let conv = convolve(kernel, f)?;
    let lhs = grid::inner_product(&conv, &spectral::laplacian(g))?.abs();
    let c_j = spectral::grad_norm_linf(&kernel.as_field());
    let area = kernel.grid().domain_area();
    let constant = 0.25 * c_j * c_j * area * area;
    let nf = grid::norm_l2(f);
    let gg = spectral::grad_norm_l2(g);
    let rhs = alpha * nf * nf + constant / alpha * gg * gg;
    Ok(BoundCheck {
        lhs,
        rhs,
        constant,
        c_j,
        satisfied: lhs <= rhs,
    })
}
