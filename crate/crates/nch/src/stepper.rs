//! First-order stabilized semi-implicit time stepping.
//!
//! One step advances u^n by
//!
//!   (u^{n+1} - u^n)/dt = Laplace( (u^n)^3 - u^n + A (u^{n+1} - u^n)
//!                                 + eps^2 L u^{n+1} ),
//!
//! which is diagonal in Fourier space: with lam the Laplacian symbol and
//! Lhat the nonlocal symbol,
//!
//!   uhat^{n+1} = [ uhat^n + dt*lam*(what^n - A*uhat^n) ]
//!              / [ 1 - dt*lam*(A + eps^2*Lhat) ],
//!
//! where what^n transforms (u^n)^3 - u^n. Every denominator is >= 1
//! because lam <= 0 and A, Lhat >= 0, and the zero mode is copied verbatim,
//! so the mean is conserved exactly. With the stabilization constant A
//! large enough (the policies below), the discrete free energy decreases
//! every step; the sufficient per-step certificate
//!
//!   A >= (1/2)||u^{n+1}||_inf^2 + ||u^n||_inf^2 - 1/2
//!
//! is recorded post hoc in the diagnostics rather than enforced a priori.

use std::io::Write;

use num_complex::Complex;

use crate::energy::{self, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::grid::{self, GridFunction};
use crate::io::format_f64;
use crate::kernel::{Kernel, ModelParams};
use crate::spectral::{self, frequency, SpectralField, SymbolTable};

/// How the stabilization constant A is chosen.
///
/// The margin-based policies track M0 = margin + max_k ||u^k||_inf over the
/// run so far; the proofs need M0 >= max ||u^k||_inf, and the margin buys
/// headroom for growth within a step.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum StabilizerPolicy {
    /// Caller-chosen constant, A >= 0.
    Fixed { a: f64 },
    /// A = 18 M0^4 / gamma0.
    Theorem { m0_margin: f64 },
    /// A = max(18 M0^4 / gamma0, (3/2) M0^2 - 1/2); the second branch is
    /// the weaker condition that already guarantees dissipation.
    Corollary { m0_margin: f64 },
}

impl StabilizerPolicy {
    fn validate(&self) -> Result<()> {
        match *self {
            StabilizerPolicy::Fixed { a } => {
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "fixed stabilizer must be finite and >= 0, got {a}"
                    )));
                }
            }
            StabilizerPolicy::Theorem { m0_margin } | StabilizerPolicy::Corollary { m0_margin } => {
                if !(m0_margin.is_finite() && m0_margin >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "stabilizer margin must be finite and >= 0, got {m0_margin}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Resolve the stabilization constant for a given running sup-norm maximum.
/// Nondecreasing in `sup_norm_max` and always >= 0.
pub fn resolve_stabilizer(
    policy: &StabilizerPolicy,
    sup_norm_max: f64,
    params: &ModelParams,
) -> Result<f64> {
    policy.validate()?;
    if !(sup_norm_max.is_finite() && sup_norm_max >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sup-norm history must be finite and >= 0, got {sup_norm_max}"
        )));
    }
    Ok(match *policy {
        StabilizerPolicy::Fixed { a } => a,
        StabilizerPolicy::Theorem { m0_margin } => {
            let m0 = m0_margin + sup_norm_max;
            18.0 * m0.powi(4) / params.gamma0()
        }
        StabilizerPolicy::Corollary { m0_margin } => {
            let m0 = m0_margin + sup_norm_max;
            (18.0 * m0.powi(4) / params.gamma0()).max(1.5 * m0 * m0 - 0.5)
        }
    })
}

/// Time-stepping parameters. `t_end` must be an integer multiple of `dt`;
/// times are reported as step * dt.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub stabilizer: StabilizerPolicy,
    /// Snapshot cadence in steps; `None` disables snapshots.
    pub snapshot_every: Option<usize>,
    /// Diagnostics cadence in steps.
    pub diagnostics_every: usize,
}

impl SolverConfig {
    /// Validate and return the number of steps t_end/dt.
    pub fn n_steps(&self) -> Result<usize> {
        self.stabilizer.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive and finite, got {}",
                self.dt
            )));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "t_end must be positive and finite, got {}",
                self.t_end
            )));
        }
        let ratio = self.t_end / self.dt;
        let n = ratio.round();
        if n < 1.0 || n > 1e12 || (ratio - n).abs() > 1e-9 * n {
            return Err(Error::InvalidParameter(format!(
                "t_end = {} is not an integer multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        if self.diagnostics_every == 0 {
            return Err(Error::InvalidParameter(
                "diagnostics cadence must be >= 1".into(),
            ));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::InvalidParameter(
                "snapshot cadence must be >= 1".into(),
            ));
        }
        Ok(n as usize)
    }
}

/// One diagnostics row describing the transition from step `step` to
/// `step + 1`. State quantities (energy, mass, sup_norm) belong to u^n.
#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub energy: EnergyBreakdown,
    pub mass: f64,
    pub sup_norm: f64,
    /// E(u^{n+1}) - E(u^n); <= round-off under a valid stabilizer.
    pub energy_delta: f64,
    pub a_used: f64,
    /// Post-hoc certificate A >= (1/2)||u^{n+1}||_inf^2 + ||u^n||_inf^2 - 1/2.
    pub cond_a0_satisfied: bool,
}

pub trait DiagnosticsSink {
    fn record(&mut self, row: &StepDiagnostics) -> Result<()>;
}

/// Collects rows in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub rows: Vec<StepDiagnostics>,
}

impl DiagnosticsSink for MemorySink {
    fn record(&mut self, row: &StepDiagnostics) -> Result<()> {
        self.rows.push(*row);
        Ok(())
    }
}

/// Streams rows as CSV with a fixed header; float fields use the same
/// 17-significant-digit format as snapshots, so identical runs produce
/// byte-identical files.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(
            out,
            "step,time,energy_total,energy_bulk,energy_nonlocal,mass,linf,energy_delta,a_used,cond_a0"
        )?;
        Ok(Self { out })
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

impl<W: Write> DiagnosticsSink for CsvSink<W> {
    fn record(&mut self, row: &StepDiagnostics) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.step,
            format_f64(row.time),
            format_f64(row.energy.total),
            format_f64(row.energy.bulk),
            format_f64(row.energy.nonlocal),
            format_f64(row.mass),
            format_f64(row.sup_norm),
            format_f64(row.energy_delta),
            format_f64(row.a_used),
            u8::from(row.cond_a0_satisfied)
        )?;
        Ok(())
    }
}

/// Solve (I - dt * Laplace * (A + eps^2 L)) x = rhs. Linear in `rhs`; the
/// per-mode denominators are >= 1 for valid kernels and A >= 0.
pub fn implicit_solve(
    rhs: &GridFunction,
    kernel: &Kernel,
    params: &ModelParams,
    dt: f64,
    a: f64,
) -> Result<GridFunction> {
    kernel.grid().check_same(&rhs.grid(), "implicit solve")?;
    let table = SymbolTable::new(rhs.grid());
    let rhat = spectral::forward(rhs);
    let coeffs = divide_by_denominators(rhat.coeffs(), &table, kernel, params, dt, a)?;
    let (re, _im) = spectral::inverse_split(&SpectralField::from_parts(rhs.grid(), coeffs));
    Ok(re)
}

fn divide_by_denominators(
    coeffs: &[Complex<f64>],
    table: &SymbolTable,
    kernel: &Kernel,
    params: &ModelParams,
    dt: f64,
    a: f64,
) -> Result<Vec<Complex<f64>>> {
    let eps2 = params.epsilon() * params.epsilon();
    let grid = table.grid();
    let mut out = coeffs.to_vec();
    for (m, c) in out.iter_mut().enumerate() {
        let denom = 1.0 - dt * table.laplace_symbols()[m] * (a + eps2 * kernel.l_symbols()[m]);
        if denom < 1.0 - 1e-9 {
            return Err(Error::KernelPositivity {
                denominator: denom,
                k: frequency(m % grid.nx(), grid.nx()),
                l: frequency(m / grid.nx(), grid.ny()),
            });
        }
        *c /= denom;
    }
    Ok(out)
}

fn step_core(
    u: &GridFunction,
    kernel: &Kernel,
    params: &ModelParams,
    table: &SymbolTable,
    dt: f64,
    a: f64,
) -> Result<GridFunction> {
    let grid = u.grid();
    let uhat = spectral::forward(u);
    let what = spectral::forward(&energy::cubic_term(u));
    let mut coeffs = vec![Complex::new(0.0, 0.0); grid.len()];
    for m in 0..coeffs.len() {
        let lam = table.laplace_symbols()[m];
        coeffs[m] = uhat.coeffs()[m] + dt * lam * (what.coeffs()[m] - a * uhat.coeffs()[m]);
    }
    let mut coeffs = divide_by_denominators(&coeffs, table, kernel, params, dt, a)?;
    // The zero mode is copied from u^n: exact mass conservation.
    coeffs[0] = uhat.coeffs()[0];
    let (re, _im) = spectral::inverse_split(&SpectralField::from_parts(grid, coeffs));
    Ok(re)
}

/// Advance one step. The stabilizer is resolved from the current state's
/// sup-norm alone; [`run`] instead tracks the running maximum.
pub fn step(
    u: &GridFunction,
    kernel: &Kernel,
    params: &ModelParams,
    cfg: &SolverConfig,
) -> Result<GridFunction> {
    kernel.grid().check_same(&u.grid(), "step")?;
    let a = resolve_stabilizer(&cfg.stabilizer, grid::norm_linf(u), params)?;
    let table = SymbolTable::new(u.grid());
    step_core(u, kernel, params, &table, cfg.dt, a)
}

/// Integrate from `u0` to t_end.
///
/// Diagnostics rows go to `sink` at the configured cadence (the final
/// transition is always emitted); `on_state` is called for every state
/// including u^0 and the final one, letting callers record snapshots or
/// per-step errors at their own cadence. The stabilizer is re-resolved
/// whenever the running sup-norm maximum grows; with margin-based policies
/// A never decreases during a run.
pub fn run(
    u0: &GridFunction,
    kernel: &Kernel,
    params: &ModelParams,
    cfg: &SolverConfig,
    mut sink: Option<&mut dyn DiagnosticsSink>,
    mut on_state: Option<&mut dyn FnMut(usize, f64, &GridFunction) -> Result<()>>,
) -> Result<GridFunction> {
    kernel.grid().check_same(&u0.grid(), "run")?;
    let n_steps = cfg.n_steps()?;
    u0.check_finite()?;

    let table = SymbolTable::new(u0.grid());
    let mut u = u0.clone();
    let mut sup_curr = grid::norm_linf(&u);
    let mut sup_max = sup_curr;
    let mut a = resolve_stabilizer(&cfg.stabilizer, sup_max, params)?;
    let mut e_curr = if sink.is_some() {
        Some(energy::energy(&u, kernel, params)?)
    } else {
        None
    };

    if let Some(hook) = on_state.as_deref_mut() {
        hook(0, 0.0, &u)?;
    }

    for n in 0..n_steps {
        let u_next = step_core(&u, kernel, params, &table, cfg.dt, a)?;
        if u_next.check_finite().is_err() {
            return Err(Error::BlowUp { step: n + 1 });
        }
        let sup_next = grid::norm_linf(&u_next);

        if let Some(sink) = sink.as_deref_mut() {
            let e_next = energy::energy(&u_next, kernel, params)?;
            let e_here = e_curr.expect("energy tracked when sink present");
            if n % cfg.diagnostics_every == 0 || n + 1 == n_steps {
                let cond_a0 =
                    a >= 0.5 * sup_next * sup_next + sup_curr * sup_curr - 0.5;
                sink.record(&StepDiagnostics {
                    step: n,
                    time: n as f64 * cfg.dt,
                    energy: e_here,
                    mass: grid::mean(&u),
                    sup_norm: sup_curr,
                    energy_delta: e_next.total - e_here.total,
                    a_used: a,
                    cond_a0_satisfied: cond_a0,
                })?;
            }
            e_curr = Some(e_next);
        }

        if sup_next > sup_max {
            sup_max = sup_next;
            let a_new = resolve_stabilizer(&cfg.stabilizer, sup_max, params)?;
            if !a_new.is_finite() {
                return Err(Error::BlowUp { step: n + 1 });
            }
            a = a.max(a_new);
        }

        u = u_next;
        sup_curr = sup_next;
        if let Some(hook) = on_state.as_deref_mut() {
            hook(n + 1, (n + 1) as f64 * cfg.dt, &u)?;
        }
    }
    Ok(u)
}

/// Dense-matrix route for one step, for oracle comparisons at small sizes.
pub mod reference {
    use super::*;
    use crate::kernel;
    use crate::spectral::reference as sref;

    /// Spectral Laplacian through literal DFT sums.
    fn laplacian_direct(f: &GridFunction) -> GridFunction {
        let grid = f.grid();
        let (nx, ny) = (grid.nx(), grid.ny());
        let hat = sref::forward_direct(f);
        let mut coeffs = hat.coeffs().to_vec();
        for lb in 0..ny {
            let l = frequency(lb, ny) as f64 * std::f64::consts::PI / grid.half_width_y();
            for kb in 0..nx {
                let k = frequency(kb, nx) as f64 * std::f64::consts::PI / grid.half_width_x();
                coeffs[lb * nx + kb] *= -(k * k + l * l);
            }
        }
        let (re, _im) = sref::inverse_direct_split(&SpectralField::from_parts(grid, coeffs));
        re
    }

    fn lu_solve(mut a: Vec<f64>, n: usize, mut b: Vec<f64>) -> Result<Vec<f64>> {
        for col in 0..n {
            let mut p = col;
            for r in col + 1..n {
                if a[r * n + col].abs() > a[p * n + col].abs() {
                    p = r;
                }
            }
            if a[p * n + col] == 0.0 {
                return Err(Error::InvalidParameter("singular dense system".into()));
            }
            if p != col {
                for c in 0..n {
                    a.swap(p * n + c, col * n + c);
                }
                b.swap(p, col);
            }
            let piv = a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] / piv;
                if f != 0.0 {
                    for c in col..n {
                        a[r * n + c] -= f * a[col * n + c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let mut s = b[r];
            for c in r + 1..n {
                s -= a[r * n + c] * x[c];
            }
            x[r] = s / a[r * n + r];
        }
        Ok(x)
    }

    /// One semi-implicit step computed by assembling the dense system
    /// (I - dt Lap (A + eps^2 L)) u' = u + dt Lap ((u^3 - u) - A u)
    /// and LU-solving it. The Laplacian columns come from literal DFT sums
    /// and the L columns from the direct O(N^4) convolution, so no code is
    /// shared with the FFT path. O(N^6) in the grid side; small grids only.
    pub fn dense_step(
        u: &GridFunction,
        kern: &Kernel,
        params: &ModelParams,
        dt: f64,
        a: f64,
    ) -> Result<GridFunction> {
        kern.grid().check_same(&u.grid(), "dense step")?;
        let grid = u.grid();
        let n = grid.len();
        let eps2 = params.epsilon() * params.epsilon();

        let mut lap = vec![0.0; n * n];
        let mut lmat = vec![0.0; n * n];
        for c in 0..n {
            let mut e = GridFunction::zeros(grid);
            e.values_mut()[c] = 1.0;
            let lap_col = laplacian_direct(&e);
            let conv = kernel::convolve_direct(kern, &e)?;
            for r in 0..n {
                lap[r * n + c] = lap_col.values()[r];
                lmat[r * n + c] = -conv.values()[r];
            }
            lmat[c * n + c] += kern.j_star_one();
        }

        let mut inner = vec![0.0; n * n];
        for (dst, src) in inner.iter_mut().zip(&lmat) {
            *dst = eps2 * src;
        }
        for d in 0..n {
            inner[d * n + d] += a;
        }
        let mut m = vec![0.0; n * n];
        for r in 0..n {
            for k in 0..n {
                let f = lap[r * n + k];
                if f != 0.0 {
                    for c in 0..n {
                        m[r * n + c] += f * inner[k * n + c];
                    }
                }
            }
        }
        for v in m.iter_mut() {
            *v = -dt * *v;
        }
        for d in 0..n {
            m[d * n + d] += 1.0;
        }

        let w = energy::cubic_term(u);
        let v: Vec<f64> = w
            .values()
            .iter()
            .zip(u.values())
            .map(|(w, u)| w - a * u)
            .collect();
        let mut rhs = vec![0.0; n];
        for r in 0..n {
            let mut s = 0.0;
            for c in 0..n {
                s += lap[r * n + c] * v[c];
            }
            rhs[r] = u.values()[r] + dt * s;
        }

        GridFunction::new(grid, lu_solve(m, n, rhs)?)
    }
}
