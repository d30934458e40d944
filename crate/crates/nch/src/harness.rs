//! Refinement studies for the convergence estimate
//!
//!   ||e^n||_{-1,N} + (gamma0 dt sum_k ||e^k||_2^2)^{1/2} <= C (dt + h^m).
//!
//! No closed-form solutions exist, so errors are measured against fine
//! references: a run of the same grid at dt/32 for the temporal axis, and a
//! run on a once-more-doubled grid restricted to coarse nodes for the
//! spatial axis. The stabilization constant is frozen at the value resolved
//! for the initial state so that refinement varies only the discretization.
//! Spatial errors decay super-algebraically for smooth data until they
//! reach the temporal error of the shared dt; the study reports that floor
//! (the dt-vs-dt/2 reference difference, about half the true first-order
//! error) alongside the per-level errors.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::cli::InitialCondition;
use crate::error::{Error, Result};
use crate::grid::{self, GridFunction, PeriodicGrid};
use crate::io::format_f64;
use crate::kernel::{Kernel, KernelSpec, ModelParams};
use crate::spectral;
use crate::stepper::{self, SolverConfig, StabilizerPolicy};
use crate::sum::Accumulator;

/// Temporal references run at the finest level dt divided by this ratio,
/// making the reference's own first-order error negligible next to the
/// levels under study.
pub const REFERENCE_DT_RATIO: usize = 32;

/// Discrete H^{-1} distance between two states of equal mass. The mean
/// must agree to 1e-10 (both runs conserve the same initial mass); the
/// difference is then projected to exact zero mean before inverting the
/// Laplacian.
pub fn error_hm1(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    a.grid().check_same(&b.grid(), "error")?;
    let (ma, mb) = (grid::mean(a), grid::mean(b));
    if (ma - mb).abs() > 1e-10 * (1.0 + ma.abs().max(mb.abs())) {
        return Err(Error::ConservationViolation { lhs: ma, rhs: mb });
    }
    let diff = grid::zero_mean(&a.sub(b)?);
    spectral::norm_hm1(&diff)
}

/// Restrict a fine-grid field to a coarser grid whose nodes are a subset of
/// the fine nodes. Both axes need integer refinement ratios and the domains
/// must match; the value at coarse index a is the fine value at
/// r*a + r - 1, which sits at the identical coordinate.
pub fn restrict(fine: &GridFunction, coarse: PeriodicGrid) -> Result<GridFunction> {
    let fg = fine.grid();
    if fg.half_width_x() != coarse.half_width_x() || fg.half_width_y() != coarse.half_width_y() {
        return Err(Error::GridMismatch(format!(
            "restriction needs matching domains, got ({}, {}) vs ({}, {})",
            fg.half_width_x(),
            fg.half_width_y(),
            coarse.half_width_x(),
            coarse.half_width_y()
        )));
    }
    if fg.nx() % coarse.nx() != 0 || fg.ny() % coarse.ny() != 0 {
        return Err(Error::GridMismatch(format!(
            "restriction needs integer grid ratios, got {}x{} to {}x{}",
            fg.nx(),
            fg.ny(),
            coarse.nx(),
            coarse.ny()
        )));
    }
    let (rx, ry) = (fg.nx() / coarse.nx(), fg.ny() / coarse.ny());
    let mut values = Vec::with_capacity(coarse.len());
    for b in 0..coarse.ny() {
        for a in 0..coarse.nx() {
            values.push(fine.value(rx * a + rx - 1, ry * b + ry - 1));
        }
    }
    GridFunction::new(coarse, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyAxis {
    Time,
    Space,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    FineDt,
    FineGrid,
}

/// Errors of one refinement level against the reference.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LevelResult {
    pub dt: f64,
    pub nx: usize,
    pub ny: usize,
    pub err_hm1: f64,
    pub err_l2l2: f64,
}

/// log2 error ratios between adjacent levels; `None` when a ratio is
/// degenerate (zero or non-finite errors).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OrderPair {
    pub hm1: Option<f64>,
    pub l2l2: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceSpec {
    pub kind: ReferenceKind,
    pub dt: f64,
    pub nx: usize,
    pub ny: usize,
    /// Spatial studies only: dt-vs-dt/2 reference difference at final time.
    pub temporal_floor_hm1: Option<f64>,
    pub temporal_floor_l2l2: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementStudy {
    pub axis: StudyAxis,
    pub levels: Vec<LevelResult>,
    pub orders: Vec<OrderPair>,
    pub reference: ReferenceSpec,
    /// SHA-256 of the driving configuration; filled by the CLI layer.
    pub config_hash: String,
}

impl RefinementStudy {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Flat per-level view; order columns are empty on the first level.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "level,dt,nx,ny,err_hm1,order_hm1,err_l2l2,order_l2l2")?;
        for (i, lv) in self.levels.iter().enumerate() {
            let (oh, ol) = if i == 0 {
                (String::new(), String::new())
            } else {
                (fmt_order(self.orders[i - 1].hm1), fmt_order(self.orders[i - 1].l2l2))
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                i,
                format_f64(lv.dt),
                lv.nx,
                lv.ny,
                format_f64(lv.err_hm1),
                oh,
                format_f64(lv.err_l2l2),
                ol
            )?;
        }
        Ok(())
    }
}

fn fmt_order(o: Option<f64>) -> String {
    o.map(format_f64).unwrap_or_default()
}

fn order_of(coarse: f64, fine: f64) -> Option<f64> {
    (coarse.is_finite() && fine.is_finite() && coarse > 0.0 && fine > 0.0)
        .then(|| (coarse / fine).log2())
}

fn observed_orders(levels: &[LevelResult]) -> Vec<OrderPair> {
    levels
        .windows(2)
        .map(|w| OrderPair {
            hm1: order_of(w[0].err_hm1, w[1].err_hm1),
            l2l2: order_of(w[0].err_l2l2, w[1].err_l2l2),
        })
        .collect()
}

/// Run `count` independent level jobs on up to `jobs` threads, assembling
/// results in level order so the output is identical for any thread count.
fn run_levels<T: Send>(
    jobs: usize,
    count: usize,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if jobs == 0 {
        return Err(Error::InvalidParameter("jobs must be >= 1".into()));
    }
    let workers = jobs.min(count);
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..count).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let r = f(i);
                *slots[i].lock().expect("level slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("level slot").expect("worker filled slot"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TemporalStudyConfig {
    /// Strictly halving sequence, coarsest first.
    pub dts: Vec<f64>,
    pub t_end: f64,
    pub jobs: usize,
}

fn validate_halving(dts: &[f64]) -> Result<()> {
    if dts.len() < 2 {
        return Err(Error::InvalidParameter(
            "temporal study needs at least two dt levels".into(),
        ));
    }
    for w in dts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt levels must be positive and finite, got {a} and {b}"
            )));
        }
        if (a / 2.0 - b).abs() > 1e-12 * a {
            return Err(Error::InvalidParameter(format!(
                "dt levels must halve, got {a} followed by {b}"
            )));
        }
    }
    Ok(())
}

/// Temporal refinement on a fixed grid: every level and the dt/32 reference
/// start from the same initial state and share the stabilization constant
/// resolved for it, so only dt varies. Final-time errors use the H^{-1}
/// norm; the running l2(0,T;l2) error samples every level step against the
/// exactly aligned reference state.
pub fn temporal_study(
    u0_spec: &InitialCondition,
    kernel: &Kernel,
    params: &ModelParams,
    stabilizer: &StabilizerPolicy,
    study: &TemporalStudyConfig,
) -> Result<RefinementStudy> {
    validate_halving(&study.dts)?;
    let grid = kernel.grid();
    let u0 = u0_spec.sample(grid)?;
    let a_star = stepper::resolve_stabilizer(stabilizer, grid::norm_linf(&u0), params)?;
    let frozen = StabilizerPolicy::Fixed { a: a_star };

    let finest = *study.dts.last().expect("validated nonempty");
    let ref_dt = finest / REFERENCE_DT_RATIO as f64;
    let make_cfg = |dt: f64| SolverConfig {
        dt,
        t_end: study.t_end,
        stabilizer: frozen,
        snapshot_every: None,
        diagnostics_every: 1,
    };
    make_cfg(study.dts[0]).n_steps()?;

    // Reference states at every multiple of the finest dt.
    let mut refs: Vec<GridFunction> = Vec::new();
    {
        let mut hook = |n: usize, _t: f64, u: &GridFunction| {
            if n % REFERENCE_DT_RATIO == 0 {
                refs.push(u.clone());
            }
            Ok(())
        };
        stepper::run(&u0, kernel, params, &make_cfg(ref_dt), None, Some(&mut hook))?;
    }

    let levels = run_levels(study.jobs, study.dts.len(), |l| {
        let dt = study.dts[l];
        let stride = (dt / finest).round() as usize;
        let cfg = make_cfg(dt);
        let n_steps = cfg.n_steps()?;
        let mut acc = Accumulator::new();
        let mut final_hm1 = 0.0;
        {
            let mut hook = |n: usize, _t: f64, u: &GridFunction| {
                if n == 0 {
                    return Ok(());
                }
                let r = &refs[n * stride];
                let e = u.sub(r)?;
                let l2 = grid::norm_l2(&e);
                acc.add(l2 * l2);
                if n == n_steps {
                    final_hm1 = error_hm1(u, r)?;
                }
                Ok(())
            };
            stepper::run(&u0, kernel, params, &cfg, None, Some(&mut hook))?;
        }
        Ok(LevelResult {
            dt,
            nx: grid.nx(),
            ny: grid.ny(),
            err_hm1: final_hm1,
            err_l2l2: (params.gamma0() * dt * acc.total()).max(0.0).sqrt(),
        })
    })?;

    Ok(RefinementStudy {
        axis: StudyAxis::Time,
        orders: observed_orders(&levels),
        levels,
        reference: ReferenceSpec {
            kind: ReferenceKind::FineDt,
            dt: ref_dt,
            nx: grid.nx(),
            ny: grid.ny(),
            temporal_floor_hm1: None,
            temporal_floor_l2l2: None,
        },
        config_hash: String::new(),
    })
}

#[derive(Debug, Clone)]
pub struct SpatialStudyConfig {
    pub half_width_x: f64,
    pub half_width_y: f64,
    /// (nx, ny) per level, each exactly doubling the previous.
    pub levels: Vec<(usize, usize)>,
    pub dt: f64,
    pub t_end: f64,
    pub epsilon: f64,
    pub jobs: usize,
}

/// Spatial refinement at a shared dt against a once-more-doubled reference
/// grid, with every comparison made on the level grid after restriction.
/// The initial condition must be band-limited below the coarsest Nyquist
/// mode so all levels sample the same analytic state. Since all runs share
/// dt, the measurable spatial error bottoms out at the temporal error; the
/// reported floor is the dt-vs-dt/2 difference of the reference run.
pub fn spatial_study(
    u0_spec: &InitialCondition,
    kernel_spec: &KernelSpec,
    stabilizer: &StabilizerPolicy,
    study: &SpatialStudyConfig,
) -> Result<RefinementStudy> {
    if study.levels.len() < 2 {
        return Err(Error::InvalidParameter(
            "spatial study needs at least two grid levels".into(),
        ));
    }
    for w in study.levels.windows(2) {
        if w[1].0 != 2 * w[0].0 || w[1].1 != 2 * w[0].1 {
            return Err(Error::InvalidParameter(format!(
                "grid levels must double, got {}x{} followed by {}x{}",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
    }
    let (cnx, cny) = study.levels[0];
    match u0_spec.max_mode() {
        Some((mx, my)) if mx < (cnx / 2) as i64 && my < (cny / 2) as i64 => {}
        Some((mx, my)) => {
            return Err(Error::InvalidParameter(format!(
                "initial condition mode ({mx}, {my}) is not below the coarsest Nyquist mode ({}, {})",
                cnx / 2,
                cny / 2
            )));
        }
        None => {
            return Err(Error::InvalidParameter(
                "spatial studies need an analytic band-limited initial condition".into(),
            ));
        }
    }

    let level_grids = study
        .levels
        .iter()
        .map(|&(nx, ny)| PeriodicGrid::new(study.half_width_x, study.half_width_y, nx, ny))
        .collect::<Result<Vec<_>>>()?;
    let (lnx, lny) = *study.levels.last().expect("validated nonempty");
    let ref_grid = PeriodicGrid::new(study.half_width_x, study.half_width_y, 2 * lnx, 2 * lny)?;
    let ref_kernel = kernel_spec.build(ref_grid)?;
    let ref_params = ModelParams::new(study.epsilon, &ref_kernel)?;
    let u0_ref = u0_spec.sample(ref_grid)?;
    let a_star = stepper::resolve_stabilizer(stabilizer, grid::norm_linf(&u0_ref), &ref_params)?;
    let frozen = StabilizerPolicy::Fixed { a: a_star };
    let cfg = SolverConfig {
        dt: study.dt,
        t_end: study.t_end,
        stabilizer: frozen,
        snapshot_every: None,
        diagnostics_every: 1,
    };
    let n_steps = cfg.n_steps()?;

    // One reference run, restricted onto every level grid as it goes.
    let mut streams: Vec<Vec<GridFunction>> = study
        .levels
        .iter()
        .map(|_| Vec::with_capacity(n_steps + 1))
        .collect();
    {
        let mut hook = |_n: usize, _t: f64, u: &GridFunction| {
            for (stream, g) in streams.iter_mut().zip(&level_grids) {
                stream.push(restrict(u, *g)?);
            }
            Ok(())
        };
        stepper::run(&u0_ref, &ref_kernel, &ref_params, &cfg, None, Some(&mut hook))?;
    }

    let (floor_hm1, floor_l2l2) =
        temporal_floor(&u0_ref, &ref_kernel, &ref_params, frozen, study.dt, n_steps)?;

    let gamma_ref = ref_params.gamma0();
    let levels = run_levels(study.jobs, study.levels.len(), |l| {
        let g = level_grids[l];
        let kern = kernel_spec.build(g)?;
        let par = ModelParams::new(study.epsilon, &kern)?;
        let u0 = u0_spec.sample(g)?;
        let drift = grid::norm_linf(&u0.sub(&streams[l][0])?);
        if drift > 1e-12 * (1.0 + grid::norm_linf(&u0)) {
            return Err(Error::InvalidParameter(format!(
                "initial condition disagrees between level and restricted reference by {drift}"
            )));
        }
        let mut acc = Accumulator::new();
        let mut final_hm1 = 0.0;
        {
            let mut hook = |n: usize, _t: f64, u: &GridFunction| {
                if n == 0 {
                    return Ok(());
                }
                let e = u.sub(&streams[l][n])?;
                let l2 = grid::norm_l2(&e);
                acc.add(l2 * l2);
                if n == n_steps {
                    final_hm1 = error_hm1(u, &streams[l][n])?;
                }
                Ok(())
            };
            stepper::run(&u0, &kern, &par, &cfg, None, Some(&mut hook))?;
        }
        Ok(LevelResult {
            dt: study.dt,
            nx: g.nx(),
            ny: g.ny(),
            err_hm1: final_hm1,
            err_l2l2: (gamma_ref * study.dt * acc.total()).max(0.0).sqrt(),
        })
    })?;

    Ok(RefinementStudy {
        axis: StudyAxis::Space,
        orders: observed_orders(&levels),
        levels,
        reference: ReferenceSpec {
            kind: ReferenceKind::FineGrid,
            dt: study.dt,
            nx: ref_grid.nx(),
            ny: ref_grid.ny(),
            temporal_floor_hm1: Some(floor_hm1),
            temporal_floor_l2l2: Some(floor_l2l2),
        },
        config_hash: String::new(),
    })
}

/// Lockstep dt vs dt/2 integration of the reference problem; the running
/// difference estimates the temporal error shared by all spatial levels.
fn temporal_floor(
    u0: &GridFunction,
    kernel: &Kernel,
    params: &ModelParams,
    frozen: StabilizerPolicy,
    dt: f64,
    n_steps: usize,
) -> Result<(f64, f64)> {
    let cfg_full = SolverConfig {
        dt,
        t_end: dt,
        stabilizer: frozen,
        snapshot_every: None,
        diagnostics_every: 1,
    };
    let cfg_half = SolverConfig {
        dt: dt / 2.0,
        ..cfg_full.clone()
    };
    let mut ua = u0.clone();
    let mut ub = u0.clone();
    let mut acc = Accumulator::new();
    for n in 1..=n_steps {
        ua = stepper::step(&ua, kernel, params, &cfg_full)?;
        ub = stepper::step(&ub, kernel, params, &cfg_half)?;
        ub = stepper::step(&ub, kernel, params, &cfg_half)?;
        if ua.check_finite().is_err() || ub.check_finite().is_err() {
            return Err(Error::BlowUp { step: n });
        }
        let l2 = grid::norm_l2(&ua.sub(&ub)?);
        acc.add(l2 * l2);
    }
    let floor_hm1 = error_hm1(&ua, &ub)?;
    let floor_l2l2 = (params.gamma0() * dt * acc.total()).max(0.0).sqrt();
    Ok((floor_hm1, floor_l2l2))
}
