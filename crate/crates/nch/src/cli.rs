//! Batch front end: JSON configuration, initial-condition synthesis, and
//! the `run` / `converge` / `check` subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, GridFunction, PeriodicGrid};
use crate::harness::{self, StudyAxis};
use crate::io;
use crate::kernel::{Kernel, KernelSpec, ModelParams};
use crate::stepper::{self, CsvSink, SolverConfig, StabilizerPolicy};

/// Deterministic initial data generators plus file input. The trigonometric
/// generators sample exact analytic expressions, so the same spec sampled on
/// nested grids agrees bitwise at shared nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// amplitude * cos(kx pi x / X) * cos(ky pi y / Y)
    CosineProduct { amplitude: f64, kx: i64, ky: i64 },
    /// amplitude * cos(kx pi x / X + ky pi y / Y)
    SingleMode { amplitude: f64, kx: i64, ky: i64 },
    /// Independent uniform samples in [-amplitude, amplitude]; the seed
    /// fully determines the field. The mean reported for the synthesized
    /// field (diagnostics row 0) is the compensated mesh mean, which later
    /// conservation checks reproduce exactly.
    RandomUniform {
        amplitude: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Read a snapshot; its grid must match the target grid.
    FromFile { path: PathBuf },
}

impl InitialCondition {
    fn check_amplitude(amplitude: f64) -> Result<()> {
        if !amplitude.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "initial-condition amplitude must be finite, got {amplitude}"
            )));
        }
        Ok(())
    }

    /// Synthesize the field on `grid`.
    pub fn sample(&self, grid: PeriodicGrid) -> Result<GridFunction> {
        match self {
            InitialCondition::CosineProduct { amplitude, kx, ky } => {
                Self::check_amplitude(*amplitude)?;
                let (wx, wy) = (
                    *kx as f64 * std::f64::consts::PI / grid.half_width_x(),
                    *ky as f64 * std::f64::consts::PI / grid.half_width_y(),
                );
                GridFunction::from_fn(grid, |x, y| amplitude * (wx * x).cos() * (wy * y).cos())
            }
            InitialCondition::SingleMode { amplitude, kx, ky } => {
                Self::check_amplitude(*amplitude)?;
                let (wx, wy) = (
                    *kx as f64 * std::f64::consts::PI / grid.half_width_x(),
                    *ky as f64 * std::f64::consts::PI / grid.half_width_y(),
                );
                GridFunction::from_fn(grid, |x, y| amplitude * (wx * x + wy * y).cos())
            }
            InitialCondition::RandomUniform { amplitude, seed } => {
                Self::check_amplitude(*amplitude)?;
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                let values = (0..grid.len())
                    .map(|_| rng.gen_range(-amplitude.abs()..=amplitude.abs()))
                    .collect();
                GridFunction::new(grid, values)
            }
            InitialCondition::FromFile { path } => {
                let (field, _t) = io::read_field(path)?;
                grid.check_same(&field.grid(), "initial condition from file")?;
                Ok(field)
            }
        }
    }

    /// Largest wavenumber the generator excites, when that is knowable.
    /// `None` for full-spectrum or file-backed data.
    pub fn max_mode(&self) -> Option<(i64, i64)> {
        match self {
            InitialCondition::CosineProduct { kx, ky, .. }
            | InitialCondition::SingleMode { kx, ky, .. } => Some((kx.abs(), ky.abs())),
            InitialCondition::RandomUniform { .. } | InitialCondition::FromFile { .. } => None,
        }
    }

    /// Mode indices must be representable on the target grid.
    pub fn check_representable(&self, grid: PeriodicGrid) -> Result<()> {
        if let Some((mx, my)) = self.max_mode() {
            if mx > (grid.nx() / 2) as i64 || my > (grid.ny() / 2) as i64 {
                return Err(Error::InvalidParameter(format!(
                    "initial mode ({mx}, {my}) exceeds the grid's mode set ({}, {})",
                    grid.nx() / 2,
                    grid.ny() / 2
                )));
            }
        }
        Ok(())
    }
}

// Config documents are parsed through flat mirror structs so that unknown
// keys are rejected inside the tagged sub-objects too, with kind-specific
// required/irrelevant field checks spelled out.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigRaw {
    grid: GridRaw,
    kernel: KernelRaw,
    epsilon: f64,
    dt: f64,
    t_end: f64,
    #[serde(default)]
    initial: Option<InitialRaw>,
    #[serde(default)]
    stabilizer: Option<StabilizerRaw>,
    #[serde(default)]
    diagnostics_every: Option<usize>,
    #[serde(default)]
    snapshot_every: Option<usize>,
    #[serde(default)]
    study: Option<StudyRaw>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRaw {
    half_width_x: f64,
    half_width_y: f64,
    nx: usize,
    ny: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelRaw {
    kind: String,
    #[serde(default)]
    sigma: Option<f64>,
    #[serde(default)]
    path: Option<PathBuf>,
    #[serde(default)]
    renormalize: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialRaw {
    kind: String,
    #[serde(default)]
    amplitude: Option<f64>,
    #[serde(default)]
    kx: Option<i64>,
    #[serde(default)]
    ky: Option<i64>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StabilizerRaw {
    mode: String,
    #[serde(default)]
    a: Option<f64>,
    #[serde(default)]
    m0_margin: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyRaw {
    #[serde(default)]
    temporal: Option<TemporalRaw>,
    #[serde(default)]
    spatial: Option<SpatialRaw>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemporalRaw {
    dts: Vec<f64>,
    t_end: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpatialRaw {
    grids: Vec<(usize, usize)>,
    dt: f64,
    t_end: f64,
}

fn require<T>(v: Option<T>, what: &str, ctx: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("{ctx}: missing field \"{what}\"")))
}

fn forbid<T>(v: &Option<T>, what: &str, ctx: &str) -> Result<()> {
    if v.is_some() {
        return Err(Error::Config(format!(
            "{ctx}: field \"{what}\" does not apply to this kind"
        )));
    }
    Ok(())
}

fn map_kernel(raw: KernelRaw) -> Result<KernelSpec> {
    match raw.kind.as_str() {
        "gaussian" => {
            forbid(&raw.path, "path", "kernel.gaussian")?;
            forbid(&raw.renormalize, "renormalize", "kernel.gaussian")?;
            Ok(KernelSpec::Gaussian {
                sigma: require(raw.sigma, "sigma", "kernel.gaussian")?,
            })
        }
        "file" => {
            forbid(&raw.sigma, "sigma", "kernel.file")?;
            Ok(KernelSpec::File {
                path: require(raw.path, "path", "kernel.file")?,
                renormalize: raw.renormalize.unwrap_or(false),
            })
        }
        other => Err(Error::Config(format!(
            "kernel.kind must be \"gaussian\" or \"file\", got \"{other}\""
        ))),
    }
}

fn map_initial(raw: Option<InitialRaw>) -> Result<InitialCondition> {
    let Some(raw) = raw else {
        return Ok(InitialCondition::CosineProduct { amplitude: 0.05, kx: 1, ky: 1 });
    };
    match raw.kind.as_str() {
        "cosine_product" | "single_mode" => {
            forbid(&raw.seed, "seed", "initial")?;
            forbid(&raw.path, "path", "initial")?;
            let amplitude = require(raw.amplitude, "amplitude", "initial")?;
            let kx = require(raw.kx, "kx", "initial")?;
            let ky = require(raw.ky, "ky", "initial")?;
            Ok(if raw.kind == "cosine_product" {
                InitialCondition::CosineProduct { amplitude, kx, ky }
            } else {
                InitialCondition::SingleMode { amplitude, kx, ky }
            })
        }
        "random_uniform" => {
            forbid(&raw.kx, "kx", "initial.random_uniform")?;
            forbid(&raw.ky, "ky", "initial.random_uniform")?;
            forbid(&raw.path, "path", "initial.random_uniform")?;
            Ok(InitialCondition::RandomUniform {
                amplitude: require(raw.amplitude, "amplitude", "initial.random_uniform")?,
                seed: raw.seed.unwrap_or(0),
            })
        }
        "from_file" => {
            forbid(&raw.amplitude, "amplitude", "initial.from_file")?;
            forbid(&raw.kx, "kx", "initial.from_file")?;
            forbid(&raw.ky, "ky", "initial.from_file")?;
            forbid(&raw.seed, "seed", "initial.from_file")?;
            Ok(InitialCondition::FromFile {
                path: require(raw.path, "path", "initial.from_file")?,
            })
        }
        other => Err(Error::Config(format!(
            "initial.kind must be one of cosine_product, single_mode, random_uniform, from_file; got \"{other}\""
        ))),
    }
}

fn map_stabilizer(raw: Option<StabilizerRaw>) -> Result<StabilizerPolicy> {
    let Some(raw) = raw else {
        return Ok(StabilizerPolicy::Corollary { m0_margin: 1.0 });
    };
    match raw.mode.as_str() {
        "fixed" => {
            forbid(&raw.m0_margin, "m0_margin", "stabilizer.fixed")?;
            Ok(StabilizerPolicy::Fixed {
                a: require(raw.a, "a", "stabilizer.fixed")?,
            })
        }
        "theorem" | "corollary" => {
            forbid(&raw.a, "a", "stabilizer")?;
            let m0_margin = raw.m0_margin.unwrap_or(1.0);
            Ok(if raw.mode == "theorem" {
                StabilizerPolicy::Theorem { m0_margin }
            } else {
                StabilizerPolicy::Corollary { m0_margin }
            })
        }
        other => Err(Error::Config(format!(
            "stabilizer.mode must be fixed, theorem, or corollary; got \"{other}\""
        ))),
    }
}

/// Study sections of the config, carried through to `converge`.
#[derive(Debug, Clone, Default)]
pub struct StudyPlans {
    pub temporal: Option<TemporalPlan>,
    pub spatial: Option<SpatialPlan>,
}

#[derive(Debug, Clone)]
pub struct TemporalPlan {
    pub dts: Vec<f64>,
    pub t_end: f64,
}

#[derive(Debug, Clone)]
pub struct SpatialPlan {
    pub grids: Vec<(usize, usize)>,
    pub dt: f64,
    pub t_end: f64,
}

/// A fully validated configuration: grid and kernel built, model data
/// checked, solver parameters vetted.
#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub grid: PeriodicGrid,
    pub kernel_spec: KernelSpec,
    pub kernel: Kernel,
    pub params: ModelParams,
    pub epsilon: f64,
    pub solver: SolverConfig,
    pub initial: InitialCondition,
    pub study: StudyPlans,
    /// SHA-256 of the raw config bytes; identifies the document in reports.
    pub config_hash: String,
}

pub fn parse_config(bytes: &[u8]) -> Result<ParsedConfig> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Config(format!("config is not UTF-8: {e}")))?;
    let raw: ConfigRaw = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;

    let grid = PeriodicGrid::new(
        raw.grid.half_width_x,
        raw.grid.half_width_y,
        raw.grid.nx,
        raw.grid.ny,
    )?;
    let kernel_spec = map_kernel(raw.kernel)?;
    let kernel = kernel_spec.build(grid)?;
    let params = ModelParams::new(raw.epsilon, &kernel)?;
    let initial = map_initial(raw.initial)?;
    initial.check_representable(grid)?;
    let solver = SolverConfig {
        dt: raw.dt,
        t_end: raw.t_end,
        stabilizer: map_stabilizer(raw.stabilizer)?,
        snapshot_every: raw.snapshot_every,
        diagnostics_every: raw.diagnostics_every.unwrap_or(1),
    };
    solver.n_steps()?;
    let study = match raw.study {
        None => StudyPlans::default(),
        Some(s) => StudyPlans {
            temporal: s.temporal.map(|t| TemporalPlan { dts: t.dts, t_end: t.t_end }),
            spatial: s.spatial.map(|s| SpatialPlan {
                grids: s.grids,
                dt: s.dt,
                t_end: s.t_end,
            }),
        },
    };

    use sha2::Digest;
    let digest = sha2::Sha256::digest(bytes);
    let config_hash = digest.iter().fold(String::with_capacity(64), |mut s, b| {
        use std::fmt::Write;
        let _ = write!(s, "{b:02x}");
        s
    });

    Ok(ParsedConfig {
        grid,
        kernel_spec,
        kernel,
        params,
        epsilon: raw.epsilon,
        solver,
        initial,
        study,
        config_hash,
    })
}

/// Replace the seed of a random initial condition with the NCH_SEED value,
/// when both are present. Other generators ignore the variable.
pub fn apply_seed_override(initial: &mut InitialCondition, env: Option<&str>) -> Result<bool> {
    let Some(text) = env else { return Ok(false) };
    let seed: u64 = text.trim().parse().map_err(|_| {
        Error::Config(format!("NCH_SEED must be an unsigned integer, got {text:?}"))
    })?;
    if let InitialCondition::RandomUniform { seed: slot, .. } = initial {
        *slot = seed;
        return Ok(true);
    }
    Ok(false)
}

fn load_config(config_path: &Path) -> Result<ParsedConfig> {
    let bytes = std::fs::read(config_path)?;
    let mut parsed = parse_config(&bytes)?;
    apply_seed_override(&mut parsed.initial, std::env::var("NCH_SEED").ok().as_deref())?;
    Ok(parsed)
}

#[derive(Serialize)]
struct SnapshotEntry {
    step: usize,
    time: f64,
    file: String,
}

#[derive(Serialize)]
struct SnapshotIndex {
    config_hash: String,
    snapshots: Vec<SnapshotEntry>,
}

/// `run`: integrate the configured problem, streaming diagnostics.csv and,
/// at the snapshot cadence, `field_<step>.dat` files plus an index.json
/// mapping steps to times.
pub fn cmd_run(config_path: &Path, out_dir: &Path) -> Result<()> {
    let parsed = load_config(config_path)?;
    std::fs::create_dir_all(out_dir)?;
    let u0 = parsed.initial.sample(parsed.grid)?;
    let n_steps = parsed.solver.n_steps()?;

    let csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("diagnostics.csv"))?);
    let mut sink = CsvSink::new(csv)?;
    let mut index = Vec::new();
    let snap_every = parsed.solver.snapshot_every;
    let final_state = {
        let mut hook = |n: usize, t: f64, u: &GridFunction| {
            if let Some(every) = snap_every {
                if n % every == 0 {
                    let file = format!("field_{n:08}.dat");
                    io::write_field(&out_dir.join(&file), u, t)?;
                    index.push(SnapshotEntry { step: n, time: t, file });
                }
            }
            Ok(())
        };
        stepper::run(
            &u0,
            &parsed.kernel,
            &parsed.params,
            &parsed.solver,
            Some(&mut sink),
            Some(&mut hook),
        )?
    };
    sink.finish()?;
    if snap_every.is_some() {
        let doc = SnapshotIndex {
            config_hash: parsed.config_hash.clone(),
            snapshots: index,
        };
        let json =
            serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(out_dir.join("index.json"), json + "\n")?;
    }
    println!(
        "completed {n_steps} steps; final mass {:.6e}, sup-norm {:.6e}",
        grid::mean(&final_state),
        grid::norm_linf(&final_state)
    );
    Ok(())
}

/// `converge`: run the configured refinement study for one axis and write
/// report.json and report.csv.
pub fn cmd_converge(
    config_path: &Path,
    axis: StudyAxis,
    out_dir: &Path,
    jobs: usize,
) -> Result<()> {
    let parsed = load_config(config_path)?;
    std::fs::create_dir_all(out_dir)?;
    let mut study = match axis {
        StudyAxis::Time => {
            let plan = parsed.study.temporal.as_ref().ok_or_else(|| {
                Error::Config("config has no study.temporal section".into())
            })?;
            harness::temporal_study(
                &parsed.initial,
                &parsed.kernel,
                &parsed.params,
                &parsed.solver.stabilizer,
                &harness::TemporalStudyConfig {
                    dts: plan.dts.clone(),
                    t_end: plan.t_end,
                    jobs,
                },
            )?
        }
        StudyAxis::Space => {
            let plan = parsed.study.spatial.as_ref().ok_or_else(|| {
                Error::Config("config has no study.spatial section".into())
            })?;
            harness::spatial_study(
                &parsed.initial,
                &parsed.kernel_spec,
                &parsed.solver.stabilizer,
                &harness::SpatialStudyConfig {
                    half_width_x: parsed.grid.half_width_x(),
                    half_width_y: parsed.grid.half_width_y(),
                    levels: plan.grids.clone(),
                    dt: plan.dt,
                    t_end: plan.t_end,
                    epsilon: parsed.epsilon,
                    jobs,
                },
            )?
        }
    };
    study.config_hash = parsed.config_hash.clone();

    std::fs::write(out_dir.join("report.json"), study.to_json()? + "\n")?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("report.csv"))?);
    study.write_csv(&mut csv)?;
    csv.flush()?;

    let fmt = |o: Option<f64>| o.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    for (i, pair) in study.orders.iter().enumerate() {
        println!(
            "levels {i}->{}: order_hm1 {} order_l2l2 {}",
            i + 1,
            fmt(pair.hm1),
            fmt(pair.l2l2)
        );
    }
    println!("report written to {}", out_dir.display());
    Ok(())
}

/// `check`: run the invariant suite, one pass/fail line per property.
pub fn cmd_check(nx: usize, ny: usize) -> Result<()> {
    let started = std::time::Instant::now();
    let results = check_suite(nx, ny)?;
    let mut failed = 0usize;
    for (name, outcome) in &results {
        match outcome {
            Ok(()) => println!("PASS {name}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e}");
            }
        }
    }
    println!(
        "{} of {} properties passed in {:.2}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(Error::InvalidParameter(format!("{failed} properties failed")));
    }
    Ok(())
}

fn ensure(cond: bool, detail: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(detail()))
    }
}

fn check_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn rand_field(grid: PeriodicGrid, rng: &mut rand_chacha::ChaCha8Rng) -> GridFunction {
    use rand::Rng;
    GridFunction::new(grid, (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("finite samples")
}

fn cyclic_shift(v: &GridFunction, sx: usize, sy: usize) -> GridFunction {
    let g = v.grid();
    let mut out = GridFunction::zeros(g);
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            out.values_mut()[g.idx(i, j)] = v.value((i + sx) % g.nx(), (j + sy) % g.ny());
        }
    }
    out
}

/// Every module-level invariant, exercised on a small grid. Returns one
/// named outcome per property.
pub fn check_suite(nx: usize, ny: usize) -> Result<Vec<(&'static str, Result<()>)>> {
    use std::f64::consts::PI;
    if nx < 8 || ny < 8 {
        return Err(Error::InvalidParameter(format!(
            "check needs at least an 8x8 grid, got {nx}x{ny}"
        )));
    }
    let grid = PeriodicGrid::new(PI, PI, nx, ny)?;
    let sigma = 0.5f64.min(grid.half_width_x().min(grid.half_width_y()) / 4.0);
    let kernel = Kernel::gaussian(grid, sigma)?;
    let params = ModelParams::new(0.5, &kernel)?;

    let mut props: Vec<(&'static str, Result<()>)> = Vec::new();

    props.push(("grid_inner_product_bilinear", {
        let mut rng = check_rng(1);
        (0..5).try_for_each(|_| {
            let (f, g, h) = (
                rand_field(grid, &mut rng),
                rand_field(grid, &mut rng),
                rand_field(grid, &mut rng),
            );
            let a = 1.7;
            let lhs = grid::inner_product(&f.scaled(a).add(&g)?, &h)?;
            let rhs = a * grid::inner_product(&f, &h)? + grid::inner_product(&g, &h)?;
            ensure((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), || {
                format!("bilinearity off by {}", (lhs - rhs).abs())
            })
        })
    }));

    props.push(("grid_cauchy_schwarz", {
        let mut rng = check_rng(2);
        (0..5).try_for_each(|_| {
            let (f, g) = (rand_field(grid, &mut rng), rand_field(grid, &mut rng));
            let ip = grid::inner_product(&f, &g)?.abs();
            let bound = grid::norm_l2(&f) * grid::norm_l2(&g) + 1e-12;
            ensure(ip <= bound, || format!("|<f,g>| = {ip} exceeds {bound}"))
        })
    }));

    props.push(("grid_norm_squares_inner_product", {
        let mut rng = check_rng(3);
        let f = rand_field(grid, &mut rng);
        let ip = grid::inner_product(&f, &f).expect("same grid");
        let n = grid::norm_l2(&f);
        ensure((n * n - ip).abs() <= 1e-15 * ip, || {
            format!("norm^2 deviates from <f,f> by {}", (n * n - ip).abs())
        })
    }));

    props.push(("grid_zero_mean_projection", {
        let mut rng = check_rng(4);
        let f = rand_field(grid, &mut rng).mapped(|v| v + 0.37);
        let m = grid::mean(&grid::zero_mean(&f));
        ensure(m.abs() <= 1e-13, || format!("projected mean {m}"))
    }));

    props.push(("spectral_summation_by_parts", {
        let mut rng = check_rng(5);
        (0..5).try_for_each(|_| {
            let (f, g) = (rand_field(grid, &mut rng), rand_field(grid, &mut rng));
            let s1 = grid::inner_product(&f, &crate::spectral::laplacian(&g))?;
            let s2 = -crate::spectral::grad_inner_product(&f, &g)?;
            let s3 = grid::inner_product(&crate::spectral::laplacian(&f), &g)?;
            let scale = grid::norm_l2(&f) * crate::spectral::grad_norm_l2(&g) + 1e-300;
            ensure(
                (s1 - s2).abs() <= 1e-11 * scale && (s1 - s3).abs() <= 1e-11 * scale,
                || format!("parts identities off by {} and {}", (s1 - s2).abs(), (s1 - s3).abs()),
            )
        })
    }));

    props.push(("spectral_inverse_laplacian_self_adjoint_pd", {
        let mut rng = check_rng(6);
        (0..5).try_for_each(|_| {
            let f = grid::zero_mean(&rand_field(grid, &mut rng));
            let g = grid::zero_mean(&rand_field(grid, &mut rng));
            let wf = crate::spectral::inverse_laplacian(&f)?;
            let wg = crate::spectral::inverse_laplacian(&g)?;
            let lhs = grid::inner_product(&f, &wg)?;
            let rhs = grid::inner_product(&wf, &g)?;
            let quad = grid::inner_product(&f, &wf)?;
            ensure(
                (lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()) && quad > 0.0,
                || format!("self-adjointness off by {}, quad form {quad}", (lhs - rhs).abs()),
            )
        })
    }));

    props.push(("spectral_laplacian_inverts_inverse", {
        let mut rng = check_rng(7);
        let f = grid::zero_mean(&rand_field(grid, &mut rng));
        (|| {
            let w = crate::spectral::inverse_laplacian(&f)?;
            let back = crate::spectral::laplacian(&w).scaled(-1.0);
            let diff = grid::norm_linf(&back.sub(&f)?);
            ensure(diff <= 1e-11 * grid::norm_linf(&f), || {
                format!("round trip off by {diff}")
            })
        })()
    }));

    props.push(("spectral_exactness_on_band_limited_data", {
        let f = GridFunction::from_fn(grid, |x, y| (2.0 * x).cos() * (3.0 * y).sin())?;
        let gx_true = GridFunction::from_fn(grid, |x, y| -2.0 * (2.0 * x).sin() * (3.0 * y).sin())?;
        let gy_true = GridFunction::from_fn(grid, |x, y| 3.0 * (2.0 * x).cos() * (3.0 * y).cos())?;
        let lap_true = f.scaled(-13.0);
        let (gx, gy) = crate::spectral::gradient(&f);
        let lap = crate::spectral::laplacian(&f);
        let e = grid::norm_linf(&gx.sub(&gx_true)?)
            .max(grid::norm_linf(&gy.sub(&gy_true)?))
            .max(grid::norm_linf(&lap.sub(&lap_true)?));
        ensure(e <= 1e-12 * 13.0, || format!("analytic derivative mismatch {e}"))
    }));

    props.push(("spectral_fft_matches_direct_dft", {
        let mut rng = check_rng(8);
        let f = rand_field(grid, &mut rng);
        let fast = crate::spectral::forward(&f);
        let slow = crate::spectral::reference::forward_direct(&f);
        let scale = fast.coeffs().iter().fold(0.0f64, |m, c| m.max(c.norm()));
        let diff = fast
            .coeffs()
            .iter()
            .zip(slow.coeffs())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        ensure(diff <= 1e-11 * scale, || format!("transform routes differ by {diff}"))
    }));

    props.push(("kernel_nonlocal_self_adjoint", {
        let mut rng = check_rng(9);
        (0..5).try_for_each(|_| {
            let (f, g) = (rand_field(grid, &mut rng), rand_field(grid, &mut rng));
            let lhs = grid::inner_product(&crate::kernel::nonlocal_op(&kernel, &f)?, &g)?;
            let rhs = grid::inner_product(&f, &crate::kernel::nonlocal_op(&kernel, &g)?)?;
            ensure((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()), || {
                format!("adjointness off by {}", (lhs - rhs).abs())
            })
        })
    }));

    props.push(("kernel_nonlocal_positive_semidefinite", {
        let mut rng = check_rng(10);
        (0..5).try_for_each(|_| {
            let f = rand_field(grid, &mut rng);
            let q = grid::inner_product(&crate::kernel::nonlocal_op(&kernel, &f)?, &f)?;
            let n = grid::norm_l2(&f);
            ensure(q >= -1e-11 * n * n, || format!("quadratic form {q}"))
        })
    }));

    props.push(("kernel_nonlocal_commutes_with_laplacian", {
        let mut rng = check_rng(11);
        let f = rand_field(grid, &mut rng);
        (|| {
            let a = crate::kernel::nonlocal_op(&kernel, &crate::spectral::laplacian(&f))?;
            let b = crate::spectral::laplacian(&crate::kernel::nonlocal_op(&kernel, &f)?);
            let max_lambda = crate::spectral::SymbolTable::new(grid)
                .laplace_symbols()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            let diff = grid::norm_linf(&a.sub(&b)?);
            ensure(diff <= 1e-9 * grid::norm_linf(&f) * max_lambda, || {
                format!("commutator {diff}")
            })
        })()
    }));

    props.push(("kernel_convolution_fft_matches_direct_sum", {
        let mut rng = check_rng(12);
        (0..3).try_for_each(|_| {
            let f = rand_field(grid, &mut rng);
            let fast = crate::kernel::convolve(&kernel, &f)?;
            let slow = crate::kernel::convolve_direct(&kernel, &f)?;
            let diff = grid::norm_linf(&fast.sub(&slow)?);
            ensure(diff <= 1e-11 * (1.0 + grid::norm_linf(&fast)), || {
                format!("convolution routes differ by {diff}")
            })
        })
    }));

    props.push(("kernel_evenness_makes_transform_real", {
        let hat = crate::spectral::reference::forward_direct_kernel(grid, kernel.values());
        let scale = hat.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        let im = hat.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
        ensure(im <= 1e-11 * scale, || format!("imaginary residue {im}"))
    }));

    props.push(("energy_terms_nonnegative", {
        let mut rng = check_rng(13);
        (0..3).try_for_each(|_| {
            let v = rand_field(grid, &mut rng).scaled(1.2);
            let e = crate::energy::energy(&v, &kernel, &params)?;
            let n = grid::norm_l2(&v);
            ensure(e.bulk >= 0.0 && e.nonlocal >= -1e-11 * n * n, || {
                format!("bulk {} nonlocal {}", e.bulk, e.nonlocal)
            })
        })
    }));

    props.push(("energy_translation_invariant", {
        let mut rng = check_rng(14);
        let v = rand_field(grid, &mut rng);
        (|| {
            let e0 = crate::energy::energy(&v, &kernel, &params)?.total;
            let e1 = crate::energy::energy(&cyclic_shift(&v, 3, 5), &kernel, &params)?.total;
            ensure((e0 - e1).abs() <= 1e-11 * (1.0 + e0.abs()), || {
                format!("shift changed energy by {}", (e0 - e1).abs())
            })
        })()
    }));

    props.push(("energy_even_in_state", {
        let mut rng = check_rng(15);
        let v = rand_field(grid, &mut rng);
        (|| {
            let e0 = crate::energy::energy(&v, &kernel, &params)?.total;
            let e1 = crate::energy::energy(&v.scaled(-1.0), &kernel, &params)?.total;
            ensure((e0 - e1).abs() <= 1e-12 * (1.0 + e0.abs()), || {
                format!("sign flip changed energy by {}", (e0 - e1).abs())
            })
        })()
    }));

    let solver_of = |dt: f64, t_end: f64, stabilizer: StabilizerPolicy| SolverConfig {
        dt,
        t_end,
        stabilizer,
        snapshot_every: None,
        diagnostics_every: 1,
    };

    props.push(("stepper_mass_conserved_per_step", {
        let mut rng = check_rng(16);
        let cfg = solver_of(1e-3, 1e-3, StabilizerPolicy::Corollary { m0_margin: 1.0 });
        (0..3).try_for_each(|_| {
            let u = rand_field(grid, &mut rng).mapped(|v| 0.5 * v + 0.2);
            let u1 = stepper::step(&u, &kernel, &params, &cfg)?;
            let d = (grid::mean(&u1) - grid::mean(&u)).abs();
            ensure(d <= 1e-13 * (1.0 + grid::mean(&u).abs()), || {
                format!("mass drifted by {d}")
            })
        })
    }));

    props.push(("stepper_uniform_phases_fixed", {
        let cfg = solver_of(1e-2, 1e-2, StabilizerPolicy::Fixed { a: 18.0 });
        [-1.0, 0.0, 1.0].iter().try_for_each(|&c| {
            let mut u = GridFunction::constant(grid, c)?;
            for _ in 0..20 {
                u = stepper::step(&u, &kernel, &params, &cfg)?;
            }
            let drift = grid::norm_linf(&u.mapped(|v| v - c));
            ensure(drift <= 1e-13, || format!("phase {c} drifted {drift}"))
        })
    }));

    props.push(("stepper_implicit_solve_linear", {
        let mut rng = check_rng(17);
        let (f, g) = (rand_field(grid, &mut rng), rand_field(grid, &mut rng));
        (|| {
            let a = 1.9;
            let lhs = stepper::implicit_solve(&f.scaled(a).add(&g)?, &kernel, &params, 1e-2, 3.0)?;
            let rhs = stepper::implicit_solve(&f, &kernel, &params, 1e-2, 3.0)?
                .scaled(a)
                .add(&stepper::implicit_solve(&g, &kernel, &params, 1e-2, 3.0)?)?;
            let diff = grid::norm_linf(&lhs.sub(&rhs)?);
            ensure(diff <= 1e-11 * (1.0 + grid::norm_linf(&lhs)), || {
                format!("superposition off by {diff}")
            })
        })()
    }));

    props.push(("stepper_dissipates_under_certificate", {
        let u0 = GridFunction::from_fn(grid, |x, y| 0.05 * x.cos() * y.cos())?;
        let cfg = solver_of(1e-3, 0.05, StabilizerPolicy::Corollary { m0_margin: 1.0 });
        let mut sink = stepper::MemorySink::default();
        (|| {
            stepper::run(&u0, &kernel, &params, &cfg, Some(&mut sink), None)?;
            sink.rows.iter().try_for_each(|row| {
                ensure(
                    row.cond_a0_satisfied
                        && row.energy_delta <= 1e-12 * (1.0 + row.energy.total.abs()),
                    || {
                        format!(
                            "step {}: certificate {} delta {}",
                            row.step, row.cond_a0_satisfied, row.energy_delta
                        )
                    },
                )
            })
        })()
    }));

    props.push(("stepper_matches_dense_solve", {
        let g8 = PeriodicGrid::new(std::f64::consts::PI, std::f64::consts::PI, 8, 8)?;
        let k8 = Kernel::gaussian(g8, 0.5)?;
        let p8 = ModelParams::new(0.5, &k8)?;
        let mut rng = check_rng(18);
        [0.0, 1.0].iter().try_for_each(|&a| {
            let u = rand_field(g8, &mut rng).scaled(0.8);
            let cfg = solver_of(1e-2, 1e-2, StabilizerPolicy::Fixed { a });
            let fast = stepper::step(&u, &k8, &p8, &cfg)?;
            let dense = stepper::reference::dense_step(&u, &k8, &p8, 1e-2, a)?;
            let diff = grid::norm_linf(&fast.sub(&dense)?);
            ensure(diff <= 1e-10 * (1.0 + grid::norm_linf(&fast)), || {
                format!("dense route differs by {diff} at A = {a}")
            })
        })
    }));

    props.push(("harness_error_hm1_oracle", {
        let b = GridFunction::from_fn(grid, |x, y| 0.3 * (2.0 * x).cos() * y.cos())?;
        (|| {
            let a = b.add(&GridFunction::from_fn(grid, |x, _| x.sin())?)?;
            let e = harness::error_hm1(&a, &b)?;
            let want = std::f64::consts::PI * 2.0f64.sqrt();
            ensure(
                (e - want).abs() <= 1e-12 * want && harness::error_hm1(&b, &b)? == 0.0,
                || format!("got {e}, want {want}"),
            )
        })()
    }));

    props.push(("harness_temporal_study_invariants", {
        let g16 = PeriodicGrid::new(std::f64::consts::PI, std::f64::consts::PI, 16, 16)?;
        let k16 = Kernel::gaussian(g16, 0.5)?;
        let p16 = ModelParams::new(0.5, &k16)?;
        let ic = InitialCondition::CosineProduct { amplitude: 0.05, kx: 1, ky: 1 };
        let pol = StabilizerPolicy::Corollary { m0_margin: 1.0 };
        (|| {
            let study = harness::temporal_study(
                &ic,
                &k16,
                &p16,
                &pol,
                &harness::TemporalStudyConfig { dts: vec![8e-3, 4e-3], t_end: 0.032, jobs: 1 },
            )?;
            ensure(
                study.levels[1].err_hm1 <= 1.05 * study.levels[0].err_hm1,
                || "errors failed to decrease under dt refinement".into(),
            )?;
            // Brute-force l2l2 recomputation from captured snapshots.
            let u0 = ic.sample(g16)?;
            let a_star =
                stepper::resolve_stabilizer(&pol, grid::norm_linf(&u0), &p16)?;
            let frozen = StabilizerPolicy::Fixed { a: a_star };
            let capture = |dt: f64, keep: usize| -> Result<Vec<GridFunction>> {
                let cfg = solver_of(dt, 0.032, frozen);
                let mut states = Vec::new();
                let mut hook = |n: usize, _t: f64, u: &GridFunction| {
                    if n % keep == 0 {
                        states.push(u.clone());
                    }
                    Ok(())
                };
                stepper::run(&u0, &k16, &p16, &cfg, None, Some(&mut hook))?;
                Ok(states)
            };
            let level = capture(8e-3, 1)?;
            let refs = capture(4e-3 / 32.0, 64)?;
            let mut squares = Vec::new();
            for n in 1..level.len() {
                squares.push(grid::norm_l2(&level[n].sub(&refs[n])?).powi(2));
            }
            let brute = (p16.gamma0() * 8e-3 * crate::sum::sum(squares)).sqrt();
            let got = study.levels[0].err_l2l2;
            ensure((got - brute).abs() <= 1e-12 * brute, || {
                format!("accumulator {got} vs brute force {brute}")
            })
        })()
    }));

    props.push(("io_field_round_trip", {
        let mut rng = check_rng(19);
        let f = rand_field(grid, &mut rng);
        let path = std::env::temp_dir().join(format!("nch_check_{}.dat", std::process::id()));
        let outcome = (|| {
            io::write_field(&path, &f, 0.375)?;
            let (back, t) = io::read_field(&path)?;
            ensure(t == 0.375 && back.values() == f.values(), || {
                "snapshot round trip not bit-identical".into()
            })
        })();
        let _ = std::fs::remove_file(&path);
        outcome
    }));

    props.push(("cli_seeded_synthesis_and_diagnostics_deterministic", {
        let ic = InitialCondition::RandomUniform { amplitude: 0.2, seed: 11 };
        (|| {
            let a = ic.sample(grid)?;
            let b = ic.sample(grid)?;
            ensure(a.values() == b.values(), || "seeded synthesis diverged".into())?;
            let run_csv = || -> Result<Vec<u8>> {
                let mut buf = Vec::new();
                let mut sink = CsvSink::new(&mut buf)?;
                let cfg = solver_of(1e-3, 5e-3, StabilizerPolicy::Corollary { m0_margin: 1.0 });
                stepper::run(&a, &kernel, &params, &cfg, Some(&mut sink), None)?;
                sink.finish()?;
                Ok(buf)
            };
            ensure(run_csv()? == run_csv()?, || "diagnostics CSV not reproducible".into())
        })()
    }));

    Ok(props)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> serde_json::Value {
        serde_json::json!({
            "grid": {
                "half_width_x": std::f64::consts::PI,
                "half_width_y": std::f64::consts::PI,
                "nx": 16,
                "ny": 16
            },
            "kernel": {"kind": "gaussian", "sigma": 0.5},
            "epsilon": 0.5,
            "dt": 1e-3,
            "t_end": 1e-2
        })
    }

    fn parse_value(v: &serde_json::Value) -> Result<ParsedConfig> {
        parse_config(serde_json::to_string(v).unwrap().as_bytes())
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_value(&base_config()).unwrap();
        assert_eq!(
            cfg.initial,
            InitialCondition::CosineProduct { amplitude: 0.05, kx: 1, ky: 1 }
        );
        assert_eq!(cfg.solver.stabilizer, StabilizerPolicy::Corollary { m0_margin: 1.0 });
        assert_eq!(cfg.solver.diagnostics_every, 1);
        assert_eq!(cfg.solver.snapshot_every, None);
        assert!(cfg.study.temporal.is_none() && cfg.study.spatial.is_none());
        assert_eq!(cfg.config_hash.len(), 64);
        assert!(cfg.config_hash.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn unknown_keys_rejected_everywhere() {
        let spots: [&[&str]; 4] = [&[], &["kernel"], &["initial"], &["stabilizer"]];
        for path in spots {
            let mut v = base_config();
            v["initial"] = serde_json::json!({"kind": "cosine_product", "amplitude": 0.1, "kx": 1, "ky": 1});
            v["stabilizer"] = serde_json::json!({"mode": "corollary"});
            let mut slot = &mut v;
            for key in path {
                slot = &mut slot[*key];
            }
            slot["surprise"] = serde_json::json!(1);
            let err = parse_value(&v).unwrap_err();
            assert!(
                format!("{err}").contains("unknown field"),
                "at {path:?}: {err}"
            );
        }
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = parse_config(b"{\n  \"grid\": oops\n}").unwrap_err();
        assert!(format!("{err}").contains("line"), "{err}");
    }

    #[test]
    fn kind_specific_fields_enforced() {
        let mut v = base_config();
        v["kernel"] = serde_json::json!({"kind": "gaussian"});
        let err = parse_value(&v).unwrap_err();
        assert!(format!("{err}").contains("missing field \"sigma\""), "{err}");

        let mut v = base_config();
        v["kernel"] = serde_json::json!({"kind": "file", "path": "k.dat", "sigma": 0.5});
        let err = parse_value(&v).unwrap_err();
        assert!(format!("{err}").contains("does not apply"), "{err}");

        let mut v = base_config();
        v["kernel"]["kind"] = serde_json::json!("box");
        let err = parse_value(&v).unwrap_err();
        assert!(format!("{err}").contains("gaussian"), "{err}");

        let mut v = base_config();
        v["stabilizer"] = serde_json::json!({"mode": "fixed"});
        let err = parse_value(&v).unwrap_err();
        assert!(format!("{err}").contains("missing field \"a\""), "{err}");
    }

    #[test]
    fn too_wide_kernel_reports_gamma0() {
        let mut v = base_config();
        v["epsilon"] = serde_json::json!(1e-3);
        let err = parse_value(&v).unwrap_err();
        assert!(
            format!("{err}").contains("kernel too wide for epsilon: gamma0="),
            "{err}"
        );
    }

    #[test]
    fn structural_validation_surfaces() {
        let mut v = base_config();
        v["grid"]["nx"] = serde_json::json!(15);
        assert!(parse_value(&v).is_err());

        let mut v = base_config();
        v["initial"] =
            serde_json::json!({"kind": "single_mode", "amplitude": 0.1, "kx": 9, "ky": 0});
        let err = parse_value(&v).unwrap_err();
        assert!(format!("{err}").contains("exceeds the grid's mode set"), "{err}");

        let mut v = base_config();
        v["dt"] = serde_json::json!(3e-3); // t_end / dt not an integer
        assert!(parse_value(&v).is_err());
    }

    #[test]
    fn seed_override_only_touches_random_data() {
        let mut ic = InitialCondition::RandomUniform { amplitude: 0.1, seed: 7 };
        assert!(apply_seed_override(&mut ic, Some("42")).unwrap());
        assert_eq!(ic, InitialCondition::RandomUniform { amplitude: 0.1, seed: 42 });
        assert!(!apply_seed_override(&mut ic, None).unwrap());
        assert_eq!(ic, InitialCondition::RandomUniform { amplitude: 0.1, seed: 42 });

        let mut cosine = InitialCondition::CosineProduct { amplitude: 0.1, kx: 1, ky: 1 };
        assert!(!apply_seed_override(&mut cosine, Some("42")).unwrap());

        let err = apply_seed_override(&mut ic, Some("not-a-number")).unwrap_err();
        assert!(format!("{err}").contains("NCH_SEED"), "{err}");
    }

    #[test]
    fn config_hash_tracks_exact_bytes() {
        let text = serde_json::to_string(&base_config()).unwrap();
        let a = parse_config(text.as_bytes()).unwrap().config_hash;
        let b = parse_config(text.as_bytes()).unwrap().config_hash;
        let c = parse_config(format!("{text}\n").as_bytes()).unwrap().config_hash;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn study_sections_carried_through() {
        let mut v = base_config();
        v["study"] = serde_json::json!({
            "temporal": {"dts": [4e-3, 2e-3], "t_end": 0.04},
            "spatial": {"grids": [[16, 16], [32, 32]], "dt": 1e-4, "t_end": 1e-3}
        });
        let cfg = parse_value(&v).unwrap();
        let t = cfg.study.temporal.unwrap();
        assert_eq!(t.dts, vec![4e-3, 2e-3]);
        assert_eq!(t.t_end, 0.04);
        let s = cfg.study.spatial.unwrap();
        assert_eq!(s.grids, vec![(16, 16), (32, 32)]);
    }

    #[test]
    fn check_suite_passes_on_smallest_grid() {
        let results = check_suite(8, 8).unwrap();
        assert!(results.len() >= 20);
        for (name, outcome) in &results {
            assert!(outcome.is_ok(), "{name}: {:?}", outcome.as_ref().err());
        }
        assert!(check_suite(4, 8).is_err());
    }
}
