use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use reachguard::dynamics::{ACCEL_CAP, STEER_RATE_CAP};
use reachguard::prediction::ControlBoundsEndpoints;
use reachguard::reachability::io::{occupancy_to_csv, read_value_function, slice_csv, write_value_function};
use reachguard::reachability::{
    frt_set, precompute_to_dir, project_positions, solve_frt, Axis, FrtFamily, FrtQueryKey, GridSpec,
    InitialSetMargins, Lattice, SolverSettings, TubeCache, ValueFunction,
};
use reachguard::sim::{self, Scenario};
use reachguard::{Error, ErrorKind, Result};

/// Directory for solved tubes shared between invocations.
const CACHE_ENV: &str = "REACHGUARD_CACHE_DIR";

#[derive(Parser)]
#[command(
    name = "reachguard",
    version,
    about = "Forward reachable tubes and confidence-aware braking for a human-driven car"
)]
struct Cli {
    /// Cap on solver worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for randomized steps. Every command is currently deterministic
    /// without it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one tube and write it with its position footprint.
    Solve(SolveArgs),
    /// Run a scenario closed-loop.
    Simulate(SimulateArgs),
    /// Solve every point of a lattice into a directory (resumable).
    Precompute(PrecomputeArgs),
    /// Re-export a value file as CSV and SVG.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GridPreset {
    /// 111 x 101 x 61 x 45 nodes at 0.5 m and 0.5 m/s.
    Default,
    /// 56 x 51 x 31 x 23 nodes at 1 m and 1 m/s.
    Coarse,
}

impl GridPreset {
    fn grid(self) -> GridSpec {
        match self {
            GridPreset::Default => GridSpec::default(),
            GridPreset::Coarse => GridSpec {
                x: Axis::new(-10.0, 45.0, 56),
                y: Axis::new(-25.0, 25.0, 51),
                theta: Axis::heading(31),
                v: Axis::new(-2.0, 20.0, 23),
            },
        }
    }
}

#[derive(Args)]
struct GridArgs {
    /// Built-in grid. Initial-set margins are widened to suit it when needed.
    #[arg(long, value_enum, conflicts_with = "grid_file")]
    grid: Option<GridPreset>,
    /// Grid as JSON (`{"x": {"lo", "hi", "n", "periodic"}, ...}`).
    #[arg(long)]
    grid_file: Option<PathBuf>,
}

impl GridArgs {
    fn resolve(&self) -> Result<Option<GridSpec>> {
        let grid = match (&self.grid_file, self.grid) {
            (Some(path), _) => Some(read_json::<GridSpec>(path)?),
            (None, Some(preset)) => Some(preset.grid()),
            (None, None) => None,
        };
        if let Some(g) = &grid {
            g.validate()?;
        }
        Ok(grid)
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Time horizon, s.
    #[arg(long, default_value_t = 3.0)]
    horizon: f64,
    /// Initial-set half-widths: position (m), speed (m/s), heading (rad).
    /// Defaults to 1.0 0.75 0.16, widened to 1.5 grid spacings on coarser grids.
    #[arg(long, num_args = 3, value_names = ["POS", "SPEED", "HEADING"])]
    margins: Option<Vec<f64>>,
    /// Fixed solver step, s.
    #[arg(long)]
    dtau: Option<f64>,
}

impl SolverArgs {
    /// Without `--margins` the defaults are widened to what `grid` accepts.
    fn settings(&self, grid: &GridSpec) -> SolverSettings {
        let mut s = SolverSettings::default();
        s.margins = match &self.margins {
            Some(m) => InitialSetMargins {
                position: m[0],
                speed: m[1],
                heading: m[2],
            },
            None => s.margins.at_least_for(grid),
        };
        if self.dtau.is_some() {
            s.dtau = self.dtau;
        }
        s
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Human speed at the start of the horizon, m/s.
    #[arg(long, allow_hyphen_values = true)]
    v_start: f64,
    /// Steering-rate bounds at the start of the horizon, rad/s.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_hyphen_values = true)]
    u1: Vec<f64>,
    /// Acceleration bounds at the start of the horizon, m/s².
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_hyphen_values = true)]
    u2: Vec<f64>,
    /// Steering-rate bounds at the end of the horizon; same as --u1 if absent.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_hyphen_values = true)]
    u1_end: Option<Vec<f64>>,
    /// Acceleration bounds at the end of the horizon; same as --u2 if absent.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_hyphen_values = true)]
    u2_end: Option<Vec<f64>>,
    /// Tube level: nodes with V below it are in the tube.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Use model confidence (the default).
    #[arg(long, overrides_with = "no_confidence")]
    confidence: bool,
    /// Trust the predictions as given (beta = 1 throughout).
    #[arg(long)]
    no_confidence: bool,
    /// Output directory; `out/<scenario>-<mode>` if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Precomputed family manifest to serve tubes from.
    #[arg(long)]
    family: Option<PathBuf>,
    /// Lattice JSON replacing the scenario's.
    #[arg(long)]
    lattice: Option<PathBuf>,
    /// Skip the per-step SVG frames.
    #[arg(long)]
    no_frames: bool,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct PrecomputeArgs {
    /// Lattice JSON file.
    #[arg(long)]
    lattice: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct ExportArgs {
    /// Value file written by `solve` or `precompute`.
    value_file: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Heading node of the V slice; the one nearest zero if absent.
    #[arg(long)]
    theta_index: Option<usize>,
    /// Speed node of the V slice; the one nearest the start speed if absent.
    #[arg(long)]
    v_index: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    log::debug!("seed {}", cli.seed);
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Precompute(a) => cmd_precompute(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Io => 4,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    sim::parse_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn check_caps(name: &str, pair: &[f64], cap: f64, what: &str) -> Result<[f64; 2]> {
    let [lo, hi] = [pair[0], pair[1]];
    for v in [lo, hi] {
        if !v.is_finite() || v.abs() > cap {
            return Err(Error::InvalidArgument(format!(
                "--{name} bound {v} exceeds the {what} cap of {cap}"
            )));
        }
    }
    if lo > hi {
        return Err(Error::InvalidArgument(format!(
            "--{name} needs MIN <= MAX, got {lo} > {hi}"
        )));
    }
    Ok([lo, hi])
}

fn write_footprint(dir: &Path, vf: &ValueFunction, threshold: f64) -> Result<usize> {
    let k = project_positions(&frt_set(vf, threshold)?);
    write(&dir.join("tube_k.csv"), occupancy_to_csv(&k))?;
    write(&dir.join("tube_k.svg"), sim::occupancy_svg(&k))?;
    Ok(k.count())
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let u1 = check_caps("u1", &a.u1, STEER_RATE_CAP, "steering-rate")?;
    let u2 = check_caps("u2", &a.u2, ACCEL_CAP, "acceleration")?;
    let u1e = check_caps(
        "u1-end",
        a.u1_end.as_deref().unwrap_or(&a.u1),
        STEER_RATE_CAP,
        "steering-rate",
    )?;
    let u2e = check_caps(
        "u2-end",
        a.u2_end.as_deref().unwrap_or(&a.u2),
        ACCEL_CAP,
        "acceleration",
    )?;
    let key = FrtQueryKey {
        v_start: a.v_start,
        endpoints: ControlBoundsEndpoints {
            u_min_start: [u1[0], u2[0]],
            u_max_start: [u1[1], u2[1]],
            u_min_end: [u1e[0], u2e[0]],
            u_max_end: [u1e[1], u2e[1]],
        },
    };
    let grid = a.grid.resolve()?.unwrap_or_default();
    let settings = a.solver.settings(&grid);
    let started = Instant::now();
    let vf = match cache_dir() {
        Some(dir) => {
            let cache = TubeCache::new(Lattice::single(&key), grid, a.solver.horizon, settings, 1)?.with_disk(dir);
            let vf = cache.query(&key)?;
            if cache.solves() == 0 {
                println!("served from {CACHE_ENV}");
            }
            Arc::unwrap_or_clone(vf)
        }
        None => solve_frt(key.v_start, &key.endpoints, &grid, a.solver.horizon, &settings)?,
    };
    let elapsed = started.elapsed();
    create_dir(&a.out)?;
    write_value_function(&a.out.join("tube.frtv"), &vf)?;
    let cells = frt_set(&vf, a.threshold)?.count();
    let k = write_footprint(&a.out, &vf, a.threshold)?;
    println!("tube nodes: {cells}");
    println!("footprint cells: {k}");
    println!("runtime: {:.2} s", elapsed.as_secs_f64());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut scenario = Scenario::load(&a.scenario)?;
    if let Some(grid) = a.grid.resolve()? {
        scenario.margins = Some(scenario.margins.unwrap_or_default().at_least_for(&grid));
        scenario.grid = Some(grid);
    }
    if let Some(path) = &a.lattice {
        scenario.lattice = Some(read_json(path)?);
    }
    scenario.validate()?;
    let use_confidence = !a.no_confidence;
    let mode = if use_confidence { "confidence" } else { "no-confidence" };
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(format!("{}-{mode}", scenario.name)));

    let mut cache = sim::tube_cache(&scenario, 256)?;
    if let Some(manifest) = &a.family {
        cache = cache.with_family(Arc::new(FrtFamily::load(manifest)?))?;
    }
    if let Some(dir) = cache_dir() {
        cache = cache.with_disk(dir);
    }

    let frames_dir = out.join("frames");
    create_dir(&out)?;
    if !a.no_frames {
        create_dir(&frames_dir)?;
    }
    let mut frame_error = None;
    let started = Instant::now();
    let log = sim::run_with(&scenario, use_confidence, Some(&cache), |frame| {
        if a.no_frames || frame_error.is_some() {
            return;
        }
        let path = frames_dir.join(format!("step_{:03}.svg", frame.record.step));
        if let Err(e) = write(&path, sim::frame_svg(frame)) {
            frame_error = Some(e);
        }
    })?;
    if let Some(e) = frame_error {
        return Err(e);
    }
    let elapsed = started.elapsed();

    let json = serde_json::to_string_pretty(&log).expect("log serializes");
    write(&out.join("log.json"), json)?;
    write(&out.join("log.csv"), sim::log_csv(&log))?;
    write(&out.join("belief.csv"), sim::belief_csv(&log))?;

    let m = &log.summary;
    // `+ 0.0` folds a rounded -0.00 into 0.00.
    let opt = |v: Option<f64>, unit: &str| {
        v.map_or("none".to_string(), |x| {
            format!("{:.2} {unit}", (x * 100.0).round() / 100.0 + 0.0)
        })
    };
    println!("scenario             {} ({mode})", log.scenario);
    println!("detection distance   {}", opt(m.detection_distance, "m"));
    println!("detection time       {}", opt(m.detection_time, "s"));
    println!("braking duration     {}", opt(m.braking_duration, "s"));
    println!("stop position        {}", opt(m.stop_position, "m past the line"));
    println!("min separation       {:.2} m", m.min_separation);
    println!("collision            {}", m.collision);
    println!("tube violations      {}", m.containment_violations);
    println!("fresh solves         {}", cache.solves());
    println!("runtime              {:.2} s", elapsed.as_secs_f64());
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_precompute(a: &PrecomputeArgs) -> Result<()> {
    let lattice: Lattice = read_json(&a.lattice)?;
    let grid = a.grid.resolve()?.unwrap_or_default();
    lattice.validate(&grid)?;
    let settings = a.solver.settings(&grid);
    let total = lattice.indices().len();
    let started = Instant::now();
    let mut done = 0;
    let report = precompute_to_dir(&lattice, &grid, a.solver.horizon, &settings, &a.out, |key, fresh| {
        done += 1;
        log::info!(
            "[{done}/{total}] {} v_start={}",
            if fresh { "solved" } else { "kept" },
            key.v_start
        );
    })?;
    println!("solved {} of {total} keys, kept {}", report.solved, report.skipped);
    println!("runtime: {:.2} s", started.elapsed().as_secs_f64());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let vf = read_value_function(&a.value_file)?;
    create_dir(&a.out)?;
    let k = write_footprint(&a.out, &vf, a.threshold)?;
    let g = &vf.grid;
    let it = match a.theta_index {
        Some(i) => i,
        None => g.theta.nearest(0.0).expect("periodic axis"),
    };
    let iv = match a.v_index {
        Some(i) => i,
        None => {
            g.v.nearest(vf.key.v_start.clamp(g.v.lo, g.v.hi))
                .expect("clamped onto the axis")
        }
    };
    write(&a.out.join("slice.csv"), slice_csv(&vf, it, iv)?)?;
    println!("footprint cells: {k}");
    println!("wrote {}", a.out.display());
    Ok(())
}
