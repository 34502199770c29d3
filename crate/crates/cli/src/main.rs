mod compare;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use senskit::bench::{run_benchmark, Arm};
use senskit::calibration::GramMethod;
use senskit::eigensolve::EigenMethod;
use senskit::grid::ComplexImageStack;
use senskit::io::{load_stack, save_stack};
use senskit::kernel::KernelShape;
use senskit::maps::{GridMode, MapMethod, NormalizationRecord, Provenance, StageTiming};
use senskit::spatial::FieldMethod;
use senskit::synthetic::{forward_kspace, make_scene, PhantomKind};
use senskit::{estimate_maps, extract_calibration, projection_residual, PipelineConfig};

use output::{scalar_stack, with_suffix, write_pgm, write_text};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    EmptyNullspace(String),
    Dimension(String),
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::EmptyNullspace(_) => 4,
            CliError::Dimension(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::EmptyNullspace(m) | CliError::Dimension(m) | CliError::Other(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<senskit::Error> for CliError {
    fn from(e: senskit::Error) -> Self {
        use senskit::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } | E::Sidecar { .. } | E::UnsupportedVersion(_) | E::SizeMismatch { .. } => CliError::Io(msg),
            E::EmptyNullspace { .. } => CliError::EmptyNullspace(msg),
            E::DimensionMismatch(_) => CliError::Dimension(msg),
            E::InvalidArgument(_) | E::CalibrationTooSmall { .. } => CliError::Usage(msg),
            E::MemoryCap { .. } => CliError::Other(msg),
        }
    }
}

/// Coil sensitivity estimation from calibration k-space.
#[derive(Parser, Debug)]
#[command(name = "senskit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic scene and its k-space.
    Simulate(SimulateArgs),
    /// Estimate sensitivity maps from a k-space stack.
    Estimate(EstimateArgs),
    /// Compare two `estimate` outputs.
    Compare(CompareArgs),
    /// Time two or more presets over several calibration sizes.
    Bench(BenchArgs),
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("bad list entry {p:?}")))
        .collect()
}

/// Two positive extents written `rows,cols`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
struct Extents(Vec<usize>);

impl std::str::FromStr for Extents {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<usize> = parse_list(s)?;
        if v.len() != 2 || v.contains(&0) {
            return Err(format!("expected two positive extents like 256,256, got {s:?}"));
        }
        Ok(Extents(v))
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct SceneArgs {
    /// Number of channels
    #[arg(long, default_value_t = 8)]
    q: usize,
    /// Image extents (rows,cols)
    #[arg(long, default_value = "256,256")]
    dims: Extents,
    /// Half-width of the k-space support of the true maps
    #[arg(long, default_value_t = 2)]
    tau_gen: usize,
    /// Phantom: disk | shepp
    #[arg(long, default_value = "disk")]
    phantom: String,
    /// Standard deviation of complex white noise added to k-space
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// Seed of the scene (maps and phantom)
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Seed of the noise draw [default: same as --seed]
    #[arg(long)]
    noise_seed: Option<u64>,
}

impl SceneArgs {
    fn build(&self) -> Result<(senskit::synthetic::SyntheticScene, ComplexImageStack), CliError> {
        let kind: PhantomKind = self.phantom.parse().map_err(CliError::Usage)?;
        let scene = make_scene(self.q, &self.dims.0, self.tau_gen, self.seed, kind)?;
        let k = forward_kspace(&scene, self.noise, self.noise_seed.unwrap_or(self.seed));
        Ok((scene, k))
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Output prefix; writes <prefix>_kspace, <prefix>_maps, <prefix>_mask
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct EstimateArgs {
    /// K-space stack (CStack v1, sidecar or payload path, or the bare name)
    #[arg(long)]
    input: PathBuf,
    /// Calibration region extents (rows,cols)
    #[arg(long)]
    calib: Extents,
    /// Preset: baseline | pisco
    #[arg(long, default_value = "baseline")]
    preset: String,
    /// Kernel shape: rect | ellipsoid [default: preset; baseline rect, pisco ellipsoid]
    #[arg(long)]
    kernel: Option<KernelShape>,
    /// Kernel radius tau [default: 3]
    #[arg(long)]
    tau: Option<usize>,
    /// Gram computation: explicit | fft [default: preset; baseline explicit, pisco fft]
    #[arg(long)]
    gram: Option<GramMethod>,
    /// Nullspace threshold as a fraction of the largest singular value
    #[arg(long, default_value_t = senskit::nullspace::DEFAULT_THRESHOLD_RATIO)]
    nullspace_threshold: f64,
    /// Estimation grid: full | reduced [default: preset; baseline full, pisco reduced]
    #[arg(long)]
    grid: Option<GridMode>,
    /// Reduced grid extent beyond the calibration extent, per axis
    #[arg(long, default_value_t = senskit::maps::DEFAULT_GRID_PAD)]
    grid_pad: usize,
    /// Per-voxel Gram field: naive | fast [default: fast]
    #[arg(long)]
    field: Option<FieldMethod>,
    /// Map extraction: nullspace | espirit [default: nullspace]
    #[arg(long)]
    method: Option<MapMethod>,
    /// Per-voxel eigensolver: dense | power [default: preset; baseline dense, pisco power]
    #[arg(long)]
    eig: Option<EigenMethod>,
    /// Power iterations per voxel
    #[arg(long, default_value_t = senskit::eigensolve::DEFAULT_POWER_ITERS)]
    power_iters: usize,
    /// Support mask threshold on the normalized smallest eigenvalue
    #[arg(long, default_value_t = senskit::maps::DEFAULT_MASK_THRESHOLD)]
    mask_threshold: f64,
    /// Width of the Gaussian k-space window of the phase reference, relative to the calibration extent
    #[arg(long, default_value_t = senskit::maps::DEFAULT_APOD_WIDTH)]
    apod_width: f64,
    /// Worker threads [default: all cores]
    #[arg(long)]
    threads: Option<usize>,
    /// Output prefix
    #[arg(long)]
    output: PathBuf,
}

impl EstimateArgs {
    fn config(&self) -> Result<PipelineConfig, CliError> {
        let mut c = PipelineConfig::preset(&self.preset)
            .ok_or_else(|| CliError::Usage(format!("unknown preset {:?} (baseline | pisco)", self.preset)))?;
        if let Some(v) = self.kernel {
            c.kernel = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some(v) = self.gram {
            c.gram = v;
        }
        if let Some(v) = self.grid {
            c.grid = v;
        }
        if let Some(v) = self.field {
            c.field = v;
        }
        if let Some(v) = self.method {
            c.method = v;
        }
        if let Some(v) = self.eig {
            c.eig = v;
        }
        c.nullspace_threshold = self.nullspace_threshold;
        c.grid_pad = self.grid_pad;
        c.power_iters = self.power_iters;
        c.mask_threshold = self.mask_threshold;
        c.apod_width = self.apod_width;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Output prefix of the first `estimate` run
    a: PathBuf,
    /// Output prefix of the second `estimate` run
    b: PathBuf,
    /// Prefix for <prefix>.json and <prefix>_diff_coil<q>.pgm
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// K-space stack to benchmark on
    #[arg(long, conflicts_with = "simulate")]
    input: Option<PathBuf>,
    /// Benchmark on a synthetic scene described by the scene flags
    #[arg(long)]
    simulate: bool,
    #[command(flatten)]
    scene: SceneArgs,
    /// Comma-separated presets; speedups are first arm over second
    #[arg(long, default_value = "baseline,pisco")]
    arms: String,
    /// Comma-separated calibration extents (square regions)
    #[arg(long, default_value = "24,48,96")]
    calib_sizes: String,
    /// Timed repetitions per cell (at least 5)
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Worker threads [default: all cores]
    #[arg(long)]
    threads: Option<usize>,
    /// Prefix for <prefix>.csv and <prefix>.json
    #[arg(long, default_value = "report")]
    output: PathBuf,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (scene, k) = args.scene.build()?;
    save_stack(&k, with_suffix(&args.output, "_kspace"))?;
    save_stack(&scene.true_maps, with_suffix(&args.output, "_maps"))?;
    let mask = scalar_stack(&scene.dims, scene.support_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    save_stack(&mask, with_suffix(&args.output, "_mask"))?;
    write_text(
        &with_suffix(&args.output, "_scene.json"),
        &serde_json::to_string_pretty(&args.scene).expect("scene args serialize"),
    )?;
    println!("wrote {}_{{kspace,maps,mask}}", args.output.display());
    Ok(())
}

#[derive(Serialize)]
struct EstimateRecord<'a> {
    argv: Vec<String>,
    invocation: &'a EstimateArgs,
    config: &'a PipelineConfig,
    provenance: &'a Provenance,
    normalization: &'a NormalizationRecord,
    timings: &'a [StageTiming],
    peak_bytes: u64,
    residual: f64,
}

fn estimate(args: &EstimateArgs) -> Result<(), CliError> {
    let config = args.config()?;
    let data = load_stack(&args.input)?;
    if data.dims().len() != 2 {
        return Err(CliError::Dimension(format!("expected 2-D data, got {:?}", data.dims())));
    }
    let threads = args.threads.unwrap_or_else(default_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    let (result, residual) = pool.install(|| -> Result<_, CliError> {
        let calib = extract_calibration(&data, &args.calib.0)?;
        let result = estimate_maps(&calib, data.dims(), &config)?;
        let residual = projection_residual(&data, &result.maps)?.value;
        Ok((result, residual))
    })?;

    let out = &args.output;
    let dims = result.maps.dims().to_vec();
    save_stack(&result.maps, with_suffix(out, "_maps"))?;
    save_stack(
        &scalar_stack(&dims, result.support_mask.iter().map(|&m| if m { 1.0 } else { 0.0 })),
        with_suffix(out, "_mask"),
    )?;
    save_stack(&scalar_stack(&dims, result.lambda_min_map.iter().copied()), with_suffix(out, "_lambda"))?;
    for q in 0..result.maps.channels() {
        let mag: Vec<f64> = result.maps.channel(q).iter().map(|x| x.norm()).collect();
        write_pgm(&with_suffix(out, &format!("_coil{q}.pgm")), &dims, &mag)?;
    }
    let mut csv = String::from("index,sigma_normalized\n");
    for (i, s) in result.spectrum.iter().enumerate() {
        csv.push_str(&format!("{i},{s:.12e}\n"));
    }
    write_text(&with_suffix(out, "_spectrum.csv"), &csv)?;
    let record = EstimateRecord {
        argv: std::env::args().collect(),
        invocation: args,
        config: &config,
        provenance: &result.provenance,
        normalization: &result.normalization,
        timings: &result.timings,
        peak_bytes: result.memory.peak,
        residual,
    };
    write_text(
        &with_suffix(out, "_provenance.json"),
        &serde_json::to_string_pretty(&record).expect("record serializes"),
    )?;
    println!(
        "R = {}, residual {residual:.4}, {} of {} voxels in mask",
        result.provenance.nullspace_dim,
        result.support_mask.iter().filter(|m| **m).count(),
        result.support_mask.len()
    );
    Ok(())
}

fn run_compare(args: &CompareArgs) -> Result<(), CliError> {
    let c = compare::compare(&args.a, &args.b, &args.output)?;
    let text = serde_json::to_string_pretty(&c).expect("comparison serializes");
    write_text(&with_suffix(&args.output, ".json"), &text)?;
    println!("{text}");
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<(), CliError> {
    let kspace = match (&args.input, args.simulate) {
        (Some(p), _) => load_stack(p)?,
        (None, true) => args.scene.build()?.1,
        (None, false) => return Err(CliError::Usage("bench needs --input or --simulate".into())),
    };
    let arms = args
        .arms
        .split(',')
        .map(|name| {
            let name = name.trim();
            PipelineConfig::preset(name)
                .map(|config| Arm { name: name.to_string(), config })
                .ok_or_else(|| CliError::Usage(format!("unknown preset {name:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sizes: Vec<usize> = parse_list(&args.calib_sizes).map_err(CliError::Usage)?;
    let report = run_benchmark(&kspace, &arms, &sizes, args.reps, args.threads.unwrap_or_else(default_threads))?;
    write_text(&with_suffix(&args.output, ".csv"), &report.to_csv())?;
    write_text(&with_suffix(&args.output, ".json"), &report.to_json())?;
    for s in &report.speedups {
        println!("calib {}: {} / {} = {:.2}x", s.calib_size, arms[0].name, arms[1].name, s.ratio);
    }
    for c in report.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("calib {} {}: {}", c.calib_size, c.arm, c.error.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Compare(a) => run_compare(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
