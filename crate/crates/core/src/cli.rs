//! Command-line front end.
//!
//! Every subcommand reads an optional JSON `--config` file, applies the flags
//! given on the command line on top of it, validates the result and only then
//! starts computing. Outputs carry a provenance record (tool version, SHA-256
//! of the effective configuration, seed).
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    existence_verdict, precertificate_eta_v, sample_plane, Axis, ExistenceReport, PhiGrid, PlaneSpec,
};
use crate::error::{Error, Result};
use crate::forward::{synthesize_rir, ForwardModel, Observation, SparseMeasure};
use crate::geometry::{observable_subset, MicArray, Scenario, ScenarioFile, Vec3};
use crate::harness::{
    generate_scenario, match_and_score, run_bench, write_bucket_table, write_order_table, BenchConfig, DatasetSpec,
    MatchReport, MatchThresholds, Target,
};
use crate::io::{
    read_elrir, read_sources_csv, source_rows, spike_rows, write_elrir, write_grid_csv, write_rir_csv,
    write_sources_csv, Provenance, RawRir,
};
use crate::kernels::{FilterKernel, SamplingSpec};
use crate::solver::{solve, RecoveryResult, SolverConfig};

#[derive(Debug, Parser)]
#[command(name = "echoloc", version, about = "Room impulse response synthesis and image-source recovery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a room impulse response and its ground truth.
    Simulate(SimulateArgs),
    /// Recover image sources from an ELRIR1 file.
    Solve(SolveArgs),
    /// Sample the precertificate of a source set on a plane.
    Certify(CertifyArgs),
    /// Existence diagnostics for an observation.
    Analyze(AnalyzeArgs),
    /// Match a recovered measure against ground truth.
    Evaluate(EvaluateArgs),
    /// Simulate, solve and score a random dataset.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Sinc,
    Gaussian,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Filter kernel; the low-pass filter uses the sampling rate.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelKind>,
    /// Width of the Gaussian kernel in seconds.
    #[arg(long)]
    pub sigma: Option<f64>,
}

impl KernelArgs {
    fn resolve(&self, fs: f64, base: Option<FilterKernel>) -> Result<FilterKernel> {
        let kernel = match (self.kernel, self.sigma) {
            (Some(KernelKind::Sinc), _) => FilterKernel::SincLowpass { fs },
            (Some(KernelKind::Gaussian), Some(sigma)) | (None, Some(sigma)) => FilterKernel::Gaussian { sigma },
            (Some(KernelKind::Gaussian), None) => match base {
                Some(k @ FilterKernel::Gaussian { .. }) => k,
                _ => return Err(Error::invalid("the Gaussian kernel needs --sigma")),
            },
            (None, None) => base.unwrap_or(FilterKernel::SincLowpass { fs }),
        };
        kernel.validate()?;
        Ok(kernel)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON document.
    #[arg(long, conflicts_with = "dataset")]
    pub scenario: Option<PathBuf>,
    /// Dataset specification JSON; the scenario is drawn with `--index`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long, conflicts_with = "n_samples")]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long)]
    pub max_order: Option<u32>,
    /// Peak signal-to-noise ratio in dB; noiseless when absent.
    #[arg(long)]
    pub psnr: Option<f64>,
    /// Noise seed; defaults to the scenario seed.
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Exclusion radius used to select the observable ground truth.
    #[arg(long)]
    pub eps_excl: Option<f64>,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub fs: f64,
    pub t_max: f64,
    /// Overrides `t_max` when set.
    pub n_samples: Option<usize>,
    pub kernel: Option<FilterKernel>,
    pub max_order: u32,
    pub psnr_db: Option<f64>,
    pub noise_seed: Option<u64>,
    pub eps_excl: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            fs: 24_000.0,
            t_max: 0.05,
            n_samples: None,
            kernel: None,
            max_order: 20,
            psnr_db: None,
            noise_seed: None,
            eps_excl: 0.01,
        }
    }
}

impl SimulateConfig {
    fn spec(&self) -> Result<SamplingSpec> {
        match self.n_samples {
            Some(n) => SamplingSpec::new(self.fs, n),
            None => SamplingSpec::from_duration(self.fs, self.t_max),
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// ELRIR1 observation.
    #[arg(long)]
    pub rir: PathBuf,
    /// Scenario JSON providing the microphone positions.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Solver configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub eps_excl: Option<f64>,
    #[arg(long)]
    pub alpha_min: Option<f64>,
    #[arg(long)]
    pub i_max: Option<usize>,
    #[arg(long)]
    pub cutting_count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short, default_value = "result.json")]
    pub out: PathBuf,
    /// Also write the spikes in the source CSV schema.
    #[arg(long)]
    pub spikes_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Source CSV whose positions the precertificate interpolates.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long, conflicts_with = "n_samples")]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Plane normal.
    #[arg(long, value_enum)]
    pub axis: Option<AxisArg>,
    /// Plane offset along the normal; defaults to the first source.
    #[arg(long)]
    pub offset: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub u_range: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub v_range: Option<Vec<f64>>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Export signed values instead of magnitudes.
    #[arg(long)]
    pub signed: bool,
    #[arg(long, short, default_value = "certificate.csv")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    X,
    Y,
    Z,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::X => Axis::X,
            AxisArg::Y => Axis::Y,
            AxisArg::Z => Axis::Z,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyConfig {
    pub fs: f64,
    pub t_max: f64,
    pub n_samples: Option<usize>,
    pub kernel: Option<FilterKernel>,
    pub plane: Option<PlaneSpec>,
    pub absolute: bool,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig { fs: 24_000.0, t_max: 0.05, n_samples: None, kernel: None, plane: None, absolute: true }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub rir: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 3e-5)]
    pub lambda: f64,
    /// Amplitude lower-bound constant; estimated by sampling when absent.
    #[arg(long)]
    pub c_alb: Option<f64>,
    /// Number of log-spaced search nodes for the φ constant.
    #[arg(long)]
    pub phi_points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short, default_value = "existence.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub truth: PathBuf,
    /// Result JSON written by `solve`.
    #[arg(long)]
    pub result: PathBuf,
    /// Scenario JSON; errors are measured around its array center.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Radial threshold in meters.
    #[arg(long, default_value_t = 0.01)]
    pub re_thresh: f64,
    /// Angular threshold in degrees.
    #[arg(long, default_value_t = 2.0)]
    pub ae_thresh: f64,
    #[arg(long, short, default_value = "match.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_rooms: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub max_order: Option<u32>,
    #[arg(long)]
    pub psnr: Option<f64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, short, default_value = "bench")]
    pub out: PathBuf,
}

/// Written next to the outputs of every subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub command: String,
    pub provenance: Provenance,
    pub config: C,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateEcho {
    pub config: SimulateConfig,
    pub scenario: ScenarioFile,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveOutput {
    pub provenance: Provenance,
    pub config: SolverConfig,
    pub kernel: FilterKernel,
    #[serde(flatten)]
    pub result: RecoveryResult,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalyzeOutput {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub report: ExistenceReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluateOutput {
    pub provenance: Provenance,
    pub thresholds: MatchThresholds,
    #[serde(flatten)]
    pub report: MatchReport,
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::DimensionMismatch(_) | Error::Format(_) => 2,
        Error::Singular { .. } | Error::Degenerate { .. } => 3,
        Error::Io(_) => 4,
    }
}

/// Parses `args` and runs the subcommand, reporting errors on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Solve(a) => solve_cmd(a),
        Command::Certify(a) => certify(a),
        Command::Analyze(a) => analyze(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench(a),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| io_context(e, path))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map(read_json).transpose().map(Option::unwrap_or_default)
}

fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_context(e, dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| io_context(e, path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    Scenario::try_from(read_json::<ScenarioFile>(path)?)
}

fn load_rir(path: &Path) -> Result<RawRir> {
    let file = File::open(path).map_err(|e| io_context(e, path))?;
    read_elrir(BufReader::new(file))
}

/// Rebuilds an observation from an ELRIR1 file and the scenario's array.
pub fn observation_from_rir(rir: RawRir, array: MicArray, kernel: FilterKernel) -> Result<Observation> {
    if rir.n_mics != array.len() {
        return Err(Error::DimensionMismatch(format!(
            "RIR has {} channels but the scenario has {} microphones",
            rir.n_mics,
            array.len()
        )));
    }
    let model = ForwardModel::new(array, kernel, SamplingSpec::new(rir.fs, rir.n_samples)?, rir.c)?;
    Observation::new(model, rir.data)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: SimulateConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.fs {
        cfg.fs = v;
    }
    if let Some(v) = a.t_max {
        cfg.t_max = v;
        cfg.n_samples = None;
    }
    if let Some(v) = a.n_samples {
        cfg.n_samples = Some(v);
    }
    if let Some(v) = a.max_order {
        cfg.max_order = v;
    }
    if a.psnr.is_some() {
        cfg.psnr_db = a.psnr;
    }
    if a.noise_seed.is_some() {
        cfg.noise_seed = a.noise_seed;
    }
    if let Some(v) = a.eps_excl {
        cfg.eps_excl = v;
    }
    cfg.kernel = Some(a.kernel.resolve(cfg.fs, cfg.kernel)?);
    let spec = cfg.spec()?;
    if !(cfg.eps_excl >= 0.0) {
        return Err(Error::invalid("eps_excl must be nonnegative"));
    }
    if cfg.psnr_db.is_some_and(|p| !p.is_finite()) {
        return Err(Error::invalid("PSNR must be finite"));
    }
    let scenario = match (&a.scenario, &a.dataset) {
        (Some(p), _) => load_scenario(p)?,
        (None, Some(p)) => {
            let ds: DatasetSpec = read_json(p)?;
            ds.validate()?;
            generate_scenario(&ds, a.index)?
        }
        (None, None) => return Err(Error::invalid("either --scenario or --dataset is required")),
    };
    let echo = SimulateEcho { config: cfg.clone(), scenario: ScenarioFile::from(&scenario) };
    let seed = cfg.noise_seed.unwrap_or(scenario.rng_seed);
    let prov = Provenance::new(&echo, seed)?;

    let kernel = cfg.kernel.expect("resolved above");
    let (mut obs, set) = synthesize_rir(&scenario, kernel, spec, cfg.max_order)?;
    if let Some(psnr) = cfg.psnr_db {
        obs = obs.add_noise(psnr, seed)?;
    }
    let visible = observable_subset(&set, &scenario.array, spec.t_max(), scenario.c, cfg.eps_excl);

    let out = &a.out;
    let rir = RawRir::from(&obs);
    let mut w = create(&out.join("rir.elrir"))?;
    write_elrir(&mut w, &rir)?;
    write_rir_csv(create(&out.join("rir.csv"))?, &rir, Some(&prov))?;
    write_sources_csv(create(&out.join("truth.csv"))?, &source_rows(&visible), Some(&prov))?;
    write_sources_csv(create(&out.join("truth_all.csv"))?, &source_rows(&set), Some(&prov))?;
    write_json(&out.join("scenario.json"), &echo.scenario)?;
    let manifest = Manifest {
        command: "simulate".into(),
        provenance: prov,
        config: echo,
        files: ["rir.elrir", "rir.csv", "truth.csv", "truth_all.csv", "scenario.json"]
            .map(String::from)
            .to_vec(),
    };
    write_json(&out.join("manifest.json"), &manifest)
}

fn solve_cmd(a: SolveArgs) -> Result<()> {
    let mut cfg: SolverConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.eps_excl {
        cfg.eps_excl = v;
    }
    if let Some(v) = a.alpha_min {
        cfg.alpha_min = v;
    }
    if let Some(v) = a.i_max {
        cfg.i_max = v;
    }
    if let Some(v) = a.cutting_count {
        cfg.cutting_count = v;
    }
    if let Some(v) = a.seed {
        cfg.rng_seed = v;
    }
    cfg.validate()?;
    let scenario = load_scenario(&a.scenario)?;
    let rir = load_rir(&a.rir)?;
    let kernel = a.kernel.resolve(rir.fs, None)?;
    let obs = observation_from_rir(rir, scenario.array, kernel)?;
    let prov = Provenance::new(&(&cfg, kernel), cfg.rng_seed)?;
    let result = solve(&obs, &cfg)?;
    if let Some(path) = &a.spikes_csv {
        write_sources_csv(create(path)?, &spike_rows(&result.measure), Some(&prov))?;
    }
    write_json(&a.out, &SolveOutput { provenance: prov, config: cfg, kernel, result })
}

fn certify(a: CertifyArgs) -> Result<()> {
    let mut cfg: CertifyConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.fs {
        cfg.fs = v;
    }
    if let Some(v) = a.t_max {
        cfg.t_max = v;
        cfg.n_samples = None;
    }
    if let Some(v) = a.n_samples {
        cfg.n_samples = Some(v);
    }
    if a.signed {
        cfg.absolute = false;
    }
    let kernel = a.kernel.resolve(cfg.fs, cfg.kernel)?;
    cfg.kernel = Some(kernel);
    let spec = match cfg.n_samples {
        Some(n) => SamplingSpec::new(cfg.fs, n)?,
        None => SamplingSpec::from_duration(cfg.fs, cfg.t_max)?,
    };
    let scenario = load_scenario(&a.scenario)?;
    let file = File::open(&a.truth).map_err(|e| io_context(e, &a.truth))?;
    let rows = read_sources_csv(BufReader::new(file))?;
    if rows.is_empty() {
        return Err(Error::invalid("the source CSV has no rows"));
    }
    let positions: Vec<Vec3> = rows.iter().map(|r| r.position()).collect();
    let signs: Vec<f64> = rows.iter().map(|r| if r.amplitude < 0.0 { -1.0 } else { 1.0 }).collect();

    let base = cfg.plane.unwrap_or_else(|| default_plane(&scenario, positions[0]));
    let pair = |v: &Option<Vec<f64>>, d: [f64; 2]| v.as_ref().map_or(d, |v| [v[0], v[1]]);
    let plane = PlaneSpec {
        normal: a.axis.map_or(base.normal, Axis::from),
        offset: a.offset.unwrap_or(base.offset),
        u_range: pair(&a.u_range, base.u_range),
        v_range: pair(&a.v_range, base.v_range),
        resolution: a.resolution.map_or(base.resolution, |r| [r, r]),
    };
    plane.validate()?;
    cfg.plane = Some(plane);

    let model = ForwardModel::new(scenario.array, kernel, spec, scenario.c)?;
    let prov = Provenance::new(&cfg, 0)?;
    let cert = precertificate_eta_v(&positions, &signs, &model)?;
    let grid = sample_plane(&cert, &plane, cfg.absolute)?;
    let points: Vec<(f64, f64, f64)> = grid.samples.clone();
    write_grid_csv(create(&a.out)?, &points, Some(&prov))
}

/// Horizontal plane through `through`, spanning the room floor at 101×101.
fn default_plane(scenario: &Scenario, through: Vec3) -> PlaneSpec {
    PlaneSpec {
        normal: Axis::Z,
        offset: through.z,
        u_range: [0.0, scenario.room.dims.x],
        v_range: [0.0, scenario.room.dims.y],
        resolution: [101, 101],
    }
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let rir = load_rir(&a.rir)?;
    let kernel = a.kernel.resolve(rir.fs, None)?;
    let obs = observation_from_rir(rir, scenario.array, kernel)?;
    let mut grid = PhiGrid::default_for(&obs.model.spec);
    if let Some(n) = a.phi_points {
        grid.points = n;
    }
    let prov = Provenance::new(&(kernel, a.lambda, a.c_alb, grid.points), a.seed)?;
    let report = existence_verdict(&obs, a.lambda, a.c_alb, &grid, a.seed)?;
    write_json(&a.out, &AnalyzeOutput { provenance: prov, report })
}

/// Reads spikes from a solve result, or from a source CSV.
pub fn load_estimate(path: &Path) -> Result<SparseMeasure> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let file = File::open(path).map_err(|e| io_context(e, path))?;
        let rows = read_sources_csv(BufReader::new(file))?;
        let amps: Vec<f64> = rows.iter().map(|r| r.amplitude).collect();
        let pos: Vec<Vec3> = rows.iter().map(|r| r.position()).collect();
        return SparseMeasure::from_parts(&amps, &pos);
    }
    let measure: SparseMeasure = read_json(path)?;
    SparseMeasure::new(measure.spikes)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let thresholds = MatchThresholds { re: a.re_thresh, ae_deg: a.ae_thresh };
    let scenario = load_scenario(&a.scenario)?;
    let file = File::open(&a.truth).map_err(|e| io_context(e, &a.truth))?;
    let targets: Vec<Target> = read_sources_csv(BufReader::new(file))?
        .iter()
        .map(|r| Target { position: r.position(), amplitude: r.amplitude, order: r.order })
        .collect();
    let estimate = load_estimate(&a.result)?;
    let report = match_and_score(&targets, &estimate, scenario.array.center(), thresholds)?;
    let prov = Provenance::new(&thresholds, 0)?;
    write_json(&a.out, &EvaluateOutput { provenance: prov, thresholds, report })
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg: BenchConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.n_rooms {
        cfg.dataset.n_rooms = v;
    }
    if let Some(v) = a.seed {
        cfg.dataset.rng_seed = v;
    }
    if let Some(v) = a.fs {
        cfg.fs = v;
    }
    if let Some(v) = a.t_max {
        cfg.t_max = v;
    }
    if let Some(v) = a.max_order {
        cfg.max_order = v;
    }
    if a.psnr.is_some() {
        cfg.psnr_db = a.psnr;
    }
    if a.jobs == 0 {
        return Err(Error::invalid("--jobs must be at least 1"));
    }
    cfg.dataset.validate()?;
    cfg.solver.validate()?;
    SamplingSpec::from_duration(cfg.fs, cfg.t_max)?;
    cfg.kernel().validate()?;
    let prov = Provenance::new(&cfg, cfg.dataset.rng_seed)?;
    let (outcomes, tables) = run_bench(&cfg, a.jobs)?;

    let out = &a.out;
    let mut files = Vec::new();
    for o in &outcomes {
        let name = format!("scenario_{:04}.json", o.index);
        write_json(&out.join(&name), o)?;
        files.push(name);
    }
    write_bucket_table(create(&out.join("table_sources.csv"))?, &tables)?;
    write_order_table(create(&out.join("table_orders.csv"))?, &tables)?;
    write_json(&out.join("summary.json"), &tables)?;
    files.extend(["table_sources.csv", "table_orders.csv", "summary.json"].map(String::from));
    write_json(
        &out.join("manifest.json"),
        &Manifest { command: "bench".into(), provenance: prov, config: cfg, files },
    )
}
