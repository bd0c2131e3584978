use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctrobust::calibration::NoiseModelParams;
use ctrobust::ctsim::GeometryOverrides;
use ctrobust::AnnotationKind;
use ctrobust_cli::phantom::PhantomOptions;
use ctrobust_cli::stub::StubOptions;
use ctrobust_cli::{augment, calibrate, evaluate, phantom, report, stub, CliError, CliResult, Outcome, RunConfig};

#[derive(Parser)]
#[command(name = "ctrobust", version, about = "Robustness testing of CT models with simulated artifacts")]
struct Cli {
    /// Debug-level logging.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Run configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Segmentation,
    Detection,
}

impl From<Task> for AnnotationKind {
    fn from(t: Task) -> Self {
        match t {
            Task::Segmentation => AnnotationKind::Segmentation,
            Task::Detection => AnnotationKind::Detection,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Derive the scanner geometry, tune the noise model and measure the
    /// dataset noise distribution.
    Calibrate(StageArgs),
    /// Generate the configured severity ladders for every case.
    Augment(StageArgs),
    /// Run every model on clean and augmented volumes and score them.
    Evaluate(StageArgs),
    /// Degradation scores, summary tables and plots.
    Report(StageArgs),
    /// All four stages in order.
    Run(StageArgs),
    /// Write a synthetic phantom dataset with a manifest.
    Phantom {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        cases: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 3.0)]
        pixel_mm: f64,
        #[arg(long, default_value_t = 12)]
        slices: usize,
        #[arg(long, default_value_t = 5.0)]
        slice_mm: f64,
        #[arg(long, value_enum, default_value = "segmentation")]
        annotation: Task,
        /// Volume extension: .nii.gz, .nii or .mha.
        #[arg(long, default_value = ".nii.gz")]
        extension: String,
        #[arg(long, default_value_t = 1e6)]
        q0: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 2160)]
        n_theta: usize,
        #[arg(long)]
        n_det: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Threshold model for trying the pipeline: `stub-model INPUT OUTPUT`.
    StubModel {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum, default_value = "segmentation")]
        task: Task,
        #[arg(long, default_value_t = -400.0, allow_hyphen_values = true)]
        threshold_hu: f32,
        #[arg(long, default_value_t = 50_000.0)]
        max_component_mm3: f64,
        #[arg(long)]
        fixed_confidence: Option<f64>,
    },
}

fn load(args: &StageArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(d) = &args.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Config(format!("output directory {}: {e}", cfg.output_dir.display())))?;
    Ok(cfg)
}

fn run_all(cfg: &RunConfig) -> CliResult<Outcome> {
    let mut failures = 0;
    for stage in [calibrate::run, augment::run, evaluate::run, report::run] {
        if let Outcome::Partial(n) = stage(cfg)? {
            failures += n;
        }
    }
    Ok(Outcome::from_failures(failures))
}

fn dispatch(command: Command) -> CliResult<Outcome> {
    match command {
        Command::Calibrate(a) => calibrate::run(&load(&a)?),
        Command::Augment(a) => augment::run(&load(&a)?),
        Command::Evaluate(a) => evaluate::run(&load(&a)?),
        Command::Report(a) => report::run(&load(&a)?),
        Command::Run(a) => run_all(&load(&a)?),
        Command::Phantom {
            out,
            cases,
            size,
            pixel_mm,
            slices,
            slice_mm,
            annotation,
            extension,
            q0,
            sigma,
            n_theta,
            n_det,
            seed,
        } => {
            let options = PhantomOptions {
                cases,
                size,
                pixel_mm,
                slices,
                slice_mm,
                annotation: annotation.into(),
                extension,
                params: NoiseModelParams::new(q0, sigma, n_theta)?,
                geometry: GeometryOverrides { phi: None, n_det },
                seed,
            };
            let manifest = phantom::generate(&out, &options)?;
            println!("{}", manifest.display());
            Ok(Outcome::Complete)
        }
        Command::StubModel { input, output, task, threshold_hu, max_component_mm3, fixed_confidence } => {
            let options = StubOptions { task: task.into(), threshold_hu, max_component_mm3, fixed_confidence };
            stub::run(&input, &output, &options)?;
            Ok(Outcome::Complete)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(outcome) => {
            if let Outcome::Partial(n) = outcome {
                log::warn!("finished with {n} partial failure(s); see the log above");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
