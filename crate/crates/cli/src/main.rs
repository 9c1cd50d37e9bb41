use std::path::PathBuf;
use std::process::ExitCode;

use basisfm::eval::{BasisVariant, Deformation, Route};
use basisfm_cli::commands::{self, MatchOptions};
use basisfm_cli::{CliError, ProjectConfig};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "basisfm", version, about = "Shape correspondence with learnable spectral bases")]
struct Cli {
    /// Project config (TOML, or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the training seed (and the synthetic pair seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    variant: Option<VariantArg>,

    #[arg(long, global = true, value_enum)]
    route: Option<RouteArg>,

    /// Read and write correspondence files with 1-based indices.
    #[arg(long, global = true)]
    one_based: bool,

    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Fixed,
    Learned,
}

#[derive(Clone, Copy, ValueEnum)]
enum RouteArg {
    Solver,
    Projection,
}

#[derive(Clone, Copy, ValueEnum)]
enum DeformationArg {
    Permutation,
    Noisy,
    Scale,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and cache eigensystems for every configured mesh.
    Precompute,
    /// Learn the inhibition filter and feature transform on all configured mesh pairs.
    Train,
    /// Match Y onto X; writes one X index per Y vertex and a JSON report.
    Match {
        x: PathBuf,
        y: PathBuf,
        /// Ground-truth correspondence; adds geodesic errors to the report.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Finish with G-ZoomOut.
        #[arg(long)]
        refine: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run G-ZoomOut on an existing correspondence file.
    Refine {
        x: PathBuf,
        y: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Geodesic error of a correspondence against ground truth, measured on X.
    Eval {
        x: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Export inhibition profile, loss history and PCK curves as CSV.
    ExportPlots,
    /// Generate a synthetic pair with known ground truth.
    Synth {
        /// `icosphere:<n>`, `grid:<nx>x<ny>` or a mesh file.
        #[arg(long, default_value = "icosphere:3")]
        base: String,
        #[arg(long, value_enum, default_value = "noisy")]
        kind: DeformationArg,
        /// Noise level relative to the bounding-box diagonal.
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        /// Axis scale factors for `--kind scale`.
        #[arg(long, num_args = 3, default_values_t = [1.0, 1.0, 2.0])]
        factors: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn effective_config(cli: &Cli) -> Result<ProjectConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => ProjectConfig::load(path)?,
        None => ProjectConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.pipeline.train.seed = seed;
    }
    if let Some(v) = cli.variant {
        config.variant.basis = match v {
            VariantArg::Fixed => BasisVariant::Fixed,
            VariantArg::Learned => BasisVariant::Learned,
        };
    }
    if let Some(r) = cli.route {
        config.variant.route = match r {
            RouteArg::Solver => Route::Solver,
            RouteArg::Projection => Route::Projection,
        };
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = effective_config(&cli)?;
    if cli.dump_config {
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Config("no command given (see --help)".into()));
    };
    match command {
        Command::Precompute => {
            let s = commands::precompute(&config)?;
            eprintln!("{} computed, {} reused", s.computed.len(), s.reused.len());
        }
        Command::Train => {
            let state = commands::train_cmd(&config)?;
            eprintln!("{} iterations, final loss {:?}", state.iteration, state.loss_history.last());
        }
        Command::Match { x, y, gt, refine, out, report } => {
            let opts = MatchOptions { ground_truth: gt, refine, output: out, report, one_based: cli.one_based };
            let r = commands::match_cmd(&config, &x, &y, &opts)?;
            match r.report.mean_error {
                Some(e) => eprintln!("{} (mean error {e:.5})", r.map_path.display()),
                None => eprintln!("{}", r.map_path.display()),
            }
        }
        Command::Refine { x, y, map, out } => {
            let trace = commands::refine_cmd(&config, &x, &y, &map, &out, cli.one_based)?;
            eprintln!("{} G-ZoomOut steps", trace.len());
        }
        Command::Eval { x, pred, gt, report } => {
            let r = commands::eval_cmd(&x, &pred, &gt, &report, cli.one_based)?;
            eprintln!("mean error {:.5}", r.mean_error);
        }
        Command::ExportPlots => {
            let e = commands::export_plots(&config)?;
            for m in &e.missing {
                eprintln!("missing: {m}");
            }
        }
        Command::Synth { base, kind, sigma, factors, out } => {
            let deformation = match kind {
                DeformationArg::Permutation => Deformation::Permutation,
                DeformationArg::Noisy => Deformation::NoisyPermutation { sigma },
                DeformationArg::Scale => {
                    Deformation::NonIsometricScale { factors: [factors[0], factors[1], factors[2]] }
                }
            };
            let mesh = commands::parse_base(&base)?;
            commands::synth_cmd(&mesh, deformation, cli.seed.unwrap_or(0), &out, cli.one_based)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
