use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trifield::checks::Scope;
use trifield::cli::{self, DiffusionCommand};
use trifield::config::RunConfig;
use trifield::{Error, Result};

/// Triplane fields, any-view rendering and a toy triplane diffusion model.
///
/// Set TRIFIELD_THREADS to cap the number of rendering threads.
#[derive(Debug, Parser)]
#[command(name = "trifield", version)]
struct Args {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-difference checks of every adjoint.
    Gradcheck {
        /// all, numerics, attention or renderer.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Fit the configured analytic scene from oracle views.
    Fit,
    /// Render a fitted field from any orbit pose.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        azimuth: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        elevation: Option<f64>,
        /// Square image side in pixels.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Toy triplane diffusion.
    Diffusion {
        #[command(subcommand)]
        action: DiffusionAction,
    },
    /// Compare a fitted field with the oracle at the evaluation poses.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum DiffusionAction {
    Train,
    Sample {
        /// Defaults to denoiser.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Paired training with and without orthogonal attention.
    Ablate,
}

fn load(args: &Args) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(args: Args) -> Result<bool> {
    let cfg = load(&args)?;
    match args.command {
        Command::Gradcheck { scope, inject_fault } => {
            let scope = Scope::parse(&scope)?;
            // the fault name must outlive the graph that records it
            let fault = inject_fault.map(|s| &*Box::leak(s.into_boxed_str()));
            cli::run_gradcheck(scope, cfg.seed, &cfg.out, fault)
        }
        Command::Fit => cli::run_fit(&cfg),
        Command::Render {
            checkpoint,
            azimuth,
            elevation,
            size,
        } => {
            let azimuth = azimuth.unwrap_or(cfg.render.azimuth);
            let elevation = elevation.unwrap_or(cfg.render.elevation);
            let size = size.unwrap_or(cfg.render.size);
            if size == 0 {
                return Err(Error::Config("--size must be positive".into()));
            }
            cli::run_render(&cfg, &checkpoint, azimuth, elevation, size)
        }
        Command::Diffusion { action } => match action {
            DiffusionAction::Train => cli::run_diffusion(&cfg, DiffusionCommand::Train, None),
            DiffusionAction::Sample { checkpoint } => {
                cli::run_diffusion(&cfg, DiffusionCommand::Sample, checkpoint.as_deref())
            }
            DiffusionAction::Ablate => cli::run_diffusion(&cfg, DiffusionCommand::Ablate, None),
        },
        Command::Eval { checkpoint } => cli::run_eval(&cfg, &checkpoint),
    }
}

fn main() -> ExitCode {
    let result = run(Args::parse());
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    ExitCode::from(cli::exit_code(&result) as u8)
}
