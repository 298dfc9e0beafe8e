use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use imsm_cli::commands::{self, Ctx};
use imsm_cli::{config, exit_code};

#[derive(Parser)]
#[command(
    name = "imsm",
    version,
    about = "Drift reconstruction from invariant-measure samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Built-in preset the configuration is layered over.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Also train the plain residual-loss baseline with the same budget.
    #[arg(long, global = true)]
    baseline_pinn: bool,
    /// Validate the configuration and print the plan only.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Directory that relative artifact paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate the training dataset.
    Simulate,
    /// Print the noise schedule of the dataset.
    Schedule,
    /// Train the score network.
    TrainScore,
    /// Draw annealed Langevin samples from the score network.
    SampleScore,
    /// Train the velocity network.
    TrainVelocity,
    /// Compare learned and reference dynamics.
    Evaluate,
    /// Run every stage, skipping those already complete.
    Pipeline,
}

fn run(cli: &Cli) -> imsm::Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| imsm::Error::Usage("--config PATH is required".into()))?;
    let cfg = config::load(path, cli.preset.as_deref(), cli.seed)?;
    let ctx = Ctx::new(cfg, &cli.out, cli.baseline_pinn);
    if cli.dry_run && cli.command != Command::Pipeline {
        println!("configuration valid, digest {}", ctx.digest);
        return Ok(());
    }
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Schedule => commands::schedule(&ctx),
        Command::TrainScore => commands::train_score_cmd(&ctx),
        Command::SampleScore => commands::sample_score(&ctx),
        Command::TrainVelocity => commands::train_velocity_cmd(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Pipeline => commands::pipeline(&ctx, cli.dry_run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
