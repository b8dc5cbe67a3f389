use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use planefield::cli::{self, RunConfig, CHECKPOINT_FILE};
use planefield::{Error, Result};

#[derive(Parser)]
#[command(name = "planefield", version, about = "Pose-free dynamic radiance fields on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene bundle from a spec file or a built-in scene name.
    Gen {
        /// Scene spec (JSON or TOML) or one of the built-in names.
        #[arg(long, default_value = "dyn-sphere-64")]
        config: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the frame count.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Optimize fields and poses on a bundle.
    Train {
        /// Run configuration (TOML or JSON). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iters: Option<u64>,
        /// Bundle root, overriding the config.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Continue from a checkpoint (its stored configuration is used).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this iteration, keeping the full-length schedules.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Render frames from a checkpoint as PNG triplets.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated frame indices; all frames when omitted.
        #[arg(long, value_delimiter = ',')]
        frames: Option<Vec<usize>>,
        /// Also write static-only and dynamic-only renders.
        #[arg(long)]
        split: bool,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Score a checkpoint: PSNR, SSIM, mask IoU, ATE, RTE.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Directory for metrics.json; printed to stdout either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    cli::configure_threads()?;
    match cli.command {
        Command::Gen { config, out, seed, frames } => {
            cli::cmd_gen(&config, seed, frames, &out)?;
        }
        Command::Train {
            config,
            seed,
            out,
            iters,
            scene,
            resume,
            stop_at,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = &out {
                cfg.out = o.clone();
            }
            if let Some(i) = iters {
                cfg.train.iterations = i;
            }
            if let Some(s) = scene {
                cfg.scene = s;
            }
            cfg.validate()?;
            let req = cli::TrainRequest {
                resume,
                resume_out: out,
                stop_at,
            };
            let t = cli::cmd_train(cfg, &req)?;
            println!("{}", t.config.out.join(CHECKPOINT_FILE).display());
        }
        Command::Render {
            checkpoint,
            out,
            frames,
            split,
            scene,
        } => {
            let t = cli::load_trainer(&checkpoint, scene.as_deref())?;
            let frames = frames.unwrap_or_else(|| (0..t.bundle.frames.len()).collect());
            cli::cmd_render(&t, &frames, &out, split)?;
        }
        Command::Eval { checkpoint, scene, out } => {
            let t = cli::load_trainer(&checkpoint, scene.as_deref())?;
            let m = cli::cmd_eval(&t, out.as_deref())?;
            println!("{}", m.to_json()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
