use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use capcli::artifacts::write_file;
use capcli::eval::{self, Evaluator, CRITERIA};
use capcli::pipeline::{self, Context};
use capcli::{CliError, CliResult, PipelineConfig};

/// Avatar-conditioned monocular capture pipeline on synthetic subjects.
#[derive(Parser, Debug)]
#[command(name = "capcli", version)]
struct Cli {
    /// TOML pipeline configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-frame stages.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Also write the avatar, observed and fused maps of every frame.
    #[arg(long, global = true)]
    dump_intermediates: bool,
    /// Work directory, overriding the configuration.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct FrameArgs {
    /// Frame directories to process (default: every frame in the workdir).
    #[arg(long = "frame")]
    frames: Vec<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate training scans and synthetic test frames.
    SynthCorpus,
    /// Train the geometry/texture avatar on the corpus.
    TrainAvatar,
    /// Train the reconstruction network on the corpus.
    TrainRecon,
    /// Extract the avatar and its canonical normal maps at each frame's pose.
    Animate(FrameArgs),
    /// Canonicalize observed normals and fuse them with the avatar maps.
    FuseNormals(FrameArgs),
    /// Reconstruct canonical and posed surfaces from the fused maps.
    Reconstruct(FrameArgs),
    /// Colour reconstructed surfaces from the avatar's texture field.
    Texgen(FrameArgs),
    /// Run every per-frame stage and write textured meshes.
    Capture(FrameArgs),
    /// Compute acceptance metrics and write them to eval.csv.
    Eval {
        /// Comma-separated criteria (default: all).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn load_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.workdir {
        cfg.workdir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let ctx = Context::new(load_config(cli)?)?;
    let log = |m: &str| eprintln!("{m}");
    match &cli.command {
        Command::SynthCorpus => {
            let corpus = pipeline::cmd_synth_corpus(&ctx)?;
            eprintln!("{} scans and {} frames in {}", corpus.train.len(), corpus.test_poses.len(), ctx.layout.root.display());
        }
        Command::TrainAvatar => pipeline::cmd_train_avatar(&ctx, log)?,
        Command::TrainRecon => pipeline::cmd_train_recon(&ctx, log)?,
        Command::Animate(a) => pipeline::cmd_animate(&ctx, &a.frames)?,
        Command::FuseNormals(a) => pipeline::cmd_fuse_normals(&ctx, &a.frames)?,
        Command::Reconstruct(a) => pipeline::cmd_reconstruct(&ctx, &a.frames)?,
        Command::Texgen(a) => pipeline::cmd_texgen(&ctx, &a.frames)?,
        Command::Capture(a) => {
            for dir in pipeline::cmd_capture(&ctx, &a.frames, cli.jobs, cli.dump_intermediates)? {
                eprintln!("wrote {}", dir.display());
            }
        }
        Command::Eval { criteria } => {
            let criteria = if criteria.is_empty() { CRITERIA.to_vec() } else { criteria.clone() };
            let evaluator = Evaluator::new(ctx.cfg.clone(), ctx.layout.root.join("eval_scratch"), |m| eprintln!("{m}"));
            let mut reports = Vec::new();
            for c in criteria {
                let r = evaluator.run(c)?;
                println!("{}", r.line());
                reports.push(r);
            }
            write_file(&ctx.layout.eval_csv(), eval::to_csv(&reports).as_bytes())?;
            if reports.iter().any(|r| !r.pass()) {
                return Err(CliError::config("some acceptance criteria failed"));
            }
        }
        Command::PrintConfig => print!("{}", ctx.cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
