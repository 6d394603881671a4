use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sppo_cli::{benchmark, config, pipeline, report, CliError};

#[derive(Parser)]
#[command(name = "sppo", version, about = "Sequence-level PPO control benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one expert -> cloning -> fine-tuning pipeline.
    Run {
        /// Experiment config (TOML).
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory, overriding the config and the output root.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue an interrupted run, reloading finished stages.
        #[arg(long)]
        resume: bool,
    },
    /// Run every cell of a task x algorithm x seed matrix.
    Benchmark {
        /// Matrix file (TOML): seeds, envs, algorithms and shared overrides.
        matrix: PathBuf,
        /// Results root, overriding the matrix and the output root.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip cells that already finished.
        #[arg(long)]
        resume: bool,
    },
    /// Summarize a results tree.
    Report {
        /// Directory holding run or benchmark output.
        tree: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config: path,
            seed,
            out,
            resume,
        } => {
            let mut cfg = config::load_config(&path)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = pipeline::run_dir(&cfg, out.as_deref());
            let summary = pipeline::run_experiment(&cfg, &dir, resume)?;
            match summary.final_success {
                Some(s) => println!("{}: final eval success {s}", summary.dir.display()),
                None => println!("{}: done", summary.dir.display()),
            }
        }
        Command::Benchmark { matrix, out, resume } => {
            let m = benchmark::load_matrix(&matrix)?;
            let summary = benchmark::run_benchmark(&m, out.as_deref(), resume)?;
            println!(
                "{}: {} cells run, {} already complete",
                summary.root.display(),
                summary.completed,
                summary.skipped
            );
        }
        Command::Report { tree } => print!("{}", report::write_report(&tree)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let err = anyhow::Error::new(e).context("sppo failed");
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
