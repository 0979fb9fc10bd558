//! `wavemod`: runs the wave-train pipeline stages from a JSON configuration.

mod config;
mod stages;

use clap::{Parser, Subcommand};
use config::{RunConfig, Stage};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "wavemod", version, about = "Wave trains, Bloch spectra and diffusive phase dynamics")]
struct Cli {
    /// JSON run configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the requested stages (all configured stages by default) in dependency order.
    Run {
        #[arg(long = "stage", num_args = 1..)]
        stages: Vec<Stage>,
    },
    Wavetrain,
    Spectrum {
        #[arg(long)]
        xi_count: Option<usize>,
    },
    Coeffs,
    SemigroupBench,
    PhaseBench,
    Simulate,
    Compare,
    Report,
    /// Print the effective configuration with defaults filled in.
    Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("invalid configuration: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Command::Spectrum { xi_count: Some(n) } = cli.command {
        cfg.spectrum.xi_count = n;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("invalid configuration: {e}");
        return ExitCode::from(2);
    }
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("--threads: need a positive thread count");
            return ExitCode::from(2);
        }
    }
    let stages = match cli.command {
        Command::Config => {
            print!("{}", cfg.to_json());
            return ExitCode::SUCCESS;
        }
        Command::Run { stages } if stages.is_empty() => cfg.stages.clone(),
        Command::Run { stages } => stages,
        Command::Wavetrain => vec![Stage::Wavetrain],
        Command::Spectrum { .. } => vec![Stage::Spectrum],
        Command::Coeffs => vec![Stage::Coeffs],
        Command::SemigroupBench => vec![Stage::SemigroupBench],
        Command::PhaseBench => vec![Stage::PhaseBench],
        Command::Simulate => vec![Stage::Simulate],
        Command::Compare => vec![Stage::Compare],
        Command::Report => vec![Stage::Report],
    };
    let out = cfg.output_dir.clone();
    let mut pipeline = stages::Pipeline::new(cfg, out);
    match pipeline.run(&stages) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
