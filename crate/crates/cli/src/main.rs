//! `voco`: data generation, pretraining, probing, ablations and label inspection.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or validation failure.

mod ablate;
mod failure;
mod gen_data;
mod inspect;
mod pretrain;
mod probe;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use failure::Failure;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("VOCO_GIT_DESCRIBE"), ")");

#[derive(Parser)]
#[command(name = "voco", version = VERSION, about = "Volume-contrast pretraining at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic phantom volumes and a dataset manifest.
    GenData {
        /// Phantom spec, TOML (or JSON with a .json extension).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Volume shape X,Y,Z.
        #[arg(long, value_parser = parse_triple)]
        shape: [usize; 3],
        /// Sample seeds are first_seed .. first_seed + count.
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
    },
    /// Pretrain an encoder.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write wall_ms = 0 so seeded runs produce identical logs.
        #[arg(long)]
        deterministic: bool,
    },
    /// Linear position probe and basis diagnostics of a checkpoint.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        /// Held-out `.vol1` volumes; defaults to held-out phantoms.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and probe one model per value of an ablation axis.
    Ablate {
        /// loss_terms, n_grid or lambda.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the position label of one crop.
    InspectLabels {
        /// Grid GX,GY,GZ.
        #[arg(long, value_parser = parse_triple)]
        grid: [usize; 3],
        #[arg(long, value_parser = parse_triple)]
        crop_size: [usize; 3],
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_triple, default_value = "96,96,16")]
        volume_shape: [usize; 3],
        /// Fixed crop origin; sampled uniformly from the seed when absent.
        #[arg(long, value_parser = parse_triple)]
        origin: Option<[usize; 3]>,
    },
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split([',', 'x']).map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got `{s}`"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("`{p}` is not a non-negative integer"))?;
    }
    Ok(out)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData {
            spec,
            count,
            out,
            shape,
            first_seed,
        } => gen_data::run(&spec, count, &out, shape, first_seed),
        Command::Pretrain {
            config,
            out,
            resume,
            deterministic,
        } => pretrain::run(&config, &out, resume.as_deref(), deterministic),
        Command::Probe { ckpt, data, out } => probe::run(&ckpt, data.as_deref(), &out),
        Command::Ablate { axis, config, out } => ablate::run(&axis, &config, &out),
        Command::InspectLabels {
            grid,
            crop_size,
            seed,
            volume_shape,
            origin,
        } => inspect::run(grid, crop_size, seed, volume_shape, origin),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
