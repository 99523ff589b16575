use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use vkplate::cli::{run_file, Overrides};

/// Constrained plate-bending solver: runs one JSON configuration.
#[derive(Parser, Debug)]
#[command(name = "vkplate", version)]
struct Args {
    /// Run configuration (JSON).
    config: PathBuf,
    /// Override the grid size.
    #[arg(long)]
    grid: Option<usize>,
    /// Override k with a constant.
    #[arg(long = "k-const", allow_negative_numbers = true)]
    k_const: Option<f64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let overrides = Overrides {
        grid: args.grid,
        k_const: args.k_const,
        out: args.out,
    };
    ExitCode::from(run_file(&args.config, &overrides))
}
