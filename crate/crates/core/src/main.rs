use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use eigentopo::commands::{cmd_eig, cmd_optimize, cmd_verify};
use eigentopo::config::parse_config;

#[derive(Parser)]
#[command(name = "eigentopo", version, about = "Eigenfrequency topology optimization with eigen-cluster means")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the bound-formulation optimization.
    Optimize(JobArgs),
    /// Solve the eigenproblem at a uniform design.
    Eig(JobArgs),
    /// Check analytic gradients against central differences.
    Verify(JobArgs),
}

#[derive(Args)]
struct JobArgs {
    /// JSON job configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to `output_dir` in the config, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed overriding the config value.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> Result<()> {
    env_logger::init();
    let cli = Cli::parse();
    let (Command::Optimize(args) | Command::Eig(args) | Command::Verify(args)) = &cli.command;
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let cfg = parse_config(&text).with_context(|| format!("in {}", args.config.display()))?.with_seed(args.seed);
    let out = args.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Optimize(_) => {
            let r = cmd_optimize(&cfg, &out)?;
            if let Some(last) = r.records.last() {
                println!("iterations: {}  f0: {}", last.iteration, last.objective);
            }
        }
        Command::Eig(_) => {
            let e = cmd_eig(&cfg, &out)?;
            println!("eigenvalues: {:?}", e.values);
        }
        Command::Verify(_) => {
            let v = cmd_verify(&cfg, &out)?;
            for (s, r) in &v.reports {
                let state = s.map(|s| format!("state {s} ")).unwrap_or_default();
                println!("{state}{} {:?}: max rel err {:.3e} ({})", r.quantity, r.space, r.max_rel_error, r.verdict.as_str());
            }
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
