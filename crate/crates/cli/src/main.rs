use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdewhittle_cli::commands::{cmd_bench, cmd_diagnose, cmd_infer, cmd_simulate};
use sdewhittle_cli::{CliResult, InferenceConfig};

/// Whittle-likelihood inference for stochastic differential equation models near equilibrium.
#[derive(Debug, Parser)]
#[command(name = "sdewhittle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate pseudo-data and write a t,y CSV with a JSON sidecar.
    Simulate(Common),
    /// Run MCMC on a data file and write chain CSVs and summaries.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Independent chains run concurrently with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        chains: usize,
        /// Also write per-observation filter diagnostics at the configured parameters.
        #[arg(long)]
        debug: bool,
    },
    /// Evaluate the Whittle-accuracy heuristic and write spectra.
    Diagnose(Common),
    /// Time one log-likelihood evaluation per backend.
    Bench(Common),
}

#[derive(Debug, clap::Args)]
struct Common {
    /// TOML configuration file.
    config: PathBuf,
    /// Output directory, overriding the config and the environment.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> CliResult<InferenceConfig> {
        let mut cfg = InferenceConfig::load(&self.config)?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(c) => {
            let out = cmd_simulate(&c.load()?)?;
            println!(
                "wrote {} observations to {}",
                out.n,
                out.data_path.display()
            );
        }
        Command::Infer {
            common,
            chains,
            debug,
        } => {
            let out = cmd_infer(&common.load()?, chains, debug)?;
            for (s, p) in out.summaries.iter().zip(&out.chain_paths) {
                println!(
                    "{}: {} iterations, acceptance {:.3}, mean ESS {:.1}",
                    p.display(),
                    s.chain.iterations,
                    s.chain.acceptance_rate,
                    s.chain.mean_ess()
                );
            }
        }
        Command::Diagnose(c) => {
            let r = cmd_diagnose(&c.load()?)?;
            println!(
                "phi {:.6e} max_f {:.6e} n_min {} T_min {:.3} s n {} {:?}",
                r.heuristic.phi,
                r.heuristic.max_f,
                r.heuristic.n_min,
                r.heuristic.t_min,
                r.n,
                r.verdict
            );
        }
        Command::Bench(c) => {
            let r = cmd_bench(&c.load()?)?;
            for e in &r.results {
                println!(
                    "{:?}: median {:.6e} s, loglik {}",
                    e.backend, e.median_seconds, e.loglik
                );
            }
            if let Some(x) = r.whittle_speedup_over_kalman {
                println!("whittle speedup over kalman: {x:.1}x");
            }
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
