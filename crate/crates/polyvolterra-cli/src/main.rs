use clap::{Parser, Subcommand};
use polyvolterra_cli::commands::{self, Global, Outcome};
use polyvolterra_cli::{CliError, EXIT_FAIL};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "polyvolterra", version, about = "Moments of polynomial Volterra processes")]
struct Cli {
    /// Experiment TOML file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for CSV and manifest outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the Monte Carlo and jump seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for path simulation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic moment tables.
    Moments {
        #[arg(long = "N")]
        n: Option<usize>,
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long = "T")]
        t: Option<f64>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Euler path simulation and Monte Carlo moments.
    Simulate {
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the first n paths to `<out>_paths.csv`.
        #[arg(long)]
        dump_paths: Option<usize>,
    },
    /// Moments from the pure-jump dual process.
    JumpDual {
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        kvec: Option<Vec<usize>>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        signed_mode: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs every configured method and cross-checks them.
    Compare,
    /// Error against a reference as the step count or path count grows.
    Converge {
        #[arg(long)]
        method: String,
        #[arg(long, value_delimiter = ',', required = true)]
        list: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Model, kernel and applicability checks.
    Validate,
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let g = Global { config: cli.config, out_dir: cli.out_dir, seed: cli.seed, threads: cli.threads };
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Moments { n, m, t, method, out } => {
            commands::moments(&g, &commands::MomentsArgs { n, m, t, method, out })
        }
        Command::Simulate { paths, m, out, dump_paths } => {
            commands::simulate(&g, &commands::SimulateArgs { paths, m, out, dump_paths })
        }
        Command::JumpDual { k, kvec, samples, signed_mode, out } => {
            commands::jump_dual(&g, &commands::JumpArgs { k, kvec, samples, signed: signed_mode, out })
        }
        Command::Compare => commands::compare(&g),
        Command::Converge { method, list, out } => {
            commands::converge(&g, &commands::ConvergeArgs { method, list, out })
        }
        Command::Validate => commands::validate(&g),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            for l in &outcome.lines {
                println!("{l}");
            }
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL as u8)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
