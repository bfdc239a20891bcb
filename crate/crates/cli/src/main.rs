use clap::{Args, Parser, Subcommand};
use kslab_cli::{cmd_check, cmd_simulate, cmd_steady, cmd_sweep, Invocation, EXIT_CONFIG, EXIT_OK};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "kslab",
    version,
    about = "Numerical laboratory for chemotaxis systems with signal-dependent motility"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized initial data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for sweeps; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a scenario and record diagnostics.
    Simulate(CommonArgs),
    /// Evaluate boundedness hypotheses for a motility family.
    Check(CommonArgs),
    /// Solve steady states, single or marched along a parameter.
    Steady(CommonArgs),
    /// Map a scenario over a parameter lattice.
    Sweep(CommonArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land on stdout and exit clean;
            // anything else is a usage error.
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code as i32);
        }
    };
    let (run, args): (fn(&Invocation) -> u8, CommonArgs) = match cli.command {
        Command::Simulate(a) => (cmd_simulate, a),
        Command::Check(a) => (cmd_check, a),
        Command::Steady(a) => (cmd_steady, a),
        Command::Sweep(a) => (cmd_sweep, a),
    };
    let inv = Invocation {
        config: args.config,
        out: args.out,
        seed: args.seed,
        threads: args.threads,
    };
    std::process::exit(run(&inv) as i32);
}
