//! Single-binary orchestrator: simulate control agents, audit record files,
//! run live elicitation campaigns, and tabulate size/power studies. Every
//! stochastic subcommand requires an explicit --seed and is end-to-end
//! deterministic given it, independent of --threads.

mod audit;
mod elicit_cmd;
mod power;
mod simulate;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "belief-audit",
    version,
    about = "Falsification tests for elicited beliefs"
)]
struct Cli {
    /// Worker threads for bootstrap/permutation/power cells (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a control agent on a synthetic network into a records file
    Simulate(simulate::SimulateArgs),
    /// Run the audit battery on a records file and emit a report bundle
    Audit(audit::AuditArgs),
    /// Run (or resume) a live elicitation campaign against an endpoint
    Elicit(elicit_cmd::ElicitArgs),
    /// Tabulate test size/power over a grid of agents and seeds
    #[command(name = "power-study")]
    PowerStudy(power::PowerStudyArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .expect("thread pool is configured once at startup");
    }
    let outcome = match cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Audit(args) => audit::run(args),
        Command::Elicit(args) => elicit_cmd::run(args),
        Command::PowerStudy(args) => power::run(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
