use std::path::PathBuf;

use anyhow::Context;
use belief_audit::agents::{run_episode, AgentSpec};
use belief_audit::audits::lie_oracle_triples;
use belief_audit::bayesnet::{BayesNet, ContextAssignment};
use clap::Args;

#[derive(Args)]
pub struct SimulateArgs {
    /// Network file or generator recipe (JSON)
    #[arg(long)]
    pub net: PathBuf,
    /// Agent configuration (JSON)
    #[arg(long)]
    pub agent: PathBuf,
    /// Number of stratified contexts
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Repetitions per context
    #[arg(long, default_value_t = 5)]
    pub reps: u32,
    #[arg(long)]
    pub seed: u64,
    /// Output records JSONL
    #[arg(long)]
    pub out: PathBuf,
    /// Also write exact coherence triples for these contexts (z withheld)
    #[arg(long, requires = "z_node")]
    pub lie_out: Option<PathBuf>,
    /// Auxiliary node to withhold for the coherence triples
    #[arg(long)]
    pub z_node: Option<String>,
}

pub fn run(args: SimulateArgs) -> anyhow::Result<()> {
    let net = BayesNet::load(&args.net)
        .with_context(|| format!("loading network {}", args.net.display()))?;
    let agent = AgentSpec::load(&args.agent)
        .with_context(|| format!("loading agent {}", args.agent.display()))?;

    let dataset = run_episode(&net, &agent, args.n, args.reps, args.seed)?;
    let file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    dataset.write_jsonl(std::io::BufWriter::new(file))?;
    println!(
        "wrote {} records ({} contexts x {} repetitions) to {}",
        dataset.records.len(),
        args.n,
        args.reps,
        args.out.display()
    );

    if let (Some(lie_out), Some(z_node)) = (&args.lie_out, &args.z_node) {
        let (contexts, _) = net.sample_contexts_stratified(args.n, 20, args.seed)?;
        let withheld: Vec<ContextAssignment> = contexts
            .iter()
            .map(|c| ContextAssignment {
                pairs: c
                    .pairs
                    .iter()
                    .filter(|(name, _)| name != z_node)
                    .cloned()
                    .collect(),
            })
            .collect();
        let (triples, notes) = lie_oracle_triples(&net, &withheld, z_node)?;
        let mut out = String::new();
        for t in &triples {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        std::fs::write(lie_out, out).with_context(|| format!("writing {}", lie_out.display()))?;
        println!(
            "wrote {} coherence triples to {} ({} zero-weight cells skipped)",
            triples.len(),
            lie_out.display(),
            notes.len()
        );
    }
    Ok(())
}
