use std::path::PathBuf;

use anyhow::Context;
use belief_audit::elicit::{load_campaign_records, run_elicitation, CampaignConfig};
use belief_audit::records::validate_dataset;
use clap::Args;

#[derive(Args)]
pub struct ElicitArgs {
    /// Campaign configuration (JSON)
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Continue a partial run, skipping already-persisted keys
    #[arg(long)]
    pub resume: bool,
    /// Override the records output path from the config
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: ElicitArgs) -> anyhow::Result<()> {
    let mut cfg = CampaignConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(out) = args.out {
        cfg.out_records = out;
    }
    // Fail before any request if the token is missing.
    std::env::var(&cfg.endpoint.auth_env).map_err(|_| {
        anyhow::anyhow!(
            "auth token environment variable '{}' is not set",
            cfg.endpoint.auth_env
        )
    })?;
    if cfg.out_records.exists() && !args.resume {
        anyhow::bail!(
            "{} already exists; pass --resume to continue the campaign",
            cfg.out_records.display()
        );
    }

    let summary = run_elicitation(&cfg, args.seed)?;
    println!(
        "campaign complete: {} records written, {} skipped (already persisted), {} coherence triples, {} quarantined",
        summary.records_written,
        summary.records_skipped_existing,
        summary.lie_triples_written,
        summary.quarantined
    );
    let dataset = load_campaign_records(&cfg)?;
    let report = validate_dataset(&dataset);
    println!(
        "records validate: {} contexts, {} flags",
        report.n_contexts,
        report.flags.len()
    );
    Ok(())
}
