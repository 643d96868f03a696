use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use belief_audit::audits::{
    ci_test, lie_oracle_triples, lie_test, monotone_pairwise_test, prompt_consistency,
    CiTestConfig, CiTestResult, Conditioning, ConsistencyConfig, ConsistencyResult, LieBaseline,
    LieBaselineConfig, LieConfig, LieResult, MonotoneConfig, MonotoneTestResult, PredictiveConfig,
    PredictiveTestResult, Variant,
};
use belief_audit::bayesnet::{BayesNet, ContextAssignment};
use belief_audit::estimators::GbdtConfig;
use belief_audit::records::{
    load_lie_triples, load_records, load_records_inferred, ActionLabel, Dataset, RecordFormat,
    Schema,
};
use belief_audit::report::{
    ci_table_markdown, dot4_table_markdown, monotone_table_markdown, to_csv, CiTableRow,
    Dot4TableRow, MonotoneTableRow,
};
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Args)]
pub struct AuditArgs {
    /// Records file (JSONL by default, CSV with --csv)
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub csv: bool,
    /// Covariate schema JSON; inferred from the records file when absent
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output directory for the report bundle
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Defaults for everything below; explicit flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated subset of ci,predictive,monotone,consistency,lie
    #[arg(long, value_delimiter = ',')]
    pub tests: Option<Vec<String>>,
    /// Table formats to emit alongside the JSON results
    #[arg(long, value_delimiter = ',', value_parser = ["json", "csv", "md"])]
    pub format: Option<Vec<String>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub bootstraps: Option<usize>,
    #[arg(long)]
    pub n_perm: Option<usize>,
    /// Quantile bins for the monotone test
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Action pair for the monotone test, e.g. --pair Yes No (repeatable)
    #[arg(long, num_args = 2, action = clap::ArgAction::Append)]
    pub pair: Option<Vec<String>>,
    #[arg(long, value_parser = ["raw", "isotonic"])]
    pub variant: Option<String>,
    #[arg(long, value_parser = ["belief", "belief+context"])]
    pub conditioning: Option<String>,
    /// Coherence triples JSONL (enables the lie test)
    #[arg(long)]
    pub lie_triples: Option<PathBuf>,
    /// Network file; enables the coherence regressor baseline
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long)]
    pub reference_prompt: Option<String>,
    /// Row label used in emitted tables (default: records file stem)
    #[arg(long)]
    pub label: Option<String>,
}

/// File-level defaults; any CLI flag overrides its field.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    tests: Option<Vec<String>>,
    format: Option<Vec<String>>,
    k: Option<usize>,
    bootstraps: Option<usize>,
    n_perm: Option<usize>,
    bins: Option<usize>,
    alpha: Option<f64>,
    folds: Option<usize>,
    depth: Option<usize>,
    iterations: Option<usize>,
    pairs: Option<Vec<(String, String)>>,
    variant: Option<String>,
    conditioning: Option<String>,
    reference_prompt: Option<String>,
    lie_triples: Option<PathBuf>,
    net: Option<PathBuf>,
    label: Option<String>,
}

#[derive(Serialize)]
struct BundleSummary {
    records: String,
    n_records: usize,
    n_contexts: usize,
    tests: BTreeMap<String, serde_json::Value>,
    files: Vec<String>,
}

fn parse_action(s: &str) -> anyhow::Result<ActionLabel> {
    ActionLabel::parse(s).ok_or_else(|| anyhow::anyhow!("unknown action label '{s}'"))
}

fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    value: &T,
    files: &mut Vec<String>,
) -> anyhow::Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    files.push(name.to_string());
    Ok(())
}

pub fn run(args: AuditArgs) -> anyhow::Result<()> {
    let file_cfg: FileConfig = match &args.config {
        Some(path) => serde_json::from_str(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?,
        None => FileConfig::default(),
    };

    let format = RecordFormat::if_csv(args.csv);
    let dataset = match args.schema.as_ref() {
        Some(schema_path) => {
            let schema: Schema = serde_json::from_str(
                &std::fs::read_to_string(schema_path)
                    .with_context(|| format!("reading {}", schema_path.display()))?,
            )?;
            load_records(&args.records, format, &schema)?
        }
        None => load_records_inferred(&args.records, format)?,
    };

    let tests = args.tests.or(file_cfg.tests).unwrap_or_else(|| {
        ["ci", "predictive", "monotone", "consistency", "lie"]
            .map(String::from)
            .to_vec()
    });
    let formats = args
        .format
        .or(file_cfg.format)
        .unwrap_or_else(|| ["json", "csv", "md"].map(String::from).to_vec());
    let k = args.k.or(file_cfg.k).unwrap_or(3);
    let bootstraps = args.bootstraps.or(file_cfg.bootstraps).unwrap_or(500);
    let n_perm = args.n_perm.or(file_cfg.n_perm).unwrap_or(199);
    let bins = args.bins.or(file_cfg.bins).unwrap_or(5);
    let alpha = args.alpha.or(file_cfg.alpha).unwrap_or(0.05);
    let folds = args.folds.or(file_cfg.folds).unwrap_or(5);
    let depth = args.depth.or(file_cfg.depth).unwrap_or(6);
    let iterations = args.iterations.or(file_cfg.iterations).unwrap_or(1000);
    let variant = match args.variant.or(file_cfg.variant).as_deref() {
        Some("isotonic") => Variant::Isotonic,
        _ => Variant::Raw,
    };
    let conditioning: Option<Conditioning> =
        match args.conditioning.or(file_cfg.conditioning).as_deref() {
            Some("belief") => Some(Conditioning::BeliefOnly),
            Some("belief+context") => Some(Conditioning::BeliefPlusContext),
            _ => None,
        };
    let pairs: Vec<(ActionLabel, ActionLabel)> = match (&args.pair, &file_cfg.pairs) {
        (Some(flat), _) => flat
            .chunks(2)
            .map(|c| Ok((parse_action(&c[0])?, parse_action(&c[1])?)))
            .collect::<anyhow::Result<_>>()?,
        (None, Some(pairs)) => pairs
            .iter()
            .map(|(a, b)| Ok((parse_action(a)?, parse_action(b)?)))
            .collect::<anyhow::Result<_>>()?,
        (None, None) => vec![
            (ActionLabel::Yes, ActionLabel::No),
            (ActionLabel::Yes, ActionLabel::Defer),
            (ActionLabel::Defer, ActionLabel::No),
        ],
    };
    let reference_prompt = args
        .reference_prompt
        .or(file_cfg.reference_prompt)
        .unwrap_or_else(|| "std".to_string());
    let lie_triples_path = args.lie_triples.or(file_cfg.lie_triples);
    let net_path = args.net.or(file_cfg.net);
    let label = args.label.or(file_cfg.label).unwrap_or_else(|| {
        args.records
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    // File name only: bundles rerun from other directories must stay byte-identical.
    let mut summary = BundleSummary {
        records: args
            .records
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| args.records.display().to_string()),
        n_records: dataset.records.len(),
        n_contexts: belief_audit::records::validate_dataset(&dataset).n_contexts,
        tests: BTreeMap::new(),
        files: Vec::new(),
    };
    let mut ci_result: Option<CiTestResult> = None;
    let mut predictive_results: BTreeMap<&'static str, PredictiveTestResult> = BTreeMap::new();
    let mut monotone_results: Vec<MonotoneTestResult> = Vec::new();
    let mut consistency_result: Option<ConsistencyResult> = None;

    for test in &tests {
        match test.as_str() {
            "ci" => {
                let cfg = CiTestConfig {
                    k,
                    bootstraps,
                    n_perm,
                    variant,
                    conditioning: Conditioning::BeliefOnly,
                    ..Default::default()
                };
                match ci_test(&dataset, &cfg, args.seed) {
                    Ok(res) => {
                        write_json(&args.out, "ci_test.json", &res, &mut summary.files)?;
                        summary.tests.insert("ci".into(), serde_json::json!("ok"));
                        ci_result = Some(res);
                    }
                    Err(e) => {
                        summary
                            .tests
                            .insert("ci".into(), serde_json::json!({ "error": e.to_string() }));
                    }
                }
            }
            "predictive" => {
                let runs: Vec<(Conditioning, &'static str, &'static str)> = match conditioning {
                    Some(Conditioning::BeliefOnly) => {
                        vec![(Conditioning::BeliefOnly, "belief", "predictive_belief.json")]
                    }
                    Some(Conditioning::BeliefPlusContext) => vec![(
                        Conditioning::BeliefPlusContext,
                        "belief+context",
                        "predictive_context.json",
                    )],
                    None => vec![
                        (Conditioning::BeliefOnly, "belief", "predictive_belief.json"),
                        (
                            Conditioning::BeliefPlusContext,
                            "belief+context",
                            "predictive_context.json",
                        ),
                    ],
                };
                for (cond, key, file) in runs {
                    let cfg = PredictiveConfig {
                        conditioning: cond,
                        folds,
                        gbdt: GbdtConfig {
                            depth,
                            iterations,
                            ..Default::default()
                        },
                        bootstraps,
                        level: 0.95,
                    };
                    match belief_audit::audits::predictive_sufficiency_test(
                        &dataset, &cfg, args.seed,
                    ) {
                        Ok(res) => {
                            write_json(&args.out, file, &res, &mut summary.files)?;
                            summary
                                .tests
                                .insert(format!("predictive[{key}]"), serde_json::json!("ok"));
                            predictive_results.insert(key, res);
                        }
                        Err(e) => {
                            summary.tests.insert(
                                format!("predictive[{key}]"),
                                serde_json::json!({ "error": e.to_string() }),
                            );
                        }
                    }
                }
            }
            "monotone" => {
                for (a1, a2) in &pairs {
                    let cfg = MonotoneConfig {
                        pair: (*a1, *a2),
                        bins,
                        alpha,
                        use_binomial: false,
                    };
                    let key = format!("monotone[{a1}/{a2}]");
                    match monotone_pairwise_test(&dataset, &cfg, args.seed) {
                        Ok(res) => {
                            let file = format!("monotone_{a1}_{a2}.json");
                            write_json(&args.out, &file, &res, &mut summary.files)?;
                            summary.tests.insert(key, serde_json::json!("ok"));
                            monotone_results.push(res);
                        }
                        Err(e) => {
                            summary
                                .tests
                                .insert(key, serde_json::json!({ "error": e.to_string() }));
                        }
                    }
                }
            }
            "consistency" => {
                let cfg = ConsistencyConfig {
                    reference_prompt: reference_prompt.clone(),
                    per_repetition: false,
                };
                match prompt_consistency(&dataset, &cfg) {
                    Ok(res) => {
                        write_json(&args.out, "consistency.json", &res, &mut summary.files)?;
                        summary
                            .tests
                            .insert("consistency".into(), serde_json::json!("ok"));
                        consistency_result = Some(res);
                    }
                    Err(e) => {
                        summary.tests.insert(
                            "consistency".into(),
                            serde_json::json!({ "error": e.to_string() }),
                        );
                    }
                }
            }
            "lie" => {
                let Some(path) = &lie_triples_path else {
                    summary.tests.insert(
                        "lie".into(),
                        serde_json::json!({ "error": "no --lie-triples file supplied" }),
                    );
                    continue;
                };
                match run_lie(&dataset, path, net_path.as_deref(), bootstraps, args.seed) {
                    Ok(res) => {
                        write_json(&args.out, "lie.json", &res, &mut summary.files)?;
                        summary.tests.insert("lie".into(), serde_json::json!("ok"));
                    }
                    Err(e) => {
                        summary
                            .tests
                            .insert("lie".into(), serde_json::json!({ "error": e.to_string() }));
                    }
                }
            }
            other => {
                summary.tests.insert(
                    other.to_string(),
                    serde_json::json!({ "error": "unknown test" }),
                );
            }
        }
    }

    emit_tables(
        &args.out,
        &label,
        &formats,
        ci_result.as_ref(),
        &predictive_results,
        &pairs,
        &monotone_results,
        consistency_result.as_ref(),
        &mut summary.files,
    )?;

    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(args.out.join("summary.json"), text)?;
    println!(
        "audited {} records across {} contexts; bundle in {}",
        summary.n_records,
        summary.n_contexts,
        args.out.display()
    );
    for (test, state) in &summary.tests {
        println!("  {test}: {state}");
    }
    Ok(())
}

/// Coherence test; when a network is supplied, fit the oracle-regressor
/// baseline from the dataset's own contexts with the partition variable
/// withheld.
fn run_lie(
    dataset: &Dataset,
    triples_path: &Path,
    net_path: Option<&Path>,
    bootstraps: usize,
    seed: u64,
) -> anyhow::Result<LieResult> {
    let triples = load_lie_triples(triples_path)?;
    let baseline = match net_path {
        None => None,
        Some(path) => {
            let net = BayesNet::load(path)?;
            let z_node = triples
                .first()
                .map(|t| t.partition.variable.clone())
                .ok_or_else(|| anyhow::anyhow!("triple file is empty"))?;
            // distinct contexts in id order, z withheld
            let mut by_context: BTreeMap<String, ContextAssignment> = BTreeMap::new();
            for record in &dataset.records {
                by_context
                    .entry(record.context_id.clone())
                    .or_insert_with(|| ContextAssignment {
                        pairs: dataset
                            .schema
                            .covariates
                            .iter()
                            .filter(|def| def.name != z_node)
                            .filter_map(|def| {
                                record
                                    .covariates
                                    .get(&def.name)
                                    .map(|level| (def.name.clone(), level.clone()))
                            })
                            .collect(),
                    });
            }
            let contexts: Vec<ContextAssignment> = by_context.values().cloned().collect();
            let (oracle_triples, _) = lie_oracle_triples(&net, &contexts, &z_node)?;
            // oracle triples come back indexed; rekey them to the dataset ids
            let mut rekeyed = Vec::with_capacity(oracle_triples.len());
            let mut features = BTreeMap::new();
            for ((id, ctx), mut triple) in by_context.iter().zip(oracle_triples) {
                triple.context_id = id.clone();
                rekeyed.push(triple);
                let row: Vec<f64> = ctx
                    .pairs
                    .iter()
                    .map(|(name, level)| {
                        net.levels_of(name)
                            .ok()
                            .and_then(|ls| ls.iter().position(|l| l == level))
                            .unwrap_or(0) as f64
                    })
                    .collect();
                features.insert(id.clone(), row);
            }
            Some(LieBaseline {
                triples: rekeyed,
                features,
                config: LieBaselineConfig::default(),
            })
        }
    };
    let cfg = LieConfig {
        bootstraps,
        level: 0.95,
    };
    Ok(lie_test(&triples, baseline.as_ref(), &cfg, seed)?)
}

#[allow(clippy::too_many_arguments)]
fn emit_tables(
    dir: &Path,
    label: &str,
    formats: &[String],
    ci: Option<&CiTestResult>,
    predictive: &BTreeMap<&'static str, PredictiveTestResult>,
    pairs: &[(ActionLabel, ActionLabel)],
    monotone: &[MonotoneTestResult],
    consistency: Option<&ConsistencyResult>,
    files: &mut Vec<String>,
) -> anyhow::Result<()> {
    let want_md = formats.iter().any(|f| f == "md");
    let want_csv = formats.iter().any(|f| f == "csv");
    if !want_md && !want_csv {
        return Ok(());
    }
    let write = |name: &str, content: String, files: &mut Vec<String>| -> anyhow::Result<()> {
        std::fs::write(dir.join(name), content)?;
        files.push(name.to_string());
        Ok(())
    };

    if let Some(ci) = ci {
        let belief = predictive.get("belief");
        let context = predictive.get("belief+context");
        let row = CiTableRow {
            label: label.to_string(),
            cmi: ci.cmi.value,
            cmi_ci: (ci.ci.lower, ci.ci.upper),
            impr: belief.map(|p| p.pct_improvement).unwrap_or(f64::NAN),
            impr_ci: belief
                .map(|p| (p.ci.lower, p.ci.upper))
                .unwrap_or((f64::NAN, f64::NAN)),
            impr_ctx: context.map(|p| p.pct_improvement),
            impr_ctx_ci: context.map(|p| (p.ci.lower, p.ci.upper)),
        };
        if want_md {
            write(
                "table_ci.md",
                ci_table_markdown(std::slice::from_ref(&row)),
                files,
            )?;
        }
        if want_csv {
            let headers = [
                "label",
                "cmi",
                "cmi_ci_lower",
                "cmi_ci_upper",
                "impr",
                "impr_ci_lower",
                "impr_ci_upper",
                "impr_ctx",
                "impr_ctx_ci_lower",
                "impr_ctx_ci_upper",
            ];
            let cells = vec![
                row.label.clone(),
                format!("{:.4}", row.cmi),
                format!("{:.4}", row.cmi_ci.0),
                format!("{:.4}", row.cmi_ci.1),
                format!("{:.2}", row.impr),
                format!("{:.2}", row.impr_ci.0),
                format!("{:.2}", row.impr_ci.1),
                row.impr_ctx.map(|v| format!("{v:.2}")).unwrap_or_default(),
                row.impr_ctx_ci
                    .map(|c| format!("{:.2}", c.0))
                    .unwrap_or_default(),
                row.impr_ctx_ci
                    .map(|c| format!("{:.2}", c.1))
                    .unwrap_or_default(),
            ];
            write("table_ci.csv", to_csv(&headers, &[cells]), files)?;
        }
    }

    if !monotone.is_empty() {
        let headers: Vec<String> = pairs
            .iter()
            .zip(monotone)
            .map(|((a1, a2), _)| {
                let short = |a: &ActionLabel| match a {
                    ActionLabel::Yes => "Y",
                    ActionLabel::No => "N",
                    ActionLabel::Defer => "D",
                };
                format!("{}/({}+{})", short(a1), short(a2), short(a1))
            })
            .collect();
        let row = MonotoneTableRow {
            label: label.to_string(),
            rates: monotone
                .iter()
                .map(|m| 100.0 * m.significant_violation_rate)
                .collect(),
        };
        if want_md {
            write(
                "table_monotone.md",
                monotone_table_markdown(&headers, std::slice::from_ref(&row)),
                files,
            )?;
        }
        if want_csv {
            let mut cells = vec![row.label.clone()];
            cells.extend(row.rates.iter().map(|r| format!("{r:.1}")));
            let mut cols = vec!["label".to_string()];
            cols.extend(headers.iter().cloned());
            let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
            write("table_monotone.csv", to_csv(&col_refs, &[cells]), files)?;
        }
    }

    if let Some(consistency) = consistency {
        let headers: Vec<String> = consistency.rmse_by_prompt.keys().cloned().collect();
        let row = Dot4TableRow {
            label: label.to_string(),
            std: Some(consistency.within_prompt_std),
            values: consistency.rmse_by_prompt.values().copied().collect(),
        };
        if want_md {
            write(
                "table_consistency.md",
                dot4_table_markdown(&headers, std::slice::from_ref(&row)),
                files,
            )?;
        }
        if want_csv {
            let mut cols = vec!["label".to_string(), "Std".to_string()];
            cols.extend(headers.iter().cloned());
            let mut cells = vec![
                row.label.clone(),
                format!("{:.4}", consistency.within_prompt_std),
            ];
            cells.extend(row.values.iter().map(|v| format!("{v:.4}")));
            let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
            write("table_consistency.csv", to_csv(&col_refs, &[cells]), files)?;
        }
    }
    Ok(())
}

trait RecordFormatExt {
    fn if_csv(csv: bool) -> RecordFormat;
}

impl RecordFormatExt for RecordFormat {
    fn if_csv(csv: bool) -> RecordFormat {
        if csv {
            RecordFormat::Csv
        } else {
            RecordFormat::Jsonl
        }
    }
}
