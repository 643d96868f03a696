//! Decision records, dataset schema, ingestion and validation.
//!
//! One record is one audited observation: a context, the elicited belief
//! (a probability for the positive state), the chosen action, the realized
//! binary outcome, and the prompt/repetition bookkeeping needed to group
//! repeated elicitations of the same context.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three-way diagnostic action. `Yes` encodes the positive diagnosis
/// (a = 1), `No` the negative one (a = 0), `Defer` refuses to diagnose.
///
/// The declared order is also the deterministic tie-breaking order used by
/// simulated agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionLabel {
    Yes,
    No,
    Defer,
}

impl ActionLabel {
    pub const ALL: [ActionLabel; 3] = [ActionLabel::Yes, ActionLabel::No, ActionLabel::Defer];

    /// Stable index used by estimators that want a discrete label.
    pub fn index(self) -> usize {
        match self {
            ActionLabel::Yes => 0,
            ActionLabel::No => 1,
            ActionLabel::Defer => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionLabel::Yes => "Yes",
            ActionLabel::No => "No",
            ActionLabel::Defer => "Defer",
        }
    }

    pub fn parse(s: &str) -> Option<ActionLabel> {
        match s {
            "Yes" => Some(ActionLabel::Yes),
            "No" => Some(ActionLabel::No),
            "Defer" => Some(ActionLabel::Defer),
            _ => None,
        }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The forced binary answer recorded alongside a deferral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForcedDecision {
    Yes,
    No,
}

/// One audited observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub context_id: String,
    /// Categorical covariates in schema order.
    pub covariates: BTreeMap<String, String>,
    /// Elicited probability of the positive state given the context.
    pub belief: f64,
    pub action: ActionLabel,
    /// Realized binary outcome.
    pub outcome: u8,
    pub prompt_id: String,
    pub repetition: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_decision: Option<ForcedDecision>,
}

impl DecisionRecord {
    /// The uniqueness key within a dataset.
    pub fn key(&self) -> (String, String, u32) {
        (
            self.context_id.clone(),
            self.prompt_id.clone(),
            self.repetition,
        )
    }
}

/// Declared covariate schema: ordered names with their level sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub covariates: Vec<CovariateDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateDef {
    pub name: String,
    pub levels: Vec<String>,
}

impl Schema {
    pub fn new(covariates: Vec<(&str, Vec<&str>)>) -> Schema {
        Schema {
            covariates: covariates
                .into_iter()
                .map(|(name, levels)| CovariateDef {
                    name: name.to_string(),
                    levels: levels.into_iter().map(String::from).collect(),
                })
                .collect(),
        }
    }

    fn check_covariates(&self, cov: &BTreeMap<String, String>) -> Result<(), String> {
        if cov.len() != self.covariates.len() {
            return Err(format!(
                "expected {} covariates, found {}",
                self.covariates.len(),
                cov.len()
            ));
        }
        for def in &self.covariates {
            match cov.get(&def.name) {
                None => return Err(format!("missing covariate '{}'", def.name)),
                Some(level) if !def.levels.contains(level) => {
                    return Err(format!(
                        "unknown level '{}' for covariate '{}'",
                        level, def.name
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// A validated set of records plus the schema they conform to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub records: Vec<DecisionRecord>,
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{} rejected row(s):\n{}", .0.len(), format_rejections(.0))]
    InvalidRows(Vec<RowRejection>),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
}

/// A rejected input row with enough detail to locate and fix it.
#[derive(Debug, Clone, Serialize)]
pub struct RowRejection {
    /// 1-based line number (JSONL) or record number (CSV, excluding header).
    pub line: usize,
    pub field: String,
    pub reason: String,
}

fn format_rejections(rows: &[RowRejection]) -> String {
    rows.iter()
        .map(|r| format!("  line {}: field '{}': {}", r.line, r.field, r.reason))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Jsonl,
    Csv,
}

/// Raw on-disk shape of a JSONL row; level of indirection so parse errors can
/// name the offending field.
#[derive(Debug, Deserialize)]
struct RawRecord {
    context_id: String,
    covariates: BTreeMap<String, String>,
    belief: f64,
    action: String,
    outcome: u8,
    prompt_id: String,
    repetition: u32,
    #[serde(default)]
    ground_truth: Option<f64>,
    #[serde(default)]
    forced_decision: Option<String>,
}

fn finish_record(
    raw: RawRecord,
    schema: &Schema,
    line: usize,
    rejections: &mut Vec<RowRejection>,
) -> Option<DecisionRecord> {
    let mut ok = true;
    if !(0.0..=1.0).contains(&raw.belief) {
        rejections.push(RowRejection {
            line,
            field: "belief".into(),
            reason: format!("belief out of range: {}", raw.belief),
        });
        ok = false;
    }
    if let Some(g) = raw.ground_truth {
        if !(0.0..=1.0).contains(&g) {
            rejections.push(RowRejection {
                line,
                field: "ground_truth".into(),
                reason: format!("ground_truth out of range: {}", g),
            });
            ok = false;
        }
    }
    if raw.outcome > 1 {
        rejections.push(RowRejection {
            line,
            field: "outcome".into(),
            reason: format!("outcome must be 0 or 1, got {}", raw.outcome),
        });
        ok = false;
    }
    let action = match ActionLabel::parse(&raw.action) {
        Some(a) => Some(a),
        None => {
            rejections.push(RowRejection {
                line,
                field: "action".into(),
                reason: format!("unknown action label '{}'", raw.action),
            });
            ok = false;
            None
        }
    };
    let forced = match raw.forced_decision.as_deref() {
        None => None,
        Some("Yes") => Some(ForcedDecision::Yes),
        Some("No") => Some(ForcedDecision::No),
        Some(other) => {
            rejections.push(RowRejection {
                line,
                field: "forced_decision".into(),
                reason: format!("unknown forced decision '{}'", other),
            });
            ok = false;
            None
        }
    };
    if let Err(reason) = schema.check_covariates(&raw.covariates) {
        rejections.push(RowRejection {
            line,
            field: "covariates".into(),
            reason,
        });
        ok = false;
    }
    if !ok {
        return None;
    }
    Some(DecisionRecord {
        context_id: raw.context_id,
        covariates: raw.covariates,
        belief: raw.belief,
        action: action.unwrap(),
        outcome: raw.outcome,
        prompt_id: raw.prompt_id,
        repetition: raw.repetition,
        ground_truth: raw.ground_truth,
        forced_decision: forced,
    })
}

/// Load records from `path` under the declared format and schema.
///
/// Loading is strict: any malformed row (missing field, belief out of range,
/// unknown action label, schema mismatch) or duplicate
/// `(context_id, prompt_id, repetition)` key fails the whole load with a
/// rejection list carrying line numbers.
pub fn load_records(
    path: &Path,
    format: RecordFormat,
    schema: &Schema,
) -> Result<Dataset, CoreError> {
    let file = std::fs::File::open(path).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rejections = Vec::new();
    let mut records = Vec::new();

    match format {
        RecordFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let lineno = i + 1;
                let line = line.map_err(|source| CoreError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<RawRecord>(&line) {
                    Ok(raw) => {
                        if let Some(rec) = finish_record(raw, schema, lineno, &mut rejections) {
                            records.push(rec);
                        }
                    }
                    Err(e) => rejections.push(RowRejection {
                        line: lineno,
                        field: "<row>".into(),
                        reason: e.to_string(),
                    }),
                }
            }
        }
        RecordFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(file);
            let headers = rdr
                .headers()
                .map_err(|e| CoreError::Io {
                    path: path.display().to_string(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
                })?
                .clone();
            for (i, row) in rdr.records().enumerate() {
                let lineno = i + 1;
                let row = match row {
                    Ok(r) => r,
                    Err(e) => {
                        rejections.push(RowRejection {
                            line: lineno,
                            field: "<row>".into(),
                            reason: e.to_string(),
                        });
                        continue;
                    }
                };
                match raw_from_csv(&headers, &row, schema) {
                    Ok(raw) => {
                        if let Some(rec) = finish_record(raw, schema, lineno, &mut rejections) {
                            records.push(rec);
                        }
                    }
                    Err((field, reason)) => rejections.push(RowRejection {
                        line: lineno,
                        field,
                        reason,
                    }),
                }
            }
        }
    }

    // Duplicate keys are reported against the later occurrence.
    let mut seen: BTreeMap<(String, String, u32), usize> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        if seen.insert(rec.key(), i).is_some() {
            rejections.push(RowRejection {
                line: i + 1,
                field: "context_id/prompt_id/repetition".into(),
                reason: format!(
                    "duplicate key ({}, {}, {})",
                    rec.context_id, rec.prompt_id, rec.repetition
                ),
            });
        }
    }

    if !rejections.is_empty() {
        return Err(CoreError::InvalidRows(rejections));
    }
    Ok(Dataset {
        schema: schema.clone(),
        records,
    })
}

fn raw_from_csv(
    headers: &csv::StringRecord,
    row: &csv::StringRecord,
    schema: &Schema,
) -> Result<RawRecord, (String, String)> {
    let get = |name: &str| -> Result<&str, (String, String)> {
        headers
            .iter()
            .position(|h| h == name)
            .and_then(|i| row.get(i))
            .ok_or_else(|| (name.to_string(), "missing column".to_string()))
    };
    let mut covariates = BTreeMap::new();
    for def in &schema.covariates {
        covariates.insert(def.name.clone(), get(&def.name)?.to_string());
    }
    let parse_f64 = |name: &str| -> Result<f64, (String, String)> {
        get(name)?
            .parse::<f64>()
            .map_err(|e| (name.to_string(), e.to_string()))
    };
    let ground_truth = match headers.iter().position(|h| h == "ground_truth") {
        Some(i) => match row.get(i) {
            Some("") | None => None,
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|e| ("ground_truth".to_string(), e.to_string()))?,
            ),
        },
        None => None,
    };
    let forced_decision = match headers.iter().position(|h| h == "forced_decision") {
        Some(i) => match row.get(i) {
            Some("") | None => None,
            Some(v) => Some(v.to_string()),
        },
        None => None,
    };
    Ok(RawRecord {
        context_id: get("context_id")?.to_string(),
        covariates,
        belief: parse_f64("belief")?,
        action: get("action")?.to_string(),
        outcome: get("outcome")?
            .parse::<u8>()
            .map_err(|e| ("outcome".to_string(), e.to_string()))?,
        prompt_id: get("prompt_id")?.to_string(),
        repetition: get("repetition")?
            .parse::<u32>()
            .map_err(|e| ("repetition".to_string(), e.to_string()))?,
        ground_truth,
        forced_decision,
    })
}

impl Dataset {
    /// Canonical record order: `(context_id, prompt_id, repetition)`.
    /// Audits sort before estimating, so loading order never matters.
    pub fn canonicalize(&mut self) {
        self.records.sort_by_key(|r| r.key());
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Serialize to JSONL, one record per line, covariates in schema order.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for rec in &self.records {
            let line = record_to_json_line(rec, &self.schema);
            writeln!(w, "{}", line)?;
        }
        Ok(())
    }
}

/// Render one record as a JSON line with a fixed field order (covariates in
/// schema order) so that serialized output is byte-stable.
pub fn record_to_json_line(rec: &DecisionRecord, schema: &Schema) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("context_id".into(), rec.context_id.clone().into());
    let mut cov = serde_json::Map::new();
    for def in &schema.covariates {
        if let Some(level) = rec.covariates.get(&def.name) {
            cov.insert(def.name.clone(), level.clone().into());
        }
    }
    obj.insert("covariates".into(), serde_json::Value::Object(cov));
    obj.insert("belief".into(), json_f64(rec.belief));
    obj.insert("action".into(), rec.action.as_str().into());
    obj.insert("outcome".into(), (rec.outcome as u64).into());
    obj.insert("prompt_id".into(), rec.prompt_id.clone().into());
    obj.insert("repetition".into(), (rec.repetition as u64).into());
    if let Some(g) = rec.ground_truth {
        obj.insert("ground_truth".into(), json_f64(g));
    }
    if let Some(f) = rec.forced_decision {
        let s = match f {
            ForcedDecision::Yes => "Yes",
            ForcedDecision::No => "No",
        };
        obj.insert("forced_decision".into(), s.into());
    }
    serde_json::Value::Object(obj).to_string()
}

fn json_f64(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x)
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

/// Per-context summary produced by [`validate_dataset`].
#[derive(Debug, Clone, Serialize)]
pub struct ContextSummary {
    pub context_id: String,
    pub n_records: usize,
    /// prompt_id -> repetition count
    pub repetitions_by_prompt: BTreeMap<String, usize>,
    pub covariates_consistent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n_records: usize,
    pub n_contexts: usize,
    pub groups: Vec<ContextSummary>,
    /// Context ids whose covariates differ across records.
    pub flags: Vec<String>,
}

/// Report-only dataset diagnostics: group sizes, prompts seen, covariate
/// consistency per context.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut groups: BTreeMap<&str, Vec<&DecisionRecord>> = BTreeMap::new();
    for rec in &d.records {
        groups.entry(&rec.context_id).or_default().push(rec);
    }
    let mut summaries = Vec::new();
    let mut flags = Vec::new();
    for (ctx, recs) in &groups {
        let mut by_prompt: BTreeMap<String, usize> = BTreeMap::new();
        for r in recs {
            *by_prompt.entry(r.prompt_id.clone()).or_insert(0) += 1;
        }
        let consistent = recs.windows(2).all(|w| w[0].covariates == w[1].covariates);
        if !consistent {
            flags.push(ctx.to_string());
        }
        summaries.push(ContextSummary {
            context_id: ctx.to_string(),
            n_records: recs.len(),
            repetitions_by_prompt: by_prompt,
            covariates_consistent: consistent,
        });
    }
    ValidationReport {
        n_records: d.records.len(),
        n_contexts: groups.len(),
        groups: summaries,
        flags,
    }
}

/// Deterministic grouping by context: groups sorted by `context_id`,
/// within-group order `(prompt_id, repetition)`. Every record lands in
/// exactly one group.
pub fn group_by_context(d: &Dataset) -> Vec<(String, Vec<DecisionRecord>)> {
    let mut groups: BTreeMap<String, Vec<DecisionRecord>> = BTreeMap::new();
    for rec in &d.records {
        groups
            .entry(rec.context_id.clone())
            .or_default()
            .push(rec.clone());
    }
    groups
        .into_iter()
        .map(|(ctx, mut recs)| {
            recs.sort_by(|a, b| (&a.prompt_id, a.repetition).cmp(&(&b.prompt_id, b.repetition)));
            (ctx, recs)
        })
        .collect()
}

/// One row of the law-of-iterated-expectation check: a marginal belief and
/// the conditional beliefs/weights over a partition of an auxiliary variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieTriple {
    pub context_id: String,
    /// Elicited P(state | context).
    pub base_belief: f64,
    /// Elicited P(state | context, z in cell j), one per partition cell.
    pub bin_beliefs: Vec<f64>,
    /// Elicited P(z in cell j | context); raw values, not renormalized.
    pub bin_weights: Vec<f64>,
    /// Name of the auxiliary variable and its cells.
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub variable: String,
    pub cells: Vec<String>,
}

impl LieTriple {
    pub fn validate(&self) -> Result<(), String> {
        if self.bin_beliefs.len() != self.bin_weights.len() {
            return Err(format!(
                "bin_beliefs ({}) and bin_weights ({}) length mismatch",
                self.bin_beliefs.len(),
                self.bin_weights.len()
            ));
        }
        if self.bin_beliefs.len() < 2 {
            return Err("partition must have at least 2 cells".into());
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.base_belief)
            || !self.bin_beliefs.iter().copied().all(in_unit)
            || !self.bin_weights.iter().copied().all(in_unit)
        {
            return Err("all probabilities must lie in [0,1]".into());
        }
        Ok(())
    }
}

/// Load LIE triples from a JSONL file, validating each row.
pub fn load_lie_triples(path: &Path) -> Result<Vec<LieTriple>, CoreError> {
    let file = std::fs::File::open(path).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let triple: LieTriple = serde_json::from_str(&line).map_err(|e| {
            CoreError::InvalidRows(vec![RowRejection {
                line: i + 1,
                field: "<row>".into(),
                reason: e.to_string(),
            }])
        })?;
        triple.validate().map_err(|reason| {
            CoreError::InvalidRows(vec![RowRejection {
                line: i + 1,
                field: "<row>".into(),
                reason,
            }])
        })?;
        out.push(triple);
    }
    Ok(out)
}

/// Load records, deriving the covariate schema from the file itself (sorted
/// names, observed levels). Validation then proceeds as in [`load_records`].
pub fn load_records_inferred(path: &Path, format: RecordFormat) -> Result<Dataset, CoreError> {
    let file = std::fs::File::open(path).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut names: BTreeSet<String> = BTreeSet::new();
    let mut levels: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    match format {
        RecordFormat::Jsonl => {
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|source| CoreError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let Ok(value) = serde_json::from_str::<serde_json::Value>(&line) else {
                    continue; // full validation reports this row below
                };
                if let Some(cov) = value.get("covariates").and_then(|c| c.as_object()) {
                    for (name, level) in cov {
                        names.insert(name.clone());
                        if let Some(l) = level.as_str() {
                            levels
                                .entry(name.clone())
                                .or_default()
                                .insert(l.to_string());
                        }
                    }
                }
            }
        }
        RecordFormat::Csv => {
            const FIXED: [&str; 9] = [
                "context_id",
                "belief",
                "action",
                "outcome",
                "prompt_id",
                "repetition",
                "ground_truth",
                "forced_decision",
                "covariates",
            ];
            let mut rdr = csv::Reader::from_reader(file);
            let headers = rdr
                .headers()
                .map_err(|e| CoreError::Io {
                    path: path.display().to_string(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
                })?
                .clone();
            let covariate_cols: Vec<(usize, String)> = headers
                .iter()
                .enumerate()
                .filter(|(_, h)| !FIXED.contains(h))
                .map(|(i, h)| (i, h.to_string()))
                .collect();
            for row in rdr.records().flatten() {
                for (i, name) in &covariate_cols {
                    names.insert(name.clone());
                    if let Some(level) = row.get(*i) {
                        levels
                            .entry(name.clone())
                            .or_default()
                            .insert(level.to_string());
                    }
                }
            }
        }
    }
    let schema = Schema {
        covariates: names
            .into_iter()
            .map(|name| {
                let lv = levels.remove(&name).unwrap_or_default();
                CovariateDef {
                    name,
                    levels: lv.into_iter().collect(),
                }
            })
            .collect(),
    };
    load_records(path, format, &schema)
}

/// Schema derived from a dataset's own records (first occurrence order,
/// observed levels). Handy for ad-hoc files without a declared schema.
pub fn infer_schema(records: &[DecisionRecord]) -> Schema {
    let mut names: Vec<String> = Vec::new();
    let mut levels: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for rec in records {
        for (name, level) in &rec.covariates {
            if !names.contains(name) {
                names.push(name.clone());
            }
            levels
                .entry(name.clone())
                .or_default()
                .insert(level.clone());
        }
    }
    names.sort();
    Schema {
        covariates: names
            .into_iter()
            .map(|name| {
                let lv = levels.remove(&name).unwrap_or_default();
                CovariateDef {
                    name,
                    levels: lv.into_iter().collect(),
                }
            })
            .collect(),
    }
}
