//! Live elicitation: prompt rendering, chat-completion transport, response
//! parsing, and resumable campaign persistence.
//!
//! Belief and decision requests for the same context are always separate
//! exchanges (distinct exchange ids in the log), never one conversation, so
//! eliciting a probability cannot contaminate the subsequent action.

pub mod stub;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{
    record_to_json_line, ActionLabel, CovariateDef, Dataset, DecisionRecord, ForcedDecision,
    LieTriple, Partition, Schema,
};
use crate::rng::{substream, tag};
use rand::Rng;

#[derive(Debug, Error)]
pub enum ElicitError {
    #[error("template for family '{family}' is missing required placeholder {placeholder}")]
    TemplateInvalid { family: String, placeholder: String },
    #[error("no value supplied for placeholder {0}")]
    MissingPlaceholder(String),
    #[error("unparseable completion: {reason}")]
    Parse { reason: String },
    #[error("auth token environment variable '{0}' is not set")]
    MissingToken(String),
    #[error("request failed after {attempts} attempt(s): {last}")]
    Http { attempts: u32, last: String },
    #[error("response path '{path}' not found in body: {body}")]
    ResponsePath { path: String, body: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("campaign config: {0}")]
    Config(String),
}

/// The prompt families of the elicitation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFamily {
    Standard,
    MseRule,
    AbsRule,
    Bayes,
    Decision,
    NextState,
    Conditional,
}

impl PromptFamily {
    pub const ALL: [PromptFamily; 7] = [
        PromptFamily::Standard,
        PromptFamily::MseRule,
        PromptFamily::AbsRule,
        PromptFamily::Bayes,
        PromptFamily::Decision,
        PromptFamily::NextState,
        PromptFamily::Conditional,
    ];

    /// Family name as written in campaign configs.
    pub fn name(self) -> &'static str {
        match self {
            PromptFamily::Standard => "standard",
            PromptFamily::MseRule => "mse_rule",
            PromptFamily::AbsRule => "abs_rule",
            PromptFamily::Bayes => "bayes",
            PromptFamily::Decision => "decision",
            PromptFamily::NextState => "next_state",
            PromptFamily::Conditional => "conditional",
        }
    }

    /// Stable prompt id recorded on each elicited row.
    pub fn id(self) -> &'static str {
        match self {
            PromptFamily::Standard => "std",
            PromptFamily::MseRule => "mse",
            PromptFamily::AbsRule => "abs",
            PromptFamily::Bayes => "bayes",
            PromptFamily::Decision => "decision",
            PromptFamily::NextState => "next_state",
            PromptFamily::Conditional => "conditional",
        }
    }

    pub fn from_name(name: &str) -> Option<PromptFamily> {
        PromptFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name() == name || f.id() == name)
    }

    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            PromptFamily::Standard
            | PromptFamily::MseRule
            | PromptFamily::AbsRule
            | PromptFamily::Bayes => &["<patient_description>", "<clinical_question>"],
            PromptFamily::Decision => &["<patient_description>", "<clinical_question>"],
            PromptFamily::NextState => &[
                "<patient_description>",
                "<auxiliary_variable_name>",
                "<K>",
                "<labels>",
                "<label_example_lines>",
            ],
            PromptFamily::Conditional => &[
                "<patient_description>",
                "<auxiliary_variable_condition>",
                "<clinical_question>",
            ],
        }
    }
}

const PROB_TAIL: &str = "Respond with exactly 2 lines, one per label, and no extra text.\n\
Each line MUST be exactly: '<label>: <number between 0 and 1>'.\n\
Use these labels in this order: [No, Yes]\n\
Example:\nNo: 0.50\nYes: 0.50";

fn builtin_text(family: PromptFamily) -> String {
    let prob_body = format!(
        "There is a patient who <patient_description>. What is the probability that they \
<clinical_question>? Return probabilities for: No and Yes.\n\n{PROB_TAIL}"
    );
    match family {
        PromptFamily::Standard => prob_body,
        PromptFamily::MseRule => format!(
            "IMPORTANT: Your probability estimates will be evaluated according to the Mean Squared \
Error (MSE) scoring rule. This means the loss is calculated as the squared difference between \
your probability estimate and the true outcome. Please provide your best probability estimate.\n\n\
{prob_body}"
        ),
        PromptFamily::AbsRule => format!(
            "IMPORTANT: Your probability estimates will be evaluated according to the Absolute Loss \
scoring rule. This means the loss is calculated as the absolute difference between your \
probability estimate and the true outcome. Please provide your best probability estimate.\n\n\
{prob_body}"
        ),
        PromptFamily::Bayes => format!(
            "IMPORTANT: Use proper Bayesian reasoning to reach your answer. Consider the prior \
probability of the condition in the general population, then update this prior based on the \
evidence.\n\n{prob_body}"
        ),
        PromptFamily::Decision => "There is a patient who <patient_description>.\n\n\
Question: Do they <clinical_question>?\n\n\
Please respond with EXACTLY two lines:\n\
Line 1: Can you make a decision about whether or not the patient is likely to \
<clinical_question>? Answer 'Yes' or 'No'.\n\
Line 2: If you had to make a decision, what would it be? Answer 'Yes' (the patient is likely to \
<clinical_question>) or 'No' (the patient is likely to not <clinical_question>)\n\n\
Example format:\nCan decide: No\nDecision: Yes"
            .to_string(),
        PromptFamily::NextState => "There is a patient who <patient_description>. What is the \
probability distribution over their <auxiliary_variable_name>? Return probabilities for each \
category of <auxiliary_variable_name>.\n\n\
Respond with exactly <K> lines, one per label, and no extra text.\n\
Each line MUST be exactly: '<label>: <number between 0 and 1>'.\n\
Use these labels in this order: [<labels>]\n\
Example:\n<label_example_lines>"
            .to_string(),
        PromptFamily::Conditional => format!(
            "There is a patient who <patient_description> and <auxiliary_variable_condition>. \
What is the probability that they <clinical_question>? Return probabilities for: No and Yes.\n\n\
{PROB_TAIL}"
        ),
    }
}

/// A prompt template; construction verifies that every placeholder the family
/// requires is present in the text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub prompt_id: String,
    pub family: PromptFamily,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(
        prompt_id: &str,
        family: PromptFamily,
        text: String,
    ) -> Result<PromptTemplate, ElicitError> {
        for ph in family.required_placeholders() {
            if !text.contains(ph) {
                return Err(ElicitError::TemplateInvalid {
                    family: family.id().to_string(),
                    placeholder: (*ph).to_string(),
                });
            }
        }
        Ok(PromptTemplate {
            prompt_id: prompt_id.to_string(),
            family,
            text,
        })
    }

    pub fn builtin(family: PromptFamily) -> PromptTemplate {
        PromptTemplate::new(family.id(), family, builtin_text(family))
            .expect("builtin templates are valid")
    }
}

/// Context-specific strings substituted into a template.
#[derive(Debug, Clone, Default)]
pub struct PromptInputs {
    pub patient_description: String,
    pub clinical_question: String,
    pub auxiliary_variable_name: Option<String>,
    pub auxiliary_variable_condition: Option<String>,
    /// Response labels; for next-state prompts these are the partition cells.
    pub labels: Vec<String>,
}

/// Exact textual substitution of the template's placeholders; no other
/// mutation. Rendering is deterministic.
pub fn render_prompt(
    template: &PromptTemplate,
    inputs: &PromptInputs,
) -> Result<String, ElicitError> {
    let mut text = template.text.clone();
    let substitutions: Vec<(&str, Option<String>)> = vec![
        (
            "<patient_description>",
            Some(inputs.patient_description.clone()),
        ),
        (
            "<clinical_question>",
            Some(inputs.clinical_question.clone()),
        ),
        (
            "<auxiliary_variable_name>",
            inputs.auxiliary_variable_name.clone(),
        ),
        (
            "<auxiliary_variable_condition>",
            inputs.auxiliary_variable_condition.clone(),
        ),
        ("<K>", Some(inputs.labels.len().to_string())),
        ("<labels>", Some(inputs.labels.join(", "))),
        (
            "<label_example_lines>",
            Some(
                inputs
                    .labels
                    .iter()
                    .map(|l| format!("{l}: {:.2}", 1.0 / inputs.labels.len().max(1) as f64))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
        ),
    ];
    for (placeholder, value) in substitutions {
        if text.contains(placeholder) {
            match value {
                Some(v) if placeholder == "<patient_description>" && v.is_empty() => {
                    return Err(ElicitError::MissingPlaceholder(placeholder.to_string()))
                }
                Some(v) => text = text.replace(placeholder, &v),
                None => return Err(ElicitError::MissingPlaceholder(placeholder.to_string())),
            }
        }
    }
    Ok(text)
}

/// Parsed label probabilities: raw values plus a normalized vector and a flag
/// recording whether normalization was needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityResponse {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub was_normalized: bool,
}

/// Extract one `<label>: <number>` line per label (case-insensitive label
/// match, whitespace tolerant).
pub fn parse_probability_response(
    text: &str,
    labels: &[String],
) -> Result<ProbabilityResponse, ElicitError> {
    assert!(!labels.is_empty(), "labels must be non-empty");
    let mut raw = Vec::with_capacity(labels.len());
    let mut found = Vec::new();
    for line in text.lines() {
        if let Some((key, _)) = line.split_once(':') {
            found.push(key.trim().to_string());
        }
    }
    for label in labels {
        let mut value = None;
        for line in text.lines() {
            let Some((key, rest)) = line.split_once(':') else {
                continue;
            };
            if key.trim().eq_ignore_ascii_case(label) {
                let v: f64 = rest.trim().parse().map_err(|_| ElicitError::Parse {
                    reason: format!(
                        "value for label '{label}' is not a number: '{}'",
                        rest.trim()
                    ),
                })?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(ElicitError::Parse {
                        reason: format!("value {v} for label '{label}' outside [0,1]"),
                    });
                }
                value = Some(v);
                break;
            }
        }
        match value {
            Some(v) => raw.push(v),
            None => {
                return Err(ElicitError::Parse {
                    reason: format!("label '{label}' not found; lines seen: {found:?}"),
                })
            }
        }
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(ElicitError::Parse {
            reason: "all-zero probability vector".into(),
        });
    }
    let was_normalized = (total - 1.0).abs() > 1e-9;
    let normalized = raw.iter().map(|v| v / total).collect();
    Ok(ProbabilityResponse {
        raw,
        normalized,
        was_normalized,
    })
}

/// Parse the two-line decision protocol. "Can decide: No" maps to a deferral;
/// the forced binary answer is always recorded.
pub fn parse_decision_response(text: &str) -> Result<(ActionLabel, ForcedDecision), ElicitError> {
    let mut can_decide = None;
    let mut decision = None;
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        let val = rest.trim();
        let yes_no = |v: &str| -> Option<bool> {
            if v.eq_ignore_ascii_case("yes") {
                Some(true)
            } else if v.eq_ignore_ascii_case("no") {
                Some(false)
            } else {
                None
            }
        };
        if key == "can decide" {
            can_decide = yes_no(val);
        } else if key == "decision" {
            decision = yes_no(val);
        }
    }
    let (Some(can), Some(dec)) = (can_decide, decision) else {
        return Err(ElicitError::Parse {
            reason: "expected 'Can decide:' and 'Decision:' lines".into(),
        });
    };
    let forced = if dec {
        ForcedDecision::Yes
    } else {
        ForcedDecision::No
    };
    let action = if !can {
        ActionLabel::Defer
    } else if dec {
        ActionLabel::Yes
    } else {
        ActionLabel::No
    };
    Ok((action, forced))
}

/// Endpoint description: any chat-completion-style JSON API is reachable by
/// templating the request body and pointing `response_path` at the completion
/// text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the auth token.
    pub auth_env: String,
    /// JSON body; string values may contain `{{prompt}}` and `{{model}}`.
    pub body_template: serde_json::Value,
    /// Dot path to the completion text, e.g. "choices.0.message.content".
    pub response_path: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Header values may contain `{{token}}`.
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
}

fn fill_template(value: &serde_json::Value, prompt: &str, model: &str) -> serde_json::Value {
    match value {
        serde_json::Value::String(s) => {
            serde_json::Value::String(s.replace("{{prompt}}", prompt).replace("{{model}}", model))
        }
        serde_json::Value::Array(items) => serde_json::Value::Array(
            items
                .iter()
                .map(|v| fill_template(v, prompt, model))
                .collect(),
        ),
        serde_json::Value::Object(map) => serde_json::Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), fill_template(v, prompt, model)))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn walk_path<'v>(body: &'v serde_json::Value, path: &str) -> Option<&'v serde_json::Value> {
    let mut at = body;
    for part in path.split('.') {
        at = match at {
            serde_json::Value::Object(map) => map.get(part)?,
            serde_json::Value::Array(items) => items.get(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(at)
}

/// Append-only JSONL log of raw exchanges with sequential exchange ids.
pub struct ExchangeLog {
    path: PathBuf,
    file: std::fs::File,
    next_id: u64,
}

impl ExchangeLog {
    pub fn open(path: &Path) -> Result<ExchangeLog, ElicitError> {
        let next_id = if path.exists() {
            let file = std::fs::File::open(path).map_err(|source| ElicitError::Io {
                path: path.display().to_string(),
                source,
            })?;
            BufReader::new(file).lines().count() as u64 + 1
        } else {
            1
        };
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| ElicitError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(ExchangeLog {
            path: path.to_path_buf(),
            file,
            next_id,
        })
    }

    fn append(&mut self, entry: &serde_json::Value) -> Result<(), ElicitError> {
        writeln!(self.file, "{entry}").map_err(|source| ElicitError::Io {
            path: self.path.display().to_string(),
            source,
        })
    }

    fn fresh_id(&mut self) -> String {
        let id = format!("ex-{:06}", self.next_id);
        self.next_id += 1;
        id
    }
}

fn unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// POST the rendered body, retrying transient failures with exponential
/// backoff plus seeded jitter; every attempt's request/response pair is
/// persisted to the log before this returns. Returns the completion text at
/// the configured response path.
pub fn chat_complete(
    cfg: &EndpointConfig,
    prompt: &str,
    rng_seed: u64,
    log: &mut ExchangeLog,
) -> Result<String, ElicitError> {
    let token = std::env::var(&cfg.auth_env)
        .map_err(|_| ElicitError::MissingToken(cfg.auth_env.clone()))?;
    let body = fill_template(&cfg.body_template, prompt, &cfg.model);
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(cfg.timeout_secs))
        .build()
        .map_err(|e| ElicitError::Http {
            attempts: 0,
            last: e.to_string(),
        })?;

    let exchange_id = log.fresh_id();
    let attempts = cfg.max_retries + 1;
    let mut last_error = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let mut rng = substream(rng_seed, tag::RETRY_JITTER, attempt as u64);
            let backoff = 0.25 * 2f64.powi(attempt as i32 - 1) + 0.25 * rng.gen::<f64>();
            std::thread::sleep(std::time::Duration::from_secs_f64(backoff));
        }
        let started = unix_ms();
        let mut request = client.post(&cfg.base_url).json(&body);
        for (name, value) in &cfg.headers {
            request = request.header(name, value.replace("{{token}}", &token));
        }
        let outcome = request.send();
        match outcome {
            Ok(response) => {
                let status = response.status().as_u16();
                let text = response.text().unwrap_or_default();
                log.append(&serde_json::json!({
                    "exchange_id": exchange_id,
                    "attempt": attempt + 1,
                    "request": body,
                    "status": status,
                    "response": text,
                    "started_unix_ms": started as u64,
                    "finished_unix_ms": unix_ms() as u64,
                }))?;
                if status == 429 || status >= 500 {
                    last_error = format!("status {status}");
                    continue;
                }
                if !(200..300).contains(&status) {
                    return Err(ElicitError::Http {
                        attempts: attempt + 1,
                        last: format!("status {status}: {text}"),
                    });
                }
                let parsed: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| ElicitError::ResponsePath {
                        path: cfg.response_path.clone(),
                        body: format!("unparseable JSON ({e}): {text}"),
                    })?;
                let completion = walk_path(&parsed, &cfg.response_path)
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| ElicitError::ResponsePath {
                        path: cfg.response_path.clone(),
                        body: text.clone(),
                    })?;
                return Ok(completion.to_string());
            }
            Err(e) => {
                last_error = e.to_string();
                log.append(&serde_json::json!({
                    "exchange_id": exchange_id,
                    "attempt": attempt + 1,
                    "request": body,
                    "status": 0,
                    "response": format!("transport error: {last_error}"),
                    "started_unix_ms": started as u64,
                    "finished_unix_ms": unix_ms() as u64,
                }))?;
            }
        }
    }
    Err(ElicitError::Http {
        attempts,
        last: last_error,
    })
}

/// Auxiliary variable for the coherence prompts: cells plus the natural
/// language condition phrase for each cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuxiliarySpec {
    pub name: String,
    pub cells: Vec<String>,
    pub conditions: Vec<String>,
}

/// One campaign context: identifiers, covariates, phrasing, and the realized
/// outcome of the covariate-outcome pairing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignContext {
    pub context_id: String,
    pub covariates: BTreeMap<String, String>,
    pub patient_description: String,
    pub outcome: u8,
    #[serde(default)]
    pub ground_truth: Option<f64>,
    #[serde(default)]
    pub auxiliary: Option<AuxiliarySpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignConfig {
    #[serde(default)]
    pub contexts: Vec<CampaignContext>,
    #[serde(default)]
    pub contexts_file: Option<PathBuf>,
    /// Family ids, e.g. ["standard", "mse_rule", "decision"].
    pub families: Vec<String>,
    pub repetitions: u32,
    pub clinical_question: String,
    /// Response labels in prompt order; the belief is the "Yes" entry.
    pub labels: Vec<String>,
    pub endpoint: EndpointConfig,
    pub out_records: PathBuf,
    #[serde(default)]
    pub out_lie: Option<PathBuf>,
    pub out_log: PathBuf,
    pub out_quarantine: PathBuf,
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<CampaignConfig, ElicitError> {
        let text = std::fs::read_to_string(path).map_err(|source| ElicitError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: CampaignConfig =
            serde_json::from_str(&text).map_err(|e| ElicitError::Config(e.to_string()))?;
        if let Some(file) = &cfg.contexts_file {
            let base = path.parent().unwrap_or(Path::new("."));
            let resolved = if file.is_absolute() {
                file.clone()
            } else {
                base.join(file)
            };
            let text = std::fs::read_to_string(&resolved).map_err(|source| ElicitError::Io {
                path: resolved.display().to_string(),
                source,
            })?;
            cfg.contexts =
                serde_json::from_str(&text).map_err(|e| ElicitError::Config(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ElicitError> {
        if self.contexts.is_empty() {
            return Err(ElicitError::Config("no contexts".into()));
        }
        if self.repetitions == 0 {
            return Err(ElicitError::Config("repetitions must be >= 1".into()));
        }
        for f in &self.families {
            if PromptFamily::from_name(f).is_none() {
                return Err(ElicitError::Config(format!("unknown prompt family '{f}'")));
            }
        }
        for ctx in &self.contexts {
            if let Some(aux) = &ctx.auxiliary {
                if aux.cells.len() != aux.conditions.len() || aux.cells.len() < 2 {
                    return Err(ElicitError::Config(format!(
                        "context '{}': auxiliary cells/conditions must align and have >= 2 cells",
                        ctx.context_id
                    )));
                }
            }
        }
        Ok(())
    }

    fn schema(&self) -> Schema {
        let mut names: BTreeSet<&str> = BTreeSet::new();
        for ctx in &self.contexts {
            names.extend(ctx.covariates.keys().map(|s| s.as_str()));
        }
        Schema {
            covariates: names
                .into_iter()
                .map(|name| {
                    let mut levels: BTreeSet<String> = BTreeSet::new();
                    for ctx in &self.contexts {
                        if let Some(l) = ctx.covariates.get(name) {
                            levels.insert(l.clone());
                        }
                    }
                    CovariateDef {
                        name: name.to_string(),
                        levels: levels.into_iter().collect(),
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Default, Serialize)]
pub struct CampaignSummary {
    pub records_written: usize,
    pub records_skipped_existing: usize,
    pub lie_triples_written: usize,
    pub quarantined: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LiePart {
    context_id: String,
    repetition: u32,
    kind: String, // "weights" | "conditional"
    #[serde(default)]
    cell: Option<String>,
    values: Vec<f64>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ElicitError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path).map_err(|source| ElicitError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| ElicitError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: T = serde_json::from_str(&line)
            .map_err(|e| ElicitError::Config(format!("{}: {e}", path.display())))?;
        out.push(parsed);
    }
    Ok(out)
}

fn append_line(path: &Path, line: &str) -> Result<(), ElicitError> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| ElicitError::Io {
            path: path.display().to_string(),
            source,
        })?;
    writeln!(file, "{line}").map_err(|source| ElicitError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Quarantine<'c> {
    path: &'c Path,
    count: usize,
}

impl Quarantine<'_> {
    fn put(
        &mut self,
        context: &str,
        family: &str,
        repetition: u32,
        error: &ElicitError,
        raw: &str,
    ) -> Result<(), ElicitError> {
        self.count += 1;
        append_line(
            self.path,
            &serde_json::json!({
                "context_id": context,
                "family": family,
                "repetition": repetition,
                "error": error.to_string(),
                "raw_text": raw,
            })
            .to_string(),
        )
    }
}

/// Elicit one parseable completion, re-requesting once on a parse failure
/// before giving up.
fn elicit_parsed<T>(
    cfg: &EndpointConfig,
    prompt: &str,
    rng_seed: u64,
    log: &mut ExchangeLog,
    parse: impl Fn(&str) -> Result<T, ElicitError>,
) -> Result<T, (ElicitError, String)> {
    let mut last = (
        ElicitError::Parse {
            reason: "unreached".into(),
        },
        String::new(),
    );
    for _ in 0..2 {
        let text = match chat_complete(cfg, prompt, rng_seed, log) {
            Ok(t) => t,
            Err(e) => return Err((e, String::new())),
        };
        match parse(&text) {
            Ok(v) => return Ok(v),
            Err(e) => last = (e, text),
        }
    }
    Err(last)
}

/// Run (or resume) an elicitation campaign.
///
/// Per (context, repetition): one decision exchange and one exchange per
/// belief family, all independent. Records append to the records JSONL;
/// already-persisted `(context_id, prompt_id, repetition)` keys are skipped.
/// Coherence families accumulate parts in a sidecar and the triple file is
/// rebuilt at the end (one repetition-averaged triple per context). Parse
/// failures are quarantined, never silently dropped.
pub fn run_elicitation(
    cfg: &CampaignConfig,
    rng_seed: u64,
) -> Result<CampaignSummary, ElicitError> {
    cfg.validate()?;
    let schema = cfg.schema();
    let mut log = ExchangeLog::open(&cfg.out_log)?;
    let mut quarantine = Quarantine {
        path: &cfg.out_quarantine,
        count: 0,
    };
    let mut summary = CampaignSummary::default();

    let families: Vec<PromptFamily> = cfg
        .families
        .iter()
        .map(|f| PromptFamily::from_name(f).unwrap())
        .collect();
    let belief_families: Vec<PromptFamily> = families
        .iter()
        .copied()
        .filter(|f| {
            matches!(
                f,
                PromptFamily::Standard
                    | PromptFamily::MseRule
                    | PromptFamily::AbsRule
                    | PromptFamily::Bayes
            )
        })
        .collect();
    let wants_decision = families.contains(&PromptFamily::Decision);
    let wants_lie = families.contains(&PromptFamily::NextState)
        && families.contains(&PromptFamily::Conditional);

    // Resume state: existing record keys and existing coherence parts.
    #[derive(Deserialize)]
    struct ExistingKey {
        context_id: String,
        prompt_id: String,
        repetition: u32,
        action: String,
        #[serde(default)]
        forced_decision: Option<String>,
    }
    let existing: Vec<ExistingKey> = read_jsonl(&cfg.out_records)?;
    let existing_keys: BTreeSet<(String, String, u32)> = existing
        .iter()
        .map(|e| (e.context_id.clone(), e.prompt_id.clone(), e.repetition))
        .collect();
    let mut known_actions: BTreeMap<(String, u32), (ActionLabel, Option<ForcedDecision>)> =
        BTreeMap::new();
    for e in &existing {
        if let Some(action) = ActionLabel::parse(&e.action) {
            let forced = match e.forced_decision.as_deref() {
                Some("Yes") => Some(ForcedDecision::Yes),
                Some("No") => Some(ForcedDecision::No),
                _ => None,
            };
            known_actions.insert((e.context_id.clone(), e.repetition), (action, forced));
        }
    }
    let parts_path = cfg
        .out_lie
        .as_ref()
        .map(|p| p.with_extension("parts.jsonl"));
    let mut parts: Vec<LiePart> = match &parts_path {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let existing_parts: BTreeSet<(String, u32, String, Option<String>)> = parts
        .iter()
        .map(|p| {
            (
                p.context_id.clone(),
                p.repetition,
                p.kind.clone(),
                p.cell.clone(),
            )
        })
        .collect();

    for ctx in &cfg.contexts {
        let inputs = PromptInputs {
            patient_description: ctx.patient_description.clone(),
            clinical_question: cfg.clinical_question.clone(),
            auxiliary_variable_name: ctx.auxiliary.as_ref().map(|a| a.name.clone()),
            auxiliary_variable_condition: None,
            labels: cfg.labels.clone(),
        };
        for rep in 0..cfg.repetitions {
            // Which belief records are still missing for this repetition?
            let missing: Vec<PromptFamily> = belief_families
                .iter()
                .copied()
                .filter(|f| {
                    !existing_keys.contains(&(ctx.context_id.clone(), f.id().to_string(), rep))
                })
                .collect();
            summary.records_skipped_existing += belief_families.len() - missing.len();

            // The action for this repetition: reuse a persisted one, else elicit.
            let mut action_forced = known_actions.get(&(ctx.context_id.clone(), rep)).cloned();
            if action_forced.is_none() && wants_decision && !missing.is_empty() {
                let template = PromptTemplate::builtin(PromptFamily::Decision);
                let prompt = render_prompt(&template, &inputs)?;
                match elicit_parsed(
                    &cfg.endpoint,
                    &prompt,
                    rng_seed,
                    &mut log,
                    parse_decision_response,
                ) {
                    Ok((action, forced)) => {
                        let pair = (action, Some(forced));
                        known_actions.insert((ctx.context_id.clone(), rep), pair);
                        action_forced = Some(pair);
                    }
                    Err((e, raw)) => {
                        quarantine.put(&ctx.context_id, "decision", rep, &e, &raw)?;
                        continue; // records for this repetition need an action
                    }
                }
            }
            let Some((action, forced)) = action_forced else {
                if !missing.is_empty() && !wants_decision {
                    return Err(ElicitError::Config(
                        "campaign elicits beliefs but not decisions; include the 'decision' family"
                            .into(),
                    ));
                }
                continue;
            };

            for family in &missing {
                let template = PromptTemplate::builtin(*family);
                let prompt = render_prompt(&template, &inputs)?;
                let labels = cfg.labels.clone();
                match elicit_parsed(&cfg.endpoint, &prompt, rng_seed, &mut log, |t| {
                    parse_probability_response(t, &labels)
                }) {
                    Ok(parsed) => {
                        let yes_index = cfg
                            .labels
                            .iter()
                            .position(|l| l.eq_ignore_ascii_case("yes"))
                            .unwrap_or(cfg.labels.len() - 1);
                        let record = DecisionRecord {
                            context_id: ctx.context_id.clone(),
                            covariates: ctx.covariates.clone(),
                            belief: parsed.normalized[yes_index],
                            action,
                            outcome: ctx.outcome,
                            prompt_id: family.id().to_string(),
                            repetition: rep,
                            ground_truth: ctx.ground_truth,
                            forced_decision: forced,
                        };
                        append_line(&cfg.out_records, &record_to_json_line(&record, &schema))?;
                        summary.records_written += 1;
                    }
                    Err((e, raw)) => quarantine.put(&ctx.context_id, family.id(), rep, &e, &raw)?,
                }
            }

            if wants_lie {
                if let Some(aux) = &ctx.auxiliary {
                    let weights_key = (
                        ctx.context_id.clone(),
                        rep,
                        "weights".to_string(),
                        None::<String>,
                    );
                    if !existing_parts.contains(&weights_key) {
                        let template = PromptTemplate::builtin(PromptFamily::NextState);
                        let aux_inputs = PromptInputs {
                            labels: aux.cells.clone(),
                            auxiliary_variable_name: Some(aux.name.clone()),
                            ..inputs.clone()
                        };
                        let prompt = render_prompt(&template, &aux_inputs)?;
                        let cells = aux.cells.clone();
                        match elicit_parsed(&cfg.endpoint, &prompt, rng_seed, &mut log, |t| {
                            parse_probability_response(t, &cells)
                        }) {
                            Ok(parsed) => {
                                let part = LiePart {
                                    context_id: ctx.context_id.clone(),
                                    repetition: rep,
                                    kind: "weights".into(),
                                    cell: None,
                                    values: parsed.raw,
                                };
                                if let Some(p) = &parts_path {
                                    append_line(p, &serde_json::to_string(&part).unwrap())?;
                                }
                                parts.push(part);
                            }
                            Err((e, raw)) => {
                                quarantine.put(&ctx.context_id, "next_state", rep, &e, &raw)?
                            }
                        }
                    }
                    for (cell, condition) in aux.cells.iter().zip(&aux.conditions) {
                        let key = (
                            ctx.context_id.clone(),
                            rep,
                            "conditional".to_string(),
                            Some(cell.clone()),
                        );
                        if existing_parts.contains(&key) {
                            continue;
                        }
                        let template = PromptTemplate::builtin(PromptFamily::Conditional);
                        let cond_inputs = PromptInputs {
                            auxiliary_variable_condition: Some(condition.clone()),
                            ..inputs.clone()
                        };
                        let prompt = render_prompt(&template, &cond_inputs)?;
                        let labels = cfg.labels.clone();
                        match elicit_parsed(&cfg.endpoint, &prompt, rng_seed, &mut log, |t| {
                            parse_probability_response(t, &labels)
                        }) {
                            Ok(parsed) => {
                                let yes_index = cfg
                                    .labels
                                    .iter()
                                    .position(|l| l.eq_ignore_ascii_case("yes"))
                                    .unwrap_or(cfg.labels.len() - 1);
                                let part = LiePart {
                                    context_id: ctx.context_id.clone(),
                                    repetition: rep,
                                    kind: "conditional".into(),
                                    cell: Some(cell.clone()),
                                    values: vec![parsed.normalized[yes_index]],
                                };
                                if let Some(p) = &parts_path {
                                    append_line(p, &serde_json::to_string(&part).unwrap())?;
                                }
                                parts.push(part);
                            }
                            Err((e, raw)) => {
                                quarantine.put(&ctx.context_id, "conditional", rep, &e, &raw)?
                            }
                        }
                    }
                }
            }
        }
    }

    // Rebuild the triple file from parts plus the standard-prompt beliefs.
    if wants_lie {
        if let Some(out_lie) = &cfg.out_lie {
            let records: Vec<serde_json::Value> = read_jsonl(&cfg.out_records)?;
            let triples = assemble_triples(cfg, &records, &parts);
            let mut file = std::fs::File::create(out_lie).map_err(|source| ElicitError::Io {
                path: out_lie.display().to_string(),
                source,
            })?;
            for t in &triples {
                writeln!(file, "{}", serde_json::to_string(t).unwrap()).map_err(|source| {
                    ElicitError::Io {
                        path: out_lie.display().to_string(),
                        source,
                    }
                })?;
            }
            summary.lie_triples_written = triples.len();
        }
    }

    summary.quarantined = quarantine.count;
    Ok(summary)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn assemble_triples(
    cfg: &CampaignConfig,
    records: &[serde_json::Value],
    parts: &[LiePart],
) -> Vec<LieTriple> {
    let mut triples = Vec::new();
    for ctx in &cfg.contexts {
        let Some(aux) = &ctx.auxiliary else { continue };
        let bases: Vec<f64> = records
            .iter()
            .filter(|r| {
                r["context_id"].as_str() == Some(ctx.context_id.as_str())
                    && r["prompt_id"].as_str() == Some("std")
            })
            .filter_map(|r| r["belief"].as_f64())
            .collect();
        let weight_parts: Vec<&LiePart> = parts
            .iter()
            .filter(|p| p.context_id == ctx.context_id && p.kind == "weights")
            .collect();
        if bases.is_empty() || weight_parts.is_empty() {
            continue;
        }
        let mut bin_weights = Vec::new();
        let mut bin_beliefs = Vec::new();
        let mut complete = true;
        for (j, cell) in aux.cells.iter().enumerate() {
            let ws: Vec<f64> = weight_parts
                .iter()
                .filter_map(|p| p.values.get(j).copied())
                .collect();
            let bs: Vec<f64> = parts
                .iter()
                .filter(|p| {
                    p.context_id == ctx.context_id
                        && p.kind == "conditional"
                        && p.cell.as_deref() == Some(cell)
                })
                .filter_map(|p| p.values.first().copied())
                .collect();
            if ws.is_empty() || bs.is_empty() {
                complete = false;
                break;
            }
            bin_weights.push(mean(&ws));
            bin_beliefs.push(mean(&bs));
        }
        if !complete {
            continue;
        }
        triples.push(LieTriple {
            context_id: ctx.context_id.clone(),
            base_belief: mean(&bases),
            bin_beliefs,
            bin_weights,
            partition: Partition {
                variable: aux.name.clone(),
                cells: aux.cells.clone(),
            },
        });
    }
    triples
}

/// Load campaign output back as a validated [`Dataset`] (schema inferred from
/// the campaign contexts).
pub fn load_campaign_records(cfg: &CampaignConfig) -> Result<Dataset, crate::records::CoreError> {
    crate::records::load_records(
        &cfg.out_records,
        crate::records::RecordFormat::Jsonl,
        &cfg.schema(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_prompt_contains_the_phrasing_verbatim() {
        let template = PromptTemplate::builtin(PromptFamily::Standard);
        let inputs = PromptInputs {
            patient_description: "is male, is in the 50-64 age group".into(),
            clinical_question: "have moderate or greater structural heart disease".into(),
            labels: vec!["No".into(), "Yes".into()],
            ..Default::default()
        };
        let text = render_prompt(&template, &inputs).unwrap();
        assert!(text.contains("is male, is in the 50-64 age group"));
        assert!(text.contains("have moderate or greater structural heart disease"));
        assert!(text.contains("Respond with exactly 2 lines"));
        assert!(text.contains("No: 0.50"));
        // rendering is pure text substitution: same inputs, same bytes
        assert_eq!(text, render_prompt(&template, &inputs).unwrap());
    }

    #[test]
    fn templates_missing_required_placeholders_fail_at_construction() {
        let err = PromptTemplate::new("bad", PromptFamily::Standard, "no placeholders".into())
            .unwrap_err();
        assert!(matches!(err, ElicitError::TemplateInvalid { .. }));
    }

    #[test]
    fn conditional_prompt_requires_the_auxiliary_condition() {
        let template = PromptTemplate::builtin(PromptFamily::Conditional);
        let inputs = PromptInputs {
            patient_description: "is female".into(),
            clinical_question: "have colic".into(),
            labels: vec!["No".into(), "Yes".into()],
            ..Default::default()
        };
        let err = render_prompt(&template, &inputs).unwrap_err();
        assert!(
            matches!(err, ElicitError::MissingPlaceholder(ref p) if p == "<auxiliary_variable_condition>")
        );
    }

    #[test]
    fn probability_parsing_matches_the_protocol() {
        let labels = vec!["No".to_string(), "Yes".to_string()];
        let parsed = parse_probability_response("No: 0.50\nYes: 0.50", &labels).unwrap();
        assert_eq!(parsed.raw, vec![0.5, 0.5]);
        assert_eq!(parsed.normalized, vec![0.5, 0.5]);
        assert!(!parsed.was_normalized);

        let parsed = parse_probability_response("No: 0.3\nYes: 0.9", &labels).unwrap();
        assert_eq!(parsed.raw, vec![0.3, 0.9]);
        assert!((parsed.normalized[0] - 0.25).abs() < 1e-12);
        assert!((parsed.normalized[1] - 0.75).abs() < 1e-12);
        assert!(parsed.was_normalized);

        assert!(matches!(
            parse_probability_response("maybe around half", &labels),
            Err(ElicitError::Parse { .. })
        ));
        assert!(matches!(
            parse_probability_response("No: 0.0\nYes: 0.0", &labels),
            Err(ElicitError::Parse { .. })
        ));
        assert!(matches!(
            parse_probability_response("No: 1.3\nYes: 0.2", &labels),
            Err(ElicitError::Parse { .. })
        ));
    }

    #[test]
    fn formatting_then_parsing_is_the_identity() {
        let labels = vec!["No".to_string(), "Yes".to_string()];
        for (no, yes) in [(0.5, 0.5), (0.12, 0.88), (1.0, 0.0)] {
            let text = format!("No: {no:.2}\nYes: {yes:.2}");
            let parsed = parse_probability_response(&text, &labels).unwrap();
            assert_eq!(parsed.raw, vec![no, yes]);
        }
    }

    #[test]
    fn decision_parsing_maps_refusals_to_defer() {
        let (action, forced) = parse_decision_response("Can decide: No\nDecision: Yes").unwrap();
        assert_eq!(action, ActionLabel::Defer);
        assert_eq!(forced, ForcedDecision::Yes);

        let (action, forced) = parse_decision_response("Can decide: Yes\nDecision: No").unwrap();
        assert_eq!(action, ActionLabel::No);
        assert_eq!(forced, ForcedDecision::No);

        assert!(matches!(
            parse_decision_response("Decision: Yes"),
            Err(ElicitError::Parse { .. })
        ));
    }

    #[test]
    fn next_state_prompt_renders_cells_and_example_lines() {
        let template = PromptTemplate::builtin(PromptFamily::NextState);
        let inputs = PromptInputs {
            patient_description: "is an infant".into(),
            clinical_question: String::new(),
            auxiliary_variable_name: Some("feeding pattern".into()),
            auxiliary_variable_condition: None,
            labels: vec!["normal".into(), "poor".into()],
        };
        let text = render_prompt(&template, &inputs).unwrap();
        assert!(text.contains("feeding pattern"));
        assert!(text.contains("Respond with exactly 2 lines"));
        assert!(text.contains("[normal, poor]"));
        assert!(text.contains("normal: 0.50\npoor: 0.50"));
    }
}
