//! Markdown and CSV table emitters whose layouts mirror the published report
//! formats, plus parsers so emitted tables round-trip. Formatting is pinned:
//! CMI to four decimals, percent improvements to two, violation rates to one,
//! consistency metrics in leading-dot four-decimal form (".0591").

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("malformed table: {0}")]
    Format(String),
}

/// One row of the combined conditional-independence table: CMI block,
/// predictive block, predictive-with-context block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiTableRow {
    pub label: String,
    pub cmi: f64,
    pub cmi_ci: (f64, f64),
    pub impr: f64,
    pub impr_ci: (f64, f64),
    pub impr_ctx: Option<f64>,
    pub impr_ctx_ci: Option<(f64, f64)>,
}

/// One row of the monotone-violation table: percent rates per action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneTableRow {
    pub label: String,
    pub rates: Vec<f64>,
}

/// One row of a consistency-style table (leading-dot formatting). `std` is
/// present for the prompt-consistency layout and absent for the
/// ground-truth-RMSE layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dot4TableRow {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub values: Vec<f64>,
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

fn fmt_pct1(x: f64) -> String {
    format!("{x:.1}")
}

/// ".0591"-style: four decimals with the leading zero stripped.
fn fmt_dot4(x: f64) -> String {
    let s = format!("{x:.4}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

fn fmt_ci4(ci: (f64, f64)) -> String {
    format!("[{}, {}]", fmt4(ci.0), fmt4(ci.1))
}

fn fmt_ci2(ci: (f64, f64)) -> String {
    format!("[{}, {}]", fmt2(ci.0), fmt2(ci.1))
}

fn parse_ci(s: &str) -> Result<(f64, f64), ReportError> {
    let inner = s
        .trim()
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| ReportError::Format(format!("bad CI cell '{s}'")))?;
    let mut parts = inner.split(',').map(str::trim);
    let lo = parse_num(parts.next().unwrap_or(""))?;
    let hi = parse_num(parts.next().unwrap_or(""))?;
    Ok((lo, hi))
}

fn parse_num(s: &str) -> Result<f64, ReportError> {
    // accept the leading-dot form as well
    let t = s.trim();
    let normalized = if let Some(rest) = t.strip_prefix('.') {
        format!("0.{rest}")
    } else if let Some(rest) = t.strip_prefix("-.") {
        format!("-0.{rest}")
    } else {
        t.to_string()
    };
    normalized
        .parse::<f64>()
        .map_err(|e| ReportError::Format(format!("bad number '{s}': {e}")))
}

fn markdown_rows(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines()
        .map(str::trim)
        .filter(|l| l.starts_with('|'))
        .filter(|l| !l.contains("---"))
        .skip(1) // header
        .map(|l| {
            l.trim_matches('|')
                .split('|')
                .map(str::trim)
                .collect::<Vec<&str>>()
        })
}

/// Combined CI table: kNN CMI with CI, percent log-loss improvement with CI,
/// and the same improvement conditioning on the context vector.
pub fn ci_table_markdown(rows: &[CiTableRow]) -> String {
    let mut out = String::new();
    out.push_str(
        "| Dataset / Model | kNN CMI | 95% CI | CB % Impr | 95% CI | CB+x % Impr | 95% CI |\n",
    );
    out.push_str("| --- | --- | --- | --- | --- | --- | --- |\n");
    for r in rows {
        let (ctx, ctx_ci) = match (r.impr_ctx, r.impr_ctx_ci) {
            (Some(v), Some(ci)) => (fmt2(v), fmt_ci2(ci)),
            _ => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.label,
            fmt4(r.cmi),
            fmt_ci4(r.cmi_ci),
            fmt2(r.impr),
            fmt_ci2(r.impr_ci),
            ctx,
            ctx_ci,
        ));
    }
    out
}

pub fn parse_ci_table_markdown(text: &str) -> Result<Vec<CiTableRow>, ReportError> {
    let mut rows = Vec::new();
    for cells in markdown_rows(text) {
        if cells.len() != 7 {
            return Err(ReportError::Format(format!(
                "expected 7 cells, got {}",
                cells.len()
            )));
        }
        let (impr_ctx, impr_ctx_ci) = if cells[5].is_empty() {
            (None, None)
        } else {
            (Some(parse_num(cells[5])?), Some(parse_ci(cells[6])?))
        };
        rows.push(CiTableRow {
            label: cells[0].to_string(),
            cmi: parse_num(cells[1])?,
            cmi_ci: parse_ci(cells[2])?,
            impr: parse_num(cells[3])?,
            impr_ci: parse_ci(cells[4])?,
            impr_ctx,
            impr_ctx_ci,
        });
    }
    Ok(rows)
}

/// Monotone-violation table: one percent-rate column per action pair.
pub fn monotone_table_markdown(pair_headers: &[String], rows: &[MonotoneTableRow]) -> String {
    let mut out = String::new();
    out.push_str("| Dataset/Model |");
    for h in pair_headers {
        out.push_str(&format!(" {h} |"));
    }
    out.push('\n');
    out.push_str("| --- |");
    for _ in pair_headers {
        out.push_str(" --- |");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("| {} |", r.label));
        for v in &r.rates {
            out.push_str(&format!(" {} |", fmt_pct1(*v)));
        }
        out.push('\n');
    }
    out
}

pub fn parse_monotone_table_markdown(text: &str) -> Result<Vec<MonotoneTableRow>, ReportError> {
    let mut rows = Vec::new();
    for cells in markdown_rows(text) {
        if cells.len() < 2 {
            return Err(ReportError::Format("row too short".into()));
        }
        let rates: Result<Vec<f64>, ReportError> =
            cells[1..].iter().map(|c| parse_num(c)).collect();
        rows.push(MonotoneTableRow {
            label: cells[0].to_string(),
            rates: rates?,
        });
    }
    Ok(rows)
}

/// Consistency-style table in leading-dot form. When rows carry `std`, a
/// "Std" column precedes the value columns.
pub fn dot4_table_markdown(value_headers: &[String], rows: &[Dot4TableRow]) -> String {
    let with_std = rows.iter().any(|r| r.std.is_some());
    let mut out = String::new();
    out.push_str("| Dataset/Model |");
    if with_std {
        out.push_str(" Std |");
    }
    for h in value_headers {
        out.push_str(&format!(" {h} |"));
    }
    out.push('\n');
    out.push_str("| --- |");
    let n_cols = value_headers.len() + usize::from(with_std);
    for _ in 0..n_cols {
        out.push_str(" --- |");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("| {} |", r.label));
        if with_std {
            out.push_str(&format!(" {} |", r.std.map(fmt_dot4).unwrap_or_default()));
        }
        for v in &r.values {
            out.push_str(&format!(" {} |", fmt_dot4(*v)));
        }
        out.push('\n');
    }
    out
}

pub fn parse_dot4_table_markdown(text: &str) -> Result<Vec<Dot4TableRow>, ReportError> {
    let header: Vec<&str> = text
        .lines()
        .map(str::trim)
        .find(|l| l.starts_with('|'))
        .ok_or_else(|| ReportError::Format("no header".into()))?
        .trim_matches('|')
        .split('|')
        .map(str::trim)
        .collect();
    let with_std = header.get(1).copied() == Some("Std");
    let mut rows = Vec::new();
    for cells in markdown_rows(text) {
        let mut iter = cells.iter();
        let label = iter
            .next()
            .ok_or_else(|| ReportError::Format("empty row".into()))?
            .to_string();
        let std = if with_std {
            Some(parse_num(
                iter.next()
                    .ok_or_else(|| ReportError::Format("missing Std".into()))?,
            )?)
        } else {
            None
        };
        let values: Result<Vec<f64>, ReportError> = iter.map(|c| parse_num(c)).collect();
        rows.push(Dot4TableRow {
            label,
            std,
            values: values?,
        });
    }
    Ok(rows)
}

/// Plain CSV with a header row; cells containing commas or quotes are quoted.
pub fn to_csv(headers: &[&str], rows: &[Vec<String>]) -> String {
    fn cell(s: &str) -> String {
        if s.contains(',') || s.contains('"') || s.contains('\n') {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    }
    let mut out = String::new();
    out.push_str(
        &headers
            .iter()
            .map(|h| cell(h))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for row in rows {
        out.push_str(&row.iter().map(|c| cell(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}
