//! Answer metrics and evaluation reports.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::embed::cosine_similarity;
use crate::error::Result;
use crate::oracle::{CallSite, OracleGateway, Outcome};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, drop punctuation and articles, collapse whitespace.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .map(str::to_string)
        .collect()
}

/// Token-level F1 over normalized token multisets.
pub fn f1_score(prediction: &str, gold: &str) -> f64 {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Cosine of the two texts' embeddings clamped to [0,1]; 0 when either is blank.
pub fn retrieval_similarity(gateway: &OracleGateway, retrieved: &str, gold: &str) -> Result<f64> {
    if retrieved.trim().is_empty() || gold.trim().is_empty() {
        return Ok(0.0);
    }
    let a = gateway.embed(CallSite::Evaluation, retrieved)?;
    let b = gateway.embed(CallSite::Evaluation, gold)?;
    Ok(cosine_similarity(&a, &b)?.clamp(0.0, 1.0))
}

/// Judge score in [0,100]; `None` when the judge fails or refuses.
pub fn generation_eval(
    gateway: &OracleGateway,
    question: &str,
    answer: &str,
    gold: &str,
) -> Option<f64> {
    match gateway.grade(CallSite::Evaluation, question, answer, gold) {
        Ok(Outcome::Answer(g)) => Some(g.score),
        Ok(Outcome::Refused(reason)) => {
            warn!(%reason, "judge refused, G-E omitted");
            None
        }
        Err(e) => {
            warn!(error = %e, "judge failed, G-E omitted");
            None
        }
    }
}

/// One line of a QA file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub question: String,
    pub golden_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ContextField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nary: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nhop: Option<serde_json::Value>,
}

/// Gold context given either as one string or a list of passages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextField {
    Text(String),
    Passages(Vec<String>),
}

impl ContextField {
    pub fn joined(&self) -> String {
        match self {
            ContextField::Text(t) => t.clone(),
            ContextField::Passages(p) => p.join("\n"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ge: Option<f64>,
}

/// Per-question report row. Failed questions carry `error` and no metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub golden_answer: String,
    #[serde(default)]
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<EvalResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_avg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregate {
    pub questions: usize,
    pub scored: usize,
    pub failed: usize,
    pub f1: Option<f64>,
    pub rs: Option<f64>,
    pub ge: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalAggregate {
    /// Means over the rows that carry each metric.
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        let results: Vec<&EvalResult> = rows.iter().filter_map(|r| r.result.as_ref()).collect();
        Self {
            questions: rows.len(),
            scored: results.len(),
            failed: rows.iter().filter(|r| r.error.is_some()).count(),
            f1: mean(results.iter().map(|r| r.f1)),
            rs: mean(results.iter().filter_map(|r| r.rs)),
            ge: mean(results.iter().filter_map(|r| r.ge)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregate: EvalAggregate,
}

impl EvalReport {
    /// Rows sorted by id so the report does not depend on input order.
    pub fn new(mut rows: Vec<EvalRow>) -> Self {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        let aggregate = EvalAggregate::from_rows(&rows);
        Self { rows, aggregate }
    }
}
