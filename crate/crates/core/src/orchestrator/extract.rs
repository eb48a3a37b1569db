//! Turning raw annotator text into typed slot values.
//!
//! Single-label output uses the first whitespace-delimited token only;
//! structured output must be a JSON object whose slots satisfy the schema.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::OrchestratorError;
use crate::workspace::{AnnotationSchema, Constraint, LabelMap, SlotKind};

pub const CONSTRAINT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionOutcome {
    pub status: ExtractionStatus,
    pub reason: Option<String>,
    pub value: Option<BTreeMap<String, Value>>,
}

impl ExtractionOutcome {
    pub fn accepted(value: BTreeMap<String, Value>) -> Self {
        Self { status: ExtractionStatus::Accepted, reason: None, value: Some(value) }
    }

    pub fn rejected(reason: impl Into<String>) -> Self {
        Self { status: ExtractionStatus::Rejected, reason: Some(reason.into()), value: None }
    }

    pub fn is_accepted(&self) -> bool {
        self.status == ExtractionStatus::Accepted
    }
}

/// Look up the first non-whitespace token; the label lands in `slot`.
pub fn extract_label(raw_text: &str, labels: &LabelMap, slot: &str) -> ExtractionOutcome {
    let Some(token) = raw_text.split_whitespace().next() else {
        return ExtractionOutcome::rejected("empty output");
    };
    match labels.lookup(token) {
        Some(i) => ExtractionOutcome::accepted(BTreeMap::from([(slot.to_string(), Value::from(labels.label(i)))])),
        None => ExtractionOutcome::rejected("unmapped token"),
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

/// Check a JSON object against every slot and cross-field constraint,
/// reporting the first failing rule. Keys not declared in the schema are
/// ignored (rationales are not authoritative).
pub fn validate_structured(raw_text: &str, schema: &AnnotationSchema) -> ExtractionOutcome {
    let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(raw_text.trim()) else {
        return ExtractionOutcome::rejected("not a JSON object");
    };
    let mut out = BTreeMap::new();
    for slot in &schema.slots {
        let Some(v) = obj.get(&slot.name) else {
            return ExtractionOutcome::rejected(format!("missing slot `{}`", slot.name));
        };
        let ok = match &slot.kind {
            SlotKind::Categorical { labels } => match v.as_str() {
                Some(s) if labels.iter().any(|l| l == s) => true,
                Some(_) => return ExtractionOutcome::rejected(format!("domain: slot `{}` value {v} not a declared label", slot.name)),
                None => false,
            },
            SlotKind::Ordinal { levels } => match v.as_i64() {
                Some(x) if levels.contains(&x) => true,
                Some(_) => return ExtractionOutcome::rejected(format!("range: slot `{}` value {v} not a declared level", slot.name)),
                None => false,
            },
            SlotKind::Numeric { min, max } => match v.as_f64() {
                Some(x) if x >= *min && x <= *max => true,
                Some(_) => {
                    return ExtractionOutcome::rejected(format!("range: slot `{}` value {v} outside [{}, {}]", slot.name, fmt_num(*min), fmt_num(*max)))
                }
                None => false,
            },
            SlotKind::Text { max_len } => match v.as_str() {
                Some(s) if s.chars().count() <= *max_len => true,
                Some(_) => return ExtractionOutcome::rejected(format!("length: slot `{}` exceeds {max_len} characters", slot.name)),
                None => false,
            },
        };
        if !ok {
            return ExtractionOutcome::rejected(format!("type: slot `{}` has the wrong kind", slot.name));
        }
        out.insert(slot.name.clone(), v.clone());
    }
    for c in &schema.constraints {
        match c {
            Constraint::SumTo { slots, target } => {
                let sum: f64 = slots.iter().map(|s| out[s].as_f64().unwrap_or(0.0)).sum();
                if (sum - target).abs() > CONSTRAINT_TOLERANCE {
                    return ExtractionOutcome::rejected(format!("sum constraint: {} ≠ {}", fmt_num(sum), fmt_num(*target)));
                }
            }
        }
    }
    ExtractionOutcome::accepted(out)
}

/// Dispatch on the schema: a lone categorical slot uses the token rule,
/// anything else is structured.
pub fn extract(raw_text: &str, schema: &AnnotationSchema, labels: &LabelMap) -> ExtractionOutcome {
    if schema.is_single_categorical() {
        extract_label(raw_text, labels, &schema.slots[0].name)
    } else {
        validate_structured(raw_text, schema)
    }
}

/// Gap `log p(1st) − log p(2nd)` between the two most probable labels;
/// infinite when only one label carries mass.
pub fn near_tie_margin(logprobs: &[f64]) -> Result<f64, OrchestratorError> {
    let mut finite: Vec<f64> = logprobs.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        return Err(OrchestratorError::EmptyDistribution);
    }
    finite.sort_by(|a, b| b.total_cmp(a));
    Ok(match finite.get(1) {
        Some(second) => finite[0] - second,
        None => f64::INFINITY,
    })
}
