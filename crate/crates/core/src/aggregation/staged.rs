//! Rule-based aggregators used at every stage: vote for categorical slots,
//! median or trimmed mean for numeric ones, and prompt-wise z-scoring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::AggregationError;
use crate::stats::bootstrap::quantile_sorted;

pub const DEFAULT_TRIM_FRACTION: f64 = 0.1;

/// How numeric values collapse to one number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum NumericRule {
    #[default]
    Median,
    /// Drop `floor(fraction · n)` values from each tail, then average.
    TrimmedMean { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Support {
    /// Vote counts keyed by label; `tie` marks a tie for the top count.
    Votes { counts: BTreeMap<String, usize>, tie: bool },
    Numeric { median: f64, q1: f64, q3: f64, trimmed_mean: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDecision {
    pub value: Value,
    pub support: Support,
    pub n_valid: usize,
}

impl SlotDecision {
    pub fn label(&self) -> Option<&str> {
        self.value.as_str()
    }

    pub fn number(&self) -> Option<f64> {
        self.value.as_f64()
    }

    pub fn is_tie(&self) -> bool {
        matches!(self.support, Support::Votes { tie: true, .. })
    }
}

/// Modal label; ties go to the label listed first in `label_order`.
/// Labels outside `label_order` are rejected.
pub fn majority_vote<S: AsRef<str>>(votes: &[S], label_order: &[String]) -> Result<SlotDecision, AggregationError> {
    if votes.is_empty() {
        return Err(AggregationError::NoValidRecords);
    }
    let mut counts = vec![0usize; label_order.len()];
    for v in votes {
        let v = v.as_ref();
        let i = label_order.iter().position(|l| l == v).ok_or_else(|| AggregationError::UnknownLabel(v.to_string()))?;
        counts[i] += 1;
    }
    let top = *counts.iter().max().expect("non-empty label set");
    let winner = counts.iter().position(|&c| c == top).expect("max exists");
    let tie = counts.iter().filter(|&&c| c == top).count() > 1;
    Ok(SlotDecision {
        value: Value::from(label_order[winner].as_str()),
        support: Support::Votes {
            counts: label_order.iter().cloned().zip(counts).filter(|(_, c)| *c > 0).collect(),
            tie,
        },
        n_valid: votes.len(),
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    let s = sorted(values)?;
    Some(quantile_sorted(&s, 0.5))
}

fn sorted(values: &[f64]) -> Option<Vec<f64>> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Some(s)
}

/// Mean after removing `floor(fraction · n)` values from each end.
pub fn trimmed_mean(values: &[f64], fraction: f64) -> Option<f64> {
    let s = sorted(values)?;
    if !(0.0..0.5).contains(&fraction) {
        return None;
    }
    let cut = (fraction * s.len() as f64).floor() as usize;
    let kept = &s[cut..s.len() - cut];
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Median (default) or trimmed mean, with quartiles kept as support.
pub fn numeric_decision(values: &[f64], rule: NumericRule) -> Result<SlotDecision, AggregationError> {
    if values.is_empty() {
        return Err(AggregationError::NoValidRecords);
    }
    let s = sorted(values).ok_or(AggregationError::NonFinite)?;
    let fraction = match rule {
        NumericRule::Median => DEFAULT_TRIM_FRACTION,
        NumericRule::TrimmedMean { fraction } => fraction,
    };
    let tm = trimmed_mean(&s, fraction).ok_or(AggregationError::InvalidTrim(fraction))?;
    let med = quantile_sorted(&s, 0.5);
    let value = match rule {
        NumericRule::Median => med,
        NumericRule::TrimmedMean { .. } => tm,
    };
    Ok(SlotDecision {
        value: serde_json::Number::from_f64(value).map(Value::Number).unwrap_or(Value::Null),
        support: Support::Numeric { median: med, q1: quantile_sorted(&s, 0.25), q3: quantile_sorted(&s, 0.75), trimmed_mean: tm },
        n_valid: values.len(),
    })
}

/// Standardize each group with its population mean and sd; constant
/// groups map to zeros.
pub fn zscore_by_prompt(groups: &[Vec<f64>]) -> Vec<Vec<f64>> {
    groups
        .iter()
        .map(|g| {
            if g.is_empty() {
                return vec![];
            }
            let n = g.len() as f64;
            let mean = g.iter().sum::<f64>() / n;
            let sd = (g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sd <= f64::EPSILON * mean.abs().max(1.0) {
                vec![0.0; g.len()]
            } else {
                g.iter().map(|x| (x - mean) / sd).collect()
            }
        })
        .collect()
}
