use std::collections::BTreeSet;

use super::report::{AgreementMetric, AgreementReport};

/// How extracted spans are canonicalized before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpanCase {
    #[default]
    Sensitive,
    Insensitive,
}

fn canonical(spans: &[String], case: SpanCase) -> BTreeSet<String> {
    spans
        .iter()
        .map(|s| {
            let t = s.trim();
            match case {
                SpanCase::Sensitive => t.to_string(),
                SpanCase::Insensitive => t.to_lowercase(),
            }
        })
        .collect()
}

/// Precision, recall and F1 between one predicted and one reference span set.
/// Two empty sets score a perfect 1.
pub fn set_prf(pred: &[String], reference: &[String], case: SpanCase) -> (f64, f64, f64) {
    let p = canonical(pred, case);
    let r = canonical(reference, case);
    if p.is_empty() && r.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let hit = p.intersection(&r).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { hit / p.len() as f64 };
    let recall = if r.is_empty() { 0.0 } else { hit / r.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Exact match and F1 over items, each item holding a predicted and a
/// reference span set. Exact match is the share of items whose canonical
/// sets are equal; F1 is the mean per-item F1.
pub fn exact_match_f1(items: &[(Vec<String>, Vec<String>)], case: SpanCase) -> (AgreementReport, AgreementReport) {
    let n = items.len();
    if n == 0 {
        return (
            AgreementReport::undefined(AgreementMetric::ExactMatch, 0, "no items"),
            AgreementReport::undefined(AgreementMetric::F1, 0, "no items"),
        );
    }
    let mut em = 0.0;
    let mut f1 = 0.0;
    for (pred, reference) in items {
        if canonical(pred, case) == canonical(reference, case) {
            em += 1.0;
        }
        f1 += set_prf(pred, reference, case).2;
    }
    (
        AgreementReport::new(AgreementMetric::ExactMatch, Some(em / n as f64), n),
        AgreementReport::new(AgreementMetric::F1, Some(f1 / n as f64), n),
    )
}
