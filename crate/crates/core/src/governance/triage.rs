//! Routing items to human review.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GovernanceError;
use crate::aggregation::AggregateTable;
use crate::orchestrator::{near_tie_margin, AnnotationRecord, Pass};
use crate::stats::kappa::per_item_kappa;
use crate::workspace::manifest::{DEFAULT_KAPPA_FLOOR, DEFAULT_MARGIN_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscalationTrigger {
    LowAgreement,
    NearTie,
    SchemaFailure,
    StageFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscalationStatus {
    Open,
    Reviewed,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Escalation {
    pub item_id: String,
    pub trigger: EscalationTrigger,
    /// The metric that fired: per-item κ, log-odds margin, or failed-record count.
    pub payload: Option<f64>,
    pub status: EscalationStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriagePolicy {
    pub kappa_floor: f64,
    pub margin_floor: f64,
    pub escalate_schema_failures: bool,
}

impl Default for TriagePolicy {
    fn default() -> Self {
        Self { kappa_floor: DEFAULT_KAPPA_FLOOR, margin_floor: DEFAULT_MARGIN_FLOOR, escalate_schema_failures: true }
    }
}

/// Per-item chance-corrected agreement across the stage-1 (prompt × model)
/// decisions of a categorical slot.
pub fn item_agreement(table: &AggregateTable, slot: &str) -> BTreeMap<String, f64> {
    let rows: Vec<Vec<&str>> = table.items.iter().map(|i| i.stage1.iter().filter_map(|d| d.slots.get(slot).and_then(|s| s.label())).collect()).collect();
    table.items.iter().zip(per_item_kappa(&rows)).filter_map(|(i, k)| k.map(|k| (i.item_id.clone(), k))).collect()
}

/// Per-item top-two log-odds gap. Label probabilities are averaged over
/// the item's valid estimation records; records without log-probabilities
/// contribute their extracted label as a point mass.
pub fn item_margins(records: &[AnnotationRecord], slot: &str, labels: &[String]) -> BTreeMap<String, f64> {
    let mut mass: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_valid() && r.pass == Pass::Estimation) {
        let entry = mass.entry(&r.item_id).or_insert_with(|| (vec![0.0; labels.len()], 0));
        match &r.label_logprobs {
            Some(lp) => {
                for (j, l) in labels.iter().enumerate() {
                    entry.0[j] += lp.get(l).map_or(0.0, |x| x.exp());
                }
            }
            None => {
                let Some(j) = r.slot(slot).and_then(|v| v.as_str()).and_then(|v| labels.iter().position(|l| l == v)) else { continue };
                entry.0[j] += 1.0;
            }
        }
        entry.1 += 1;
    }
    mass.into_iter()
        .filter(|(_, (_, n))| *n > 0)
        .filter_map(|(id, (p, n))| {
            let logs: Vec<f64> = p.iter().map(|x| (x / n as f64).ln()).collect();
            near_tie_margin(&logs).ok().map(|m| (id.to_string(), m))
        })
        .collect()
}

/// One escalation per (item, trigger), ordered by item id then trigger.
pub fn detect_escalations(
    table: &AggregateTable,
    agreement_by_item: &BTreeMap<String, f64>,
    margins_by_item: &BTreeMap<String, f64>,
    policy: &TriagePolicy,
) -> Vec<Escalation> {
    let mut out = Vec::new();
    let open = |item_id: &str, trigger, payload| Escalation { item_id: item_id.to_string(), trigger, payload, status: EscalationStatus::Open };
    for item in &table.items {
        let id = item.item_id.as_str();
        if let Some(&k) = agreement_by_item.get(id) {
            if k < policy.kappa_floor {
                out.push(open(id, EscalationTrigger::LowAgreement, Some(k)));
            }
        }
        if let Some(&m) = margins_by_item.get(id) {
            if m < policy.margin_floor {
                out.push(open(id, EscalationTrigger::NearTie, Some(m)));
            }
        }
        if policy.escalate_schema_failures && item.n_valid < item.n_records {
            out.push(open(id, EscalationTrigger::SchemaFailure, Some((item.n_records - item.n_valid) as f64)));
        }
        if item.final_decision.is_empty() {
            out.push(open(id, EscalationTrigger::StageFailure, None));
        }
    }
    out.sort_by(|a, b| (&a.item_id, a.trigger).cmp(&(&b.item_id, b.trigger)));
    out
}

pub fn save_escalations(path: &Path, escalations: &[Escalation]) -> Result<(), GovernanceError> {
    let err = |e: csv::Error| GovernanceError::Io { path: path.display().to_string(), message: e.to_string() };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| GovernanceError::Io { path: dir.display().to_string(), message: e.to_string() })?;
    }
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    // write the header explicitly so an empty list still yields a valid file
    w.write_record(["item_id", "trigger", "payload", "status"]).map_err(err)?;
    for e in escalations {
        let trigger = serde_json::to_value(e.trigger).expect("enum serializes");
        let status = serde_json::to_value(e.status).expect("enum serializes");
        w.write_record([
            e.item_id.as_str(),
            trigger.as_str().unwrap_or_default(),
            &e.payload.map(|p| p.to_string()).unwrap_or_default(),
            status.as_str().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| GovernanceError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub fn load_escalations(path: &Path) -> Result<Vec<Escalation>, GovernanceError> {
    let err = |e: csv::Error| GovernanceError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().collect::<Result<Vec<Escalation>, _>>().map_err(err)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::aggregation::{build_aggregate_table, AggregateOptions};
    use crate::annotators::ProviderStatus;
    use crate::orchestrator::{PinSnapshot, Validity};
    use crate::workspace::{AnnotationSchema, LabelMap};
    use proptest::prelude::*;

    pub(crate) fn record(item: &str, u: usize, m: usize, label: Option<&str>) -> AnnotationRecord {
        AnnotationRecord {
            run_id: "r".into(),
            pass: Pass::Estimation,
            item_id: item.into(),
            u,
            s: 1,
            m,
            prompt_id: format!("p{u}"),
            option_permutation: vec!["A".into(), "B".into()],
            seed: 0,
            raw_text: label.unwrap_or("??").into(),
            extracted: label.map(|l| BTreeMap::from([("label".to_string(), serde_json::Value::from(l))])),
            label_logprobs: None,
            validity: if label.is_some() { Validity::Valid } else { Validity::InvalidAfterRetries },
            retry_count: if label.is_some() { 0 } else { 3 },
            rejection_reason: None,
            provider_status: ProviderStatus::Ok,
            provider: PinSnapshot { name: "s".into(), model: "s".into(), version: "1".into(), precision: "fp32".into(), device: "cpu".into() },
            timestamp: chrono::Utc::now(),
        }
    }

    fn table(records: &[AnnotationRecord]) -> AggregateTable {
        let schema = AnnotationSchema::single_label(&LabelMap::simple(&["A", "B"]).unwrap());
        let ids: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        build_aggregate_table("r", records, &schema, &ids, &AggregateOptions::default()).unwrap()
    }

    #[test]
    fn triggers() {
        let mut recs = vec![];
        for u in 1..=3 {
            recs.push(record("a", u, 1, Some("A")));
            recs.push(record("b", u, 1, Some(if u == 1 { "B" } else { "A" })));
        }
        recs.push(record("c", 1, 1, Some("B")));
        recs.push(record("c", 2, 1, None));
        recs.push(record("d", 1, 1, None));
        let t = table(&recs);
        let agreement = BTreeMap::from([("a".to_string(), 1.0), ("b".to_string(), 0.35)]);
        let margins = BTreeMap::from([("a".to_string(), 2.0), ("b".to_string(), 0.1)]);
        let esc = detect_escalations(&t, &agreement, &margins, &TriagePolicy::default());
        let got: Vec<(&str, EscalationTrigger)> = esc.iter().map(|e| (e.item_id.as_str(), e.trigger)).collect();
        assert_eq!(
            got,
            vec![
                ("b", EscalationTrigger::LowAgreement),
                ("b", EscalationTrigger::NearTie),
                ("c", EscalationTrigger::SchemaFailure),
                ("d", EscalationTrigger::SchemaFailure),
                ("d", EscalationTrigger::StageFailure),
            ]
        );
        let lenient = TriagePolicy { escalate_schema_failures: false, ..Default::default() };
        assert_eq!(detect_escalations(&t, &agreement, &margins, &lenient).len(), 3);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agg/escalations.csv");
        save_escalations(&path, &esc).unwrap();
        assert_eq!(load_escalations(&path).unwrap(), esc);
        save_escalations(&path, &[]).unwrap();
        assert!(load_escalations(&path).unwrap().is_empty());
    }

    #[test]
    fn margins_from_votes_and_logprobs() {
        let labels = vec!["A".to_string(), "B".to_string()];
        let mut recs = vec![record("x", 1, 1, Some("A")), record("x", 2, 1, Some("A")), record("x", 3, 1, Some("B")), record("y", 1, 1, Some("A"))];
        let mut with_lp = record("z", 1, 1, Some("A"));
        with_lp.label_logprobs = Some(BTreeMap::from([("A".to_string(), 0.73f64.ln()), ("B".to_string(), 0.27f64.ln())]));
        recs.push(with_lp);
        let m = item_margins(&recs, "label", &labels);
        assert!((m["x"] - 2f64.ln()).abs() < 1e-12);
        assert_eq!(m["y"], f64::INFINITY);
        assert!((m["z"] - (0.73f64 / 0.27).ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_in_floors(ks in prop::collection::vec(-1f64..1.0, 4), ms in prop::collection::vec(0f64..3.0, 4), lo in 0f64..1.0, hi in 0f64..1.0) {
            let recs: Vec<AnnotationRecord> = ["a", "b", "c", "d"].iter().map(|i| record(i, 1, 1, Some("A"))).collect();
            let t = table(&recs);
            let ids = ["a", "b", "c", "d"];
            let agreement: BTreeMap<String, f64> = ids.iter().zip(&ks).map(|(i, k)| (i.to_string(), *k)).collect();
            let margins: BTreeMap<String, f64> = ids.iter().zip(&ms).map(|(i, m)| (i.to_string(), *m * 0.5)).collect();
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let count = |p: TriagePolicy, trig| detect_escalations(&t, &agreement, &margins, &p).iter().filter(|e| e.trigger == trig).count();
            let at = |k: f64, m: f64| TriagePolicy { kappa_floor: k, margin_floor: m, escalate_schema_failures: true };
            prop_assert!(count(at(lo, 0.5), EscalationTrigger::LowAgreement) <= count(at(hi, 0.5), EscalationTrigger::LowAgreement));
            prop_assert!(count(at(0.4, lo), EscalationTrigger::NearTie) <= count(at(0.4, hi), EscalationTrigger::NearTie));
        }
    }
}
