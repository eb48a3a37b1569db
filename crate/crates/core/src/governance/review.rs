//! Blinded review kits and merging adjudicated human labels.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::triage::{Escalation, EscalationStatus};
use super::GovernanceError;
use crate::aggregation::{AggregateTable, HumanReview, Support, SlotDecision};
use crate::stats::{cohen_kappa, AgreementReport};
use crate::workspace::{Item, LabelMap, Rubric};

/// Placeholders a kit's instruction template may use. Anything else in
/// braces (`{final_label}`, `{posterior}`, …) is refused.
pub const KIT_PLACEHOLDERS: [&str; 3] = ["{item_id}", "{construct}", "{labels}"];

pub const DEFAULT_KIT_INSTRUCTIONS: &str =
    "Read the item and the rubric excerpt for {construct}, then choose one of: {labels}. Record your label independently before adjudication.";

/// What a reviewer sees. Deliberately has no field that could hold
/// pipeline output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewKit {
    pub item_id: String,
    pub text: String,
    pub construct: String,
    pub rubric_excerpt: String,
    pub label_options: Vec<String>,
    pub instructions: String,
}

const KIT_FIELDS: [&str; 6] = ["item_id", "text", "construct", "rubric_excerpt", "label_options", "instructions"];

fn render_instructions(template: &str, item_id: &str, construct: &str, labels: &LabelMap) -> Result<String, GovernanceError> {
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        let token = &rest[start..start + len + 1];
        if !KIT_PLACEHOLDERS.contains(&token) {
            return Err(GovernanceError::BlindingViolation { item_id: item_id.to_string(), detail: format!("template references {token}") });
        }
        rest = &rest[start + len + 1..];
    }
    let options = labels.labels().collect::<Vec<_>>().join(", ");
    Ok(template.replace("{item_id}", item_id).replace("{construct}", construct).replace("{labels}", &options))
}

/// Structural blinding scan over a serialized kit: only the kit fields may
/// appear, the label options must be the full label set in canonical order
/// (a single surviving label would leak a decision), and no pipeline output
/// for the item may appear in the instructions.
pub fn blinding_scan(kit_json: &Value, labels: &LabelMap, pipeline_outputs: &[String]) -> Result<(), GovernanceError> {
    let id = kit_json.get("item_id").and_then(Value::as_str).unwrap_or("?").to_string();
    let violation = |detail: String| GovernanceError::BlindingViolation { item_id: id.clone(), detail };
    let Value::Object(map) = kit_json else { return Err(violation("kit is not an object".into())) };
    if let Some(extra) = map.keys().find(|k| !KIT_FIELDS.contains(&k.as_str())) {
        return Err(violation(format!("unexpected field `{extra}`")));
    }
    let options: Vec<&str> = map.get("label_options").and_then(Value::as_array).map(|a| a.iter().filter_map(Value::as_str).collect()).unwrap_or_default();
    if options != labels.labels().collect::<Vec<_>>() {
        return Err(violation("label options differ from the full label set".into()));
    }
    let instructions = map.get("instructions").and_then(Value::as_str).unwrap_or_default();
    let words: BTreeSet<&str> = instructions.split(|c: char| !c.is_alphanumeric() && c != '_' && c != '-').filter(|w| !w.is_empty()).collect();
    let listed: BTreeSet<&str> = labels.labels().collect();
    for out in pipeline_outputs {
        // a label inside the full option list is fine; anything else pipeline-derived is not
        if !listed.contains(out.as_str()) && instructions.contains(out.as_str()) || (listed.contains(out.as_str()) && words.iter().filter(|w| **w == out).count() > 1) {
            return Err(violation(format!("instructions mention pipeline output `{out}`")));
        }
    }
    Ok(())
}

/// Pipeline outputs for an item that a kit must not reveal: final and
/// model-level labels and posterior/probability values.
pub fn pipeline_outputs(table: &AggregateTable, item_id: &str) -> Vec<String> {
    let Some(item) = table.item(item_id) else { return vec![] };
    let mut out: BTreeSet<String> = BTreeSet::new();
    for d in item.final_decision.values().chain(item.stage2.iter().flat_map(|s| s.slots.values())) {
        match &d.value {
            Value::String(s) => {
                out.insert(s.clone());
            }
            v @ Value::Number(_) => {
                out.insert(v.to_string());
            }
            _ => {}
        }
    }
    for p in item.posterior.values().flat_map(|m| m.values()) {
        out.insert(p.to_string());
    }
    out.into_iter().collect()
}

/// Write one kit per escalated item under `dir/<item_id>/kit.json` plus an
/// `index.json`; every kit passes the blinding scan before anything is written.
pub fn export_review_kits(
    escalations: &[Escalation],
    items: &[Item],
    rubric: &Rubric,
    labels: &LabelMap,
    table: &AggregateTable,
    instructions_template: &str,
    dir: &Path,
) -> Result<Vec<PathBuf>, GovernanceError> {
    let by_id: BTreeMap<&str, &Item> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let ids: BTreeSet<&str> = escalations.iter().filter(|e| e.status == EscalationStatus::Open).map(|e| e.item_id.as_str()).collect();
    let mut kits = Vec::new();
    for id in &ids {
        let item = by_id.get(id).ok_or_else(|| GovernanceError::UnknownItem(id.to_string()))?;
        let kit = ReviewKit {
            item_id: id.to_string(),
            text: item.text.clone(),
            construct: rubric.construct.clone(),
            rubric_excerpt: rubric.excerpt.clone(),
            label_options: labels.labels().map(str::to_string).collect(),
            instructions: render_instructions(instructions_template, id, &rubric.construct, labels)?,
        };
        let json = serde_json::to_value(&kit).expect("kit serializes");
        blinding_scan(&json, labels, &pipeline_outputs(table, id))?;
        kits.push((id.to_string(), json));
    }
    let io = |p: &Path, e: std::io::Error| GovernanceError::Io { path: p.display().to_string(), message: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut paths = Vec::new();
    for (id, json) in &kits {
        let kit_dir = dir.join(sanitize(id));
        std::fs::create_dir_all(&kit_dir).map_err(|e| io(&kit_dir, e))?;
        let path = kit_dir.join("kit.json");
        std::fs::write(&path, serde_json::to_string_pretty(json).expect("kit serializes")).map_err(|e| io(&path, e))?;
        paths.push(path);
    }
    let index: Vec<&String> = kits.iter().map(|(id, _)| id).collect();
    let index_path = dir.join("index.json");
    std::fs::write(&index_path, serde_json::to_string_pretty(&index).expect("index serializes")).map_err(|e| io(&index_path, e))?;
    Ok(paths)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

/// A completed dual review. `overturned` is filled in by the merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub item_id: String,
    pub reviewer_a_label: String,
    pub reviewer_b_label: String,
    pub adjudicated_label: Option<String>,
    #[serde(default)]
    pub overturned: bool,
}

impl ReviewOutcome {
    /// The adjudicated label, or the reviewers' shared label when they agree.
    pub fn resolved_label(&self) -> Option<&str> {
        self.adjudicated_label.as_deref().or((self.reviewer_a_label == self.reviewer_b_label).then_some(self.reviewer_a_label.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub reviewed: usize,
    pub overturned: usize,
    pub overturn_rate: f64,
    pub human_llm_agreement: AgreementReport,
    pub reviewer_agreement: AgreementReport,
}

/// Replace `ŷ_i` of `slot` with the adjudicated label for every reviewed
/// item and mark its escalations merged. All checks run before anything
/// is changed.
pub fn merge_human_decisions(
    reviews: &mut [ReviewOutcome],
    table: &mut AggregateTable,
    escalations: &mut [Escalation],
    slot: &str,
    labels: &LabelMap,
) -> Result<MergeReport, GovernanceError> {
    let mut seen = BTreeSet::new();
    for r in reviews.iter() {
        let mine: Vec<&Escalation> = escalations.iter().filter(|e| e.item_id == r.item_id).collect();
        if mine.is_empty() {
            return Err(GovernanceError::UnknownEscalation(r.item_id.clone()));
        }
        let already = table.item(&r.item_id).is_some_and(|i| i.human_review.is_some());
        if already || mine.iter().all(|e| e.status == EscalationStatus::Merged) || !seen.insert(r.item_id.clone()) {
            return Err(GovernanceError::DoubleMerge(r.item_id.clone()));
        }
        let label = r.resolved_label().ok_or_else(|| GovernanceError::Unadjudicated(r.item_id.clone()))?;
        for l in [label, &r.reviewer_a_label, &r.reviewer_b_label] {
            if labels.index_of(l).is_none() {
                return Err(GovernanceError::UnknownLabel(l.to_string()));
            }
        }
        if table.item(&r.item_id).is_none() {
            return Err(GovernanceError::UnknownItem(r.item_id.clone()));
        }
    }

    let (mut human, mut pipeline) = (Vec::new(), Vec::new());
    let (mut ra, mut rb) = (Vec::new(), Vec::new());
    let mut overturned = 0;
    for r in reviews.iter_mut() {
        let label = r.resolved_label().expect("checked above").to_string();
        let item = table.items.iter_mut().find(|i| i.item_id == r.item_id).expect("checked above");
        let before = item.final_label(slot).map(str::to_string);
        r.overturned = before.as_deref() != Some(label.as_str());
        overturned += usize::from(r.overturned);
        human.push(label.clone());
        pipeline.push(before.clone().unwrap_or_else(|| "<none>".into()));
        ra.push(r.reviewer_a_label.clone());
        rb.push(r.reviewer_b_label.clone());
        item.final_decision.insert(
            slot.to_string(),
            SlotDecision { value: Value::from(label.clone()), support: Support::Votes { counts: BTreeMap::from([(label.clone(), 1)]), tie: false }, n_valid: 1 },
        );
        item.human_review = Some(HumanReview { slot: slot.to_string(), pipeline_label: before, adjudicated_label: label, overturned: r.overturned, provenance: "human".into() });
        for e in escalations.iter_mut().filter(|e| e.item_id == r.item_id) {
            e.status = EscalationStatus::Merged;
        }
    }
    let reviewed = reviews.len();
    let agreement = |a: &[String], b: &[String]| {
        cohen_kappa(a, b).unwrap_or_else(|_| AgreementReport::undefined(crate::stats::AgreementMetric::CohenKappa, a.len(), "fewer than two reviewed items"))
    };
    Ok(MergeReport {
        reviewed,
        overturned,
        overturn_rate: if reviewed == 0 { 0.0 } else { overturned as f64 / reviewed as f64 },
        human_llm_agreement: agreement(&human, &pipeline),
        reviewer_agreement: agreement(&ra, &rb),
    })
}

pub fn load_reviews(path: &Path) -> Result<Vec<ReviewOutcome>, GovernanceError> {
    let err = |e: csv::Error| GovernanceError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(err)?;
    r.deserialize()
        .map(|row| {
            let mut o: ReviewOutcome = row.map_err(err)?;
            if o.adjudicated_label.as_deref() == Some("") {
                o.adjudicated_label = None;
            }
            Ok(o)
        })
        .collect()
}
