//! Staged aggregation of annotation records into item-level decisions.
//!
//! Stage 1 collapses the `S` samples of each (prompt, model) cell, stage 2
//! collapses prompts within a model, stage 3 collapses models into the
//! final `ŷ_i` — by vote/median, or by a latent-truth model (Dawid–Skene,
//! GLAD) fitted on the stage-2 label matrix.

pub mod dawid_skene;
pub mod glad;
pub mod staged;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dawid_skene::{dawid_skene_fit, majority_labels, DawidSkeneModel};
pub use glad::{correctness_probability, glad_fit, GladModel};
pub use staged::{majority_vote, median, numeric_decision, trimmed_mean, zscore_by_prompt, NumericRule, SlotDecision, Support};

use crate::orchestrator::{AnnotationRecord, Pass};
use crate::stats::{cohen_kappa, fleiss_kappa};
use crate::workspace::{AnnotationSchema, SlotKind};

/// Default κ below which noise-aware aggregation is recommended.
pub const DEFAULT_UPGRADE_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error)]
pub enum AggregationError {
    #[error("no valid records")]
    NoValidRecords,
    #[error("label `{0}` is not in the label set")]
    UnknownLabel(String),
    #[error("non-finite numeric value")]
    NonFinite,
    #[error("trim fraction {0} outside [0, 0.5)")]
    InvalidTrim(f64),
    #[error("{mode} aggregation cannot handle {kind} slot `{slot}`")]
    ModeUnsupportedForSlotKind { mode: String, slot: String, kind: String },
    #[error("GLAD needs binary labels, found {found} classes")]
    BinaryOnly { found: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    #[default]
    MajorityOrMedian,
    DawidSkene,
    Glad,
}

impl AggregationMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::MajorityOrMedian => "majority_or_median",
            Self::DawidSkene => "dawid_skene",
            Self::Glad => "glad",
        }
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" | "majority" | "majority_or_median" => Ok(Self::MajorityOrMedian),
            "ds" | "dawid_skene" => Ok(Self::DawidSkene),
            "glad" => Ok(Self::Glad),
            other => Err(format!("unknown aggregation mode `{other}` (baseline, ds, glad)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    pub mode: AggregationMode,
    pub numeric_rule: NumericRule,
    /// Standardize numeric stage-1 values within each (prompt, model)
    /// before combining prompts.
    pub zscore_numeric: bool,
    pub upgrade_threshold: f64,
    /// Include final-pass records (excluded by default).
    pub include_final_pass: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            mode: AggregationMode::MajorityOrMedian,
            numeric_rule: NumericRule::Median,
            zscore_numeric: false,
            upgrade_threshold: DEFAULT_UPGRADE_THRESHOLD,
            include_final_pass: false,
            max_iter: dawid_skene::DEFAULT_MAX_ITER,
            tol: dawid_skene::DEFAULT_TOL,
        }
    }
}

/// Decisions for one (prompt, model) cell or one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDecision {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<usize>,
    pub m: usize,
    pub slots: BTreeMap<String, SlotDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemAggregate {
    pub item_id: String,
    pub n_records: usize,
    pub n_valid: usize,
    pub stage1: Vec<StageDecision>,
    pub stage2: Vec<StageDecision>,
    /// `ŷ_i` per slot; empty when the item has no valid record.
    pub final_decision: BTreeMap<String, SlotDecision>,
    /// Latent-truth posteriors per categorical slot (DS/GLAD modes).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub posterior: BTreeMap<String, BTreeMap<String, f64>>,
    /// Set once an adjudicated human label has replaced the pipeline's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_review: Option<HumanReview>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanReview {
    pub slot: String,
    pub pipeline_label: Option<String>,
    pub adjudicated_label: String,
    pub overturned: bool,
    pub provenance: String,
}

impl ItemAggregate {
    pub fn final_label(&self, slot: &str) -> Option<&str> {
        self.final_decision.get(slot).and_then(|d| d.label())
    }

    /// Stage-2 label of model `m` for `slot`.
    pub fn model_label(&self, m: usize, slot: &str) -> Option<&str> {
        self.stage2.iter().find(|d| d.m == m).and_then(|d| d.slots.get(slot)).and_then(|d| d.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage1: String,
    pub stage2: String,
    pub stage3: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub run_id: String,
    pub options: AggregateOptions,
    pub provenance: Provenance,
    pub models: usize,
    /// Cross-model agreement on the first categorical slot (Cohen's κ for
    /// two models, Fleiss' κ beyond).
    pub cross_model_kappa: Option<f64>,
    pub upgrade_recommended: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dawid_skene: BTreeMap<String, DawidSkeneModel>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub glad: BTreeMap<String, GladModel>,
    #[serde(skip)]
    pub items: Vec<ItemAggregate>,
}

impl AggregateTable {
    pub fn item(&self, item_id: &str) -> Option<&ItemAggregate> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// Final labels of a categorical slot in item order (`None` where undefined).
    pub fn final_labels(&self, slot: &str) -> Vec<Option<String>> {
        self.items.iter().map(|i| i.final_label(slot).map(str::to_string)).collect()
    }

    /// Write `table.json` (metadata, fitted models) and `items.jsonl`.
    pub fn save(&self, dir: &Path) -> Result<(), AggregationError> {
        let io = |e: std::io::Error| AggregationError::Io { path: dir.display().to_string(), message: e.to_string() };
        std::fs::create_dir_all(dir).map_err(io)?;
        let meta = serde_json::to_string_pretty(self).expect("table serializes");
        std::fs::write(dir.join("table.json"), meta).map_err(io)?;
        let mut lines = String::new();
        for item in &self.items {
            lines.push_str(&serde_json::to_string(item).expect("item serializes"));
            lines.push('\n');
        }
        std::fs::write(dir.join("items.jsonl"), lines).map_err(io)
    }

    pub fn load(dir: &Path) -> Result<Self, AggregationError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| AggregationError::Io { path: p.display().to_string(), message: e.to_string() })
        };
        let parse_err = |e: serde_json::Error| AggregationError::Io { path: dir.display().to_string(), message: e.to_string() };
        let mut table: AggregateTable = serde_json::from_str(&read("table.json")?).map_err(parse_err)?;
        table.items = read("items.jsonl")?.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>().map_err(parse_err)?;
        Ok(table)
    }
}

/// Slots that aggregate: categorical with their label order, or numeric.
enum SlotRule {
    Categorical(Vec<String>),
    Numeric,
}

fn slot_rules(schema: &AnnotationSchema) -> Vec<(String, SlotRule)> {
    schema
        .slots
        .iter()
        .filter_map(|s| match &s.kind {
            SlotKind::Categorical { labels } => Some((s.name.clone(), SlotRule::Categorical(labels.clone()))),
            SlotKind::Ordinal { .. } | SlotKind::Numeric { .. } => Some((s.name.clone(), SlotRule::Numeric)),
            // free text is not authoritative and is not aggregated
            SlotKind::Text { .. } => None,
        })
        .collect()
}

fn decide(values: &[serde_json::Value], rule: &SlotRule, numeric: NumericRule) -> Result<Option<SlotDecision>, AggregationError> {
    match rule {
        SlotRule::Categorical(order) => {
            let votes: Vec<&str> = values.iter().filter_map(|v| v.as_str()).collect();
            if votes.is_empty() {
                return Ok(None);
            }
            majority_vote(&votes, order).map(Some)
        }
        SlotRule::Numeric => {
            let xs: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
            if xs.is_empty() {
                return Ok(None);
            }
            numeric_decision(&xs, numeric).map(Some)
        }
    }
}

fn rule_name(options: &AggregateOptions) -> String {
    match options.numeric_rule {
        NumericRule::Median => "majority (categorical) / median (numeric)".into(),
        NumericRule::TrimmedMean { fraction } => format!("majority (categorical) / trimmed mean {fraction} (numeric)"),
    }
}

/// Build the staged table. `item_order` fixes row order and lists items
/// that may lack records entirely.
pub fn build_aggregate_table(
    run_id: &str,
    records: &[AnnotationRecord],
    schema: &AnnotationSchema,
    item_order: &[String],
    options: &AggregateOptions,
) -> Result<AggregateTable, AggregationError> {
    let rules = slot_rules(schema);
    if options.mode != AggregationMode::MajorityOrMedian {
        if let Some((name, _)) = rules.iter().find(|(_, r)| matches!(r, SlotRule::Numeric)) {
            return Err(AggregationError::ModeUnsupportedForSlotKind { mode: options.mode.name().into(), slot: name.clone(), kind: "numeric".into() });
        }
    }
    let used: Vec<&AnnotationRecord> = records.iter().filter(|r| options.include_final_pass || r.pass == Pass::Estimation).collect();
    let models = used.iter().map(|r| r.m).max().unwrap_or(0);

    // item → (u, m) → records
    let mut cells: BTreeMap<&str, BTreeMap<(usize, usize), Vec<&AnnotationRecord>>> = BTreeMap::new();
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &used {
        let c = counts.entry(&r.item_id).or_default();
        c.0 += 1;
        if r.is_valid() {
            c.1 += 1;
            cells.entry(&r.item_id).or_default().entry((r.u, r.m)).or_default().push(r);
        }
    }

    let mut items: Vec<ItemAggregate> = Vec::with_capacity(item_order.len());
    let mut order: Vec<&str> = item_order.iter().map(String::as_str).collect();
    let known: BTreeSet<&str> = order.iter().copied().collect();
    order.extend(counts.keys().copied().filter(|id| !known.contains(id)));

    for id in &order {
        let mut stage1 = Vec::new();
        if let Some(by_cell) = cells.get(id) {
            for (&(u, m), recs) in by_cell {
                let mut slots = BTreeMap::new();
                for (name, rule) in &rules {
                    let values: Vec<serde_json::Value> = recs.iter().filter_map(|r| r.slot(name).cloned()).collect();
                    if let Some(d) = decide(&values, rule, options.numeric_rule)? {
                        slots.insert(name.clone(), d);
                    }
                }
                stage1.push(StageDecision { u: Some(u), m, slots });
            }
        }
        let (n_records, n_valid) = counts.get(id).copied().unwrap_or((0, 0));
        items.push(ItemAggregate {
            item_id: id.to_string(),
            n_records,
            n_valid,
            stage1,
            stage2: vec![],
            final_decision: BTreeMap::new(),
            posterior: BTreeMap::new(),
            human_review: None,
        });
    }

    // numeric stage-1 values standardized within each (prompt, model) across items
    let mut zscored: BTreeMap<(String, usize, usize, usize), f64> = BTreeMap::new();
    if options.zscore_numeric {
        for (name, rule) in &rules {
            if !matches!(rule, SlotRule::Numeric) {
                continue;
            }
            let mut groups: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
            for (row, item) in items.iter().enumerate() {
                for d in &item.stage1 {
                    if let Some(x) = d.slots.get(name).and_then(|s| s.number()) {
                        groups.entry((d.u.unwrap_or(0), d.m)).or_default().push((row, x));
                    }
                }
            }
            for ((u, m), members) in groups {
                let z = zscore_by_prompt(&[members.iter().map(|(_, x)| *x).collect()]).remove(0);
                for ((row, _), zv) in members.iter().zip(z) {
                    zscored.insert((name.clone(), *row, u, m), zv);
                }
            }
        }
    }

    for (row, item) in items.iter_mut().enumerate() {
        let mut by_model: BTreeMap<usize, Vec<&StageDecision>> = BTreeMap::new();
        for d in &item.stage1 {
            by_model.entry(d.m).or_default().push(d);
        }
        for (m, ds) in by_model {
            let mut slots = BTreeMap::new();
            for (name, rule) in &rules {
                let values: Vec<serde_json::Value> = ds
                    .iter()
                    .filter_map(|d| {
                        let v = d.slots.get(name)?;
                        if options.zscore_numeric && matches!(rule, SlotRule::Numeric) {
                            zscored.get(&(name.clone(), row, d.u.unwrap_or(0), d.m)).map(|z| serde_json::Value::from(*z))
                        } else {
                            Some(v.value.clone())
                        }
                    })
                    .collect();
                if let Some(d) = decide(&values, rule, options.numeric_rule)? {
                    slots.insert(name.clone(), d);
                }
            }
            item.stage2.push(StageDecision { u: None, m, slots });
        }
        // baseline stage 3; latent-truth modes overwrite categorical slots below
        for (name, rule) in &rules {
            let values: Vec<serde_json::Value> = item.stage2.iter().filter_map(|d| d.slots.get(name).map(|s| s.value.clone())).collect();
            if let Some(d) = decide(&values, rule, options.numeric_rule)? {
                item.final_decision.insert(name.clone(), d);
            }
        }
    }

    let mut table = AggregateTable {
        run_id: run_id.to_string(),
        options: options.clone(),
        provenance: Provenance {
            stage1: rule_name(options),
            stage2: if options.zscore_numeric { format!("{} after z-scoring numeric values by prompt", rule_name(options)) } else { rule_name(options) },
            stage3: match options.mode {
                AggregationMode::MajorityOrMedian => rule_name(options),
                AggregationMode::DawidSkene => "Dawid–Skene MAP over model-level labels".into(),
                AggregationMode::Glad => "GLAD MAP over model-level labels".into(),
            },
        },
        models,
        cross_model_kappa: None,
        upgrade_recommended: false,
        dawid_skene: BTreeMap::new(),
        glad: BTreeMap::new(),
        items,
    };

    if let Some((name, _)) = rules.iter().find(|(_, r)| matches!(r, SlotRule::Categorical(_))) {
        table.cross_model_kappa = cross_model_kappa(&table.items, name, models);
        table.upgrade_recommended =
            options.mode == AggregationMode::MajorityOrMedian && models >= 2 && table.cross_model_kappa.is_some_and(|k| k < options.upgrade_threshold);
    }

    if options.mode != AggregationMode::MajorityOrMedian {
        for (name, rule) in &rules {
            if let SlotRule::Categorical(order) = rule {
                fit_latent(&mut table, name, order, models, options)?;
            }
        }
    }
    Ok(table)
}

fn cross_model_kappa(items: &[ItemAggregate], slot: &str, models: usize) -> Option<f64> {
    if models < 2 {
        return None;
    }
    let complete: Vec<Vec<String>> = items
        .iter()
        .filter_map(|i| (1..=models).map(|m| i.model_label(m, slot).map(str::to_string)).collect::<Option<Vec<_>>>())
        .collect();
    if complete.len() < 2 {
        return None;
    }
    let report = if models == 2 {
        let a: Vec<&String> = complete.iter().map(|r| &r[0]).collect();
        let b: Vec<&String> = complete.iter().map(|r| &r[1]).collect();
        cohen_kappa(&a, &b).ok()?
    } else {
        fleiss_kappa(&complete).ok()?
    };
    report.value
}

fn fit_latent(table: &mut AggregateTable, slot: &str, order: &[String], models: usize, options: &AggregateOptions) -> Result<(), AggregationError> {
    let index = |l: &str| order.iter().position(|x| x == l);
    let mut rows = Vec::new();
    let mut row_items = Vec::new();
    for (i, item) in table.items.iter().enumerate() {
        let row: Vec<Option<usize>> = (1..=models).map(|m| item.model_label(m, slot).and_then(index)).collect();
        if row.iter().any(Option::is_some) {
            rows.push(row);
            row_items.push(i);
        }
    }
    if rows.is_empty() {
        return Err(AggregationError::NoValidRecords);
    }
    let posteriors: Vec<Vec<f64>> = match table.options.mode {
        AggregationMode::DawidSkene => {
            let model = dawid_skene_fit(&rows, order.len(), options.max_iter, options.tol)?;
            let q = model.posteriors.clone();
            table.dawid_skene.insert(slot.to_string(), model);
            q
        }
        AggregationMode::Glad => {
            if order.len() != 2 {
                return Err(AggregationError::BinaryOnly { found: order.len() });
            }
            let model = glad_fit(&rows, options.max_iter, options.tol)?;
            let q = model.posteriors.iter().map(|p| vec![1.0 - p, *p]).collect();
            table.glad.insert(slot.to_string(), model);
            q
        }
        AggregationMode::MajorityOrMedian => unreachable!("baseline has no latent model"),
    };
    for (q, &i) in posteriors.iter().zip(&row_items) {
        let item = &mut table.items[i];
        let best = dawid_skene::argmax(q);
        let decision = item.final_decision.get_mut(slot).expect("stage-3 baseline exists where stage-2 labels exist");
        decision.value = serde_json::Value::from(order[best].as_str());
        item.posterior.insert(slot.to_string(), order.iter().cloned().zip(q.iter().copied()).collect());
    }
    Ok(())
}
