//! Agreement, calibration and diagnostics for one run, and the methods table.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use annokit::aggregation::{AggregateTable, AggregationMode};
use annokit::calibration::{
    fit_temperature, held_out_split, scaled_probabilities, CalibrationReport, FittedCalibrator, DEFAULT_BINS, DEFAULT_HOLDOUT_FRACTION,
};
use annokit::governance::{item_margins, load_escalations, DriftThresholds, MergeReport};
use annokit::orchestrator::{AnnotationRecord, Pass, RunSummary};
use annokit::stats::{
    bootstrap_ci, cohen_kappa, fleiss_kappa, icc, krippendorff_alpha, AgreementMetric, AgreementReport, AlphaMetric, BootstrapConfig, IccForm,
};
use annokit::workspace::{load_audit_set, SlotKind};
use serde::{Deserialize, Serialize};

use crate::context::Context;
use crate::error::{CmdError, CmdResult};
use crate::methods::{MethodsRow, MethodsTable, ELEMENTS};
use crate::{GlobalArgs, ReportArgs};

/// Probabilities below this are floored before taking logs, so an item
/// whose gold label got no mass still has a finite likelihood.
const PROBABILITY_FLOOR: f64 = 1e-6;
const TEMPERATURE_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedAgreement {
    pub name: String,
    pub slot: String,
    pub report: AgreementReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinConfiguration {
    pub prompt: usize,
    pub model: usize,
    pub slot: String,
    /// Krippendorff's α (nominal) across the S replicates of each item.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCalibration {
    pub model: usize,
    pub fit_records: usize,
    pub held_out_records: usize,
    pub temperature: f64,
    pub report: CalibrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CalibrationSection {
    Available { slot: String, method: String, holdout_fraction: f64, models: Vec<ModelCalibration> },
    NotAvailable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub records: usize,
    pub invalid_output_rate: f64,
    pub retries_total: u64,
    pub permanent_errors: usize,
    /// Items whose top-two log-odds gap falls below the triage margin floor.
    pub near_tie_items: usize,
    pub near_tie_rate: f64,
    /// Share of stage-1 (prompt × model) majority decisions that were ties.
    pub stage1_tie_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escalated_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overturn_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub n_items: usize,
    pub aggregation_mode: String,
    pub upgrade_recommended: bool,
    pub bootstrap: BootstrapSettings,
    pub agreement: Vec<NamedAgreement>,
    pub within_configuration: Vec<WithinConfiguration>,
    pub gold_accuracy: BTreeMap<String, f64>,
    pub calibration: CalibrationSection,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub unit: String,
}

impl RunReport {
    pub fn agreement(&self, name: &str) -> Option<&AgreementReport> {
        self.agreement.iter().find(|a| a.name == name).map(|a| &a.report)
    }
}

fn with_ci<T: Clone + Sync>(mut report: AgreementReport, data: &[T], stat: impl Fn(&[T]) -> Option<f64> + Sync, cfg: &BootstrapConfig) -> AgreementReport {
    if report.value.is_none() || data.len() < 2 {
        return report;
    }
    match bootstrap_ci(data, stat, cfg) {
        Ok(ci) => {
            report.attach_ci(ci.lo, ci.hi, ci.level, ci.resamples);
            if ci.undefined > 0 {
                report.flags.push(format!("{} resamples undefined", ci.undefined));
            }
        }
        Err(e) => report.flags.push(format!("no interval: {e}")),
    }
    report
}

fn kappa_of(pairs: &[(usize, usize)]) -> Option<f64> {
    let (a, b): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    cohen_kappa(&a, &b).ok().and_then(|r| r.value)
}

fn cohen_with_ci(pairs: Vec<(usize, usize)>, cfg: &BootstrapConfig) -> AgreementReport {
    let (a, b): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let base = cohen_kappa(&a, &b).unwrap_or_else(|e| AgreementReport::undefined(AgreementMetric::CohenKappa, pairs.len(), e.to_string()));
    with_ci(base, &pairs, kappa_of, cfg)
}

fn models_of(table: &AggregateTable) -> Vec<usize> {
    let set: BTreeSet<usize> = table.items.iter().flat_map(|i| i.stage2.iter().map(|d| d.m)).collect();
    set.into_iter().collect()
}

fn categorical_agreement(
    table: &AggregateTable,
    slot: &str,
    labels: &[String],
    gold: &BTreeMap<String, String>,
    cfg: &BootstrapConfig,
    out: &mut Vec<NamedAgreement>,
    accuracy: &mut BTreeMap<String, f64>,
) {
    let idx = |l: &str| labels.iter().position(|x| x == l);
    let models = models_of(table);
    let push = |out: &mut Vec<NamedAgreement>, name: String, report| out.push(NamedAgreement { name, slot: slot.to_string(), report });

    if models.len() == 2 {
        let pairs: Vec<(usize, usize)> = table
            .items
            .iter()
            .filter_map(|i| Some((idx(i.model_label(models[0], slot)?)?, idx(i.model_label(models[1], slot)?)?)))
            .collect();
        push(out, "cross_model_cohen_kappa".into(), cohen_with_ci(pairs, cfg));
    } else if models.len() > 2 {
        let rows: Vec<Vec<usize>> = table
            .items
            .iter()
            .filter_map(|i| models.iter().map(|&m| idx(i.model_label(m, slot)?)).collect::<Option<Vec<_>>>())
            .collect();
        let base = fleiss_kappa(&rows).unwrap_or_else(|e| AgreementReport::undefined(AgreementMetric::FleissKappa, rows.len(), e.to_string()));
        let stat = |s: &[Vec<usize>]| fleiss_kappa(s).ok().and_then(|r| r.value);
        push(out, "cross_model_fleiss_kappa".into(), with_ci(base, &rows, stat, cfg));
    }

    // every (prompt, model) stage-1 decision as a rater
    let raters: BTreeSet<(usize, usize)> = table.items.iter().flat_map(|i| i.stage1.iter().map(|d| (d.u.unwrap_or(0), d.m))).collect();
    let units: Vec<Vec<Option<f64>>> = table
        .items
        .iter()
        .map(|i| {
            raters
                .iter()
                .map(|&(u, m)| {
                    i.stage1
                        .iter()
                        .find(|d| d.u.unwrap_or(0) == u && d.m == m)
                        .and_then(|d| d.slots.get(slot))
                        .and_then(|d| d.label())
                        .and_then(idx)
                        .map(|k| k as f64)
                })
                .collect()
        })
        .collect();
    let base = krippendorff_alpha(&units, AlphaMetric::Nominal)
        .unwrap_or_else(|e| AgreementReport::undefined(AgreementMetric::KrippendorffAlpha, units.len(), e.to_string()));
    let stat = |s: &[Vec<Option<f64>>]| krippendorff_alpha(s, AlphaMetric::Nominal).ok().and_then(|r| r.value);
    push(out, "prompt_model_krippendorff_alpha".into(), with_ci(base, &units, stat, cfg));

    if gold.is_empty() {
        return;
    }
    let versus_gold = |label_of: &dyn Fn(&annokit::aggregation::ItemAggregate) -> Option<String>| -> Vec<(usize, usize)> {
        table
            .items
            .iter()
            .filter_map(|i| Some((idx(&label_of(i)?)?, idx(gold.get(&i.item_id)?)?)))
            .collect()
    };
    let final_pairs = versus_gold(&|i| i.final_label(slot).map(str::to_string));
    accuracy.insert("final".into(), share_equal(&final_pairs));
    push(out, "final_vs_gold_cohen_kappa".into(), cohen_with_ci(final_pairs, cfg));
    for &m in &models {
        let pairs = versus_gold(&|i| i.model_label(m, slot).map(str::to_string));
        accuracy.insert(format!("model_{m}"), share_equal(&pairs));
        push(out, format!("model_{m}_vs_gold_cohen_kappa"), cohen_with_ci(pairs, cfg));
    }
}

fn share_equal(pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return f64::NAN;
    }
    pairs.iter().filter(|(a, b)| a == b).count() as f64 / pairs.len() as f64
}

fn numeric_agreement(table: &AggregateTable, slot: &str, cfg: &BootstrapConfig, out: &mut Vec<NamedAgreement>) {
    let models = models_of(table);
    if models.len() < 2 {
        return;
    }
    let rows: Vec<Vec<f64>> = table
        .items
        .iter()
        .filter_map(|i| {
            models
                .iter()
                .map(|&m| i.stage2.iter().find(|d| d.m == m)?.slots.get(slot)?.number())
                .collect::<Option<Vec<f64>>>()
        })
        .collect();
    let base = icc(&rows, IccForm::Icc21).unwrap_or_else(|e| AgreementReport::undefined(AgreementMetric::Icc21, rows.len(), e.to_string()));
    let stat = |s: &[Vec<f64>]| icc(s, IccForm::Icc21).ok().and_then(|r| r.value);
    out.push(NamedAgreement { name: "cross_model_icc_2_1".into(), slot: slot.to_string(), report: with_ci(base, &rows, stat, cfg) });
}

fn within_configuration(records: &[AnnotationRecord], slot: &str, labels: &[String]) -> Vec<WithinConfiguration> {
    let mut cells: BTreeMap<(usize, usize), BTreeMap<&str, Vec<Option<f64>>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.pass == Pass::Estimation) {
        let v = r.slot(slot).and_then(|v| v.as_str()).and_then(|l| labels.iter().position(|x| x == l)).map(|k| k as f64);
        cells.entry((r.u, r.m)).or_default().entry(&r.item_id).or_default().push(v);
    }
    cells
        .into_iter()
        .map(|((u, m), by_item)| {
            let units: Vec<Vec<Option<f64>>> = by_item.into_values().collect();
            WithinConfiguration { prompt: u, model: m, slot: slot.to_string(), alpha: krippendorff_alpha(&units, AlphaMetric::Nominal).ok().and_then(|r| r.value) }
        })
        .collect()
}

/// Temperature scaling per model on record-level label probabilities: the
/// logits are the logged log-probabilities, `T` is fitted against gold on
/// the records of the fit items, and the reliability of the emitted label's
/// probability is reported before/after on the records of held-out items.
fn calibration(
    records: &[AnnotationRecord],
    slot: &str,
    labels: &[String],
    gold: &BTreeMap<String, String>,
    seed: u64,
) -> CalibrationSection {
    if gold.is_empty() {
        return CalibrationSection::NotAvailable { reason: "no gold labels to calibrate against".into() };
    }
    if !records.iter().any(|r| r.is_valid() && r.label_logprobs.is_some()) {
        return CalibrationSection::NotAvailable { reason: "no label probabilities were logged for this run".into() };
    }
    let ids: Vec<String> = gold.keys().cloned().collect();
    let (fit_ids, held_ids) = held_out_split(&ids, seed, DEFAULT_HOLDOUT_FRACTION);
    let (fit_ids, held_ids): (BTreeSet<String>, BTreeSet<String>) = (fit_ids.into_iter().collect(), held_ids.into_iter().collect());
    // (logits, gold index, emitted index) per usable record, by model
    let mut per_model: BTreeMap<usize, (Vec<(Vec<f64>, usize)>, Vec<(Vec<f64>, usize, usize)>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_valid() && r.pass == Pass::Estimation) {
        let (Some(lp), Some(g)) = (&r.label_logprobs, gold.get(&r.item_id)) else { continue };
        let (Some(y), Some(e)) = (
            labels.iter().position(|l| l == g),
            r.slot(slot).and_then(|v| v.as_str()).and_then(|l| labels.iter().position(|x| x == l)),
        ) else {
            continue;
        };
        let p: Vec<f64> = labels.iter().map(|l| lp.get(l).map_or(0.0, |v| v.exp()).max(PROBABILITY_FLOOR)).collect();
        let z: f64 = p.iter().sum();
        let logits: Vec<f64> = p.iter().map(|x| (x / z).ln()).collect();
        let slot_sets = per_model.entry(r.m).or_default();
        if fit_ids.contains(&r.item_id) {
            slot_sets.0.push((logits, y));
        } else if held_ids.contains(&r.item_id) {
            slot_sets.1.push((logits, y, e));
        }
    }
    let mut models = Vec::new();
    for (m, (fit, held)) in per_model {
        let (fit_x, fit_y): (Vec<Vec<f64>>, Vec<usize>) = fit.into_iter().unzip();
        let Ok(t) = fit_temperature(&fit_x, &fit_y, TEMPERATURE_MAX_ITER) else { continue };
        let pre: Vec<f64> = held.iter().map(|(z, _, e)| scaled_probabilities(z, 1.0)[*e]).collect();
        let post: Vec<f64> = held.iter().map(|(z, _, e)| scaled_probabilities(z, t.temperature)[*e]).collect();
        let correct: Vec<bool> = held.iter().map(|(_, y, e)| y == e).collect();
        if let Ok(report) = CalibrationReport::with_fit(&pre, &post, &correct, DEFAULT_BINS, FittedCalibrator::Temperature { temperature: t.temperature }) {
            models.push(ModelCalibration { model: m, fit_records: fit_x.len(), held_out_records: held.len(), temperature: t.temperature, report });
        }
    }
    if models.is_empty() {
        return CalibrationSection::NotAvailable { reason: "too few records with gold labels and probabilities to fit a calibrator".into() };
    }
    CalibrationSection::Available { slot: slot.to_string(), method: "temperature scaling".into(), holdout_fraction: DEFAULT_HOLDOUT_FRACTION, models }
}

pub fn build_report(ctx: &Context, table: &AggregateTable, records: &[AnnotationRecord], summary: &RunSummary, resamples: usize) -> CmdResult<RunReport> {
    let m = &ctx.ws.manifest;
    let cfg = BootstrapConfig { resamples, seed: m.seeds.shuffling, ..BootstrapConfig::default() };
    let gold = ctx.gold(&ctx.items()?)?;
    let mut agreement = Vec::new();
    let mut within = Vec::new();
    let mut accuracy = BTreeMap::new();
    let mut calibration_section = None;
    let mut near_tie = (0usize, 0usize);
    for slot in &ctx.ws.schema.slots {
        match &slot.kind {
            SlotKind::Categorical { labels } => {
                categorical_agreement(table, &slot.name, labels, &gold, &cfg, &mut agreement, &mut accuracy);
                within.extend(within_configuration(records, &slot.name, labels));
                if calibration_section.is_none() {
                    calibration_section = Some(calibration(records, &slot.name, labels, &gold, m.seeds.shuffling));
                    let margins = item_margins(records, &slot.name, labels);
                    near_tie = (margins.values().filter(|&&g| g < m.triage.margin_floor).count(), margins.len());
                }
            }
            SlotKind::Numeric { .. } | SlotKind::Ordinal { .. } => numeric_agreement(table, &slot.name, &cfg, &mut agreement),
            SlotKind::Text { .. } => {}
        }
    }
    let stage1: Vec<bool> = table.items.iter().flat_map(|i| i.stage1.iter().flat_map(|d| d.slots.values().map(|s| s.is_tie()))).collect();
    let agg = ctx.agg_dir();
    let escalated_rate = load_escalations(&agg.join("escalations.csv")).ok().map(|es| {
        let items: BTreeSet<&str> = es.iter().map(|e| e.item_id.as_str()).collect();
        items.len() as f64 / table.items.len().max(1) as f64
    });
    let overturn_rate = std::fs::read_to_string(agg.join("merge_report.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<MergeReport>(&s).ok())
        .map(|r| r.overturn_rate);
    Ok(RunReport {
        run_id: m.run_id.clone(),
        n_items: table.items.len(),
        aggregation_mode: table.options.mode.name().to_string(),
        upgrade_recommended: table.upgrade_recommended,
        bootstrap: BootstrapSettings { resamples: cfg.resamples, level: cfg.level, seed: cfg.seed, unit: "item".into() },
        agreement,
        within_configuration: within,
        gold_accuracy: accuracy,
        calibration: calibration_section.unwrap_or(CalibrationSection::NotAvailable { reason: "no categorical slot".into() }),
        diagnostics: Diagnostics {
            records: summary.cells,
            invalid_output_rate: summary.invalid_output_rate,
            retries_total: summary.retries_total,
            permanent_errors: summary.permanent_errors,
            near_tie_items: near_tie.0,
            near_tie_rate: if near_tie.1 == 0 { 0.0 } else { near_tie.0 as f64 / near_tie.1 as f64 },
            stage1_tie_rate: if stage1.is_empty() { 0.0 } else { stage1.iter().filter(|&&t| t).count() as f64 / stage1.len() as f64 },
            escalated_rate,
            overturn_rate,
        },
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn fmt_agreement(name: &str, r: &AgreementReport) -> String {
    let v = r.value.map_or("undefined".to_string(), |v| format!("{v:.3}"));
    match &r.ci {
        Some(ci) => format!("{name} = {v} [{:.3}, {:.3}]", ci.lo, ci.hi),
        None => format!("{name} = {v}"),
    }
}

/// Fill every template row from the manifest, the run and its report.
pub fn build_methods_table(ctx: &Context, table: &AggregateTable, report: &RunReport, sealed_at: &str, digest: &str) -> MethodsTable {
    let m = &ctx.ws.manifest;
    let ws = &ctx.ws;
    let slots: Vec<String> = ws
        .schema
        .slots
        .iter()
        .map(|s| {
            let kind = match &s.kind {
                SlotKind::Categorical { labels } => format!("categorical over {{{}}}", labels.join(", ")),
                SlotKind::Ordinal { levels } => format!("ordinal {levels:?}"),
                SlotKind::Numeric { min, max } => format!("numeric in [{min}, {max}]"),
                SlotKind::Text { max_len } => format!("text ≤ {max_len} chars, non-authoritative"),
            };
            format!("{} ({kind})", s.name)
        })
        .collect();
    let tokens: Vec<String> = (0..ws.label_map.k()).map(|j| format!("{}→{}", ws.label_map.canonical_token(j), ws.label_map.label(j))).collect();
    let prompt_ids: Vec<&str> = ws.prompts.templates.iter().map(|t| t.prompt_id.as_str()).collect();
    let pins: Vec<String> = m
        .providers
        .iter()
        .take(m.m)
        .map(|p| format!("{} {} version {} ({}, {}{})", p.name, p.model, p.version, p.precision, p.device, if p.notes.is_empty() { String::new() } else { format!("; {}", p.notes) }))
        .collect();
    let stage3 = match table.options.mode {
        AggregationMode::MajorityOrMedian => "majority across models (median for numeric slots)".to_string(),
        AggregationMode::DawidSkene => "Dawid–Skene EM with models as raters".to_string(),
        AggregationMode::Glad => "GLAD (rater ability, item difficulty) with models as raters".to_string(),
    };
    let agreement: Vec<String> = report.agreement.iter().map(|a| fmt_agreement(&a.name, &a.report)).collect();
    let calibration = match &report.calibration {
        CalibrationSection::Available { method, holdout_fraction, models, .. } => {
            let per: Vec<String> = models
                .iter()
                .map(|c| {
                    let pp = c.report.pre_post.as_ref().expect("fitted reports carry pre/post");
                    format!("model {}: T = {:.2}, Brier {:.3} → {:.3}, ECE {:.3} → {:.3}", c.model, c.temperature, pp.pre.brier, pp.post.brier, pp.pre.ece, pp.post.ece)
                })
                .collect();
            format!("Held-out split of {} of gold items (seeded); {method} fitted per model on record-level label probabilities, reliability of the emitted label; {}", pct(*holdout_fraction), per.join("; "))
        }
        CalibrationSection::NotAvailable { reason } => format!("Not available: {reason}"),
    };
    let d = &report.diagnostics;
    let triage = format!(
        "Triggers: per-item κ < {}, top-two log-odds margin < {} nats, schema failures{}; policy {}; blinded dual review with adjudication (roster {}); {}; {}",
        m.triage.kappa_floor,
        m.triage.margin_floor,
        if m.triage.escalate_schema_failures { " (escalated)" } else { " (logged only)" },
        m.triage.policy_id,
        m.triage.reviewers_roster,
        d.escalated_rate.map_or("triage not yet run".to_string(), |r| format!("{} of items escalated", pct(r))),
        d.overturn_rate.map_or("no reviews merged".to_string(), |r| format!("{} overturned", pct(r))),
    );
    let thresholds = DriftThresholds::default();
    let drift = match load_audit_set(&ws.audit_path()) {
        Ok((audit, items)) => format!(
            "Audit set {} ({} items, SHA-256 {}); {}; re-run on every provider, model, version or precision change; |Δκ| < {} PASS, < {} WARNING, otherwise FAIL with rollback to the pinned baseline and rescoring",
            audit.audit_version_id,
            items.len(),
            &audit.content_hash[..16],
            audit.composition_notes,
            thresholds.pass,
            thresholds.warn
        ),
        Err(_) => format!("No audit set frozen; thresholds |Δκ| < {} PASS, < {} WARNING, otherwise FAIL", thresholds.pass, thresholds.warn),
    };
    let rows = [
        format!("{}: {} (rubric {}); reflective single construct", ws.rubric.construct, ws.rubric.excerpt, m.artifact_ids.rubric_id),
        format!(
            "Level {}; scope {}; authoritative fields: {}; rationales, if any, are non-authoritative",
            m.level,
            m.scope.as_str(),
            slots.join(", ")
        ),
        format!(
            "Label map {} ({}); schema {}; max tokens {}; reject-on-fail with up to {} retries; invalid-output rate {}",
            m.artifact_ids.label_map_id,
            tokens.join(", "),
            m.artifact_ids.schema_id,
            m.decoding.max_tokens,
            ws.schema.retry_bound,
            pct(d.invalid_output_rate)
        ),
        format!(
            "P = {} prompts ({}); S = {} samples per prompt at estimation temperature; M = {} model families; option order {}; {} records",
            m.p,
            prompt_ids.join(", "),
            m.s,
            m.m,
            if m.randomize_options { "randomized per draw" } else { "fixed" },
            d.records
        ),
        format!(
            "Temperature {} (estimation) / {} (final); top-p {}; max tokens {}; seeds collection {} / shuffling {}; {}",
            m.decoding.temperature_estimation,
            m.decoding.temperature_final,
            m.decoding.top_p,
            m.decoding.max_tokens,
            m.seeds.collection,
            m.seeds.shuffling,
            pins.join("; ")
        ),
        format!(
            "Within prompt: {}; across prompts: majority of prompt decisions; across models: {stage3}; upgrade flag at cross-model κ < {}{}",
            table.provenance.stage1,
            table.options.upgrade_threshold,
            if table.upgrade_recommended { " (raised)" } else { "" }
        ),
        format!(
            "{}; unit: item; CI: percentile bootstrap over items, B = {}, level {}, seed {}",
            agreement.join("; "),
            report.bootstrap.resamples,
            report.bootstrap.level,
            report.bootstrap.seed
        ),
        calibration,
        triage,
        drift,
        format!(
            "{}: prompts, schema, label map, rubric, run manifest, decoder settings, seeds and permutations, de-identified sample of items and outputs; run date {}; records digest {}",
            m.expand(&m.outputs.materials_bundle),
            sealed_at,
            &digest[..16.min(digest.len())]
        ),
    ];
    MethodsTable {
        run_id: m.run_id.clone(),
        rows: ELEMENTS.iter().zip(rows).map(|(e, s)| MethodsRow { element: e.to_string(), specification: s }).collect(),
    }
}

fn write(path: &Path, body: &str) -> CmdResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body)?;
    Ok(())
}

pub fn report(g: &GlobalArgs, a: &ReportArgs) -> CmdResult<RunReport> {
    let ctx = Context::load(g)?;
    let agg = ctx.agg_dir();
    if !agg.join("table.json").is_file() {
        return Err(CmdError::config_msg(format!("missing aggregates for run `{}` ({}); run `aggregate` first", ctx.run_id(), agg.display())));
    }
    let table = AggregateTable::load(&agg)?;
    let (records, seal) = ctx.store().load_sealed(Pass::Estimation)?;
    let report = build_report(&ctx, &table, &records, &seal.summary, a.resamples)?;
    let methods = build_methods_table(&ctx, &table, &report, &seal.sealed_at.format("%Y-%m-%d").to_string(), &seal.digest);
    methods.check().map_err(CmdError::abort)?;

    let dir = ctx.reports_dir();
    write(&dir.join("report.json"), &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    write(&dir.join("methods_table.json"), &(serde_json::to_string_pretty(&methods).expect("table serializes") + "\n"))?;
    write(&dir.join("methods_table.txt"), &methods.to_text())?;
    write(&ctx.methods_tex_path(), &methods.to_latex())?;
    if let CalibrationSection::Available { models, .. } = &report.calibration {
        for c in models {
            write(&dir.join(format!("reliability_m{}.csv", c.model)), &c.report.bins_csv())?;
        }
    }
    for a in &report.agreement {
        println!("{}", fmt_agreement(&a.name, &a.report));
    }
    if let CalibrationSection::NotAvailable { reason } = &report.calibration {
        println!("calibration: not available ({reason})");
    }
    println!("report -> {}", dir.display());
    Ok(report)
}
