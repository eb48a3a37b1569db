//! Drift audit: the same metric on the frozen audit set for a baseline run
//! and the current run, classified and appended to the drift log.

use std::collections::BTreeMap;

use annokit::aggregation::AggregateTable;
use annokit::governance::{append_drift_log, run_drift_audit, DriftAudit, DriftDecision, DriftThresholds, GovernanceError, MetricValue};
use annokit::stats::cohen_kappa;
use annokit::workspace::{load_audit_set, AuditSet, SlotKind};
use chrono::{NaiveDate, Utc};

use crate::context::Context;
use crate::error::{CmdError, CmdResult, EXIT_DRIFT_FAIL, EXIT_DRIFT_WARNING, EXIT_OK};
use crate::pipeline::AuditRef;
use crate::{AuditArgs, GlobalArgs};

pub const AUDIT_METRIC: &str = "kappa";

/// Reference labels for the audit items: the frozen consensus labels, or
/// gold labels when the set was frozen without them.
fn reference_labels(ctx: &Context, audit: &AuditSet) -> CmdResult<BTreeMap<String, String>> {
    if let Some(consensus) = &audit.consensus_labels {
        return Ok(consensus.iter().filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_string()))).collect());
    }
    let mut gold = ctx.gold(&ctx.items()?)?;
    gold.retain(|k, _| audit.item_ids.contains(k));
    Ok(gold)
}

/// Cohen's κ between a run's final labels and the reference labels on the
/// audit items. Without reference labels, the cross-model κ on the audit
/// items stands in.
pub fn audit_metric(run: &Context, audit: &AuditSet, reference: &BTreeMap<String, String>) -> CmdResult<MetricValue> {
    let agg = run.agg_dir();
    if !agg.join("table.json").is_file() {
        return Err(CmdError::config_msg(format!("run `{}` has no aggregates at {}", run.run_id(), agg.display())));
    }
    let ref_path = run.audit_ref_path();
    let audit_ref: AuditRef = std::fs::read_to_string(&ref_path)
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .ok_or_else(|| CmdError::config_msg(format!("run `{}` records no audit set ({} missing)", run.run_id(), ref_path.display())))?;
    if audit_ref.content_hash != audit.content_hash {
        return Err(GovernanceError::HashMismatch { expected: audit.content_hash.clone(), found: audit_ref.content_hash }.into());
    }
    let table = AggregateTable::load(&agg)?;
    let slot = run
        .ws
        .schema
        .slots
        .iter()
        .find(|s| matches!(s.kind, SlotKind::Categorical { .. }))
        .map(|s| s.name.clone())
        .ok_or_else(|| CmdError::config_msg("the audit metric needs a categorical slot"))?;
    let on_audit: Vec<_> = table.items.iter().filter(|i| audit.item_ids.contains(&i.item_id)).collect();
    let pairs: Vec<(String, String)> = if reference.is_empty() {
        on_audit
            .iter()
            .filter_map(|i| {
                let mut ms = i.stage2.iter().filter_map(|d| d.slots.get(&slot)?.label());
                Some((ms.next()?.to_string(), ms.next()?.to_string()))
            })
            .collect()
    } else {
        on_audit.iter().filter_map(|i| Some((i.final_label(&slot)?.to_string(), reference.get(&i.item_id)?.clone()))).collect()
    };
    let (a, b): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
    let value = cohen_kappa(&a, &b)
        .map_err(|e| CmdError::abort(e).context(format!("audit metric for run `{}`", run.run_id())))?
        .value
        .ok_or_else(|| CmdError::abort(anyhow::anyhow!("audit metric undefined for run `{}`", run.run_id())))?;
    Ok(MetricValue { name: AUDIT_METRIC.into(), value })
}

pub fn audit(g: &GlobalArgs, a: &AuditArgs) -> CmdResult<u8> {
    let ctx = Context::load(g)?;
    let path = ctx.ws.audit_path();
    if !path.is_file() {
        return Err(CmdError::config_msg(format!("no frozen audit set at {}; run `freeze-audit` first", path.display())));
    }
    let (audit, audit_items) = load_audit_set(&path)?;
    let date = match &a.date {
        Some(d) => NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|e| CmdError::config_msg(format!("--date: {e}")))?,
        None => Utc::now().date_naive(),
    };
    let reference = reference_labels(&ctx, &audit)?;
    let baseline = audit_metric(&ctx.for_run(&a.baseline), &audit, &reference)?;
    let new = audit_metric(&ctx, &audit, &reference)?;
    let result: DriftAudit = run_drift_audit(&audit, &audit_items, &baseline, &new, &a.trigger, &DriftThresholds::default(), date)?;
    append_drift_log(&ctx.drift_log_path(), &result)?;
    println!(
        "audit {}: {} baseline {:.4} ({}) -> {:.4} ({}), delta {:+.4}: {} — {}",
        result.audit_version_id,
        AUDIT_METRIC,
        baseline.value,
        a.baseline,
        new.value,
        ctx.run_id(),
        result.delta,
        result.decision.as_str(),
        result.recommendation
    );
    println!("drift log -> {}", ctx.drift_log_path().display());
    Ok(match result.decision {
        DriftDecision::Pass => EXIT_OK,
        DriftDecision::Warning => EXIT_DRIFT_WARNING,
        DriftDecision::Fail => EXIT_DRIFT_FAIL,
    })
}
