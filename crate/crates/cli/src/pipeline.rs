//! validate, freeze-audit, collect and aggregate.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use annokit::aggregation::{build_aggregate_table, AggregateOptions, AggregateTable, AggregationMode, NumericRule};
use annokit::annotators::{AnnotatorGateway, DecodingParams};
use annokit::orchestrator::{plan_runs, ExecuteOptions, Pass, RunContext, RunSummary};
use annokit::workspace::{
    freeze_audit_set, load_audit_set, save_audit_set, validate_workspace, verify_audit_set, AuditSet, FreezeOptions, SlotKind, Strata, ValidationIssue,
};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::context::{build_gateways, Context};
use crate::error::{CmdError, CmdResult, EXIT_CONFIG, EXIT_OK};
use crate::{AggregateArgs, CollectArgs, FreezeArgs, GlobalArgs};

/// Prints the machine-readable report; exit 2 when anything failed.
pub fn validate(g: &GlobalArgs) -> CmdResult<u8> {
    let mut report = validate_workspace(&g.manifest);
    if report.ok() {
        // the audit set is optional, but if present it must still match its hash
        let ctx = Context::load(g)?;
        let path = ctx.ws.audit_path();
        if path.is_file() {
            match (load_audit_set(&path).map_err(|e| e.to_string()), ctx.items().map_err(|e| e.to_string())) {
                (Ok((audit, _)), Ok(items)) => {
                    let check = verify_audit_set(&audit, &items);
                    if !check.hash_match {
                        report.issues.push(ValidationIssue { subject: path.display().to_string(), message: "audit set hash does not match its items".into() });
                    }
                    if !check.missing_items.is_empty() {
                        report.issues.push(ValidationIssue {
                            subject: path.display().to_string(),
                            message: format!("audit items missing from the corpus: {}", check.missing_items.join(", ")),
                        });
                    }
                }
                (Err(e), _) | (_, Err(e)) => report.issues.push(ValidationIssue { subject: path.display().to_string(), message: e }),
            }
        }
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(if report.ok() { EXIT_OK } else { EXIT_CONFIG })
}

fn parse_proportions(spec: &str) -> CmdResult<BTreeMap<String, f64>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|part| {
            let (k, v) = part.split_once('=').ok_or_else(|| CmdError::config_msg(format!("expected key=share, got `{part}`")))?;
            let v: f64 = v.trim().parse().map_err(|_| CmdError::config_msg(format!("bad share `{v}`")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

pub fn freeze_audit(g: &GlobalArgs, a: &FreezeArgs) -> CmdResult<AuditSet> {
    let ctx = Context::load(g)?;
    let items = ctx.items()?;
    let created: DateTime<Utc> = match &a.created {
        Some(s) => DateTime::parse_from_rfc3339(s).map_err(|e| CmdError::config_msg(format!("--created: {e}")))?.with_timezone(&Utc),
        None => Utc::now(),
    };
    let mut opts = FreezeOptions::new(ctx.ws.manifest.seeds.shuffling, created);
    opts.size = a.size;
    if let (Some(key), Some(spec)) = (&a.strata_key, &a.proportions) {
        opts.strata = Some(Strata { key: key.clone(), proportions: parse_proportions(spec)? });
    }
    if a.with_consensus {
        opts.consensus = Some(ctx.gold(&items)?.into_iter().map(|(k, v)| (k, Value::from(v))).collect());
    }
    let audit = freeze_audit_set(&items, &opts)?;
    let path = ctx.ws.audit_path();
    save_audit_set(&audit, &items, &path)?;
    println!("froze {} ({} items) sha256 {} -> {}", audit.audit_version_id, audit.item_ids.len(), audit.content_hash, path.display());
    Ok(audit)
}

/// Which audit set a run was collected under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRef {
    pub audit_version_id: String,
    pub content_hash: String,
    pub hash_match: bool,
}

pub fn collect(g: &GlobalArgs, a: &CollectArgs) -> CmdResult<RunSummary> {
    let ctx = Context::load(g)?;
    let items = ctx.items()?;
    let gateways = build_gateways(&ctx, a.gateway, &items)?;
    let refs: Vec<&dyn AnnotatorGateway> = gateways.iter().map(|g| g.as_ref()).collect();
    let m = &ctx.ws.manifest;
    let pass = if a.final_pass { Pass::Final } else { Pass::Estimation };
    let plan = plan_runs(m, &items, ctx.ws.label_map.k(), pass)?;
    let run = RunContext {
        run_id: &m.run_id,
        pass,
        labels: &ctx.ws.label_map,
        schema: &ctx.ws.schema,
        prompts: &ctx.ws.prompts,
        items: &items,
        decoding: DecodingParams {
            temperature: if a.final_pass { m.decoding.temperature_final } else { m.decoding.temperature_estimation },
            top_p: m.decoding.top_p,
            max_tokens: m.decoding.max_tokens,
        },
        collection_seed: m.seeds.collection,
        pins: &m.providers[..m.m],
    };
    let mut opts = ExecuteOptions::default();
    if let Some(w) = a.workers {
        opts.workers = w.max(1);
    }
    let summary = ctx.store().collect(&plan, &refs, &run, &opts, a.resume)?;

    let audit_path = ctx.ws.audit_path();
    if audit_path.is_file() {
        let (audit, _) = load_audit_set(&audit_path)?;
        let check = verify_audit_set(&audit, &items);
        let r = AuditRef { audit_version_id: audit.audit_version_id, content_hash: audit.content_hash, hash_match: check.hash_match };
        std::fs::write(ctx.audit_ref_path(), serde_json::to_string_pretty(&r).expect("serializes") + "\n")?;
    }
    println!(
        "run {} ({:?}): {} records sealed, {} valid, invalid-output rate {:.4}, {} retries, {} permanent errors",
        summary.run_id, summary.pass, summary.cells, summary.valid, summary.invalid_output_rate, summary.retries_total, summary.permanent_errors
    );
    Ok(summary)
}

pub fn aggregate(g: &GlobalArgs, a: &AggregateArgs) -> CmdResult<AggregateTable> {
    let ctx = Context::load(g)?;
    let store = ctx.store();
    if !store.is_sealed(Pass::Estimation) {
        return Err(CmdError::config_msg(format!("run `{}` has no sealed raw logs; run `collect` first", ctx.run_id())));
    }
    let (records, _) = store.load_sealed(Pass::Estimation)?;
    let order: Vec<String> = ctx.items()?.into_iter().map(|i| i.item_id).collect();
    let mode: AggregationMode = a.mode.parse().map_err(CmdError::config_msg)?;
    let mut opts = AggregateOptions { mode, zscore_numeric: a.zscore, ..AggregateOptions::default() };
    if let Some(fraction) = a.trim {
        opts.numeric_rule = NumericRule::TrimmedMean { fraction };
    }
    let table = build_aggregate_table(ctx.run_id(), &records, &ctx.ws.schema, &order, &opts)?;
    let dir = ctx.agg_dir();
    table.save(&dir)?;
    if mode != AggregationMode::MajorityOrMedian {
        std::fs::write(dir.join("posteriors.csv"), posteriors_csv(&ctx, &table))?;
    }
    let kappa = table.cross_model_kappa.map_or("undefined".to_string(), |k| format!("{k:.3}"));
    println!(
        "aggregated {} items with {} (cross-model kappa {kappa}{}) -> {}",
        table.items.len(),
        mode.name(),
        if table.upgrade_recommended { "; below threshold, a noise-aware model is recommended" } else { "" },
        dir.display()
    );
    Ok(table)
}

/// One row per item and categorical slot: posterior probability per label.
fn posteriors_csv(ctx: &Context, table: &AggregateTable) -> String {
    let mut out = String::new();
    for slot in &ctx.ws.schema.slots {
        let SlotKind::Categorical { labels } = &slot.kind else { continue };
        if out.is_empty() {
            let _ = writeln!(out, "item_id,slot,{}", labels.join(","));
        }
        for item in &table.items {
            let Some(p) = item.posterior.get(&slot.name) else { continue };
            let cells: Vec<String> = labels.iter().map(|l| p.get(l).map_or(String::new(), |v| format!("{v:.10}"))).collect();
            let _ = writeln!(out, "{},{},{}", item.item_id, slot.name, cells.join(","));
        }
    }
    out
}
