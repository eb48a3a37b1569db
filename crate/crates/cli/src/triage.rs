//! Route low-agreement, near-tie and failed items to blinded human review,
//! and merge the adjudicated labels back.

use annokit::aggregation::AggregateTable;
use annokit::governance::{
    detect_escalations, export_review_kits, item_agreement, item_margins, load_escalations, load_reviews, merge_human_decisions, save_escalations,
    Escalation, MergeReport, TriagePolicy, DEFAULT_KIT_INSTRUCTIONS,
};
use annokit::orchestrator::Pass;
use annokit::workspace::SlotKind;
use serde::Serialize;

use crate::context::Context;
use crate::error::{CmdError, CmdResult};
use crate::{GlobalArgs, TriageArgs};

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum TriageOutcome {
    Escalated { escalations: Vec<Escalation>, kits: usize },
    Merged(MergeReport),
}

pub fn triage(g: &GlobalArgs, a: &TriageArgs) -> CmdResult<TriageOutcome> {
    let ctx = Context::load(g)?;
    let agg = ctx.agg_dir();
    if !agg.join("table.json").is_file() {
        return Err(CmdError::config_msg(format!("missing aggregates for run `{}`; run `aggregate` first", ctx.run_id())));
    }
    let mut table = AggregateTable::load(&agg)?;
    let (slot, labels) = match &a.slot {
        Some(name) => {
            let s = ctx.ws.schema.slots.iter().find(|s| &s.name == name).ok_or_else(|| CmdError::config_msg(format!("no slot `{name}` in the schema")))?;
            match &s.kind {
                SlotKind::Categorical { labels } => (s.name.clone(), labels.clone()),
                _ => return Err(CmdError::config_msg(format!("slot `{name}` is not categorical"))),
            }
        }
        None => ctx
            .ws
            .schema
            .slots
            .iter()
            .find_map(|s| match &s.kind {
                SlotKind::Categorical { labels } => Some((s.name.clone(), labels.clone())),
                _ => None,
            })
            .ok_or_else(|| CmdError::config_msg("triage needs a categorical slot"))?,
    };
    let esc_path = agg.join("escalations.csv");

    if let Some(reviews_path) = &a.merge {
        let mut escalations = load_escalations(&esc_path).map_err(|e| CmdError::config(e).context("run `triage` before merging reviews"))?;
        let mut reviews = load_reviews(reviews_path).map_err(CmdError::config)?;
        let report = merge_human_decisions(&mut reviews, &mut table, &mut escalations, &slot, &ctx.ws.label_map)?;
        table.save(&agg)?;
        save_escalations(&esc_path, &escalations)?;
        std::fs::write(agg.join("merge_report.json"), serde_json::to_string_pretty(&report).expect("serializes") + "\n")?;
        println!("merged {} reviewed items, {} overturned ({:.1}%)", report.reviewed, report.overturned, 100.0 * report.overturn_rate);
        return Ok(TriageOutcome::Merged(report));
    }

    let (records, _) = ctx.store().load_sealed(Pass::Estimation)?;
    let t = &ctx.ws.manifest.triage;
    let policy = TriagePolicy { kappa_floor: t.kappa_floor, margin_floor: t.margin_floor, escalate_schema_failures: t.escalate_schema_failures };
    let escalations = detect_escalations(&table, &item_agreement(&table, &slot), &item_margins(&records, &slot, &labels), &policy);
    save_escalations(&esc_path, &escalations)?;
    let kits = export_review_kits(&escalations, &ctx.items()?, &ctx.ws.rubric, &ctx.ws.label_map, &table, DEFAULT_KIT_INSTRUCTIONS, &agg.join("review_kits"))?;
    println!("{} escalations over {} items; review kits -> {}", escalations.len(), kits.len(), agg.join("review_kits").display());
    Ok(TriageOutcome::Escalated { escalations, kits: kits.len() })
}
