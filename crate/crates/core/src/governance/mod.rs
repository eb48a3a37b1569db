//! Drift audits against the frozen audit set, escalation triage, blinded
//! review kits, and merging adjudicated labels back into the aggregate table.

pub mod drift;
pub mod review;
pub mod triage;

use thiserror::Error;

pub use drift::{append_drift_log, classify_delta, drift_log_entry, read_drift_log, run_drift_audit, DriftAudit, DriftDecision, DriftThresholds, MetricValue};
pub use review::{
    blinding_scan, export_review_kits, load_reviews, merge_human_decisions, pipeline_outputs, MergeReport, ReviewKit, ReviewOutcome, DEFAULT_KIT_INSTRUCTIONS,
};
pub use triage::{
    detect_escalations, item_agreement, item_margins, load_escalations, save_escalations, Escalation, EscalationStatus, EscalationTrigger, TriagePolicy,
};

#[derive(Debug, Error)]
pub enum GovernanceError {
    #[error("audit set hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
    #[error("baseline reports `{baseline}` but new configuration reports `{new}`")]
    MetricMismatch { baseline: String, new: String },
    #[error("review kit for {item_id} would reveal pipeline output: {detail}")]
    BlindingViolation { item_id: String, detail: String },
    #[error("no escalation exists for item {0}")]
    UnknownEscalation(String),
    #[error("human decision for item {0} was already merged")]
    DoubleMerge(String),
    #[error("reviewers disagree on item {0} and no adjudicated label was given")]
    Unadjudicated(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("label `{0}` is not in the label map")]
    UnknownLabel(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
