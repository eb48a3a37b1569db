//! Variance-aware annotation toolkit: run manifests and audit sets,
//! prompt-ensemble sampling against annotator gateways, staged and
//! latent-truth aggregation, agreement and calibration statistics, and
//! drift / escalation governance.

pub mod aggregation;
pub mod annotators;
pub mod calibration;
pub mod digest;
pub mod governance;
pub mod orchestrator;
pub mod stats;
pub mod workspace;
