//! Planning and executing the P×S×M sampling design.
//!
//! [`plan_runs`] expands a manifest into cells, [`execute_plan`] drives the
//! cells through one gateway per model with bounded retries, and
//! [`store::RunStore`] persists the append-only record log and seals it.

pub mod execute;
pub mod extract;
pub mod plan;
pub mod render;
pub mod store;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::annotators::{AnnotatorError, ProviderStatus};
use crate::workspace::{ProviderPin, WorkspaceError};

pub use execute::{execute_plan, summarize, ExecuteOptions, MemorySink, RecordSink, RunContext, RunSummary};
pub use extract::{extract, extract_label, near_tie_margin, validate_structured, ExtractionOutcome, ExtractionStatus};
pub use plan::{attempt_seed, derive_seed, plan_runs, Cell, CellId, Pass, RunPlan};
pub use render::render_prompt;
pub use store::RunStore;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("template is missing placeholder {0}")]
    MissingPlaceholder(String),
    #[error("no label carries probability mass")]
    EmptyDistribution,
    #[error("run aborted: {permanent} permanent provider errors over {cells} cells exceeds the {ceiling} ceiling")]
    AbortedRun { permanent: usize, cells: usize, ceiling: f64 },
    #[error("run `{0}` is sealed")]
    Sealed(String),
    #[error("run `{0}` already has records; resume it or choose a new run id")]
    RunExists(String),
    #[error("run `{0}` is not sealed")]
    NotSealed(String),
    #[error("plan needs {needed} gateways (one per model), got {got}")]
    GatewayCount { needed: usize, got: usize },
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("corrupt log {path}: {message}")]
    CorruptLog { path: String, message: String },
    #[error(transparent)]
    Annotator(#[from] AnnotatorError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Valid,
    InvalidAfterRetries,
}

/// The identifying part of a provider pin, copied into every record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinSnapshot {
    pub name: String,
    pub model: String,
    pub version: String,
    pub precision: String,
    pub device: String,
}

impl From<&ProviderPin> for PinSnapshot {
    fn from(p: &ProviderPin) -> Self {
        Self { name: p.name.clone(), model: p.model.clone(), version: p.version.clone(), precision: p.precision.clone(), device: p.device.clone() }
    }
}

/// One draw `y_{ius}^{(m)}` after extraction and validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub run_id: String,
    pub pass: Pass,
    pub item_id: String,
    pub u: usize,
    pub s: usize,
    pub m: usize,
    pub prompt_id: String,
    /// Labels in the order they were shown.
    pub option_permutation: Vec<String>,
    /// Seed of the attempt this record reports.
    pub seed: u64,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted: Option<BTreeMap<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_logprobs: Option<BTreeMap<String, f64>>,
    pub validity: Validity,
    pub retry_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<String>,
    pub provider_status: ProviderStatus,
    pub provider: PinSnapshot,
    pub timestamp: DateTime<Utc>,
}

impl AnnotationRecord {
    pub fn cell_id(&self) -> CellId {
        CellId { item_id: self.item_id.clone(), u: self.u, s: self.s, m: self.m }
    }

    pub fn is_valid(&self) -> bool {
        self.validity == Validity::Valid
    }

    /// Extracted value of a slot, if valid.
    pub fn slot(&self, name: &str) -> Option<&Value> {
        self.extracted.as_ref().and_then(|e| e.get(name))
    }
}

/// Request/response pair for one provider call, kept under `logs/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallEnvelope {
    pub item_id: String,
    pub u: usize,
    pub s: usize,
    pub m: usize,
    pub attempt: u32,
    pub seed: u64,
    pub rendered_sequence: String,
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_logprobs: Option<BTreeMap<String, f64>>,
    pub provider_status: ProviderStatus,
    pub latency_ms: u64,
    pub timestamp: DateTime<Utc>,
}
