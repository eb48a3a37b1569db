//! Project manifest, corpus, versioned artifacts and frozen audit sets.
//!
//! A [`Workspace`] is the loaded, cross-checked view of one manifest: all
//! paths in the manifest resolve relative to the directory that holds it.

pub mod artifacts;
pub mod audit;
pub mod corpus;
pub mod manifest;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use artifacts::{
    normalize_token, AnnotationSchema, Constraint, Dependence, LabelEntry, LabelMap, PromptEnsemble, PromptTemplate, Rubric, Slot, SlotKind,
    DEFAULT_RETRY_BOUND,
};
pub use audit::{freeze_audit_set, load_audit_set, save_audit_set, verify_audit_set, AuditSet, AuditVerification, FreezeOptions, Strata};
pub use corpus::{corpus_to_jsonl, load_corpus, parse_corpus, Item};
pub use manifest::{parse_manifest, Level, Manifest, ProviderPin, Scope};

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("line {line}: {message}")]
    RecordParse { line: usize, message: String },
    #[error("duplicate item id `{item_id}` on line {line}")]
    DuplicateItemId { item_id: String, line: usize },
    #[error("audit size {requested} exceeds corpus size {available}")]
    SizeExceedsCorpus { requested: usize, available: usize },
    #[error("stratum `{stratum}` needs {requested} items but has {available}")]
    StrataInfeasible { stratum: String, requested: usize, available: usize },
    #[error("artifact `{id}` does not resolve: {reason}")]
    UnresolvedArtifact { id: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn read_text(path: &Path) -> Result<String, WorkspaceError> {
    std::fs::read_to_string(path).map_err(|source| WorkspaceError::Io { path: path.to_path_buf(), source })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), WorkspaceError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| WorkspaceError::Io { path: parent.to_path_buf(), source })?;
    }
    std::fs::write(path, text).map_err(|source| WorkspaceError::Io { path: path.to_path_buf(), source })
}

/// One failed pre-flight check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub manifest: String,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, subject: impl Into<String>, message: impl ToString) {
        self.issues.push(ValidationIssue { subject: subject.into(), message: message.to_string() });
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub label_map: LabelMap,
    pub schema: AnnotationSchema,
    pub prompts: PromptEnsemble,
    pub rubric: Rubric,
}

fn load_json<T: serde::de::DeserializeOwned>(root: &Path, id: &str) -> Result<T, WorkspaceError> {
    let text = read_text(&root.join(id)).map_err(|e| WorkspaceError::UnresolvedArtifact { id: id.into(), reason: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| WorkspaceError::UnresolvedArtifact { id: id.into(), reason: e.to_string() })
}

fn load_prompts(root: &Path, id: &str) -> Result<PromptEnsemble, WorkspaceError> {
    if id.ends_with(".json") {
        return load_json(root, id);
    }
    let text = read_text(&root.join(id)).map_err(|e| WorkspaceError::UnresolvedArtifact { id: id.into(), reason: e.to_string() })?;
    toml::from_str(&text).map_err(|e| WorkspaceError::UnresolvedArtifact { id: id.into(), reason: e.to_string() })
}

impl Workspace {
    /// Load and cross-check everything; fails on the first problem. Use
    /// [`validate_workspace`] to collect every problem instead.
    pub fn load(manifest_path: &Path) -> Result<Self, WorkspaceError> {
        let (ws, report) = Self::load_collecting(manifest_path);
        match ws {
            Some(ws) if report.ok() => Ok(ws),
            _ => {
                let first = report.issues.into_iter().next().expect("a failed load records an issue");
                Err(WorkspaceError::InvariantViolation(format!("{}: {}", first.subject, first.message)))
            }
        }
    }

    fn load_collecting(manifest_path: &Path) -> (Option<Self>, ValidationReport) {
        let mut report = ValidationReport { manifest: manifest_path.display().to_string(), issues: vec![] };
        let manifest = match read_text(manifest_path).and_then(|t| parse_manifest(&t)) {
            Ok(m) => m,
            Err(e) => {
                report.push("manifest", e);
                return (None, report);
            }
        };
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let ids = &manifest.artifact_ids;

        let label_map = load_json::<LabelMap>(&root, &ids.label_map_id).map_err(|e| report.push(&ids.label_map_id, e)).ok();
        let schema = load_json::<AnnotationSchema>(&root, &ids.schema_id)
            .and_then(|s| s.check().map(|_| s))
            .map_err(|e| report.push(&ids.schema_id, e))
            .ok();
        let prompts = load_prompts(&root, &ids.prompts_id)
            .and_then(|p| p.check().map(|_| p))
            .map_err(|e| report.push(&ids.prompts_id, e))
            .ok();
        let rubric = load_json::<Rubric>(&root, &ids.rubric_id).map_err(|e| report.push(&ids.rubric_id, e)).ok();

        if let Some(p) = &prompts {
            if p.templates.len() != manifest.p {
                report.push(&ids.prompts_id, format!("template count {} ≠ P = {}", p.templates.len(), manifest.p));
            }
        }
        if let (Some(schema), Some(labels)) = (&schema, &label_map) {
            for slot in &schema.slots {
                if let SlotKind::Categorical { labels: declared } = &slot.kind {
                    if !declared.iter().map(String::as_str).eq(labels.labels()) {
                        report.push(&ids.schema_id, format!("slot `{}` labels differ from the label map", slot.name));
                    }
                }
            }
            if manifest.level == Level::L1 && schema.is_single_categorical() && manifest.decoding.max_tokens != 1 {
                report.push("environment.decoding.max_tokens", "max_tokens = 1 for categorical L1");
            }
        }
        for (i, pin) in manifest.providers.iter().take(manifest.m).enumerate() {
            if pin.is_synthetic() {
                match &pin.config {
                    None => report.push(format!("providers[{i}]"), "synthetic provider needs a `config` file"),
                    Some(c) if !root.join(c).is_file() => report.push(format!("providers[{i}]"), format!("config `{c}` not found")),
                    _ => {}
                }
            }
        }
        if let Err(e) = load_corpus(&root.join(&manifest.inputs.items_path)) {
            report.push(&manifest.inputs.items_path, e);
        }

        let ws = match (label_map, schema, prompts, rubric) {
            (Some(label_map), Some(schema), Some(prompts), Some(rubric)) => Some(Self { root, manifest, label_map, schema, prompts, rubric }),
            _ => None,
        };
        (ws, report)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(self.manifest.expand(relative))
    }

    pub fn items(&self) -> Result<Vec<Item>, WorkspaceError> {
        load_corpus(&self.resolve(&self.manifest.inputs.items_path))
    }

    pub fn out_root(&self) -> PathBuf {
        self.resolve(&self.manifest.out_root)
    }

    pub fn dumps_dir(&self) -> PathBuf {
        self.resolve(&self.manifest.outputs.dumps_dir)
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.resolve(&self.manifest.outputs.logs_dir)
    }

    pub fn aggregates_dir(&self) -> PathBuf {
        self.resolve(&self.manifest.outputs.aggregates_dir)
    }

    pub fn audit_path(&self) -> PathBuf {
        self.resolve(&self.manifest.inputs.audit_set_path)
    }
}

/// Pre-flight check listing every problem found.
pub fn validate_workspace(manifest_path: &Path) -> ValidationReport {
    Workspace::load_collecting(manifest_path).1
}
