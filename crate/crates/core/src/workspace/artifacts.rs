//! Versioned artifacts referenced by the manifest: the token→label map,
//! the output schema, the prompt ensemble and the rubric.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::WorkspaceError;

/// NFC, trim, lowercase. Every token lookup goes through this.
pub fn normalize_token(raw: &str) -> String {
    raw.nfc().collect::<String>().trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub label: String,
    /// Token shown to the annotator and expected back.
    pub token: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelMapFile", into = "LabelMapFile")]
pub struct LabelMap {
    pub id: String,
    entries: Vec<LabelEntry>,
    lookup: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct LabelMapFile {
    #[serde(default)]
    id: String,
    labels: Vec<LabelEntry>,
}

impl TryFrom<LabelMapFile> for LabelMap {
    type Error = WorkspaceError;

    fn try_from(f: LabelMapFile) -> Result<Self, Self::Error> {
        LabelMap::new(f.id, f.labels)
    }
}

impl From<LabelMap> for LabelMapFile {
    fn from(m: LabelMap) -> Self {
        Self { id: m.id, labels: m.entries }
    }
}

impl LabelMap {
    pub fn new(id: impl Into<String>, entries: Vec<LabelEntry>) -> Result<Self, WorkspaceError> {
        if entries.len() < 2 {
            return Err(WorkspaceError::InvariantViolation("label map needs at least two labels".into()));
        }
        let mut names = BTreeSet::new();
        let mut lookup = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if !names.insert(e.label.clone()) {
                return Err(WorkspaceError::InvariantViolation(format!("label `{}` listed twice", e.label)));
            }
            for tok in std::iter::once(&e.token).chain(&e.aliases) {
                let key = normalize_token(tok);
                if key.is_empty() || key.split_whitespace().count() != 1 {
                    return Err(WorkspaceError::InvariantViolation(format!("token `{tok}` must be a single non-empty word")));
                }
                match lookup.insert(key, i) {
                    Some(j) if j != i => {
                        return Err(WorkspaceError::InvariantViolation(format!(
                            "token `{tok}` maps to both `{}` and `{}`",
                            entries[j].label, e.label
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { id: id.into(), entries, lookup })
    }

    /// Map with identical label and token names, e.g. `["A", "B"]`.
    pub fn simple(labels: &[&str]) -> Result<Self, WorkspaceError> {
        Self::new(
            "inline",
            labels
                .iter()
                .map(|l| LabelEntry { label: l.to_string(), token: l.to_string(), aliases: vec![] })
                .collect(),
        )
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    pub fn label(&self, index: usize) -> &str {
        &self.entries[index].label
    }

    pub fn canonical_token(&self, index: usize) -> &str {
        &self.entries[index].token
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }

    /// Label index for a raw token, after normalization.
    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.lookup.get(&normalize_token(token)).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotKind {
    Categorical { labels: Vec<String> },
    Ordinal { levels: Vec<i64> },
    Numeric { min: f64, max: f64 },
    Text { max_len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    #[serde(flatten)]
    pub kind: SlotKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    #[default]
    Independent,
    Dependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// Named numeric slots must add up to `target`.
    SumTo { slots: Vec<String>, target: f64 },
}

impl Constraint {
    pub fn slots(&self) -> &[String] {
        match self {
            Self::SumTo { slots, .. } => slots,
        }
    }
}

pub const DEFAULT_RETRY_BOUND: u32 = 3;

fn default_retry_bound() -> u32 {
    DEFAULT_RETRY_BOUND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSchema {
    #[serde(default)]
    pub id: String,
    pub slots: Vec<Slot>,
    #[serde(default)]
    pub dependence: Dependence,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default = "default_retry_bound")]
    pub retry_bound: u32,
}

impl AnnotationSchema {
    /// Single categorical slot named `label` over the label map.
    pub fn single_label(labels: &LabelMap) -> Self {
        Self {
            id: "inline".into(),
            slots: vec![Slot {
                name: "label".into(),
                kind: SlotKind::Categorical { labels: labels.labels().map(str::to_string).collect() },
            }],
            dependence: Dependence::Independent,
            constraints: vec![],
            retry_bound: DEFAULT_RETRY_BOUND,
        }
    }

    pub fn is_single_categorical(&self) -> bool {
        self.slots.len() == 1 && matches!(self.slots[0].kind, SlotKind::Categorical { .. })
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn check(&self) -> Result<(), WorkspaceError> {
        let mut names = BTreeSet::new();
        for s in &self.slots {
            if !names.insert(s.name.as_str()) {
                return Err(WorkspaceError::InvariantViolation(format!("slot `{}` declared twice", s.name)));
            }
            match &s.kind {
                SlotKind::Numeric { min, max } if !(min <= max) => {
                    return Err(WorkspaceError::InvariantViolation(format!("slot `{}` has empty interval", s.name)))
                }
                SlotKind::Categorical { labels } if labels.is_empty() => {
                    return Err(WorkspaceError::InvariantViolation(format!("slot `{}` has no labels", s.name)))
                }
                SlotKind::Ordinal { levels } if levels.is_empty() => {
                    return Err(WorkspaceError::InvariantViolation(format!("slot `{}` has no levels", s.name)))
                }
                _ => {}
            }
        }
        if self.slots.is_empty() {
            return Err(WorkspaceError::InvariantViolation("schema declares no slots".into()));
        }
        for c in &self.constraints {
            for name in c.slots() {
                match self.slot(name) {
                    None => {
                        return Err(WorkspaceError::InvariantViolation(format!("constraint references undeclared slot `{name}`")))
                    }
                    Some(Slot { kind: SlotKind::Numeric { .. } | SlotKind::Ordinal { .. }, .. }) => {}
                    Some(_) => return Err(WorkspaceError::InvariantViolation(format!("sum constraint on non-numeric slot `{name}`"))),
                }
            }
        }
        match (self.dependence, self.constraints.is_empty()) {
            (Dependence::Dependent, true) => Err(WorkspaceError::InvariantViolation("dependent schema needs a cross-field constraint".into())),
            (Dependence::Independent, false) => {
                Err(WorkspaceError::InvariantViolation("independent schema must not carry cross-field constraints".into()))
            }
            _ if self.retry_bound == 0 => Err(WorkspaceError::InvariantViolation("retry_bound ≥ 1".into())),
            _ => Ok(()),
        }
    }
}

pub const ITEM_PLACEHOLDER: &str = "{item}";
pub const OPTIONS_PLACEHOLDER: &str = "{options}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub prompt_id: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEnsemble {
    #[serde(default)]
    pub id: String,
    /// Joins rendered options, e.g. `"\n"`.
    #[serde(default = "default_separator")]
    pub option_separator: String,
    pub templates: Vec<PromptTemplate>,
}

fn default_separator() -> String {
    "\n".into()
}

impl PromptEnsemble {
    pub fn check(&self) -> Result<(), WorkspaceError> {
        let mut ids = BTreeSet::new();
        for t in &self.templates {
            if !ids.insert(t.prompt_id.as_str()) {
                return Err(WorkspaceError::InvariantViolation(format!("prompt `{}` listed twice", t.prompt_id)));
            }
            for ph in [ITEM_PLACEHOLDER, OPTIONS_PLACEHOLDER] {
                if t.body.matches(ph).count() != 1 {
                    return Err(WorkspaceError::InvariantViolation(format!("prompt `{}` must contain {ph} exactly once", t.prompt_id)));
                }
            }
            let fixed = t.body.replace(ITEM_PLACEHOLDER, "").replace(OPTIONS_PLACEHOLDER, "");
            if fixed.matches('?').count() != 1 {
                return Err(WorkspaceError::InvariantViolation(format!("prompt `{}` must ask exactly one question", t.prompt_id)));
            }
        }
        Ok(())
    }
}

/// Construct definition; only the excerpt is shown to human reviewers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rubric {
    #[serde(default)]
    pub id: String,
    pub construct: String,
    pub excerpt: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_normalizes() {
        let m = LabelMap::new(
            "t",
            vec![
                LabelEntry { label: "A".into(), token: "A".into(), aliases: vec![] },
                LabelEntry { label: "B".into(), token: "B".into(), aliases: vec!["b".into(), "Option-B".into()] },
            ],
        )
        .unwrap();
        assert_eq!(m.lookup(" a "), Some(0));
        assert_eq!(m.lookup("b"), Some(1));
        assert_eq!(m.lookup("OPTION-b"), Some(1));
        assert_eq!(m.lookup("C"), None);
        // composed and decomposed forms of é normalize alike
        let e = LabelMap::simple(&["caf\u{e9}", "tea"]).unwrap();
        assert_eq!(e.lookup("cafe\u{301}"), Some(0));
    }

    #[test]
    fn conflicting_tokens_rejected() {
        let r = LabelMap::new(
            "t",
            vec![
                LabelEntry { label: "A".into(), token: "x".into(), aliases: vec![] },
                LabelEntry { label: "B".into(), token: "X".into(), aliases: vec![] },
            ],
        );
        assert!(r.is_err());
        let json = r#"{"id":"labels/v1","labels":[{"label":"A","token":"A"},{"label":"B","token":"B","aliases":["b"]}]}"#;
        let m: LabelMap = serde_json::from_str(json).unwrap();
        assert_eq!(m.k(), 2);
        let back: LabelMap = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn schema_rules() {
        let json = r#"{"slots":[{"name":"x","kind":"numeric","min":0,"max":100},{"name":"y","kind":"numeric","min":0,"max":100}],
            "dependence":"dependent","constraints":[{"kind":"sum_to","slots":["x","y"],"target":100}]}"#;
        let s: AnnotationSchema = serde_json::from_str(json).unwrap();
        assert_eq!(s.retry_bound, 3);
        s.check().unwrap();
        let mut bad = s.clone();
        bad.dependence = Dependence::Independent;
        assert!(bad.check().is_err());
        let mut bad = s.clone();
        bad.constraints = vec![Constraint::SumTo { slots: vec!["z".into()], target: 1.0 }];
        assert!(bad.check().is_err());
        let mut bad = s;
        bad.constraints.clear();
        assert!(bad.check().is_err());
    }

    #[test]
    fn prompt_rules() {
        let ok = PromptEnsemble {
            id: "p".into(),
            option_separator: "\n".into(),
            templates: vec![PromptTemplate { prompt_id: "p1".into(), body: "Text: {item}\nIs it civil?\n{options}".into() }],
        };
        ok.check().unwrap();
        let mut two_q = ok.clone();
        two_q.templates[0].body = "Text: {item}\nIs it civil? Is it kind?\n{options}".into();
        assert!(two_q.check().is_err());
        let mut no_item = ok;
        no_item.templates[0].body = "Is it civil?\n{options}".into();
        assert!(no_item.check().is_err());
    }
}
