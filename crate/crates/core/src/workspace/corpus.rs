//! Items to be coded, one JSON object per line.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::WorkspaceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<Value>,
}

impl Item {
    pub fn new(item_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { item_id: item_id.into(), text: text.into(), metadata: BTreeMap::new(), gold_label: None }
    }

    pub fn gold_str(&self) -> Option<&str> {
        self.gold_label.as_ref().and_then(Value::as_str)
    }
}

/// Parse JSONL items, preserving order. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_corpus(source: &str) -> Result<Vec<Item>, WorkspaceError> {
    let mut items = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item: Item = serde_json::from_str(line).map_err(|e| WorkspaceError::RecordParse { line: line_no, message: e.to_string() })?;
        if item.text.trim().is_empty() {
            return Err(WorkspaceError::InvariantViolation("text non-empty".into()));
        }
        if seen.insert(item.item_id.clone(), line_no).is_some() {
            return Err(WorkspaceError::DuplicateItemId { item_id: item.item_id, line: line_no });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Item>, WorkspaceError> {
    parse_corpus(&super::read_text(path)?)
}

pub fn corpus_to_jsonl(items: &[Item]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("items serialize") + "\n")
        .collect()
}
