use super::OrchestratorError;
use crate::workspace::artifacts::{ITEM_PLACEHOLDER, OPTIONS_PLACEHOLDER};
use crate::workspace::{LabelMap, PromptTemplate};

/// Substitute the item text and the options (canonical tokens in
/// permutation order). Substitution is positional, so placeholder-like
/// text inside the item is left alone.
pub fn render_prompt(
    template: &PromptTemplate,
    item_text: &str,
    permutation: &[usize],
    labels: &LabelMap,
    separator: &str,
) -> Result<String, OrchestratorError> {
    let body = &template.body;
    let find = |ph: &str| body.find(ph).ok_or_else(|| OrchestratorError::MissingPlaceholder(format!("{} in `{}`", ph, template.prompt_id)));
    let item_at = find(ITEM_PLACEHOLDER)?;
    let options_at = find(OPTIONS_PLACEHOLDER)?;
    let options = permutation.iter().map(|&j| labels.canonical_token(j)).collect::<Vec<_>>().join(separator);

    let mut parts = [(item_at, ITEM_PLACEHOLDER, item_text), (options_at, OPTIONS_PLACEHOLDER, options.as_str())];
    parts.sort_by_key(|p| p.0);
    let mut out = String::with_capacity(body.len() + item_text.len() + options.len());
    let mut pos = 0;
    for (at, ph, value) in parts {
        out.push_str(&body[pos..at]);
        out.push_str(value);
        pos = at + ph.len();
    }
    out.push_str(&body[pos..]);
    Ok(out)
}
