//! The publication-ready methods table: eleven fixed elements, each filled from
//! the manifest and the run's artifacts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row names in template order.
pub const ELEMENTS: [&str; 11] = [
    "Construct & Measure",
    "Annotation Design",
    "Constraints & Schema",
    "Sampling Plan",
    "Decoding & Pinning",
    "Aggregation",
    "Agreement Metrics",
    "Calibration",
    "Triage Policy",
    "Drift Audits",
    "Materials",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodsRow {
    pub element: String,
    pub specification: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodsTable {
    pub run_id: String,
    pub rows: Vec<MethodsRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("methods table is missing the `{0}` row")]
pub struct MissingRow(pub String);

impl MethodsTable {
    pub fn row(&self, element: &str) -> Option<&str> {
        self.rows.iter().find(|r| r.element == element).map(|r| r.specification.as_str())
    }

    /// Every template element must be present, non-empty and in order.
    pub fn check(&self) -> Result<(), MissingRow> {
        for want in ELEMENTS {
            match self.row(want) {
                Some(s) if !s.trim().is_empty() => {}
                _ => return Err(MissingRow(want.to_string())),
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let width = ELEMENTS.iter().map(|e| e.len()).max().unwrap_or(0);
        let mut out = format!("Methods table — run {}\n\n", self.run_id);
        for r in &self.rows {
            let mut lines = wrap(&r.specification, 88).into_iter();
            out.push_str(&format!("{:<width$}  {}\n", r.element, lines.next().unwrap_or_default()));
            for l in lines {
                out.push_str(&format!("{:<width$}  {l}\n", ""));
            }
        }
        out
    }

    pub fn to_latex(&self) -> String {
        let mut out = String::from(
            "\\begin{table}[ht]\n\\centering\n\\caption{Methods table}\n\\begin{tabular}{p{0.27\\linewidth} p{0.69\\linewidth}}\n\\toprule\n\\textbf{Element} & \\textbf{Specification} \\\\\n\\midrule\n",
        );
        for r in &self.rows {
            out.push_str(&format!("{} & {} \\\\\n", tex_escape(&r.element), tex_escape(&r.specification)));
        }
        out.push_str("\\bottomrule\n\\end{tabular}\n\\end{table}\n");
        out
    }
}

fn wrap(text: &str, width: usize) -> Vec<String> {
    let mut lines = vec![String::new()];
    for word in text.split_whitespace() {
        let cur = lines.last_mut().expect("non-empty");
        if !cur.is_empty() && cur.len() + 1 + word.len() > width {
            lines.push(word.to_string());
        } else {
            if !cur.is_empty() {
                cur.push(' ');
            }
            cur.push_str(word);
        }
    }
    lines
}

fn tex_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' | '%' | '$' | '#' | '_' | '{' | '}' => {
                out.push('\\');
                out.push(c);
            }
            '~' => out.push_str("\\textasciitilde{}"),
            '^' => out.push_str("\\textasciicircum{}"),
            '\\' => out.push_str("\\textbackslash{}"),
            'κ' => out.push_str("$\\kappa$"),
            'α' => out.push_str("$\\alpha$"),
            'Δ' => out.push_str("$\\Delta$"),
            '×' => out.push_str("$\\times$"),
            '≥' => out.push_str("$\\geq$"),
            '<' => out.push_str("$<$"),
            '>' => out.push_str("$>$"),
            _ => out.push(c),
        }
    }
    out
}
