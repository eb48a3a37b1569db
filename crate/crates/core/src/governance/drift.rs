//! Drift audits: compare a metric on the frozen audit set before and
//! after a configuration change and classify the shift.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::GovernanceError;
use crate::workspace::{verify_audit_set, AuditSet, Item};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
}

impl MetricValue {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self { name: name.into(), value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftThresholds {
    pub pass: f64,
    pub warn: f64,
}

impl Default for DriftThresholds {
    fn default() -> Self {
        Self { pass: 0.05, warn: 0.10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DriftDecision {
    Pass,
    Warning,
    Fail,
}

impl DriftDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pass => "PASS",
            Self::Warning => "WARNING",
            Self::Fail => "FAIL",
        }
    }

    pub fn recommendation(self) -> &'static str {
        match self {
            Self::Pass => "continue with the new configuration",
            Self::Warning => "investigate causes; consider recalibration before continuing",
            Self::Fail => "pause for diagnosis or roll back to the pinned baseline",
        }
    }
}

/// |Δ| is rounded to 12 decimals first so that, e.g., 0.68 − 0.63 lands on
/// the 0.05 boundary instead of a hair above it.
pub fn classify_delta(delta: f64, thresholds: &DriftThresholds) -> DriftDecision {
    let d = (delta.abs() * 1e12).round() / 1e12;
    if d < thresholds.pass {
        DriftDecision::Pass
    } else if d < thresholds.warn {
        DriftDecision::Warning
    } else {
        DriftDecision::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftAudit {
    pub audit_version_id: String,
    pub trigger: String,
    pub baseline: MetricValue,
    pub new: MetricValue,
    pub delta: f64,
    pub thresholds: DriftThresholds,
    pub decision: DriftDecision,
    pub recommendation: String,
    pub date: NaiveDate,
}

/// Verify the audit set, check that both sides report the same metric,
/// and classify `new − baseline`.
pub fn run_drift_audit(
    audit: &AuditSet,
    audit_items: &[Item],
    baseline: &MetricValue,
    new: &MetricValue,
    trigger: &str,
    thresholds: &DriftThresholds,
    date: NaiveDate,
) -> Result<DriftAudit, GovernanceError> {
    let check = verify_audit_set(audit, audit_items);
    if !check.hash_match {
        return Err(GovernanceError::HashMismatch { expected: audit.content_hash.clone(), found: check.recomputed_hash });
    }
    if baseline.name != new.name {
        return Err(GovernanceError::MetricMismatch { baseline: baseline.name.clone(), new: new.name.clone() });
    }
    let delta = ((new.value - baseline.value) * 1e12).round() / 1e12;
    let decision = classify_delta(delta, thresholds);
    Ok(DriftAudit {
        audit_version_id: audit.audit_version_id.clone(),
        trigger: trigger.to_string(),
        baseline: baseline.clone(),
        new: new.clone(),
        delta,
        thresholds: *thresholds,
        decision,
        recommendation: decision.recommendation().to_string(),
        date,
    })
}

fn yaml_scalar(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// One drift-log entry in the `drift_audits:` list format, with metric
/// names folded into the keys (`baseline_kappa`, `new_kappa`, `delta_kappa`).
pub fn drift_log_entry(a: &DriftAudit) -> String {
    let m = &a.baseline.name;
    format!(
        "  - date: {}\n    trigger: {}\n    audit_version_id: {}\n    baseline_{m}: {}\n    new_{m}: {}\n    delta_{m}: {}\n    decision: {}\n    recommendation: {}\n",
        a.date,
        yaml_scalar(&a.trigger),
        yaml_scalar(&a.audit_version_id),
        a.baseline.value,
        a.new.value,
        a.delta,
        yaml_scalar(a.decision.as_str()),
        yaml_scalar(&a.recommendation),
    )
}

/// Append to the drift log, creating it with its header on first use.
/// Existing bytes are never rewritten.
pub fn append_drift_log(path: &Path, audit: &DriftAudit) -> Result<(), GovernanceError> {
    let io = |e: std::io::Error| GovernanceError::Io { path: path.display().to_string(), message: e.to_string() };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let fresh = !path.exists() || std::fs::metadata(path).map_err(io)?.len() == 0;
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    if fresh {
        f.write_all(b"drift_audits:\n").map_err(io)?;
    }
    f.write_all(drift_log_entry(audit).as_bytes()).map_err(io)
}

#[derive(Debug, Deserialize)]
struct DriftLogDoc {
    #[serde(default)]
    drift_audits: Vec<serde_yaml::Mapping>,
}

/// Entries of a drift log as generic mappings (fields vary with the metric).
pub fn read_drift_log(path: &Path) -> Result<Vec<serde_yaml::Mapping>, GovernanceError> {
    let text = std::fs::read_to_string(path).map_err(|e| GovernanceError::Io { path: path.display().to_string(), message: e.to_string() })?;
    let doc: DriftLogDoc = serde_yaml::from_str(&text).map_err(|e| GovernanceError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(doc.drift_audits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workspace::{freeze_audit_set, FreezeOptions};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn audit() -> (AuditSet, Vec<Item>) {
        let items: Vec<Item> = (0..20).map(|i| Item::new(format!("i{i}"), format!("text {i}"))).collect();
        let mut opts = FreezeOptions::new(1, Utc.with_ymd_and_hms(2025, 8, 1, 0, 0, 0).unwrap());
        opts.size = 10;
        let set = freeze_audit_set(&items, &opts).unwrap();
        let chosen = items.iter().filter(|i| set.item_ids.contains(&i.item_id)).cloned().collect();
        (set, chosen)
    }

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2025, 10, 15).unwrap()
    }

    #[test]
    fn reference_deltas() {
        let (set, items) = audit();
        let t = DriftThresholds::default();
        let cases = [(0.68, 0.65, -0.03, DriftDecision::Pass), (0.61, 0.53, -0.08, DriftDecision::Warning), (0.68, 0.52, -0.16, DriftDecision::Fail)];
        for (b, n, d, want) in cases {
            let a = run_drift_audit(&set, &items, &MetricValue::new("kappa", b), &MetricValue::new("kappa", n), "model updated", &t, day()).unwrap();
            assert!((a.delta - d).abs() < 1e-12);
            assert_eq!(a.decision, want);
        }
    }

    #[test]
    fn boundaries_and_errors() {
        let t = DriftThresholds::default();
        assert_eq!(classify_delta(0.68 - 0.63, &t), DriftDecision::Warning);
        assert_eq!(classify_delta(0.049_999, &t), DriftDecision::Pass);
        assert_eq!(classify_delta(-0.10, &t), DriftDecision::Fail);
        let (set, mut items) = audit();
        let err = run_drift_audit(&set, &items, &MetricValue::new("kappa", 0.6), &MetricValue::new("icc", 0.6), "x", &t, day());
        assert!(matches!(err, Err(GovernanceError::MetricMismatch { .. })));
        items[0].text.push('!');
        let err = run_drift_audit(&set, &items, &MetricValue::new("kappa", 0.6), &MetricValue::new("kappa", 0.6), "x", &t, day());
        assert!(matches!(err, Err(GovernanceError::HashMismatch { .. })));
    }

    #[test]
    fn log_is_append_only() {
        let (set, items) = audit();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("drift_log.yaml");
        let t = DriftThresholds::default();
        let first = run_drift_audit(&set, &items, &MetricValue::new("kappa", 0.68), &MetricValue::new("kappa", 0.65), "Model updated", &t, day()).unwrap();
        append_drift_log(&path, &first).unwrap();
        let before = std::fs::read(&path).unwrap();
        let second = run_drift_audit(&set, &items, &MetricValue::new("kappa", 0.68), &MetricValue::new("kappa", 0.52), "Switched \"model\"", &t, day()).unwrap();
        append_drift_log(&path, &second).unwrap();
        let after = std::fs::read(&path).unwrap();
        assert_eq!(&after[..before.len()], &before[..]);
        let entries = read_drift_log(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0]["delta_kappa"].as_f64(), Some(-0.03));
        assert_eq!(entries[1]["decision"].as_str(), Some("FAIL"));
        assert_eq!(entries[1]["trigger"].as_str(), Some("Switched \"model\""));
    }

    proptest! {
        #[test]
        fn decision_is_monotone_in_magnitude(a in 0f64..1.0, b in 0f64..1.0) {
            let t = DriftThresholds::default();
            let rank = |d: DriftDecision| d as u8;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(rank(classify_delta(lo, &t)) <= rank(classify_delta(hi, &t)));
            prop_assert_eq!(classify_delta(a, &t), classify_delta(-a, &t));
        }
    }
}
