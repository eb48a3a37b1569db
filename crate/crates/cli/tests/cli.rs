//! Command-level behaviour of the `annokit` binary on copies of the demo fixture.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// A private copy of the fixture, so tests can edit inputs.
struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        copy_dir(&fixture(), dir.path());
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn edit(&self, rel: &str, from: &str, to: &str) {
        let text = std::fs::read_to_string(self.path(rel)).unwrap();
        assert!(text.contains(from), "`{from}` not in {rel}");
        std::fs::write(self.path(rel), text.replace(from, to)).unwrap();
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_annokit")).arg("--manifest").arg(self.path("manifest.yaml")).args(args).output().unwrap()
    }

    fn code(&self, args: &[&str]) -> i32 {
        let out = self.run(args);
        out.status.code().unwrap_or_else(|| panic!("{args:?} was killed: {}", String::from_utf8_lossy(&out.stderr)))
    }

    fn ok(&self, args: &[&str]) {
        let out = self.run(args);
        assert_eq!(out.status.code(), Some(0), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }

    fn run_dir(&self, run_id: &str) -> PathBuf {
        self.path(&format!("runs/{run_id}"))
    }
}

fn seal_digest(ws: &Workspace, run: &str) -> String {
    let seal: Value = serde_json::from_str(&std::fs::read_to_string(ws.run_dir(run).join("raw/SEALED.json")).unwrap()).unwrap();
    seal["digest"].as_str().unwrap().to_string()
}

#[test]
fn validation_failures_exit_2() {
    let ws = Workspace::new();
    ws.edit("manifest.yaml", "prompts_id: \"prompts/informative_P3.toml\"", "prompts_id: \"prompts/missing.toml\"");
    let out = ws.run(&["validate"]);
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["issues"][0]["subject"].as_str().unwrap().contains("prompts/missing.toml"));

    let ws = Workspace::new();
    ws.edit("manifest.yaml", "P: 3", "P: 4");
    assert_eq!(ws.code(&["validate"]), 2);

    let ws = Workspace::new();
    // item-001 is in the frozen audit set; editing it in the corpus breaks the hash
    ws.edit("data/items.jsonl", "measured change in school lunch menu", "measured change in school bus routes");
    assert_eq!(ws.code(&["validate"]), 2, "edited audit item must fail validation");
}

#[test]
fn live_gateway_without_credentials_is_a_config_error() {
    let ws = Workspace::new();
    let out = ws.run(&["collect", "--gateway", "live"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!ws.run_dir("demo").join("raw/SEALED.json").exists());
}

#[test]
fn resume_reproduces_the_sealed_digest() {
    let ws = Workspace::new();
    ws.ok(&["collect"]);
    let full = seal_digest(&ws, "demo");

    // a second collect on a sealed run is refused
    assert_eq!(ws.code(&["collect"]), 2);

    // simulate an interrupted run: drop the seal and half of one raw file
    let raw = ws.run_dir("demo").join("raw");
    std::fs::remove_file(raw.join("SEALED.json")).unwrap();
    let text = std::fs::read_to_string(raw.join("p2_m2.jsonl")).unwrap();
    let half: String = text.lines().take(text.lines().count() / 2).map(|l| format!("{l}\n")).collect();
    std::fs::write(raw.join("p2_m2.jsonl"), half).unwrap();
    ws.ok(&["collect", "--resume"]);
    assert_eq!(seal_digest(&ws, "demo"), full);
}

#[test]
fn seed_override_is_refused_once_sealed() {
    let ws = Workspace::new();
    ws.ok(&["--seed-override", "99", "validate"]);
    ws.ok(&["collect"]);
    assert_eq!(ws.code(&["--seed-override", "99", "collect"]), 2);
    // a fresh run id is fine
    ws.ok(&["--run-id", "reseeded", "--seed-override", "99", "collect"]);
    assert_ne!(seal_digest(&ws, "demo"), seal_digest(&ws, "reseeded"));
}

#[test]
fn aggregation_modes_and_missing_inputs() {
    let ws = Workspace::new();
    assert_eq!(ws.code(&["aggregate"]), 2, "aggregate before collect");
    ws.ok(&["collect"]);
    assert_eq!(ws.code(&["aggregate", "--mode", "bogus"]), 2);

    ws.ok(&["aggregate", "--mode", "ds"]);
    let csv = std::fs::read_to_string(ws.run_dir("demo").join("agg/posteriors.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("item_id,slot,informative,uninformative"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50);
    for row in rows {
        let p: f64 = row.split(',').skip(2).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((p - 1.0).abs() < 1e-9, "{row}");
    }

    ws.ok(&["aggregate", "--mode", "glad"]);
    let table: Value = serde_json::from_str(&std::fs::read_to_string(ws.run_dir("demo").join("agg/table.json")).unwrap()).unwrap();
    assert_eq!(table["glad"]["label"]["abilities"].as_array().unwrap().len(), 2);
}

#[test]
fn report_is_idempotent_and_requires_aggregates() {
    let ws = Workspace::new();
    ws.ok(&["collect"]);
    assert_eq!(ws.code(&["report", "--resamples", "500"]), 2);
    ws.ok(&["aggregate"]);
    ws.ok(&["report", "--resamples", "500"]);
    let dir = ws.run_dir("demo").join("reports");
    let first = std::fs::read(dir.join("report.json")).unwrap();
    let tex = std::fs::read(ws.run_dir("demo").join("methods_table.tex")).unwrap();
    ws.ok(&["report", "--resamples", "500"]);
    assert_eq!(std::fs::read(dir.join("report.json")).unwrap(), first);
    assert_eq!(std::fs::read(ws.run_dir("demo").join("methods_table.tex")).unwrap(), tex);

    let report: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["bootstrap"]["resamples"], 500);
    assert_eq!(report["diagnostics"]["records"], 3000);
    let methods = String::from_utf8(std::fs::read(dir.join("methods_table.txt")).unwrap()).unwrap();
    assert!(methods.contains("P = 3") && methods.contains("S = 10") && methods.contains("M = 2"));
}

#[test]
fn drift_audit_exit_codes_and_hash_mismatch() {
    let ws = Workspace::new();
    for step in [&["collect"][..], &["aggregate"]] {
        ws.ok(step);
    }
    assert_eq!(ws.code(&["audit", "--baseline", "demo", "--date", "2025-08-02"]), 0);

    // a much noisier second model on a new run id drifts past the FAIL bound
    ws.edit("synthetic/clean.json", "[[0.9, 0.1], [0.1, 0.9]]", "[[0.55, 0.45], [0.45, 0.55]]");
    ws.edit("synthetic/perturbed.json", "[[0.75, 0.25], [0.3, 0.7]]", "[[0.5, 0.5], [0.5, 0.5]]");
    for step in [&["--run-id", "degraded", "collect"][..], &["--run-id", "degraded", "aggregate"]] {
        ws.ok(step);
    }
    let out = ws.run(&["--run-id", "degraded", "audit", "--baseline", "demo", "--trigger", "model swap", "--date", "2025-09-01"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stdout));
    let log = std::fs::read_to_string(ws.path("drift_log.yaml")).unwrap();
    assert!(log.starts_with("drift_audits:"));
    assert!(log.contains("decision: \"PASS\"") && log.contains("decision: \"FAIL\"") && log.contains("trigger: \"model swap\""));

    // a re-frozen audit set no longer matches what the runs were collected under
    ws.ok(&["freeze-audit", "--size", "10", "--created", "2025-09-02T00:00:00Z"]);
    let out = ws.run(&["--run-id", "degraded", "audit", "--baseline", "demo"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
}

#[test]
fn triage_exports_blinded_kits_and_merges_reviews() {
    let ws = Workspace::new();
    for step in [&["collect"][..], &["aggregate"]] {
        ws.ok(step);
    }
    assert_eq!(ws.code(&["triage", "--merge", "reviews.csv"]), 2, "merge before triage");
    ws.ok(&["triage"]);
    let agg = ws.run_dir("demo").join("agg");
    let escalations = std::fs::read_to_string(agg.join("escalations.csv")).unwrap();
    let ids: Vec<String> = escalations.lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect();
    assert!(!ids.is_empty());
    for id in &ids {
        let kit: Value = serde_json::from_str(&std::fs::read_to_string(agg.join("review_kits").join(id).join("kit.json")).unwrap()).unwrap();
        assert_eq!(kit["label_options"], serde_json::json!(["informative", "uninformative"]));
        assert!(kit.get("final_decision").is_none());
    }

    let mut csv = String::from("item_id,reviewer_a_label,reviewer_b_label,adjudicated_label\n");
    let unique: std::collections::BTreeSet<&String> = ids.iter().collect();
    for id in &unique {
        csv.push_str(&format!("{id},uninformative,informative,uninformative\n"));
    }
    std::fs::write(ws.path("reviews.csv"), &csv).unwrap();
    ws.ok(&["triage", "--merge", ws.path("reviews.csv").to_str().unwrap()]);
    let merge: Value = serde_json::from_str(&std::fs::read_to_string(agg.join("merge_report.json")).unwrap()).unwrap();
    assert_eq!(merge["reviewed"], unique.len());
    // merging the same reviews twice is refused
    assert_eq!(ws.code(&["triage", "--merge", ws.path("reviews.csv").to_str().unwrap()]), 2);
}

#[test]
fn export_guards() {
    let ws = Workspace::new();
    for step in [&["collect"][..], &["aggregate"]] {
        ws.ok(step);
    }
    assert_eq!(ws.code(&["export"]), 2, "export needs a report");
    ws.ok(&["report", "--resamples", "200"]);
    ws.ok(&["export"]);
    let bundle = ws.run_dir("demo").join("materials.zip");
    let listing = annokit_cli::bundle::verify_bundle(&bundle).unwrap();
    let paths: Vec<&str> = listing.entries.iter().map(|e| e.path.as_str()).collect();
    for want in ["manifest.yaml", "decoding.json", "seeds.json", "permutations.jsonl", "sample/items.jsonl", "sample/outputs.jsonl", "reports/methods_table.tex"] {
        assert!(paths.contains(&want), "{want} missing from {paths:?}");
    }
    let first = std::fs::read(&bundle).unwrap();
    ws.ok(&["export"]);
    assert_eq!(std::fs::read(&bundle).unwrap(), first, "bundle is byte-stable");

    // a flagged core field cannot be removed
    ws.edit("manifest.yaml", "deidentify_fields: [\"source_author\"]", "deidentify_fields: [\"text\"]");
    assert_eq!(ws.code(&["export"]), 2);
    // a removed value that survives in the exported text is a leak
    ws.edit("manifest.yaml", "deidentify_fields: [\"text\"]", "deidentify_fields: [\"topic\"]");
    let items = std::fs::read_to_string(ws.path("data/items.jsonl")).unwrap();
    let tagged: String = items.lines().map(|l| l.replace("\"metadata\": {", "\"metadata\": {\"topic\": \"A short post\", ") + "\n").collect();
    std::fs::write(ws.path("data/items.jsonl"), tagged).unwrap();
    let out = ws.run(&["export"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stderr).contains("topic"));

    // a missing artifact fails cleanly
    std::fs::remove_file(ws.path("schemas/l1_v1.json")).unwrap();
    assert_eq!(ws.code(&["export"]), 2);
}
