//! Frozen audit sets: seeded (optionally stratified) selection and a
//! SHA-256 content hash over a canonical serialization.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{corpus, Item, WorkspaceError};
use crate::digest;

pub const DEFAULT_AUDIT_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSet {
    pub audit_version_id: String,
    pub item_ids: Vec<String>,
    pub content_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_labels: Option<BTreeMap<String, Value>>,
    pub created: DateTime<Utc>,
    #[serde(default)]
    pub composition_notes: String,
}

/// Stratify on a metadata field, e.g. `kind` ∈ {proto, boundary, edge}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub key: String,
    pub proportions: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreezeOptions {
    pub size: usize,
    pub seed: u64,
    pub strata: Option<Strata>,
    pub consensus: Option<BTreeMap<String, Value>>,
    pub version_id: String,
    pub created: DateTime<Utc>,
}

impl FreezeOptions {
    pub fn new(seed: u64, created: DateTime<Utc>) -> Self {
        Self {
            size: DEFAULT_AUDIT_SIZE,
            seed,
            strata: None,
            consensus: None,
            version_id: format!("audit_v1_{}", created.format("%Y-%m-%d")),
            created,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditVerification {
    pub hash_match: bool,
    pub recomputed_hash: String,
    pub missing_items: Vec<String>,
}

#[derive(Serialize)]
struct CanonicalAudit<'a> {
    items: Vec<&'a Item>,
    consensus_labels: &'a Option<BTreeMap<String, Value>>,
}

/// Hash over the selected items sorted by id, plus consensus labels.
/// Version id and creation time are metadata, not content.
pub fn audit_content_hash(items: &[&Item], consensus: &Option<BTreeMap<String, Value>>) -> String {
    let mut sorted: Vec<&Item> = items.to_vec();
    sorted.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    digest::canonical_digest(&CanonicalAudit { items: sorted, consensus_labels: consensus }).expect("items serialize")
}

/// Largest-remainder apportionment of `size` over the proportions.
fn apportion(size: usize, proportions: &BTreeMap<String, f64>) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut remainders: Vec<(f64, String)> = Vec::new();
    for (k, &p) in proportions {
        let exact = p * size as f64;
        let floor = (exact + 1e-9).floor();
        counts.insert(k.clone(), floor as usize);
        remainders.push((exact - floor, k.clone()));
    }
    let mut left = size.saturating_sub(counts.values().sum());
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    for (_, k) in remainders {
        if left == 0 {
            break;
        }
        *counts.get_mut(&k).unwrap() += 1;
        left -= 1;
    }
    counts
}

fn seeded_pick(mut ids: Vec<String>, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    ids.sort();
    ids.shuffle(rng);
    ids.truncate(n);
    ids
}

pub fn freeze_audit_set(items: &[Item], options: &FreezeOptions) -> Result<AuditSet, WorkspaceError> {
    if options.size == 0 {
        return Err(WorkspaceError::InvariantViolation("audit size ≥ 1".into()));
    }
    if options.size > items.len() {
        return Err(WorkspaceError::SizeExceedsCorpus { requested: options.size, available: items.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut chosen: Vec<String> = match &options.strata {
        None => seeded_pick(items.iter().map(|i| i.item_id.clone()).collect(), options.size, &mut rng),
        Some(strata) => {
            let total: f64 = strata.proportions.values().sum();
            if (total - 1.0).abs() > 1e-9 || strata.proportions.values().any(|&p| p < 0.0) {
                return Err(WorkspaceError::InvariantViolation("strata proportions sum to 1".into()));
            }
            let mut pools: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for item in items {
                if let Some(v) = item.metadata.get(&strata.key) {
                    let key = v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
                    pools.entry(key).or_default().push(item.item_id.clone());
                }
            }
            let mut out = Vec::new();
            for (stratum, want) in apportion(options.size, &strata.proportions) {
                let pool = pools.remove(&stratum).unwrap_or_default();
                if pool.len() < want {
                    return Err(WorkspaceError::StrataInfeasible { stratum, requested: want, available: pool.len() });
                }
                out.extend(seeded_pick(pool, want, &mut rng));
            }
            out
        }
    };
    chosen.sort();
    let by_id: BTreeMap<&str, &Item> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let selected: Vec<&Item> = chosen.iter().map(|id| by_id[id.as_str()]).collect();
    let consensus = options.consensus.as_ref().map(|c| {
        c.iter()
            .filter(|(k, _)| by_id.contains_key(k.as_str()) && chosen.binary_search(k).is_ok())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect::<BTreeMap<_, _>>()
    });
    let notes = match &options.strata {
        Some(s) => format!(
            "seed {}; stratified on `{}`: {}",
            options.seed,
            s.key,
            s.proportions.iter().map(|(k, p)| format!("{k}={p}")).collect::<Vec<_>>().join(", ")
        ),
        None => format!("seed {}; simple random selection of {} from {}", options.seed, options.size, items.len()),
    };
    Ok(AuditSet {
        audit_version_id: options.version_id.clone(),
        content_hash: audit_content_hash(&selected, &consensus),
        item_ids: chosen,
        consensus_labels: consensus,
        created: options.created,
        composition_notes: notes,
    })
}

pub fn verify_audit_set(audit: &AuditSet, items: &[Item]) -> AuditVerification {
    let by_id: BTreeMap<&str, &Item> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let mut missing = Vec::new();
    let mut found = Vec::new();
    let mut seen = BTreeSet::new();
    for id in &audit.item_ids {
        if !seen.insert(id) {
            continue;
        }
        match by_id.get(id.as_str()) {
            Some(item) => found.push(*item),
            None => missing.push(id.clone()),
        }
    }
    let recomputed = audit_content_hash(&found, &audit.consensus_labels);
    AuditVerification {
        hash_match: missing.is_empty() && seen.len() == audit.item_ids.len() && recomputed == audit.content_hash,
        recomputed_hash: recomputed,
        missing_items: missing,
    }
}

/// Sidecar holding the audit metadata next to `audit.jsonl`.
pub fn audit_meta_path(audit_items_path: &Path) -> PathBuf {
    audit_items_path.with_extension("meta.json")
}

/// Write the audit items (JSONL, sorted by id) and the metadata sidecar.
pub fn save_audit_set(audit: &AuditSet, items: &[Item], audit_items_path: &Path) -> Result<(), WorkspaceError> {
    let by_id: BTreeMap<&str, &Item> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let selected: Vec<Item> = audit.item_ids.iter().filter_map(|id| by_id.get(id.as_str()).map(|i| (*i).clone())).collect();
    super::write_text(audit_items_path, &corpus::corpus_to_jsonl(&selected))?;
    let meta = serde_json::to_string_pretty(audit).expect("audit metadata serializes");
    super::write_text(&audit_meta_path(audit_items_path), &(meta + "\n"))
}

/// Load the audit metadata and the frozen item records.
pub fn load_audit_set(audit_items_path: &Path) -> Result<(AuditSet, Vec<Item>), WorkspaceError> {
    let meta_path = audit_meta_path(audit_items_path);
    let audit: AuditSet = serde_json::from_str(&super::read_text(&meta_path)?)
        .map_err(|e| WorkspaceError::MalformedDocument(format!("{}: {e}", meta_path.display())))?;
    let items = corpus::load_corpus(audit_items_path)?;
    Ok((audit, items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn corpus(n: usize) -> Vec<Item> {
        (0..n)
            .map(|i| {
                let mut it = Item::new(format!("item-{i:04}"), format!("text number {i}"));
                let kind = match i % 10 {
                    0 => "edge",
                    1..=3 => "boundary",
                    _ => "proto",
                };
                it.metadata.insert("kind".into(), Value::from(kind));
                it
            })
            .collect()
    }

    fn when() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 8, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn default_size_and_determinism() {
        let items = corpus(500);
        let a = freeze_audit_set(&items, &FreezeOptions::new(5678, when())).unwrap();
        assert_eq!(a.item_ids.len(), 100);
        assert_eq!(a.content_hash.len(), 64);
        let b = freeze_audit_set(&items, &FreezeOptions::new(5678, when())).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.audit_version_id, "audit_v1_2025-08-01");
    }

    #[test]
    fn whole_corpus_selection() {
        let items = corpus(40);
        let mut opts = FreezeOptions::new(1, when());
        opts.size = 40;
        let a = freeze_audit_set(&items, &opts).unwrap();
        opts.seed = 2;
        let b = freeze_audit_set(&items, &opts).unwrap();
        assert_eq!(a.item_ids, b.item_ids);
        assert_eq!(a.content_hash, b.content_hash);
        opts.size = 41;
        assert!(matches!(freeze_audit_set(&items, &opts), Err(WorkspaceError::SizeExceedsCorpus { .. })));
    }

    #[test]
    fn stratified_counts() {
        let items = corpus(500);
        let mut opts = FreezeOptions::new(9, when());
        opts.strata = Some(Strata {
            key: "kind".into(),
            proportions: [("proto".into(), 0.6), ("boundary".into(), 0.3), ("edge".into(), 0.1)].into_iter().collect(),
        });
        let a = freeze_audit_set(&items, &opts).unwrap();
        let by_id: BTreeMap<_, _> = items.iter().map(|i| (i.item_id.clone(), i)).collect();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for id in &a.item_ids {
            *counts.entry(by_id[id].metadata["kind"].as_str().unwrap().to_string()).or_default() += 1;
        }
        assert_eq!(counts["proto"], 60);
        assert_eq!(counts["boundary"], 30);
        assert_eq!(counts["edge"], 10);

        // 100 items hold only 10 edge cases; asking for 18 cannot work
        let small = corpus(100);
        opts.size = 30;
        opts.strata.as_mut().unwrap().proportions =
            [("proto".into(), 0.2), ("boundary".into(), 0.2), ("edge".into(), 0.6)].into_iter().collect();
        match freeze_audit_set(&small, &opts) {
            Err(WorkspaceError::StrataInfeasible { stratum, requested, available }) => {
                assert_eq!((stratum.as_str(), requested, available), ("edge", 18, 10));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn verification_detects_tampering_and_missing_items() {
        let mut items = corpus(50);
        let mut opts = FreezeOptions::new(3, when());
        opts.size = 20;
        let audit = freeze_audit_set(&items, &opts).unwrap();
        assert!(verify_audit_set(&audit, &items).hash_match);

        let victim = items.iter().position(|i| i.item_id == audit.item_ids[4]).unwrap();
        items[victim].text.push('!');
        assert!(!verify_audit_set(&audit, &items).hash_match);

        let gone = audit.item_ids[7].clone();
        items.retain(|i| i.item_id != gone);
        let v = verify_audit_set(&audit, &items);
        assert_eq!(v.missing_items, vec![gone]);
    }

    #[test]
    fn save_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let items = corpus(30);
        let mut opts = FreezeOptions::new(3, when());
        opts.size = 10;
        let audit = freeze_audit_set(&items, &opts).unwrap();
        let path = dir.path().join("audit.jsonl");
        save_audit_set(&audit, &items, &path).unwrap();
        let (back, frozen) = load_audit_set(&path).unwrap();
        assert_eq!(back, audit);
        assert!(verify_audit_set(&back, &frozen).hash_match);
    }

    proptest! {
        #[test]
        fn hash_ignores_record_order(seed in any::<u64>()) {
            let items = corpus(30);
            let mut shuffled = items.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let refs: Vec<&Item> = items.iter().collect();
            let srefs: Vec<&Item> = shuffled.iter().collect();
            prop_assert_eq!(audit_content_hash(&refs, &None), audit_content_hash(&srefs, &None));
        }
    }
}
