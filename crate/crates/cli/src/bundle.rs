//! Materials bundle: everything a reader needs to rerun or audit the study,
//! written as a deterministic zip with a hashed listing.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use annokit::digest::sha256_hex;
use annokit::orchestrator::{AnnotationRecord, Pass};
use annokit::workspace::{corpus_to_jsonl, Item};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use crate::context::Context;
use crate::error::{CmdError, CmdResult};
use crate::GlobalArgs;

/// Items included in the de-identified sample.
pub const SAMPLE_SIZE: usize = 10;

/// Values shorter than this are too generic to scan for.
const MIN_LEAK_LEN: usize = 3;

const ITEM_FIELDS: [&str; 4] = ["item_id", "text", "metadata", "gold_label"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeidentificationFailure {
    #[error("field `{0}` is flagged for removal but is a core item field that the bundle cannot drop")]
    CoreField(String),
    #[error("value of removed field `{field}` (item `{item_id}`) still appears in {entry}")]
    Leak { field: String, item_id: String, entry: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleListing {
    pub run_id: String,
    pub entries: Vec<BundleEntry>,
    /// SHA-256 over the `path  sha256` lines of all entries.
    pub bundle_digest: String,
}

pub const LISTING: &str = "CONTENTS.json";

fn listing_digest(entries: &[BundleEntry]) -> String {
    let lines: String = entries.iter().map(|e| format!("{}  {}\n", e.sha256, e.path)).collect();
    sha256_hex(lines.as_bytes())
}

/// Deterministic subset of item ids: lowest keyed hash first.
fn sample_ids(items: &[Item], seed: u64, n: usize) -> Vec<String> {
    let mut keyed: Vec<(String, &str)> = items.iter().map(|i| (sha256_hex(format!("{seed}:{}", i.item_id).as_bytes()), i.item_id.as_str())).collect();
    keyed.sort();
    let mut ids: Vec<String> = keyed.into_iter().take(n).map(|(_, id)| id.to_string()).collect();
    ids.sort();
    ids
}

/// Drop flagged metadata keys, then make sure none of the dropped values
/// survives anywhere else in the exported sample.
pub fn deidentify(items: &[Item], fields: &[String], outputs: &str) -> Result<Vec<Item>, DeidentificationFailure> {
    if let Some(f) = fields.iter().find(|f| ITEM_FIELDS.contains(&f.as_str())) {
        return Err(DeidentificationFailure::CoreField(f.clone()));
    }
    let mut removed: Vec<(String, String, String)> = Vec::new();
    let cleaned: Vec<Item> = items
        .iter()
        .map(|item| {
            let mut item = item.clone();
            for f in fields {
                if let Some(v) = item.metadata.remove(f) {
                    let s = match v {
                        Value::String(s) => s,
                        other => other.to_string(),
                    };
                    removed.push((f.clone(), item.item_id.clone(), s));
                }
            }
            item
        })
        .collect();
    let items_text = corpus_to_jsonl(&cleaned);
    for (field, item_id, value) in removed {
        if value.chars().count() < MIN_LEAK_LEN {
            continue;
        }
        for (entry, body) in [("sample/items.jsonl", items_text.as_str()), ("sample/outputs.jsonl", outputs)] {
            if body.contains(&value) {
                return Err(DeidentificationFailure::Leak { field, item_id, entry: entry.into() });
            }
        }
    }
    Ok(cleaned)
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    rows.into_iter().map(|r| serde_json::to_string(&r).expect("serializes") + "\n").collect()
}

fn read(path: &Path) -> CmdResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CmdError::config(e).context(format!("reading {}", path.display())))
}

fn collect_entries(ctx: &Context) -> CmdResult<BTreeMap<String, Vec<u8>>> {
    let m = &ctx.ws.manifest;
    let ids = &m.artifact_ids;
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for (name, id) in [("prompts", &ids.prompts_id), ("schema", &ids.schema_id), ("label_map", &ids.label_map_id), ("rubric", &ids.rubric_id)] {
        let file = Path::new(id).file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| id.clone());
        files.insert(format!("artifacts/{name}/{file}"), read(&ctx.input(id))?);
    }
    files.insert("manifest.yaml".into(), m.to_yaml().into_bytes());
    let decoding = json!({
        "estimation": { "temperature": m.decoding.temperature_estimation, "top_p": m.decoding.top_p, "max_tokens": m.decoding.max_tokens },
        "final": { "temperature": m.decoding.temperature_final, "top_p": m.decoding.top_p, "max_tokens": m.decoding.max_tokens },
        "providers": m.providers.iter().take(m.m).collect::<Vec<_>>(),
    });
    files.insert("decoding.json".into(), (serde_json::to_string_pretty(&decoding).expect("serializes") + "\n").into_bytes());

    let store = ctx.store();
    let (mut records, seal) = store.load_sealed(Pass::Estimation)?;
    if store.is_sealed(Pass::Final) {
        records.extend(store.load_sealed(Pass::Final)?.0);
    }
    records.sort_by_key(|r| (r.pass == Pass::Final, r.cell_id()));
    let seeds = json!({ "collection": m.seeds.collection, "shuffling": m.seeds.shuffling, "records_digest": seal.digest });
    files.insert("seeds.json".into(), (serde_json::to_string_pretty(&seeds).expect("serializes") + "\n").into_bytes());
    files.insert(
        "permutations.jsonl".into(),
        jsonl(records.iter().map(|r| json!({ "pass": r.pass, "item_id": r.item_id, "u": r.u, "s": r.s, "m": r.m, "seed": r.seed, "option_permutation": r.option_permutation })))
            .into_bytes(),
    );

    let items = ctx.items()?;
    let keep = sample_ids(&items, m.seeds.shuffling, SAMPLE_SIZE);
    let sample: Vec<Item> = items.into_iter().filter(|i| keep.contains(&i.item_id)).collect();
    let outputs = jsonl(records.iter().filter(|r| keep.contains(&r.item_id)).map(sample_output));
    let cleaned = deidentify(&sample, &m.outputs.deidentify_fields, &outputs).map_err(CmdError::config)?;
    files.insert("sample/items.jsonl".into(), corpus_to_jsonl(&cleaned).into_bytes());
    files.insert("sample/outputs.jsonl".into(), outputs.into_bytes());

    let reports = ctx.reports_dir();
    let mut names: Vec<PathBuf> = std::fs::read_dir(&reports)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    names.sort();
    for p in names {
        files.insert(format!("reports/{}", p.file_name().expect("file").to_string_lossy()), read(&p)?);
    }
    let tex = ctx.methods_tex_path();
    if tex.is_file() {
        files.insert("reports/methods_table.tex".into(), read(&tex)?);
    }
    Ok(files)
}

/// The record fields a reader needs; provider timestamps are left out so the
/// bundle is reproducible.
fn sample_output(r: &AnnotationRecord) -> Value {
    json!({
        "pass": r.pass, "item_id": r.item_id, "u": r.u, "s": r.s, "m": r.m, "prompt_id": r.prompt_id,
        "raw_text": r.raw_text, "extracted": r.extracted, "validity": r.validity, "retry_count": r.retry_count,
    })
}

pub fn write_bundle(path: &Path, run_id: &str, files: &BTreeMap<String, Vec<u8>>) -> CmdResult<BundleListing> {
    let entries: Vec<BundleEntry> = files.iter().map(|(p, b)| BundleEntry { path: p.clone(), sha256: sha256_hex(b), bytes: b.len() }).collect();
    let listing = BundleListing { run_id: run_id.to_string(), bundle_digest: listing_digest(&entries), entries };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default())
        .unix_permissions(0o644);
    let mut zip = ZipWriter::new(std::fs::File::create(path)?);
    let zerr = |e: zip::result::ZipError| CmdError::abort(e).context(format!("writing {}", path.display()));
    for (name, bytes) in files {
        zip.start_file(name.as_str(), opts).map_err(zerr)?;
        zip.write_all(bytes)?;
    }
    zip.start_file(LISTING, opts).map_err(zerr)?;
    zip.write_all((serde_json::to_string_pretty(&listing).expect("serializes") + "\n").as_bytes())?;
    zip.finish().map_err(zerr)?;
    Ok(listing)
}

/// Reopen a bundle and check every listed entry against its hash.
pub fn verify_bundle(path: &Path) -> CmdResult<BundleListing> {
    let zerr = |e: zip::result::ZipError| CmdError::abort(e).context(format!("reading {}", path.display()));
    let mut archive = ZipArchive::new(std::fs::File::open(path)?).map_err(zerr)?;
    let mut text = String::new();
    archive.by_name(LISTING).map_err(zerr)?.read_to_string(&mut text)?;
    let listing: BundleListing = serde_json::from_str(&text).map_err(CmdError::abort)?;
    let fail = |msg: String| CmdError::abort(anyhow::anyhow!(msg));
    if listing_digest(&listing.entries) != listing.bundle_digest {
        return Err(fail(format!("{}: listing digest mismatch", path.display())));
    }
    if archive.len() != listing.entries.len() + 1 {
        return Err(fail(format!("{}: {} entries but {} listed", path.display(), archive.len() - 1, listing.entries.len())));
    }
    for e in &listing.entries {
        let mut bytes = Vec::new();
        archive.by_name(&e.path).map_err(zerr)?.read_to_end(&mut bytes)?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(fail(format!("{}: entry {} does not match its hash", path.display(), e.path)));
        }
    }
    Ok(listing)
}

pub fn export(g: &GlobalArgs) -> CmdResult<BundleListing> {
    let ctx = Context::load(g)?;
    if !ctx.reports_dir().join("report.json").is_file() {
        return Err(CmdError::config_msg(format!("run `{}` has no report; run `report` first", ctx.run_id())));
    }
    let files = collect_entries(&ctx)?;
    let path = ctx.bundle_path();
    write_bundle(&path, ctx.run_id(), &files)?;
    let listing = verify_bundle(&path)?;
    println!("bundle {} ({} entries, digest {}) -> {}", ctx.run_id(), listing.entries.len(), listing.bundle_digest, path.display());
    Ok(listing)
}
