//! On-disk layout of a collection run.
//!
//! Records go to `<dumps>/p{u}_m{m}.jsonl` (prefixed `final_` for the final
//! pass), one JSON line per cell, appended by the single writer thread and
//! flushed per record so an interrupted run can be resumed. Call envelopes
//! go to `<logs>/calls.jsonl`. Sealing rewrites the record files in plan
//! order and writes a `SEALED` marker carrying a digest over the records
//! with timestamps blanked, so two replays of the same plan seal to the
//! same digest.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::execute::{execute_plan, summarize, ExecuteOptions, RecordSink, RunContext, RunSummary};
use super::plan::{CellId, Pass, RunPlan};
use super::{AnnotationRecord, CallEnvelope, OrchestratorError};
use crate::annotators::AnnotatorGateway;
use crate::digest::canonical_digest;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SealMarker {
    pub run_id: String,
    pub pass: Pass,
    pub digest: String,
    pub records: usize,
    pub sealed_at: DateTime<Utc>,
    pub summary: RunSummary,
}

/// Digest over records sorted by cell with timestamps blanked.
pub fn records_digest(records: &[AnnotationRecord]) -> String {
    let mut sorted: Vec<AnnotationRecord> = records.to_vec();
    sorted.sort_by_key(|r| r.cell_id());
    for r in &mut sorted {
        r.timestamp = DateTime::<Utc>::UNIX_EPOCH;
    }
    canonical_digest(&sorted).expect("records serialize")
}

#[derive(Debug, Clone)]
pub struct RunStore {
    pub run_id: String,
    pub dumps_dir: PathBuf,
    pub logs_dir: PathBuf,
    pub out_root: PathBuf,
}

fn prefix(pass: Pass) -> &'static str {
    match pass {
        Pass::Estimation => "",
        Pass::Final => "final_",
    }
}

impl RunStore {
    pub fn new(run_id: impl Into<String>, out_root: impl Into<PathBuf>, dumps_dir: impl Into<PathBuf>, logs_dir: impl Into<PathBuf>) -> Self {
        Self { run_id: run_id.into(), out_root: out_root.into(), dumps_dir: dumps_dir.into(), logs_dir: logs_dir.into() }
    }

    pub fn raw_path(&self, pass: Pass, u: usize, m: usize) -> PathBuf {
        self.dumps_dir.join(format!("{}p{u}_m{m}.jsonl", prefix(pass)))
    }

    pub fn sealed_path(&self, pass: Pass) -> PathBuf {
        self.dumps_dir.join(format!("{}SEALED.json", prefix(pass)))
    }

    pub fn calls_path(&self) -> PathBuf {
        self.logs_dir.join("calls.jsonl")
    }

    pub fn summary_path(&self, pass: Pass) -> PathBuf {
        self.out_root.join(format!("{}run_summary.json", prefix(pass)))
    }

    pub fn is_sealed(&self, pass: Pass) -> bool {
        self.sealed_path(pass).exists()
    }

    fn raw_files(&self, pass: Pass) -> Result<Vec<PathBuf>, OrchestratorError> {
        if !self.dumps_dir.exists() {
            return Ok(vec![]);
        }
        let pre = prefix(pass);
        let mut files = Vec::new();
        for entry in fs::read_dir(&self.dumps_dir).map_err(io_err(&self.dumps_dir))? {
            let path = entry.map_err(io_err(&self.dumps_dir))?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(rest) = name.strip_prefix(pre).and_then(|r| r.strip_prefix('p')) else { continue };
            // estimation files must not swallow the final pass's `final_` files
            if rest.ends_with(".jsonl") && rest.contains("_m") && rest.starts_with(|c: char| c.is_ascii_digit()) {
                files.push(path);
            }
        }
        files.sort();
        Ok(files)
    }

    /// All records of a pass, in file order. A truncated final line (an
    /// interrupted write) is dropped; any other malformed line is an error.
    pub fn load_records(&self, pass: Pass) -> Result<Vec<AnnotationRecord>, OrchestratorError> {
        let mut out = Vec::new();
        for path in self.raw_files(pass)? {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let complete = text.ends_with('\n');
            let lines: Vec<&str> = text.lines().collect();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<AnnotationRecord>(line) {
                    Ok(r) => out.push(r),
                    Err(_) if i + 1 == lines.len() && !complete => {}
                    Err(e) => {
                        return Err(OrchestratorError::CorruptLog { path: path.display().to_string(), message: format!("line {}: {e}", i + 1) })
                    }
                }
            }
        }
        Ok(out)
    }

    /// Records of a sealed pass (grouped by file, plan order within each
    /// file), checked against the marker's digest.
    pub fn load_sealed(&self, pass: Pass) -> Result<(Vec<AnnotationRecord>, SealMarker), OrchestratorError> {
        let path = self.sealed_path(pass);
        if !path.exists() {
            return Err(OrchestratorError::NotSealed(self.run_id.clone()));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let marker: SealMarker =
            serde_json::from_str(&text).map_err(|e| OrchestratorError::CorruptLog { path: path.display().to_string(), message: e.to_string() })?;
        let records = self.load_records(pass)?;
        let digest = records_digest(&records);
        if digest != marker.digest {
            return Err(OrchestratorError::CorruptLog {
                path: self.dumps_dir.display().to_string(),
                message: format!("sealed digest {} does not match records ({digest})", marker.digest),
            });
        }
        Ok((records, marker))
    }

    pub fn load_calls(&self) -> Result<Vec<CallEnvelope>, OrchestratorError> {
        let path = self.calls_path();
        if !path.exists() {
            return Ok(vec![]);
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
    }

    /// Run the cells of `plan` that have no record yet, then seal.
    ///
    /// Without `resume`, existing records are an error. A sealed pass is
    /// never reopened. On abort the partial log is kept for a later resume.
    pub fn collect(
        &self,
        plan: &RunPlan,
        gateways: &[&dyn AnnotatorGateway],
        ctx: &RunContext<'_>,
        options: &ExecuteOptions,
        resume: bool,
    ) -> Result<RunSummary, OrchestratorError> {
        if self.is_sealed(plan.pass) {
            return Err(OrchestratorError::Sealed(self.run_id.clone()));
        }
        let existing = self.load_records(plan.pass)?;
        if !existing.is_empty() && !resume {
            return Err(OrchestratorError::RunExists(self.run_id.clone()));
        }
        let done: HashSet<CellId> = existing.iter().map(|r| r.cell_id()).collect();
        let todo: Vec<_> = plan.cells.iter().filter(|c| !done.contains(&c.id)).cloned().collect();
        // rewrite files so a truncated tail line does not precede new appends
        if !existing.is_empty() {
            self.rewrite(plan.pass, &existing)?;
        }
        fs::create_dir_all(&self.dumps_dir).map_err(io_err(&self.dumps_dir))?;
        fs::create_dir_all(&self.logs_dir).map_err(io_err(&self.logs_dir))?;
        let mut sink = FileSink::new(self, plan.pass)?;
        let result = execute_plan(&todo, plan.cells.len(), gateways, ctx, options, &mut sink);
        sink.flush()?;
        result?;
        self.seal(plan)
    }

    fn rewrite(&self, pass: Pass, records: &[AnnotationRecord]) -> Result<(), OrchestratorError> {
        let mut groups: BTreeMap<(usize, usize), Vec<&AnnotationRecord>> = BTreeMap::new();
        for r in records {
            groups.entry((r.u, r.m)).or_default().push(r);
        }
        for old in self.raw_files(pass)? {
            fs::remove_file(&old).map_err(io_err(&old))?;
        }
        for ((u, m), rs) in groups {
            let path = self.raw_path(pass, u, m);
            let tmp = path.with_extension("jsonl.tmp");
            let mut body = String::new();
            for r in rs {
                body.push_str(&serde_json::to_string(r).expect("record serializes"));
                body.push('\n');
            }
            fs::write(&tmp, body).map_err(io_err(&tmp))?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        Ok(())
    }

    /// Put the records in plan order (first record per cell wins), write the
    /// marker and the run summary.
    pub fn seal(&self, plan: &RunPlan) -> Result<RunSummary, OrchestratorError> {
        let mut by_cell: BTreeMap<CellId, AnnotationRecord> = BTreeMap::new();
        for r in self.load_records(plan.pass)? {
            by_cell.entry(r.cell_id()).or_insert(r);
        }
        let ordered: Vec<AnnotationRecord> = plan.cells.iter().filter_map(|c| by_cell.remove(&c.id)).collect();
        if ordered.len() != plan.cells.len() {
            return Err(OrchestratorError::CorruptLog {
                path: self.dumps_dir.display().to_string(),
                message: format!("{} of {} cells have records", ordered.len(), plan.cells.len()),
            });
        }
        self.rewrite(plan.pass, &ordered)?;
        let summary = summarize(&self.run_id, plan.pass, &ordered);
        let marker = SealMarker {
            run_id: self.run_id.clone(),
            pass: plan.pass,
            digest: records_digest(&ordered),
            records: ordered.len(),
            sealed_at: Utc::now(),
            summary: summary.clone(),
        };
        let path = self.sealed_path(plan.pass);
        fs::write(&path, serde_json::to_string_pretty(&marker).expect("marker serializes")).map_err(io_err(&path))?;
        fs::create_dir_all(&self.out_root).map_err(io_err(&self.out_root))?;
        let spath = self.summary_path(plan.pass);
        fs::write(&spath, serde_json::to_string_pretty(&summary).expect("summary serializes")).map_err(io_err(&spath))?;
        Ok(summary)
    }
}

struct FileSink<'a> {
    store: &'a RunStore,
    pass: Pass,
    writers: BTreeMap<(usize, usize), BufWriter<File>>,
    calls: BufWriter<File>,
}

fn append(path: &Path) -> Result<BufWriter<File>, OrchestratorError> {
    let f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    Ok(BufWriter::new(f))
}

impl<'a> FileSink<'a> {
    fn new(store: &'a RunStore, pass: Pass) -> Result<Self, OrchestratorError> {
        Ok(Self { store, pass, writers: BTreeMap::new(), calls: append(&store.calls_path())? })
    }

    fn flush(&mut self) -> Result<(), OrchestratorError> {
        for ((u, m), w) in &mut self.writers {
            w.flush().map_err(io_err(&self.store.raw_path(self.pass, *u, *m)))?;
        }
        self.calls.flush().map_err(io_err(&self.store.calls_path()))
    }
}

impl RecordSink for FileSink<'_> {
    fn accept(&mut self, record: &AnnotationRecord, calls: &[CallEnvelope]) -> Result<(), OrchestratorError> {
        let calls_path = self.store.calls_path();
        for c in calls {
            let line = serde_json::to_string(c).expect("envelope serializes");
            writeln!(self.calls, "{line}").map_err(io_err(&calls_path))?;
        }
        let key = (record.u, record.m);
        let path = self.store.raw_path(self.pass, record.u, record.m);
        let w = match self.writers.entry(key) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(append(&path)?),
        };
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(&path))?;
        // record lines reach disk before the next cell is acknowledged
        w.flush().map_err(io_err(&path))
    }
}
