//! Cell execution with bounded retries on a worker pool.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::plan::{attempt_seed, Cell, Pass};
use super::render::render_prompt;
use super::{extract, AnnotationRecord, CallEnvelope, OrchestratorError, PinSnapshot, Validity};
use crate::annotators::{AnnotationRequest, AnnotatorGateway, DecodingParams, ProviderStatus};
use crate::workspace::{AnnotationSchema, Item, LabelMap, PromptEnsemble, ProviderPin};

pub const DEFAULT_ABORT_CEILING: f64 = 0.10;

/// Everything a cell needs besides its gateway.
pub struct RunContext<'a> {
    pub run_id: &'a str,
    pub pass: Pass,
    pub labels: &'a LabelMap,
    pub schema: &'a AnnotationSchema,
    pub prompts: &'a PromptEnsemble,
    pub items: &'a [Item],
    pub decoding: DecodingParams,
    pub collection_seed: u64,
    /// One pin per model, in model order.
    pub pins: &'a [ProviderPin],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecuteOptions {
    pub workers: usize,
    /// Abort once permanent failures exceed this share of the cells.
    pub abort_ceiling: f64,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8);
        Self { workers, abort_ceiling: DEFAULT_ABORT_CEILING }
    }
}

/// Receives finished cells on a single thread, in completion order.
pub trait RecordSink {
    fn accept(&mut self, record: &AnnotationRecord, calls: &[CallEnvelope]) -> Result<(), OrchestratorError>;
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<AnnotationRecord>,
    pub calls: Vec<CallEnvelope>,
}

impl RecordSink for MemorySink {
    fn accept(&mut self, record: &AnnotationRecord, calls: &[CallEnvelope]) -> Result<(), OrchestratorError> {
        self.records.push(record.clone());
        self.calls.extend_from_slice(calls);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub pass: Pass,
    pub cells: usize,
    pub valid: usize,
    pub invalid: usize,
    pub invalid_output_rate: f64,
    pub retries_total: u64,
    pub permanent_errors: usize,
    pub calls: u64,
}

/// Summary over a complete set of records.
pub fn summarize(run_id: &str, pass: Pass, records: &[AnnotationRecord]) -> RunSummary {
    let valid = records.iter().filter(|r| r.is_valid()).count();
    let retries_total: u64 = records.iter().map(|r| u64::from(r.retry_count)).sum();
    RunSummary {
        run_id: run_id.to_string(),
        pass,
        cells: records.len(),
        valid,
        invalid: records.len() - valid,
        invalid_output_rate: if records.is_empty() { 0.0 } else { (records.len() - valid) as f64 / records.len() as f64 },
        retries_total,
        permanent_errors: records.iter().filter(|r| r.provider_status == ProviderStatus::PermanentError).count(),
        calls: records.len() as u64 + retries_total,
    }
}

fn run_cell(
    cell: &Cell,
    item: &Item,
    gateway: &dyn AnnotatorGateway,
    ctx: &RunContext<'_>,
) -> Result<(AnnotationRecord, Vec<CallEnvelope>), OrchestratorError> {
    let id = &cell.id;
    let template = &ctx.prompts.templates[id.u - 1];
    let rendered = render_prompt(template, &item.text, &cell.option_permutation, ctx.labels, &ctx.prompts.option_separator)?;
    let mut calls = Vec::new();
    let mut last_reason = None;
    let mut last_text = String::new();
    let mut last_logprobs = None;
    let mut last_status = ProviderStatus::Ok;
    let mut last_seed = cell.derived_seed;
    let bound = ctx.schema.retry_bound;

    let record = |retry: u32, seed: u64, text: String, extracted, logprobs, validity, reason, status| AnnotationRecord {
        run_id: ctx.run_id.to_string(),
        pass: ctx.pass,
        item_id: id.item_id.clone(),
        u: id.u,
        s: id.s,
        m: id.m,
        prompt_id: template.prompt_id.clone(),
        option_permutation: cell.option_permutation.iter().map(|&j| ctx.labels.label(j).to_string()).collect(),
        seed,
        raw_text: text,
        extracted,
        label_logprobs: logprobs,
        validity,
        retry_count: retry,
        rejection_reason: reason,
        provider_status: status,
        provider: PinSnapshot::from(&ctx.pins[id.m - 1]),
        timestamp: Utc::now(),
    };

    for retry in 0..=bound {
        let seed = if retry == 0 { cell.derived_seed } else { attempt_seed(ctx.collection_seed, id, retry) };
        let request = AnnotationRequest {
            item_id: id.item_id.clone(),
            prompt_id: template.prompt_id.clone(),
            prompt_index: id.u,
            model_index: id.m,
            sample_index: id.s,
            rendered_sequence: rendered.clone(),
            option_permutation: cell.option_permutation.clone(),
            decoding: ctx.decoding.clone(),
            seed,
        };
        let response = gateway.annotate(&request);
        calls.push(CallEnvelope {
            item_id: id.item_id.clone(),
            u: id.u,
            s: id.s,
            m: id.m,
            attempt: retry,
            seed,
            rendered_sequence: rendered.clone(),
            response_text: response.text.clone(),
            label_logprobs: response.label_logprobs.clone(),
            provider_status: response.provider_status,
            latency_ms: response.latency_ms,
            timestamp: Utc::now(),
        });
        last_seed = seed;
        last_status = response.provider_status;
        last_logprobs = response.label_logprobs.clone();
        match response.provider_status {
            ProviderStatus::Ok => {
                let outcome = extract::extract(&response.text, ctx.schema, ctx.labels);
                if outcome.is_accepted() {
                    let r = record(retry, seed, response.text, outcome.value, response.label_logprobs, Validity::Valid, None, ProviderStatus::Ok);
                    return Ok((r, calls));
                }
                last_reason = outcome.reason;
                last_text = response.text;
            }
            ProviderStatus::TransientError => {
                last_reason = Some(format!("transient provider error: {}", response.text));
                last_text = response.text;
            }
            ProviderStatus::PermanentError => {
                let reason = Some(format!("permanent provider error: {}", response.text));
                let r = record(retry, seed, response.text, None, None, Validity::InvalidAfterRetries, reason, ProviderStatus::PermanentError);
                return Ok((r, calls));
            }
        }
    }
    let r = record(bound, last_seed, last_text, None, last_logprobs, Validity::InvalidAfterRetries, last_reason, last_status);
    Ok((r, calls))
}

/// Execute `cells`, handing each finished cell to `sink`. `gateways[m-1]`
/// serves model `m`. Completion order is unspecified; every cell yields
/// exactly one record. `total_cells` is the size of the whole plan, used
/// for the abort ceiling when resuming a partial run.
pub fn execute_plan(
    cells: &[Cell],
    total_cells: usize,
    gateways: &[&dyn AnnotatorGateway],
    ctx: &RunContext<'_>,
    options: &ExecuteOptions,
    sink: &mut dyn RecordSink,
) -> Result<usize, OrchestratorError> {
    let needed = cells.iter().map(|c| c.id.m).max().unwrap_or(0);
    if gateways.len() < needed || ctx.pins.len() < needed {
        return Err(OrchestratorError::GatewayCount { needed, got: gateways.len().min(ctx.pins.len()) });
    }
    let items: HashMap<&str, &Item> = ctx.items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    if let Some(c) = cells.iter().find(|c| !items.contains_key(c.id.item_id.as_str())) {
        return Err(OrchestratorError::UnknownItem(c.id.item_id.clone()));
    }
    if let Some(c) = cells.iter().find(|c| c.id.u == 0 || c.id.u > ctx.prompts.templates.len()) {
        return Err(OrchestratorError::MissingPlaceholder(format!("no template for prompt index {}", c.id.u)));
    }

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel();
    let workers = options.workers.max(1).min(cells.len().max(1));
    let mut permanent = 0usize;
    let mut written = 0usize;
    let mut failure: Option<OrchestratorError> = None;

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop, items) = (&next, &stop, &items);
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let result = run_cell(cell, items[cell.id.item_id.as_str()], gateways[cell.id.m - 1], ctx);
                if tx.send(result).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // single writer: everything reaches the sink from this thread
        for result in rx {
            if failure.is_some() {
                continue;
            }
            match result.and_then(|(record, calls)| {
                sink.accept(&record, &calls)?;
                Ok(record)
            }) {
                Ok(record) => {
                    written += 1;
                    if record.provider_status == ProviderStatus::PermanentError {
                        permanent += 1;
                        if permanent as f64 > options.abort_ceiling * total_cells as f64 {
                            failure = Some(OrchestratorError::AbortedRun { permanent, cells: total_cells, ceiling: options.abort_ceiling });
                            stop.store(true, Ordering::Relaxed);
                        }
                    }
                }
                Err(e) => {
                    failure = Some(e);
                    stop.store(true, Ordering::Relaxed);
                }
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(written),
    }
}
