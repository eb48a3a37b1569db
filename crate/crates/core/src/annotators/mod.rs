//! The annotator gateway contract and its implementations.
//!
//! A gateway turns one [`AnnotationRequest`] into one [`RawResponse`]. It
//! never retries: transient versus permanent failure is reported in
//! [`ProviderStatus`] and the orchestrator decides what to do.

#[cfg(feature = "live")]
pub mod live;
pub mod synthetic;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synthetic::{perturbed_copy, synth_annotate, SyntheticAnnotator, SyntheticGateway};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotatorError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid annotator: {0}")]
    InvalidAnnotator(String),
    #[error("gateway not configured: {0}")]
    NotConfigured(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub item_id: String,
    pub prompt_id: String,
    pub prompt_index: usize,
    pub model_index: usize,
    pub sample_index: usize,
    pub rendered_sequence: String,
    /// Label indices in the order they were shown.
    pub option_permutation: Vec<usize>,
    pub decoding: DecodingParams,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderStatus {
    Ok,
    TransientError,
    PermanentError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    /// Natural-log probability per label; labels with zero mass are omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_logprobs: Option<BTreeMap<String, f64>>,
    pub provider_status: ProviderStatus,
    pub latency_ms: u64,
}

impl RawResponse {
    pub fn ok(text: impl Into<String>) -> Self {
        Self { text: text.into(), label_logprobs: None, provider_status: ProviderStatus::Ok, latency_ms: 0 }
    }

    pub fn failure(status: ProviderStatus, detail: impl Into<String>) -> Self {
        Self { text: detail.into(), label_logprobs: None, provider_status: status, latency_ms: 0 }
    }
}

pub trait AnnotatorGateway: Send + Sync {
    fn annotate(&self, request: &AnnotationRequest) -> RawResponse;

    /// Short human-readable identity used in logs.
    fn describe(&self) -> String;
}

impl<G: AnnotatorGateway + ?Sized> AnnotatorGateway for Arc<G> {
    fn annotate(&self, request: &AnnotationRequest) -> RawResponse {
        (**self).annotate(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<G: AnnotatorGateway + ?Sized> AnnotatorGateway for Box<G> {
    fn annotate(&self, request: &AnnotationRequest) -> RawResponse {
        (**self).annotate(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Gateway backed by a closure; handy for scripted test doubles.
pub struct FnGateway<F> {
    name: String,
    f: F,
}

impl<F> FnGateway<F>
where
    F: Fn(&AnnotationRequest) -> RawResponse + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> AnnotatorGateway for FnGateway<F>
where
    F: Fn(&AnnotationRequest) -> RawResponse + Send + Sync,
{
    fn annotate(&self, request: &AnnotationRequest) -> RawResponse {
        (self.f)(request)
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}
