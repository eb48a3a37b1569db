//! HTTP provider gateway.
//!
//! The wire format is adapter-local: the request body carries the rendered
//! prompt and decoding settings, and the reply is expected to be a JSON
//! object with a `text` field and optional `label_logprobs`. What matters
//! to the rest of the pipeline is the error taxonomy: timeouts, connection
//! failures, HTTP 429 and 5xx are transient; authentication failures,
//! other 4xx and malformed bodies are permanent.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{AnnotationRequest, AnnotatorError, AnnotatorGateway, ProviderStatus, RawResponse};
use crate::workspace::ProviderPin;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Name of the credential variable for a provider, e.g.
/// `ANNOKIT_OPENAI_API_KEY`.
pub fn credential_var(provider_name: &str) -> String {
    let slug: String = provider_name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("ANNOKIT_{slug}_API_KEY")
}

pub struct LiveGateway {
    pin: ProviderPin,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ProviderReply {
    text: String,
    #[serde(default)]
    label_logprobs: Option<BTreeMap<String, f64>>,
}

impl LiveGateway {
    pub fn new(pin: ProviderPin, endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { pin, endpoint: endpoint.into(), api_key, agent }
    }

    /// Build from a manifest pin, reading the credential from the
    /// environment. Fails before any request is made if the endpoint or
    /// credential is missing.
    pub fn from_pin(pin: &ProviderPin) -> Result<Self, AnnotatorError> {
        let endpoint = pin
            .endpoint
            .clone()
            .ok_or_else(|| AnnotatorError::NotConfigured(format!("provider `{}` has no endpoint", pin.label())))?;
        let var = credential_var(&pin.name);
        let key = std::env::var(&var).map_err(|_| AnnotatorError::NotConfigured(format!("credential variable {var} is not set")))?;
        Ok(Self::new(pin.clone(), endpoint, Some(key), DEFAULT_TIMEOUT))
    }
}

fn classify_status(code: u16) -> ProviderStatus {
    match code {
        200..=299 => ProviderStatus::Ok,
        408 | 429 | 500..=599 => ProviderStatus::TransientError,
        _ => ProviderStatus::PermanentError,
    }
}

impl AnnotatorGateway for LiveGateway {
    fn annotate(&self, request: &AnnotationRequest) -> RawResponse {
        let start = Instant::now();
        let body = json!({
            "model": self.pin.model,
            "version": self.pin.version,
            "prompt": request.rendered_sequence,
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "max_tokens": request.decoding.max_tokens,
            "seed": request.seed,
        });
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match call.send_json(&body) {
            Ok(r) => r,
            Err(e) => {
                let status = match e {
                    ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
                        ProviderStatus::TransientError
                    }
                    _ => ProviderStatus::PermanentError,
                };
                return RawResponse { latency_ms: start.elapsed().as_millis() as u64, ..RawResponse::failure(status, e.to_string()) };
            }
        };
        let latency_ms = start.elapsed().as_millis() as u64;
        let code = response.status().as_u16();
        let status = classify_status(code);
        if status != ProviderStatus::Ok {
            return RawResponse { latency_ms, ..RawResponse::failure(status, format!("HTTP {code}")) };
        }
        let reply = response
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())
            .and_then(|text| serde_json::from_str::<ProviderReply>(&text).map_err(|e| e.to_string()));
        match reply {
            Ok(r) => RawResponse { text: r.text, label_logprobs: r.label_logprobs, provider_status: ProviderStatus::Ok, latency_ms },
            Err(e) => RawResponse { latency_ms, ..RawResponse::failure(ProviderStatus::PermanentError, format!("malformed provider reply: {e}")) },
        }
    }

    fn describe(&self) -> String {
        format!("live:{}", self.pin.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotators::DecodingParams;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// One-shot HTTP server answering a single request with `status` and `body`.
    fn serve_once(status: &'static str, body: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut content_length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut buf = vec![0; content_length];
            reader.read_exact(&mut buf).unwrap();
            let mut stream = reader.into_inner();
            write!(stream, "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len())
                .unwrap();
        });
        format!("http://{addr}/annotate")
    }

    fn pin() -> ProviderPin {
        ProviderPin {
            name: "Mock".into(),
            model: "m".into(),
            version: "1".into(),
            precision: "default".into(),
            device: "cloud".into(),
            notes: String::new(),
            config: None,
            endpoint: None,
        }
    }

    fn request() -> AnnotationRequest {
        AnnotationRequest {
            item_id: "i".into(),
            prompt_id: "p".into(),
            prompt_index: 0,
            model_index: 0,
            sample_index: 0,
            rendered_sequence: "Is it civil?\nA\nB".into(),
            option_permutation: vec![0, 1],
            decoding: DecodingParams { temperature: 1.0, top_p: 1.0, max_tokens: 1 },
            seed: 1,
        }
    }

    fn call(status: &'static str, body: &'static str) -> RawResponse {
        let url = serve_once(status, body);
        LiveGateway::new(pin(), url, Some("k".into()), Duration::from_secs(5)).annotate(&request())
    }

    #[test]
    fn passthrough_ok() {
        let r = call("200 OK", r#"{"text":"A"}"#);
        assert_eq!(r.provider_status, ProviderStatus::Ok);
        assert_eq!(r.text, "A");
    }

    #[test]
    fn rate_limit_is_transient() {
        assert_eq!(call("429 Too Many Requests", "{}").provider_status, ProviderStatus::TransientError);
    }

    #[test]
    fn invalid_body_and_auth_are_permanent() {
        assert_eq!(call("200 OK", "not json").provider_status, ProviderStatus::PermanentError);
        assert_eq!(call("401 Unauthorized", "{}").provider_status, ProviderStatus::PermanentError);
    }

    #[test]
    fn missing_configuration_fails_early() {
        assert!(matches!(LiveGateway::from_pin(&pin()), Err(AnnotatorError::NotConfigured(_))));
        let mut p = pin();
        p.endpoint = Some("http://127.0.0.1:9/".into());
        p.name = "Unset Provider".into();
        assert!(matches!(LiveGateway::from_pin(&p), Err(AnnotatorError::NotConfigured(m)) if m.contains("ANNOKIT_UNSET_PROVIDER_API_KEY")));
    }
}
