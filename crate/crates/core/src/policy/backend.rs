//! Text-generation backends the policy delegates utterances to.

use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio_util::sync::CancellationToken;

use super::prompt::{PARTIAL_TURN_MARKER, USER_TURN_MARKER};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_chars: usize,
    pub stop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("TIMEOUT: no response within {0:?}")]
    Timeout(Duration),
    #[error("UNREACHABLE: {0}")]
    Unreachable(String),
    #[error("CANCELLED")]
    Cancelled,
    #[error("BAD_RESPONSE: {0}")]
    BadResponse(String),
}

impl BackendError {
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::Timeout(_) => "TIMEOUT",
            BackendError::Unreachable(_) => "UNREACHABLE",
            BackendError::Cancelled => "CANCELLED",
            BackendError::BadResponse(_) => "BAD_RESPONSE",
        }
    }
}

/// Cancellation handle for one generation. Remembers when it was first cancelled.
#[derive(Debug, Clone, Default)]
pub struct CancelToken {
    token: CancellationToken,
    cancelled_at: Arc<OnceLock<Instant>>,
}

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        let _ = self.cancelled_at.set(Instant::now());
        self.token.cancel();
    }

    pub fn is_cancelled(&self) -> bool {
        self.token.is_cancelled()
    }

    pub fn cancelled_at(&self) -> Option<Instant> {
        self.cancelled_at.get().copied()
    }

    pub async fn cancelled(&self) {
        self.token.cancelled().await
    }
}

#[async_trait]
pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> &'static str;

    async fn generate(
        &self,
        request: &GenerationRequest,
        cancel: &CancelToken,
    ) -> Result<GenerationResponse, BackendError>;
}

/// Utterance the stub appends after the `(re: <token>)` marker for early answers.
pub const STUB_ANSWER_TEMPLATE: &str = "You mean the director?";

/// One call observed by [`StubBackend`].
#[derive(Debug, Clone)]
pub struct StubCall {
    pub request: GenerationRequest,
    pub token: CancelToken,
    pub issued_at: Instant,
}

/// Deterministic offline backend.
///
/// For a prompt with an unfinished user turn it answers
/// `"(re: <last draft token>) You mean the director?"`; otherwise it echoes the
/// last finished user turn as `"Echo: <text>"`. Output is cut at `max_chars`.
#[derive(Debug, Default)]
pub struct StubBackend {
    latency: Option<Duration>,
    calls: Mutex<Vec<StubCall>>,
}

impl StubBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Delays every response; cancellation during the delay yields `CANCELLED`.
    pub fn with_latency(latency: Duration) -> Self {
        Self {
            latency: Some(latency),
            calls: Mutex::default(),
        }
    }

    pub fn calls(&self) -> Vec<StubCall> {
        self.calls.lock().expect("stub call log poisoned").clone()
    }

    /// The pure part of the stub: maps a prompt to its canned reply.
    pub fn reply_for(request: &GenerationRequest) -> Option<String> {
        let lines: Vec<&str> = request.prompt.lines().collect();
        let text = if let Some(partial) = lines.iter().rev().find_map(|l| l.strip_prefix(PARTIAL_TURN_MARKER)) {
            let last = partial.split_whitespace().last()?;
            format!("(re: {last}) {STUB_ANSWER_TEMPLATE}")
        } else {
            let user = lines.iter().rev().find_map(|l| l.strip_prefix(USER_TURN_MARKER))?;
            format!("Echo: {user}")
        };
        Some(text.chars().take(request.max_chars).collect())
    }
}

#[async_trait]
impl GenerationBackend for StubBackend {
    fn name(&self) -> &'static str {
        "stub"
    }

    async fn generate(
        &self,
        request: &GenerationRequest,
        cancel: &CancelToken,
    ) -> Result<GenerationResponse, BackendError> {
        self.calls.lock().expect("stub call log poisoned").push(StubCall {
            request: request.clone(),
            token: cancel.clone(),
            issued_at: Instant::now(),
        });
        if let Some(latency) = self.latency {
            tokio::select! {
                _ = tokio::time::sleep(latency) => {}
                _ = cancel.cancelled() => return Err(BackendError::Cancelled),
            }
        }
        if cancel.is_cancelled() {
            return Err(BackendError::Cancelled);
        }
        match Self::reply_for(request) {
            Some(text) if !text.is_empty() => Ok(GenerationResponse { text }),
            _ => Err(BackendError::BadResponse("prompt has no user turn".into())),
        }
    }
}

#[cfg(feature = "http-backend")]
pub use http::HttpBackend;

#[cfg(feature = "http-backend")]
mod http {
    use super::*;

    /// Backend reached over HTTP: `POST {base_url}/generate`.
    #[derive(Debug, Clone)]
    pub struct HttpBackend {
        client: reqwest::Client,
        endpoint: String,
        deadline: Duration,
    }

    impl HttpBackend {
        pub fn new(base_url: &str, deadline: Duration) -> Self {
            Self {
                client: reqwest::Client::new(),
                endpoint: format!("{}/generate", base_url.trim_end_matches('/')),
                deadline,
            }
        }

        async fn call(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            let response = self
                .client
                .post(&self.endpoint)
                .json(request)
                .send()
                .await
                .map_err(|e| BackendError::Unreachable(e.to_string()))?;
            if !response.status().is_success() {
                return Err(BackendError::BadResponse(format!("status {}", response.status())));
            }
            let body: GenerationResponse = response
                .json()
                .await
                .map_err(|e| BackendError::BadResponse(e.to_string()))?;
            if body.text.is_empty() {
                return Err(BackendError::BadResponse("empty text".into()));
            }
            Ok(body)
        }
    }

    #[async_trait]
    impl GenerationBackend for HttpBackend {
        fn name(&self) -> &'static str {
            "remote"
        }

        async fn generate(
            &self,
            request: &GenerationRequest,
            cancel: &CancelToken,
        ) -> Result<GenerationResponse, BackendError> {
            tokio::select! {
                _ = cancel.cancelled() => Err(BackendError::Cancelled),
                result = tokio::time::timeout(self.deadline, self.call(request)) => {
                    result.unwrap_or(Err(BackendError::Timeout(self.deadline)))
                }
            }
        }
    }
}
