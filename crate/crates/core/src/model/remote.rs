use std::time::Duration;

use serde::Deserialize;
use ureq::Agent;

use super::{LogitProvider, LogitRequest, LogitResponse, ModelError};
use crate::tokenization::Vocabulary;

/// Exponential backoff for retryable failures (HTTP 503 and transport
/// errors).
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 5, initial_backoff: Duration::from_millis(20) }
    }
}

/// Client for the JSON-over-HTTP logit protocol:
///
/// * `POST /v1/logits` with `{"context":[int],"restrict":[int]|null}`
///   answers `{"scores":{"<id>":float}}`;
/// * `GET /v1/vocab` answers the vocabulary file;
/// * 413 means the context is too long, 503 means busy (retried).
pub struct RemoteModel {
    base: String,
    agent: Agent,
    vocab: Vocabulary,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct OverflowBody {
    len: usize,
    limit: usize,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl RemoteModel {
    /// Connect and fetch the served vocabulary.
    pub fn connect(base_url: &str, retry: RetryPolicy) -> Result<Self, ModelError> {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        let base = base_url.trim_end_matches('/').to_string();
        let url = format!("{base}/v1/vocab");
        let text = with_retries(retry, || match agent.get(&url).call() {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                match status {
                    200 => resp
                        .body_mut()
                        .read_to_string()
                        .map(Attempt::Done)
                        .map_err(|e| ModelError::MalformedResponse(e.to_string())),
                    503 => Ok(Attempt::Retry("503 busy".into())),
                    _ => Err(ModelError::BackendUnavailable(format!("GET /v1/vocab returned {status}"))),
                }
            }
            Err(e) => Ok(Attempt::Retry(e.to_string())),
        })?;
        let vocab = Vocabulary::parse(&text).map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
        Ok(Self { base, agent, vocab, retry })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }
}

fn with_retries<T>(
    policy: RetryPolicy,
    mut attempt: impl FnMut() -> Result<Attempt<T>, ModelError>,
) -> Result<T, ModelError> {
    let mut backoff = policy.initial_backoff;
    let mut last = String::new();
    for i in 0..=policy.max_retries {
        match attempt()? {
            Attempt::Done(v) => return Ok(v),
            Attempt::Retry(reason) => {
                log::debug!("retryable backend failure ({reason}), attempt {}", i + 1);
                last = reason;
            }
        }
        if i < policy.max_retries {
            std::thread::sleep(backoff);
            backoff *= 2;
        }
    }
    Err(ModelError::BackendUnavailable(format!(
        "gave up after {} retries: {last}",
        policy.max_retries
    )))
}

impl LogitProvider for RemoteModel {
    fn next_logits(&self, req: &LogitRequest) -> Result<LogitResponse, ModelError> {
        req.validate(self.vocab.size())?;
        let url = format!("{}/v1/logits", self.base);
        let response = with_retries(self.retry, || match self.agent.post(&url).send_json(req) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                match status {
                    200 => resp
                        .body_mut()
                        .read_json::<LogitResponse>()
                        .map(Attempt::Done)
                        .map_err(|e| ModelError::MalformedResponse(e.to_string())),
                    413 => {
                        let body: OverflowBody = resp
                            .body_mut()
                            .read_json()
                            .map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
                        Err(ModelError::ContextOverflow { len: body.len, limit: body.limit })
                    }
                    503 => Ok(Attempt::Retry("503 busy".into())),
                    400 => {
                        let text = resp.body_mut().read_to_string().unwrap_or_default();
                        Err(ModelError::InvalidRequest(text))
                    }
                    _ => Err(ModelError::BackendUnavailable(format!("POST /v1/logits returned {status}"))),
                }
            }
            Err(e) => Ok(Attempt::Retry(e.to_string())),
        })?;
        if let Some(restrict) = &req.restrict {
            if !response.scores.keys().eq(restrict.iter()) {
                return Err(ModelError::MalformedResponse("scores keys differ from restrict set".into()));
            }
        }
        Ok(response)
    }

    fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    fn describe(&self) -> String {
        format!("remote({})", self.base)
    }
}
