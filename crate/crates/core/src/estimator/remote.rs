//! HTTP client for an external progress scorer.
//!
//! Request: `POST <endpoint>` with `{"instruction", "actions", "observation"}`.
//! Response: `{"progress": <number in [0, 1]>}`.

use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::StateView;
use crate::model::Action;

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("remote scorer timed out after {0:?}")]
    Timeout(Duration),
    #[error("remote scorer unreachable: {0}")]
    Unreachable(String),
    #[error("remote scorer returned HTTP {0}")]
    Status(u16),
    #[error("remote scorer response malformed: {0}")]
    BadResponse(String),
    #[error("remote scorer progress {0} outside [0, 1]")]
    OutOfRange(f64),
}

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    instruction: &'a str,
    actions: &'a [Action],
    observation: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemoteScore {
    pub progress: f64,
    pub latency: Duration,
}

#[derive(Debug, Clone)]
pub struct RemoteScorer {
    endpoint: String,
    timeout: Duration,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteScorer {
            endpoint: endpoint.into(),
            timeout,
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn score(&self, instruction: &str, sv: &StateView) -> Result<RemoteScore, RemoteError> {
        let body = ScoreRequest {
            instruction,
            actions: &sv.action_history,
            observation: &sv.observation,
        };
        let started = Instant::now();
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| self.classify(e))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(RemoteError::Status(status));
        }
        let value: serde_json::Value =
            resp.body_mut()
                .read_json()
                .map_err(|e| match self.classify(e) {
                    RemoteError::Unreachable(msg) => RemoteError::BadResponse(msg),
                    other => other,
                })?;
        let latency = started.elapsed();
        let progress = value
            .get("progress")
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| {
                RemoteError::BadResponse(format!("no numeric \"progress\" in {value}"))
            })?;
        if !(0.0..=1.0).contains(&progress) {
            return Err(RemoteError::OutOfRange(progress));
        }
        Ok(RemoteScore { progress, latency })
    }

    /// Scores many states with at most `max_in_flight` concurrent requests.
    /// Results come back in input order.
    pub fn score_many(
        &self,
        requests: &[(String, StateView)],
        max_in_flight: usize,
    ) -> Vec<Result<RemoteScore, RemoteError>> {
        let workers = max_in_flight.max(1).min(requests.len().max(1));
        let mut out: Vec<Option<Result<RemoteScore, RemoteError>>> =
            (0..requests.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunks: Vec<_> = out
                .chunks_mut(requests.len().div_ceil(workers).max(1))
                .collect();
            let mut start = 0;
            for chunk in chunks {
                let begin = start;
                start += chunk.len();
                scope.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        let (instr, sv) = &requests[begin + k];
                        *slot = Some(self.score(instr, sv));
                    }
                });
            }
        });
        out.into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }

    fn classify(&self, e: ureq::Error) -> RemoteError {
        match e {
            ureq::Error::Timeout(_) => RemoteError::Timeout(self.timeout),
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
                RemoteError::Timeout(self.timeout)
            }
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::WouldBlock => {
                RemoteError::Timeout(self.timeout)
            }
            ureq::Error::StatusCode(code) => RemoteError::Status(code),
            ureq::Error::Json(err) => RemoteError::BadResponse(err.to_string()),
            other => RemoteError::Unreachable(other.to_string()),
        }
    }
}
