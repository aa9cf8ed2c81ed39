//! Client for an external model server.
//!
//! `POST /v1/score` with `{"role", "player", "log", "candidate"}` answers
//! `{"win_probability": p}`; `POST /v1/score_batch` with `{"items": [...]}`
//! answers `{"probabilities": [...]}` in request order.

use std::io;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{OracleError, OracleKey, Score, ValueOracle};
use crate::engine::Role;

pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub role: Role,
    pub player: u8,
    pub log: String,
    pub candidate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub win_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBatchRequest {
    pub items: Vec<ScoreRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBatchResponse {
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub deadline: Duration,
    pub max_in_flight: usize,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        RemoteOptions { deadline: DEFAULT_DEADLINE, max_in_flight: 8 }
    }
}

/// Counting semaphore bounding concurrent requests to one endpoint.
#[derive(Debug)]
struct InFlight {
    max: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(max: usize) -> Self {
        InFlight { max: max.max(1), used: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("in-flight lock");
        while *used >= self.max {
            used = self.freed.wait(used).expect("in-flight lock");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone)]
pub struct RemoteOracle {
    base: String,
    key: OracleKey,
    agent: ureq::Agent,
    deadline: Duration,
    limiter: Arc<InFlight>,
}

impl RemoteOracle {
    pub fn new(endpoint: &str, key: OracleKey, options: RemoteOptions) -> Self {
        let limiter = Arc::new(InFlight::new(options.max_in_flight));
        Self::with_limiter(endpoint, key, &options, limiter)
    }

    fn with_limiter(endpoint: &str, key: OracleKey, options: &RemoteOptions, limiter: Arc<InFlight>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(options.deadline))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteOracle {
            base: endpoint.trim_end_matches('/').to_string(),
            key,
            agent,
            deadline: options.deadline,
            limiter,
        }
    }

    pub fn for_all_keys(endpoint: &str, options: RemoteOptions) -> Vec<RemoteOracle> {
        let limiter = Arc::new(InFlight::new(options.max_in_flight));
        OracleKey::all()
            .map(|key| Self::with_limiter(endpoint, key, &options, limiter.clone()))
            .collect()
    }

    fn request(&self, log: &str, candidate: &str) -> ScoreRequest {
        ScoreRequest {
            role: self.key.role(),
            player: self.key.player().number(),
            log: log.to_string(),
            candidate: candidate.to_string(),
        }
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, OracleError> {
        let _permit = self.limiter.acquire();
        let url = format!("{}{path}", self.base);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| self.map_err(e))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| self.map_err(e))?;
        if !(200..300).contains(&status) {
            return Err(OracleError::Protocol(format!("status {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| OracleError::Protocol(format!("{e} in {text:?}")))
    }

    fn map_err(&self, e: ureq::Error) -> OracleError {
        match e {
            ureq::Error::Timeout(_) => OracleError::Timeout(self.deadline),
            ureq::Error::Io(io) if io.kind() == io::ErrorKind::TimedOut => {
                OracleError::Timeout(self.deadline)
            }
            ureq::Error::Io(io)
                if matches!(
                    io.kind(),
                    io::ErrorKind::ConnectionRefused
                        | io::ErrorKind::ConnectionReset
                        | io::ErrorKind::NotConnected
                        | io::ErrorKind::AddrNotAvailable
                ) =>
            {
                OracleError::Unreachable(io.to_string())
            }
            ureq::Error::ConnectionFailed | ureq::Error::HostNotFound | ureq::Error::BadUri(_) => {
                OracleError::Unreachable(e.to_string())
            }
            other => OracleError::Protocol(other.to_string()),
        }
    }
}

impl ValueOracle for RemoteOracle {
    fn key(&self) -> OracleKey {
        self.key
    }

    fn score(&self, log: &str, candidate: &str) -> Result<Score, OracleError> {
        let resp: ScoreResponse = self.post("/v1/score", &self.request(log, candidate))?;
        Score::new(resp.win_probability)
    }

    fn score_batch(&self, log: &str, candidates: &[String]) -> Result<Vec<Score>, OracleError> {
        let body = ScoreBatchRequest { items: candidates.iter().map(|c| self.request(log, c)).collect() };
        let resp: ScoreBatchResponse = self.post("/v1/score_batch", &body)?;
        if resp.probabilities.len() != candidates.len() {
            return Err(OracleError::Protocol(format!(
                "{} probabilities for {} items",
                resp.probabilities.len(),
                candidates.len()
            )));
        }
        resp.probabilities.into_iter().map(Score::new).collect()
    }
}

/// One-shot score against `endpoint` with the default 10 s deadline.
pub fn remote_score(endpoint: &str, key: OracleKey, log: &str, candidate: &str) -> Result<Score, OracleError> {
    RemoteOracle::new(endpoint, key, RemoteOptions::default()).score(log, candidate)
}
