use std::collections::HashMap;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{Backend, ClassDistribution, ScoringInput};
use crate::error::{ClapsError, Result};
use crate::vocab::{TokenEmbeddings, TokenId};

#[derive(Clone, Debug)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(250),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.initial_backoff * self.factor.saturating_pow(retry)
    }
}

#[derive(Serialize)]
struct ScoreBody<'a> {
    inputs: Vec<&'a str>,
    classes: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    probs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model: String,
    pub embedding_dim: usize,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

enum Failure {
    Retryable(String),
    Fatal(ClapsError),
}

/// Client for a model server speaking the `/score`, `/info`, `/embeddings` protocol.
#[derive(Debug)]
pub struct HttpBackend {
    base: String,
    client: Client,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(endpoint: &str, retry: RetryPolicy) -> Result<Self> {
        let base = endpoint.trim_end_matches('/').to_string();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ClapsError::Config(format!(
                "endpoint `{endpoint}` is not an http(s) URL"
            )));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| ClapsError::Config(format!("http client: {e}")))?;
        Ok(HttpBackend {
            base,
            client,
            retry,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn with_retries<T>(
        &self,
        what: &str,
        mut call: impl FnMut() -> std::result::Result<T, Failure>,
    ) -> Result<T> {
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.retry.delay(attempt - 1);
                log::warn!("{what}: retrying in {delay:?} after: {last}");
                std::thread::sleep(delay);
            }
            match call() {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => last = msg,
            }
        }
        Err(ClapsError::OracleUnreachable {
            attempts,
            message: format!("{what}: {last}"),
        })
    }

    fn get_json<T: serde::de::DeserializeOwned>(&self, path: &str) -> Result<T> {
        let url = format!("{}{path}", self.base);
        self.with_retries(&format!("GET {path}"), || {
            let resp = self.client.get(&url).send().map_err(transport)?;
            read_json(resp)
        })
    }

    pub fn info(&self) -> Result<ModelInfo> {
        self.get_json("/info")
    }

    pub fn embeddings(&self, ids: &[TokenId]) -> Result<TokenEmbeddings> {
        if ids.is_empty() {
            return Err(ClapsError::Precondition("no token ids requested".into()));
        }
        let list: Vec<String> = ids.iter().map(|id| id.to_string()).collect();
        let resp: EmbeddingsResponse =
            self.get_json(&format!("/embeddings?ids={}", list.join(",")))?;
        let rows = ids
            .iter()
            .map(|id| {
                resp.vectors
                    .get(&id.to_string())
                    .map(|v| (*id, v.clone()))
                    .ok_or_else(|| {
                        ClapsError::Protocol(format!("embedding for id {id} missing from response"))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        TokenEmbeddings::new(resp.dim, rows).map_err(|e| ClapsError::Protocol(e.to_string()))
    }

    pub fn score_texts(
        &self,
        texts: &[&str],
        classes: &[String],
    ) -> Result<Vec<ClassDistribution>> {
        let url = format!("{}/score", self.base);
        let body = ScoreBody {
            inputs: texts.to_vec(),
            classes,
        };
        let resp: ScoreResponse = self.with_retries("POST /score", || {
            let resp = self
                .client
                .post(&url)
                .json(&body)
                .send()
                .map_err(transport)?;
            read_json(resp)
        })?;
        if resp.probs.len() != texts.len() {
            return Err(ClapsError::Protocol(format!(
                "/score returned {} rows for {} inputs",
                resp.probs.len(),
                texts.len()
            )));
        }
        resp.probs
            .into_iter()
            .map(|row| {
                if row.len() != classes.len() {
                    return Err(ClapsError::Protocol(format!(
                        "/score row has {} entries for {} classes",
                        row.len(),
                        classes.len()
                    )));
                }
                ClassDistribution::from_scores(row)
            })
            .collect()
    }
}

fn transport(e: reqwest::Error) -> Failure {
    Failure::Retryable(e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(
    resp: reqwest::blocking::Response,
) -> std::result::Result<T, Failure> {
    let status = resp.status();
    if status.is_server_error()
        || status == StatusCode::TOO_MANY_REQUESTS
        || status == StatusCode::REQUEST_TIMEOUT
    {
        return Err(Failure::Retryable(format!("server answered {status}")));
    }
    let text = resp.text().map_err(transport)?;
    if !status.is_success() {
        return Err(Failure::Fatal(ClapsError::Protocol(format!(
            "server answered {status}: {text}"
        ))));
    }
    serde_json::from_str(&text)
        .map_err(|e| Failure::Fatal(ClapsError::Protocol(format!("bad response body: {e}"))))
}

impl Backend for HttpBackend {
    fn identity(&self) -> String {
        format!("http:{}", self.base)
    }

    fn score(
        &self,
        inputs: &[&ScoringInput],
        classes: &[String],
    ) -> Result<Vec<ClassDistribution>> {
        let texts: Vec<&str> = inputs.iter().map(|i| i.text.as_str()).collect();
        self.score_texts(&texts, classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_from_250ms() {
        let r = RetryPolicy::default();
        assert_eq!(r.attempts, 3);
        assert_eq!(r.delay(0), Duration::from_millis(250));
        assert_eq!(r.delay(1), Duration::from_millis(500));
    }

    #[test]
    fn rejects_non_http_endpoints() {
        assert!(HttpBackend::new("localhost:8000", RetryPolicy::default()).is_err());
        let b = HttpBackend::new("http://localhost:8000/", RetryPolicy::default()).unwrap();
        assert_eq!(b.endpoint(), "http://localhost:8000");
    }

    #[test]
    fn unreachable_server_exhausts_retries() {
        // Bind then drop to get a port with nothing listening.
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let retry = RetryPolicy {
            attempts: 2,
            initial_backoff: Duration::from_millis(1),
            factor: 2,
        };
        let b = HttpBackend::new(&format!("http://127.0.0.1:{port}"), retry).unwrap();
        let err = b
            .score_texts(&["x"], &["a".into(), "b".into()])
            .unwrap_err();
        assert!(
            matches!(err, ClapsError::OracleUnreachable { attempts: 2, .. }),
            "{err}"
        );
    }
}
