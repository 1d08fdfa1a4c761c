//! Black-box scoring: the model only ever returns class probabilities.
//!
//! [`ScoringClient`] wraps a [`Backend`] with a response cache, query
//! accounting and bounded parallelism. One [`ScoreRequest`] is one
//! candidate-prompt evaluation over a labeled set; it counts once toward
//! `prompt_evals` when at least one of its inputs missed the cache.

mod cache;
mod http;
mod synthetic;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{CacheKey, ResponseCache};
pub use http::{HttpBackend, ModelInfo, RetryPolicy};
pub use synthetic::{SyntheticBackend, SyntheticOracleSpec};

use crate::error::{ClapsError, Result};
use crate::vocab::TokenId;

/// Class probabilities for one scored input; non-negative and summing to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    /// Normalizes raw non-negative class scores.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(ClapsError::Protocol(format!(
                "class scores must be finite and non-negative, got {scores:?}"
            )));
        }
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Err(ClapsError::Protocol("class scores sum to zero".into()));
        }
        Ok(ClassDistribution(
            scores.into_iter().map(|x| x / total).collect(),
        ))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Most probable class; ties go to the lowest class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = j;
            }
        }
        best
    }
}

/// One text to score, plus the structured provenance the synthetic backend
/// needs. HTTP backends only ever see `text`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoringInput {
    pub text: String,
    pub prompt: Vec<TokenId>,
    pub example_index: usize,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRequest {
    pub inputs: Vec<ScoringInput>,
    pub classes: Vec<String>,
}

impl ScoreRequest {
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(ClapsError::Precondition(
                "score request has no inputs".into(),
            ));
        }
        if self.classes.len() < 2 {
            return Err(ClapsError::Precondition(
                "score request needs at least two classes".into(),
            ));
        }
        Ok(())
    }
}

/// A model that turns inputs into class distributions.
pub trait Backend: Send + Sync {
    /// Stable identity of the model behind this backend; part of every cache key.
    fn identity(&self) -> String;

    fn score(&self, inputs: &[&ScoringInput], classes: &[String])
        -> Result<Vec<ClassDistribution>>;
}

#[derive(Debug, Default)]
pub struct QueryCounter {
    prompt_evals: AtomicU64,
    example_forwards: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySnapshot {
    pub prompt_evals: u64,
    pub example_forwards: u64,
}

impl QuerySnapshot {
    pub fn since(self, earlier: QuerySnapshot) -> QuerySnapshot {
        QuerySnapshot {
            prompt_evals: self.prompt_evals - earlier.prompt_evals,
            example_forwards: self.example_forwards - earlier.example_forwards,
        }
    }
}

impl QueryCounter {
    fn record(&self, prompt_evals: u64, example_forwards: u64) {
        self.prompt_evals.fetch_add(prompt_evals, Ordering::Relaxed);
        self.example_forwards
            .fetch_add(example_forwards, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> QuerySnapshot {
        QuerySnapshot {
            prompt_evals: self.prompt_evals.load(Ordering::Relaxed),
            example_forwards: self.example_forwards.load(Ordering::Relaxed),
        }
    }
}

pub struct ScoringClient {
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    counter: QueryCounter,
    pool: rayon::ThreadPool,
    parallelism: usize,
}

impl std::fmt::Debug for ScoringClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScoringClient")
            .field("backend", &self.backend.identity())
            .field("cached", &self.cache.is_some())
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

pub struct ScoringClientBuilder {
    backend: Arc<dyn Backend>,
    parallelism: usize,
    cache: bool,
    cache_dir: Option<std::path::PathBuf>,
}

impl ScoringClientBuilder {
    pub fn parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn cache(mut self, enabled: bool) -> Self {
        self.cache = enabled;
        self
    }

    /// Persist cached responses under `dir` so later processes reuse them.
    pub fn cache_dir(mut self, dir: Option<impl AsRef<Path>>) -> Self {
        self.cache_dir = dir.map(|d| d.as_ref().to_path_buf());
        self
    }

    pub fn build(self) -> Result<ScoringClient> {
        let identity = self.backend.identity();
        let cache = match (self.cache, self.cache_dir) {
            (false, _) => None,
            (true, None) => Some(ResponseCache::in_memory(&identity)),
            (true, Some(dir)) => Some(ResponseCache::persistent(&identity, &dir)?),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .thread_name(|i| format!("claps-score-{i}"))
            .build()
            .map_err(|e| ClapsError::Config(format!("thread pool: {e}")))?;
        Ok(ScoringClient {
            backend: self.backend,
            cache,
            counter: QueryCounter::default(),
            pool,
            parallelism: self.parallelism,
        })
    }
}

impl ScoringClient {
    pub fn builder(backend: Arc<dyn Backend>) -> ScoringClientBuilder {
        ScoringClientBuilder {
            backend,
            parallelism: 1,
            cache: true,
            cache_dir: None,
        }
    }

    /// In-memory cached client with parallelism 1.
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self::builder(backend).build().expect("single-thread pool")
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn identity(&self) -> String {
        self.backend.identity()
    }

    pub fn queries(&self) -> QuerySnapshot {
        self.counter.snapshot()
    }

    pub fn score_batch(&self, req: &ScoreRequest) -> Result<Vec<ClassDistribution>> {
        Ok(self
            .score_many(std::slice::from_ref(req))?
            .pop()
            .expect("one request in, one out"))
    }

    /// Scores several requests. Inputs are deduplicated across the whole batch
    /// before anything reaches the backend, so the counters do not depend on
    /// the parallelism setting or on completion order.
    pub fn score_many(&self, reqs: &[ScoreRequest]) -> Result<Vec<Vec<ClassDistribution>>> {
        for r in reqs {
            r.validate()?;
        }
        let identity = self.backend.identity();
        let keys: Vec<Vec<CacheKey>> = reqs
            .iter()
            .map(|r| {
                r.inputs
                    .iter()
                    .map(|inp| CacheKey::new(&identity, &inp.text, &r.classes))
                    .collect()
            })
            .collect();

        // Known results: cache hits, then fresh scores.
        let mut known: HashMap<CacheKey, ClassDistribution> = HashMap::new();
        // Each backend call: (request index, inputs to score there).
        let mut calls: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut pending: std::collections::HashSet<CacheKey> = Default::default();
        let mut missed_requests = 0u64;
        for (ri, req_keys) in keys.iter().enumerate() {
            let mut mine = Vec::new();
            for (ii, key) in req_keys.iter().enumerate() {
                if known.contains_key(key) {
                    continue;
                }
                if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(key)) {
                    known.insert(*key, hit);
                    continue;
                }
                if pending.insert(*key) {
                    mine.push(ii);
                }
            }
            // A request that only repeats inputs already queued by an earlier
            // request in this batch is not a new evaluation.
            if !mine.is_empty() {
                missed_requests += 1;
                calls.push((ri, mine));
            }
        }

        let fresh: Vec<Result<Vec<ClassDistribution>>> = self.pool.install(|| {
            calls
                .par_iter()
                .map(|(ri, idx)| {
                    let req = &reqs[*ri];
                    let inputs: Vec<&ScoringInput> = idx.iter().map(|&i| &req.inputs[i]).collect();
                    let out = self.backend.score(&inputs, &req.classes)?;
                    if out.len() != inputs.len() {
                        return Err(ClapsError::Protocol(format!(
                            "backend returned {} distributions for {} inputs",
                            out.len(),
                            inputs.len()
                        )));
                    }
                    if let Some(bad) = out.iter().find(|d| d.num_classes() != req.classes.len()) {
                        return Err(ClapsError::Protocol(format!(
                            "distribution over {} classes, expected {}",
                            bad.num_classes(),
                            req.classes.len()
                        )));
                    }
                    Ok(out)
                })
                .collect()
        });

        let mut scored = 0u64;
        let mut first_err = None;
        for ((ri, idx), result) in calls.iter().zip(fresh) {
            match result {
                Ok(dists) => {
                    for (&ii, dist) in idx.iter().zip(dists) {
                        let key = keys[*ri][ii];
                        if let Some(c) = &self.cache {
                            c.insert(key, dist.clone())?;
                        }
                        known.insert(key, dist);
                        scored += 1;
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_err {
            // Whatever did get scored is cached; the counter only reflects work
            // that completed.
            self.counter.record(0, scored);
            return Err(e);
        }
        self.counter.record(missed_requests, scored);

        Ok(keys
            .iter()
            .map(|req_keys| req_keys.iter().map(|k| known[k].clone()).collect())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(utils: &[(u32, f64)]) -> Arc<SyntheticBackend> {
        let spec = SyntheticOracleSpec {
            num_classes: 2,
            utilities: utils.iter().map(|&(id, u)| (TokenId(id), u)).collect(),
            offsets: [(0, 0.0)].into_iter().collect(),
            default_offset: None,
        };
        Arc::new(SyntheticBackend::new(spec).unwrap())
    }

    fn request(prompt: &[u32]) -> ScoreRequest {
        ScoreRequest {
            inputs: vec![ScoringInput {
                text: format!("{prompt:?} query"),
                prompt: prompt.iter().map(|&i| TokenId(i)).collect(),
                example_index: 0,
                label: 0,
            }],
            classes: vec!["yes".into(), "no".into()],
        }
    }

    #[test]
    fn zero_utility_gives_uniform() {
        let client = ScoringClient::new(synthetic(&[(0, 0.0)]));
        let out = client.score_batch(&request(&[0])).unwrap();
        assert_eq!(out[0].probs(), &[0.5, 0.5]);
    }

    #[test]
    fn unit_utility_matches_sigmoid() {
        let client = ScoringClient::new(synthetic(&[(0, 1.0)]));
        let out = client.score_batch(&request(&[0])).unwrap();
        let p = out[0].probs();
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((p[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
    }

    #[test]
    fn repeated_request_is_served_from_cache() {
        let client = ScoringClient::new(synthetic(&[(0, 1.0)]));
        let first = client.score_batch(&request(&[0])).unwrap();
        let before = client.queries();
        let second = client.score_batch(&request(&[0])).unwrap();
        assert_eq!(first, second);
        assert_eq!(client.queries(), before);
        assert_eq!(before.prompt_evals, 1);
    }

    #[test]
    fn duplicate_requests_in_one_batch_count_once() {
        for parallelism in [1, 4] {
            let client = ScoringClient::builder(synthetic(&[(0, 1.0), (1, 0.5)]))
                .parallelism(parallelism)
                .build()
                .unwrap();
            let reqs = vec![request(&[0]), request(&[1]), request(&[0])];
            let out = client.score_many(&reqs).unwrap();
            assert_eq!(out[0], out[2]);
            assert_eq!(client.queries().prompt_evals, 2);
            assert_eq!(client.queries().example_forwards, 2);
        }
    }

    #[test]
    fn uncached_client_counts_every_request() {
        let client = ScoringClient::builder(synthetic(&[(0, 1.0)]))
            .cache(false)
            .build()
            .unwrap();
        client.score_batch(&request(&[0])).unwrap();
        client.score_batch(&request(&[0])).unwrap();
        assert_eq!(client.queries().prompt_evals, 2);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let client = ScoringClient::new(synthetic(&[(0, 1.0)]));
        let mut r = request(&[0]);
        r.classes.pop();
        assert!(matches!(
            client.score_batch(&r),
            Err(ClapsError::Precondition(_))
        ));
        let r = ScoreRequest {
            inputs: vec![],
            classes: vec!["a".into(), "b".into()],
        };
        assert!(client.score_batch(&r).is_err());
    }

    #[test]
    fn normalization_and_argmax_ties() {
        let d = ClassDistribution::from_scores(vec![2.0, 6.0]).unwrap();
        assert_eq!(d.probs(), &[0.25, 0.75]);
        assert_eq!(d.argmax(), 1);
        assert_eq!(
            ClassDistribution::from_scores(vec![0.5, 0.5])
                .unwrap()
                .argmax(),
            0
        );
        assert!(ClassDistribution::from_scores(vec![0.0, 0.0]).is_err());
        assert!(ClassDistribution::from_scores(vec![-0.1, 1.0]).is_err());
    }
}
