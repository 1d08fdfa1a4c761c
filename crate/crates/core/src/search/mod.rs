//! Derivative-free search over `space^K`.
//!
//! All strategies draw their random numbers in a fixed logical order and
//! only then hand a whole generation to the scoring client, so results do
//! not depend on how many scoring threads are in use.

mod genetic;
mod greedy;
mod pso;
mod study;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use parking_lot::Mutex;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use genetic::{genetic_search, select_elites, GeneticConfig};
pub use greedy::{greedy_search, GreedyConfig};
pub use pso::{pso_search, PsoConfig};
pub use study::{random_sample_study, StudySummary, Summary};

use crate::error::{ClapsError, Result};
use crate::oracle::QuerySnapshot;
use crate::prompt::Prompt;
use crate::reward::{Evaluator, FewShotSet, Fitness};
use crate::space::SearchSpace;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub epoch: usize,
    pub best_fitness: f64,
    pub best_accuracy: f64,
    pub prompt_evals: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub strategy: String,
    pub best_prompt: Prompt,
    /// Validation reward of `best_prompt`.
    pub best_fitness: f64,
    pub best_accuracy: f64,
    /// Best-so-far after every epoch (greedy: after every position).
    pub trajectory: Vec<TrajectoryPoint>,
    /// Queries issued during this search.
    pub query_counts: QuerySnapshot,
}

/// Line-delimited JSON log, one record per epoch.
pub struct RunLog {
    file: Mutex<File>,
}

#[derive(Serialize)]
struct LogRecord<'a> {
    strategy: &'a str,
    epoch: usize,
    best_fitness: f64,
    best_accuracy: f64,
    prompt: &'a str,
    token_ids: &'a Prompt,
    prompt_evals: u64,
    wall_ms: u128,
}

impl RunLog {
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ClapsError::io(format!("opening run log {}", path.display()), e))?;
        Ok(RunLog {
            file: Mutex::new(file),
        })
    }

    fn write(&self, rec: &LogRecord<'_>) -> Result<()> {
        let line = serde_json::to_string(rec).expect("log record serializes");
        writeln!(self.file.lock(), "{line}").map_err(|e| ClapsError::io("writing run log", e))
    }
}

pub struct SearchContext<'a> {
    pub evaluator: Evaluator<'a>,
    pub space: &'a SearchSpace,
    pub val_set: &'a FewShotSet,
    pub log: Option<&'a RunLog>,
}

impl<'a> SearchContext<'a> {
    pub fn new(evaluator: Evaluator<'a>, space: &'a SearchSpace, val_set: &'a FewShotSet) -> Self {
        SearchContext {
            evaluator,
            space,
            val_set,
            log: None,
        }
    }

    pub fn with_log(mut self, log: Option<&'a RunLog>) -> Self {
        self.log = log;
        self
    }

    fn evaluate(&self, prompts: &[Prompt]) -> Result<Vec<Fitness>> {
        self.evaluator.fitness_many(prompts, self.val_set)
    }

    fn random_prompt(&self, len: usize, rng: &mut impl Rng) -> Prompt {
        let ids = self.space.token_ids();
        Prompt(
            (0..len)
                .map(|_| ids[rng.random_range(0..ids.len())])
                .collect(),
        )
    }
}

pub trait SearchStrategy {
    fn name(&self) -> &'static str;
    fn search(&self, ctx: &SearchContext<'_>) -> Result<SearchResult>;
}

/// Strategy selection as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum StrategyConfig {
    Genetic(GeneticConfig),
    Greedy(GreedyConfig),
    Pso(PsoConfig),
}

impl StrategyConfig {
    fn inner(&self) -> &dyn SearchStrategy {
        match self {
            StrategyConfig::Genetic(c) => c,
            StrategyConfig::Greedy(c) => c,
            StrategyConfig::Pso(c) => c,
        }
    }
}

impl SearchStrategy for StrategyConfig {
    fn name(&self) -> &'static str {
        self.inner().name()
    }

    fn search(&self, ctx: &SearchContext<'_>) -> Result<SearchResult> {
        self.inner().search(ctx)
    }
}

/// Best-seen bookkeeping shared by the strategies.
struct Tracker<'c, 'a> {
    ctx: &'c SearchContext<'a>,
    strategy: &'static str,
    best: Option<(Prompt, Fitness)>,
    trajectory: Vec<TrajectoryPoint>,
    start_queries: QuerySnapshot,
    started: Instant,
}

impl<'c, 'a> Tracker<'c, 'a> {
    fn new(ctx: &'c SearchContext<'a>, strategy: &'static str) -> Self {
        Tracker {
            ctx,
            strategy,
            best: None,
            trajectory: Vec::new(),
            start_queries: ctx.evaluator.client.queries(),
            started: Instant::now(),
        }
    }

    /// Replaces the incumbent only on strictly higher reward; earlier prompts win ties.
    fn observe(&mut self, prompts: &[Prompt], fits: &[Fitness]) {
        for (p, f) in prompts.iter().zip(fits) {
            let better = match &self.best {
                None => true,
                Some((_, b)) => f.reward > b.reward,
            };
            if better {
                self.best = Some((p.clone(), *f));
            }
        }
    }

    fn end_epoch(&mut self, epoch: usize) -> Result<()> {
        let Some((prompt, fit)) = &self.best else {
            return Ok(());
        };
        let evals = self
            .ctx
            .evaluator
            .client
            .queries()
            .since(self.start_queries)
            .prompt_evals;
        self.trajectory.push(TrajectoryPoint {
            epoch,
            best_fitness: fit.reward,
            best_accuracy: fit.accuracy,
            prompt_evals: evals,
        });
        if let Some(log) = self.ctx.log {
            let surface = prompt.surface(self.ctx.evaluator.vocab, self.ctx.evaluator.marker)?;
            log.write(&LogRecord {
                strategy: self.strategy,
                epoch,
                best_fitness: fit.reward,
                best_accuracy: fit.accuracy,
                prompt: &surface,
                token_ids: prompt,
                prompt_evals: evals,
                wall_ms: self.started.elapsed().as_millis(),
            })?;
        }
        Ok(())
    }

    fn finish(self) -> SearchResult {
        let queries = self
            .ctx
            .evaluator
            .client
            .queries()
            .since(self.start_queries);
        let (best_prompt, fit) = self.best.unwrap_or((
            Prompt::empty(),
            Fitness {
                reward: f64::NEG_INFINITY,
                accuracy: 0.0,
            },
        ));
        SearchResult {
            strategy: self.strategy.to_string(),
            best_prompt,
            best_fitness: fit.reward,
            best_accuracy: fit.accuracy,
            trajectory: self.trajectory,
            query_counts: queries,
        }
    }
}

fn check_space(space: &SearchSpace) -> Result<()> {
    if space.is_empty() {
        return Err(ClapsError::EmptySpace("search space is empty".into()));
    }
    Ok(())
}
