use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_space, SearchContext, SearchResult, SearchStrategy, Tracker};
use crate::error::{ClapsError, Result};
use crate::prompt::Prompt;
use crate::reward::Fitness;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneticConfig {
    pub prompt_len: usize,
    pub population: usize,
    pub epochs: usize,
    pub mutation_count: usize,
    pub crossover_count: usize,
    pub elite_fraction: f64,
    /// Per-position resampling probability for mutants.
    pub mutation_prob: f64,
    pub seed: u64,
}

impl Default for GeneticConfig {
    fn default() -> Self {
        GeneticConfig {
            prompt_len: 5,
            population: 128,
            epochs: 30,
            mutation_count: 64,
            crossover_count: 64,
            elite_fraction: 0.10,
            mutation_prob: 0.2,
            seed: 0,
        }
    }
}

impl GeneticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.mutation_count + self.crossover_count != self.population {
            return Err(ClapsError::Config(format!(
                "mutation_count ({}) + crossover_count ({}) must equal population ({})",
                self.mutation_count, self.crossover_count, self.population
            )));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(ClapsError::Config(
                "elite_fraction must be in (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(ClapsError::Config("mutation_prob must be in [0, 1]".into()));
        }
        if self.prompt_len == 0 {
            return Err(ClapsError::Precondition(
                "prompt length must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.population as f64).ceil() as usize).max(1)
    }
}

/// Top `n` distinct prompts by reward. The sort is stable, so among equal
/// rewards earlier entries of `pool` win.
pub fn select_elites(pool: &[(Prompt, Fitness)], n: usize) -> Vec<(Prompt, Fitness)> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| pool[b].1.cmp_reward(&pool[a].1));
    let mut seen = HashSet::new();
    order
        .into_iter()
        .filter(|&i| seen.insert(&pool[i].0))
        .take(n)
        .map(|i| pool[i].clone())
        .collect()
}

pub fn genetic_search(ctx: &SearchContext<'_>, cfg: &GeneticConfig) -> Result<SearchResult> {
    cfg.validate()?;
    check_space(ctx.space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tracker = Tracker::new(ctx, "genetic");
    let ids = ctx.space.token_ids();

    let mut population: Vec<Prompt> = (0..cfg.population)
        .map(|_| ctx.random_prompt(cfg.prompt_len, &mut rng))
        .collect();
    let mut fits = ctx.evaluate(&population)?;
    tracker.observe(&population, &fits);
    tracker.end_epoch(0)?;

    let mut elites: Vec<(Prompt, Fitness)> = Vec::new();
    for epoch in 1..=cfg.epochs {
        // Previous elites stay in the parent pool, ahead of the newcomers on ties.
        let mut pool = std::mem::take(&mut elites);
        pool.extend(population.into_iter().zip(fits));
        elites = select_elites(&pool, cfg.elite_count());

        let mut next = Vec::with_capacity(cfg.population);
        for _ in 0..cfg.crossover_count {
            let a = &elites[rng.random_range(0..elites.len())].0;
            let b = &elites[rng.random_range(0..elites.len())].0;
            let child = a
                .ids()
                .iter()
                .zip(b.ids())
                .map(|(x, y)| if rng.random_bool(0.5) { *x } else { *y })
                .collect();
            next.push(Prompt(child));
        }
        for _ in 0..cfg.mutation_count {
            let parent = &elites[rng.random_range(0..elites.len())].0;
            let child = parent
                .ids()
                .iter()
                .map(|&x| {
                    if rng.random_bool(cfg.mutation_prob) {
                        ids[rng.random_range(0..ids.len())]
                    } else {
                        x
                    }
                })
                .collect();
            next.push(Prompt(child));
        }
        population = next;
        fits = ctx.evaluate(&population)?;
        tracker.observe(&population, &fits);
        tracker.end_epoch(epoch)?;
    }
    Ok(tracker.finish())
}

impl SearchStrategy for GeneticConfig {
    fn name(&self) -> &'static str {
        "genetic"
    }

    fn search(&self, ctx: &SearchContext<'_>) -> Result<SearchResult> {
        genetic_search(ctx, self)
    }
}
