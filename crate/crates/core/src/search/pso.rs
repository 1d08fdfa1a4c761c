use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_space, SearchContext, SearchResult, SearchStrategy, Tracker};
use crate::error::{ClapsError, Result};
use crate::prompt::Prompt;
use crate::reward::Fitness;

/// Discrete particle swarm. Each position of each particle independently
/// copies the particle-best token, copies the global-best token, resamples
/// uniformly from the space, or stays put.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub prompt_len: usize,
    pub swarm_size: usize,
    pub epochs: usize,
    pub p_personal: f64,
    pub p_global: f64,
    pub p_random: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            prompt_len: 5,
            swarm_size: 32,
            epochs: 40,
            p_personal: 0.3,
            p_global: 0.3,
            p_random: 0.05,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(ClapsError::Config("swarm_size must be at least 2".into()));
        }
        let ps = [self.p_personal, self.p_global, self.p_random];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || ps.iter().sum::<f64>() > 1.0 {
            return Err(ClapsError::Config(
                "move probabilities must be in [0, 1] and sum to at most 1".into(),
            ));
        }
        if self.prompt_len == 0 {
            return Err(ClapsError::Precondition(
                "prompt length must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

pub fn pso_search(ctx: &SearchContext<'_>, cfg: &PsoConfig) -> Result<SearchResult> {
    cfg.validate()?;
    check_space(ctx.space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tracker = Tracker::new(ctx, "pso");
    let ids = ctx.space.token_ids();

    let mut particles: Vec<Prompt> = (0..cfg.swarm_size)
        .map(|_| ctx.random_prompt(cfg.prompt_len, &mut rng))
        .collect();
    let fits = ctx.evaluate(&particles)?;
    tracker.observe(&particles, &fits);
    tracker.end_epoch(0)?;

    let mut personal: Vec<(Prompt, Fitness)> = particles
        .iter()
        .cloned()
        .zip(fits.iter().copied())
        .collect();
    let mut global = best_of(&personal);

    for epoch in 1..=cfg.epochs {
        for (particle, (pbest, _)) in particles.iter_mut().zip(&personal) {
            for (k, slot) in particle.0.iter_mut().enumerate() {
                let r: f64 = rng.random();
                if r < cfg.p_personal {
                    *slot = pbest.ids()[k];
                } else if r < cfg.p_personal + cfg.p_global {
                    *slot = global.0.ids()[k];
                } else if r < cfg.p_personal + cfg.p_global + cfg.p_random {
                    *slot = ids[rng.random_range(0..ids.len())];
                }
            }
        }
        let fits = ctx.evaluate(&particles)?;
        for ((p, f), pb) in particles.iter().zip(&fits).zip(personal.iter_mut()) {
            if f.reward > pb.1.reward {
                *pb = (p.clone(), *f);
            }
        }
        let candidate = best_of(&personal);
        if candidate.1.reward > global.1.reward {
            global = candidate;
        }
        tracker.observe(&particles, &fits);
        tracker.end_epoch(epoch)?;
    }
    Ok(tracker.finish())
}

/// Highest reward; the lowest particle index wins ties.
fn best_of(personal: &[(Prompt, Fitness)]) -> (Prompt, Fitness) {
    let mut best = &personal[0];
    for p in &personal[1..] {
        if p.1.reward > best.1.reward {
            best = p;
        }
    }
    best.clone()
}

impl SearchStrategy for PsoConfig {
    fn name(&self) -> &'static str {
        "pso"
    }

    fn search(&self, ctx: &SearchContext<'_>) -> Result<SearchResult> {
        pso_search(ctx, self)
    }
}
