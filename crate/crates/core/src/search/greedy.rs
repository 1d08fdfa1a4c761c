use serde::{Deserialize, Serialize};

use super::{check_space, SearchContext, SearchResult, SearchStrategy, Tracker};
use crate::error::Result;
use crate::prompt::Prompt;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyConfig {
    pub prompt_len: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        GreedyConfig { prompt_len: 5 }
    }
}

/// Appends, one position at a time, the token that maximizes reward given the
/// prefix chosen so far. Costs exactly `prompt_len * |space|` evaluations on a
/// cold cache. With `prompt_len == 0` nothing is evaluated and the empty prompt
/// comes back with a reward of negative infinity.
pub fn greedy_search(ctx: &SearchContext<'_>, prompt_len: usize) -> Result<SearchResult> {
    check_space(ctx.space)?;
    let mut tracker = Tracker::new(ctx, "greedy");
    let mut prefix = Prompt::empty();
    let mut last = None;
    for step in 1..=prompt_len {
        let candidates: Vec<Prompt> = ctx
            .space
            .token_ids()
            .iter()
            .map(|&id| prefix.pushed(id))
            .collect();
        let fits = ctx.evaluate(&candidates)?;
        let mut pick = 0;
        for i in 1..candidates.len() {
            let (f, b) = (fits[i].reward, fits[pick].reward);
            let tie_lower_id =
                f == b && candidates[i].ids()[step - 1] < candidates[pick].ids()[step - 1];
            if f > b || tie_lower_id {
                pick = i;
            }
        }
        tracker.observe(&candidates[pick..=pick], &fits[pick..=pick]);
        tracker.end_epoch(step)?;
        prefix = candidates[pick].clone();
        last = Some(fits[pick]);
    }
    let mut result = tracker.finish();
    // The full-length prompt is the answer even if a shorter prefix scored higher.
    if let Some(f) = last {
        result.best_prompt = prefix;
        result.best_fitness = f.reward;
        result.best_accuracy = f.accuracy;
    }
    Ok(result)
}

impl SearchStrategy for GreedyConfig {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn search(&self, ctx: &SearchContext<'_>) -> Result<SearchResult> {
        greedy_search(ctx, self.prompt_len)
    }
}
