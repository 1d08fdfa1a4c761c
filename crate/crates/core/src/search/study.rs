use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_space, SearchContext};
use crate::error::{ClapsError, Result};
use crate::prompt::Prompt;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Some(Summary {
            n,
            min: sorted[0],
            median,
            mean: values.iter().sum::<f64>() / n as f64,
            max: sorted[n - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub reward: Summary,
    pub accuracy: Summary,
}

/// Scores `n` uniformly sampled prompts of length `prompt_len` from the space
/// on `ctx.val_set` and summarizes both metrics.
pub fn random_sample_study(
    ctx: &SearchContext<'_>,
    n: usize,
    prompt_len: usize,
    seed: u64,
) -> Result<StudySummary> {
    if n == 0 {
        return Err(ClapsError::Precondition(
            "sample count must be at least 1".into(),
        ));
    }
    check_space(ctx.space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompts: Vec<Prompt> = (0..n)
        .map(|_| ctx.random_prompt(prompt_len, &mut rng))
        .collect();
    let fits = ctx.evaluate(&prompts)?;
    let rewards: Vec<f64> = fits.iter().map(|f| f.reward).collect();
    let accs: Vec<f64> = fits.iter().map(|f| f.accuracy).collect();
    Ok(StudySummary {
        reward: Summary::of(&rewards).expect("n >= 1"),
        accuracy: Summary::of(&accs).expect("n >= 1"),
    })
}
