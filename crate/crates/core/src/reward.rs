//! Few-shot reward (mean negative cross-entropy) and per-token incremental influence.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ClapsError, Result};
use crate::harness::dataset::Record;
use crate::harness::template::{apply_template, TemplateSpec};
use crate::oracle::{ClassDistribution, ScoreRequest, ScoringClient, ScoringInput};
use crate::prompt::Prompt;
use crate::vocab::{TokenId, Vocabulary, WordMarker};

/// Probability floor applied before taking the log.
pub const PROB_FLOOR: f64 = 1e-9;

/// Labeled examples bound to the template they are formatted with.
#[derive(Clone, Debug)]
pub struct FewShotSet {
    name: String,
    examples: Vec<Record>,
    template: Arc<TemplateSpec>,
    shots_per_class: usize,
}

impl FewShotSet {
    pub fn new(
        name: &str,
        examples: Vec<Record>,
        template: Arc<TemplateSpec>,
        shots_per_class: usize,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(ClapsError::Data(format!("few-shot set `{name}` is empty")));
        }
        let classes = template.num_classes();
        if let Some(r) = examples.iter().find(|r| r.label >= classes) {
            return Err(ClapsError::Data(format!(
                "label {} out of range for {classes} classes in `{name}`",
                r.label
            )));
        }
        Ok(FewShotSet {
            name: name.to_string(),
            examples,
            template,
            shots_per_class,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn examples(&self) -> &[Record] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn template(&self) -> &TemplateSpec {
        &self.template
    }

    pub fn num_classes(&self) -> usize {
        self.template.num_classes()
    }

    pub fn shots_per_class(&self) -> usize {
        self.shots_per_class
    }
}

/// Mean log-probability of the true class, in nats. Always `<= 0`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardScore(pub f64);

impl RewardScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Reward and accuracy of one prompt on one set, derived from a single scoring pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub reward: f64,
    pub accuracy: f64,
}

impl Fitness {
    /// Orders by reward only.
    pub fn cmp_reward(&self, other: &Fitness) -> Ordering {
        self.reward.total_cmp(&other.reward)
    }
}

pub fn mean_reward(dists: &[ClassDistribution], examples: &[Record]) -> f64 {
    let total: f64 = dists
        .iter()
        .zip(examples)
        .map(|(d, r)| d.probs()[r.label].max(PROB_FLOOR).ln())
        .sum();
    total / examples.len() as f64
}

/// Fraction of examples whose argmax class (ties to the lowest index) is the label.
pub fn mean_accuracy(dists: &[ClassDistribution], examples: &[Record]) -> f64 {
    let hits = dists
        .iter()
        .zip(examples)
        .filter(|(d, r)| d.argmax() == r.label)
        .count();
    hits as f64 / examples.len() as f64
}

/// Turns prompts into oracle requests and scores them.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub client: &'a ScoringClient,
    pub vocab: &'a Vocabulary,
    pub marker: &'a WordMarker,
}

impl<'a> Evaluator<'a> {
    pub fn new(client: &'a ScoringClient, vocab: &'a Vocabulary, marker: &'a WordMarker) -> Self {
        Evaluator {
            client,
            vocab,
            marker,
        }
    }

    pub fn request(&self, prompt: &Prompt, set: &FewShotSet) -> Result<ScoreRequest> {
        let surface = prompt.surface(self.vocab, self.marker)?;
        let inputs = set
            .examples
            .iter()
            .enumerate()
            .map(|(i, r)| {
                Ok(ScoringInput {
                    text: apply_template(&set.template, r, &surface)?,
                    prompt: prompt.ids().to_vec(),
                    example_index: i,
                    label: r.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreRequest {
            inputs,
            classes: set.template.verbalizers.clone(),
        })
    }

    pub fn distributions(
        &self,
        prompts: &[Prompt],
        set: &FewShotSet,
    ) -> Result<Vec<Vec<ClassDistribution>>> {
        let reqs = prompts
            .iter()
            .map(|p| self.request(p, set))
            .collect::<Result<Vec<_>>>()?;
        self.client.score_many(&reqs)
    }

    pub fn fitness_many(&self, prompts: &[Prompt], set: &FewShotSet) -> Result<Vec<Fitness>> {
        Ok(self
            .distributions(prompts, set)?
            .iter()
            .map(|d| Fitness {
                reward: mean_reward(d, &set.examples),
                accuracy: mean_accuracy(d, &set.examples),
            })
            .collect())
    }

    pub fn fitness(&self, prompt: &Prompt, set: &FewShotSet) -> Result<Fitness> {
        Ok(self.fitness_many(std::slice::from_ref(prompt), set)?[0])
    }

    pub fn reward(&self, prompt: &Prompt, set: &FewShotSet) -> Result<RewardScore> {
        Ok(RewardScore(self.fitness(prompt, set)?.reward))
    }

    pub fn accuracy(&self, prompt: &Prompt, set: &FewShotSet) -> Result<f64> {
        Ok(self.fitness(prompt, set)?.accuracy)
    }

    /// Reward of the single-token prompt `[token]` minus `baseline`.
    pub fn influence(
        &self,
        token: TokenId,
        set: &FewShotSet,
        baseline: RewardScore,
    ) -> Result<f64> {
        Ok(self.reward(&Prompt(vec![token]), set)?.0 - baseline.0)
    }

    /// Scores every candidate's single-token influence against the prompt-free
    /// baseline. With a checkpoint path, progress is saved after every chunk and
    /// reloaded on the next call, so an interrupted run resumes where it stopped.
    pub fn build_influence_table(
        &self,
        candidates: &[TokenId],
        set: &FewShotSet,
        checkpoint: Option<&Path>,
    ) -> Result<InfluenceTable> {
        const CHUNK: usize = 256;
        if candidates.is_empty() {
            return Err(ClapsError::Precondition(
                "no candidate tokens to score".into(),
            ));
        }
        let mut done: HashMap<TokenId, f64> = HashMap::new();
        let baseline = match checkpoint.filter(|p| p.exists()) {
            Some(p) => {
                let partial = InfluenceTable::load(p)?;
                done.extend(partial.scores.iter().copied());
                log::info!(
                    "resuming influence scoring: {} tokens already done",
                    done.len()
                );
                RewardScore(partial.baseline)
            }
            None => self.reward(&Prompt::empty(), set)?,
        };
        let todo: Vec<TokenId> = candidates
            .iter()
            .copied()
            .filter(|id| !done.contains_key(id))
            .collect();
        for chunk in todo.chunks(CHUNK) {
            let prompts: Vec<Prompt> = chunk.iter().map(|&id| Prompt(vec![id])).collect();
            match self.fitness_many(&prompts, set) {
                Ok(fits) => {
                    for (&id, f) in chunk.iter().zip(fits) {
                        done.insert(id, f.reward - baseline.0);
                    }
                }
                Err(e) => {
                    if let Some(p) = checkpoint {
                        InfluenceTable::from_map(baseline.0, &done, candidates).save(p)?;
                    }
                    return Err(e);
                }
            }
            if let Some(p) = checkpoint {
                InfluenceTable::from_map(baseline.0, &done, candidates).save(p)?;
            }
        }
        Ok(InfluenceTable::from_map(baseline.0, &done, candidates))
    }
}

/// Per-token influence scores plus the baseline reward they are relative to.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceTable {
    pub baseline: f64,
    /// In candidate order.
    pub scores: Vec<(TokenId, f64)>,
}

impl InfluenceTable {
    fn from_map(baseline: f64, done: &HashMap<TokenId, f64>, order: &[TokenId]) -> Self {
        InfluenceTable {
            baseline,
            scores: order
                .iter()
                .filter_map(|id| done.get(id).map(|&s| (*id, s)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, id: TokenId) -> Option<f64> {
        self.scores.iter().find(|(t, _)| *t == id).map(|(_, s)| *s)
    }

    /// Scores sorted by influence, descending; ties go to the lower token id.
    pub fn ranked(&self) -> Vec<(TokenId, f64)> {
        let mut out = self.scores.clone();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Equal-width histogram of influence scores: `(low, high, count)` per bin.
    /// The last bin is closed on the right.
    pub fn histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        if self.scores.is_empty() || bins == 0 {
            return Vec::new();
        }
        let lo = self
            .scores
            .iter()
            .map(|s| s.1)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .scores
            .iter()
            .map(|s| s.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &(_, s) in &self.scores {
            let b = if width > 0.0 {
                ((s - lo) / width) as usize
            } else {
                0
            };
            counts[b.min(bins - 1)] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
            .collect()
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("baseline={}\n", self.baseline);
        for (id, s) in self.ranked() {
            writeln!(out, "{id}\t{s}").unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::write_atomic(path, self.to_file_string().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| {
            ClapsError::io(format!("reading influence table {}", path.display()), e)
        })?;
        let mut lines = raw.lines().enumerate();
        let baseline = lines
            .next()
            .and_then(|(_, l)| l.trim().strip_prefix("baseline="))
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| ClapsError::parse(path, 1, "expected header `baseline=<float>`"))?;
        let mut scores = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parsed = line.split_once('\t').and_then(|(id, s)| {
                Some((
                    id.trim().parse::<TokenId>().ok()?,
                    s.trim().parse::<f64>().ok()?,
                ))
            });
            match parsed {
                Some(entry) => scores.push(entry),
                None => {
                    return Err(ClapsError::parse(
                        path,
                        lineno + 1,
                        "expected `token_id<TAB>delta_r`",
                    ))
                }
            }
        }
        Ok(InfluenceTable { baseline, scores })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::template::builtin;
    use crate::oracle::{SyntheticBackend, SyntheticOracleSpec};
    use crate::vocab::Token;

    // Closed forms, written independently of the oracle code path.
    fn log_sigmoid(z: f64) -> f64 {
        -(1.0 + (-z).exp()).ln()
    }

    fn fixture(utils: &[(u32, f64)], offsets: &[f64]) -> (ScoringClient, Vocabulary, FewShotSet) {
        let spec = SyntheticOracleSpec {
            num_classes: 2,
            utilities: utils.iter().map(|&(id, u)| (TokenId(id), u)).collect(),
            offsets: offsets.iter().copied().enumerate().collect(),
            default_offset: None,
        };
        let client = ScoringClient::new(Arc::new(SyntheticBackend::new(spec).unwrap()));
        let vocab = Vocabulary::from_tokens(
            utils
                .iter()
                .map(|&(id, _)| Token {
                    id: TokenId(id),
                    text: format!("\u{2581}t{id}"),
                    space_flag: true,
                })
                .collect(),
        )
        .unwrap();
        let template = Arc::new(builtin("sst2").unwrap());
        let records = (0..offsets.len())
            .map(|i| Record {
                sentence_1: format!("example {i}"),
                sentence_2: None,
                label: 0,
            })
            .collect();
        let set = FewShotSet::new("t", records, template, 1).unwrap();
        (client, vocab, set)
    }

    const A: u32 = 0;
    const B: u32 = 1;
    const C: u32 = 2;

    #[test]
    fn reward_closed_forms() {
        let (client, vocab, set) = fixture(&[(A, 1.0), (B, 0.0), (C, -1.0)], &[0.0]);
        let m = WordMarker::sentencepiece();
        let ev = Evaluator::new(&client, &vocab, &m);
        let r = ev.reward(&Prompt::from(vec![A]), &set).unwrap().0;
        assert!((r - log_sigmoid(1.0)).abs() < 1e-12);
        assert!((r - -0.31326).abs() < 1e-5);
        let r0 = ev.reward(&Prompt::empty(), &set).unwrap().0;
        assert!((r0 - -std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn reward_is_mean_over_examples() {
        // Offsets 0 and 1 put p_true at 0.5 and 0.73106 under the empty prompt.
        let (client, vocab, set) = fixture(&[(A, 1.0)], &[0.0, 1.0]);
        let m = WordMarker::sentencepiece();
        let ev = Evaluator::new(&client, &vocab, &m);
        let r = ev.reward(&Prompt::empty(), &set).unwrap().0;
        let expected = (log_sigmoid(0.0) + log_sigmoid(1.0)) / 2.0;
        assert!((r - expected).abs() < 1e-12);
        assert!((r - -0.50320).abs() < 1e-5);
    }

    #[test]
    fn influence_closed_forms() {
        let (client, vocab, set) = fixture(&[(A, 1.0), (B, 0.0), (C, -1.0)], &[0.0]);
        let m = WordMarker::sentencepiece();
        let ev = Evaluator::new(&client, &vocab, &m);
        let base = ev.reward(&Prompt::empty(), &set).unwrap();
        let expected = [(A, 0.37989), (B, 0.0), (C, -0.62011)];
        for (id, want) in expected {
            let got = ev.influence(TokenId(id), &set, base).unwrap();
            assert!((got - want).abs() < 1e-5, "token {id}: {got} vs {want}");
        }
    }

    #[test]
    fn table_costs_one_query_per_candidate_plus_baseline() {
        let (client, vocab, set) = fixture(&[(A, 1.0), (B, 0.0), (C, -1.0)], &[0.0]);
        let m = WordMarker::sentencepiece();
        let ev = Evaluator::new(&client, &vocab, &m);
        let ids: Vec<TokenId> = vocab.ids().collect();
        let table = ev.build_influence_table(&ids, &set, None).unwrap();
        assert_eq!(client.queries().prompt_evals, 4);
        assert_eq!(
            table
                .ranked()
                .iter()
                .map(|(id, _)| id.0)
                .collect::<Vec<_>>(),
            [A, B, C]
        );
        assert!((table.baseline - -std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            ev.build_influence_table(&[], &set, None),
            Err(ClapsError::Precondition(_))
        ));
    }

    #[test]
    fn checkpoint_resumes_without_new_queries() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("influence.partial");
        let (client, vocab, set) = fixture(&[(A, 1.0), (B, 0.0), (C, -1.0)], &[0.0]);
        let m = WordMarker::sentencepiece();
        let ev = Evaluator::new(&client, &vocab, &m);
        let ids: Vec<TokenId> = vocab.ids().collect();
        let first = ev.build_influence_table(&ids, &set, Some(&ckpt)).unwrap();

        // A fresh client has an empty cache: only the checkpoint can save queries.
        let (client2, _, _) = fixture(&[(A, 1.0), (B, 0.0), (C, -1.0)], &[0.0]);
        let ev2 = Evaluator::new(&client2, &vocab, &m);
        let again = ev2.build_influence_table(&ids, &set, Some(&ckpt)).unwrap();
        assert_eq!(client2.queries().prompt_evals, 0);
        assert_eq!(first.ranked(), again.ranked());
    }

    #[test]
    fn floor_keeps_reward_finite() {
        let d = vec![ClassDistribution::from_scores(vec![0.0, 1.0]).unwrap()];
        let r = vec![Record {
            sentence_1: "x".into(),
            sentence_2: None,
            label: 0,
        }];
        let v = mean_reward(&d, &r);
        assert!(v.is_finite());
        assert!((v - PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn accuracy_follows_argmax_tie_rule() {
        let rec = |label| Record {
            sentence_1: "x".into(),
            sentence_2: None,
            label,
        };
        let d = |p: f64| ClassDistribution::from_scores(vec![p, 1.0 - p]).unwrap();
        assert_eq!(
            mean_accuracy(&[d(0.73106), d(0.73106)], &[rec(0), rec(0)]),
            1.0
        );
        assert_eq!(mean_accuracy(&[d(0.5)], &[rec(0)]), 1.0);
        assert_eq!(mean_accuracy(&[d(0.5)], &[rec(1)]), 0.0);
        assert_eq!(mean_accuracy(&[d(0.3)], &[rec(0)]), 0.0);
    }

    #[test]
    fn histogram_counts_every_score() {
        let t = InfluenceTable {
            baseline: 0.0,
            scores: vec![
                (TokenId(0), -1.0),
                (TokenId(1), 0.0),
                (TokenId(2), 0.9),
                (TokenId(3), 1.0),
            ],
        };
        let h = t.histogram(2);
        assert_eq!(h.iter().map(|b| b.2).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!((h[0].0, h[1].1), (-1.0, 1.0));
        assert!(InfluenceTable {
            baseline: 0.0,
            scores: vec![]
        }
        .histogram(3)
        .is_empty());
    }

    #[test]
    fn table_file_roundtrip_is_sorted() {
        let t = InfluenceTable {
            baseline: -std::f64::consts::LN_2,
            scores: vec![(TokenId(5), -0.62), (TokenId(2), 0.38), (TokenId(9), 0.38)],
        };
        let raw = t.to_file_string();
        assert!(raw.starts_with("baseline=-0.6931471805599453\n2\t0.38\n9\t0.38\n5\t-0.62"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        t.save(&p).unwrap();
        let back = InfluenceTable::load(&p).unwrap();
        assert_eq!(back.ranked(), t.ranked());
        assert_eq!(back.baseline, t.baseline);
    }

    proptest::proptest! {
        #[test]
        fn reward_is_order_invariant(ps in proptest::collection::vec(0.0f64..1.0, 1..10), labels in proptest::collection::vec(0usize..2, 10)) {
            let dists: Vec<_> = ps.iter().map(|&p| ClassDistribution::from_scores(vec![p, 1.0 - p]).unwrap()).collect();
            let recs: Vec<_> = labels.iter().take(ps.len()).map(|&label| Record { sentence_1: String::new(), sentence_2: None, label }).collect();
            let forward = mean_reward(&dists, &recs);
            let mut d2 = dists.clone(); d2.reverse();
            let mut r2 = recs.clone(); r2.reverse();
            proptest::prop_assert!((forward - mean_reward(&d2, &r2)).abs() < 1e-12);
            proptest::prop_assert!(forward <= 0.0);
        }
    }
}
