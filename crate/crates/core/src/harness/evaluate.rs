//! Split-level accuracy reporting for a finished prompt.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ClapsError, Result};
use crate::harness::dataset::DatasetSplit;
use crate::harness::template::TemplateSpec;
use crate::prompt::Prompt;
use crate::reward::{mean_accuracy, mean_reward, Evaluator, FewShotSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub verbalizer: String,
    pub support: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub examples: usize,
    pub accuracy: f64,
    pub reward: f64,
    pub per_class: Vec<ClassReport>,
}

/// Scores every record of `split` in one batch. Classes absent from the split
/// report zero support and an accuracy of 0.
pub fn evaluate(
    evaluator: &Evaluator<'_>,
    prompt: &Prompt,
    template: &Arc<TemplateSpec>,
    split: &DatasetSplit,
) -> Result<EvalReport> {
    if split.records.is_empty() {
        return Err(ClapsError::Data(format!("split `{}` is empty", split.name)));
    }
    split.check_labels(template.num_classes())?;
    let set = FewShotSet::new(&split.name, split.records.clone(), Arc::clone(template), 0)?;
    let dists = evaluator
        .distributions(std::slice::from_ref(prompt), &set)?
        .pop()
        .expect("one prompt in, one row out");

    let mut per_class: Vec<ClassReport> = template
        .verbalizers
        .iter()
        .enumerate()
        .map(|(class, v)| ClassReport {
            class,
            verbalizer: v.clone(),
            support: 0,
            correct: 0,
            accuracy: 0.0,
        })
        .collect();
    for (d, r) in dists.iter().zip(&split.records) {
        let c = &mut per_class[r.label];
        c.support += 1;
        if d.argmax() == r.label {
            c.correct += 1;
        }
    }
    for c in &mut per_class {
        if c.support > 0 {
            c.accuracy = c.correct as f64 / c.support as f64;
        }
    }
    Ok(EvalReport {
        split: split.name.clone(),
        examples: split.records.len(),
        accuracy: mean_accuracy(&dists, &split.records),
        reward: mean_reward(&dists, &split.records),
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::Record;
    use crate::harness::template::builtin;
    use crate::oracle::{ScoringClient, SyntheticBackend, SyntheticOracleSpec};
    use crate::vocab::{Token, TokenId, Vocabulary, WordMarker};

    fn setup(default_offset: f64) -> (ScoringClient, Vocabulary) {
        let spec = SyntheticOracleSpec {
            num_classes: 2,
            utilities: [(TokenId(0), 2.0)].into_iter().collect(),
            offsets: Default::default(),
            default_offset: Some(default_offset),
        };
        let client = ScoringClient::new(Arc::new(SyntheticBackend::new(spec).unwrap()));
        let vocab = Vocabulary::from_tokens(vec![Token {
            id: TokenId(0),
            text: "\u{2581}good".into(),
            space_flag: true,
        }])
        .unwrap();
        (client, vocab)
    }

    fn split(labels: &[usize]) -> DatasetSplit {
        let records = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Record {
                sentence_1: format!("s{i}"),
                sentence_2: None,
                label,
            })
            .collect();
        DatasetSplit::new("test", records).unwrap()
    }

    #[test]
    fn confident_prompt_is_fully_accurate() {
        let (client, vocab) = setup(-1.0);
        let m = WordMarker::sentencepiece();
        let ev = Evaluator::new(&client, &vocab, &m);
        let t = Arc::new(builtin("sst2").unwrap());
        let r = evaluate(&ev, &Prompt::from(vec![0]), &t, &split(&[0, 1, 1, 0])).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_class[1].support, 2);
        assert_eq!(r.per_class[1].correct, 2);
        let base = evaluate(&ev, &Prompt::empty(), &t, &split(&[0, 1, 1, 0])).unwrap();
        assert_eq!(base.accuracy, 0.0);
    }

    #[test]
    fn second_evaluation_is_cache_served() {
        let (client, vocab) = setup(0.5);
        let m = WordMarker::sentencepiece();
        let ev = Evaluator::new(&client, &vocab, &m);
        let t = Arc::new(builtin("sst2").unwrap());
        let s = split(&[0, 1, 0]);
        let a = evaluate(&ev, &Prompt::from(vec![0]), &t, &s).unwrap();
        let before = client.queries();
        let b = evaluate(&ev, &Prompt::from(vec![0]), &t, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(client.queries().since(before).prompt_evals, 0);
        assert_eq!(client.queries().since(before).example_forwards, 0);
    }

    #[test]
    fn empty_split_is_an_error() {
        let (client, vocab) = setup(0.0);
        let m = WordMarker::sentencepiece();
        let ev = Evaluator::new(&client, &vocab, &m);
        let t = Arc::new(builtin("sst2").unwrap());
        let empty = DatasetSplit {
            name: "test".into(),
            records: vec![],
        };
        assert!(matches!(
            evaluate(&ev, &Prompt::empty(), &t, &empty),
            Err(ClapsError::Data(_))
        ));
    }
}
