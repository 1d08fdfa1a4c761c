//! Line-delimited datasets: `label<TAB>sentence_1[<TAB>sentence_2]`, UTF-8.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::template::TemplateSpec;
use crate::error::{ClapsError, Result};
use crate::reward::FewShotSet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub sentence_1: String,
    pub sentence_2: Option<String>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: String,
    pub records: Vec<Record>,
}

impl DatasetSplit {
    pub fn new(name: &str, records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(ClapsError::Data(format!("split `{name}` has no records")));
        }
        Ok(DatasetSplit {
            name: name.to_string(),
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>, name: &str) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ClapsError::io(format!("reading dataset {}", path.display()), e))?;
        let mut records = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(ClapsError::parse(
                    path,
                    lineno,
                    "expected `label<TAB>sentence_1[<TAB>sentence_2]`",
                ));
            }
            let label = fields[0].trim().parse::<usize>().map_err(|_| {
                ClapsError::parse(path, lineno, format!("bad label `{}`", fields[0]))
            })?;
            records.push(Record {
                sentence_1: fields[1].to_string(),
                sentence_2: fields.get(2).map(|s| s.to_string()),
                label,
            });
        }
        Self::new(name, records)
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.records.iter().find(|r| r.label >= num_classes) {
            Some(r) => Err(ClapsError::Data(format!(
                "split `{}` has label {} but only {num_classes} classes",
                self.name, r.label
            ))),
            None => Ok(()),
        }
    }

    fn indices_by_class(&self, num_classes: usize) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, r) in self.records.iter().enumerate() {
            by_class[r.label].push(i);
        }
        by_class
    }
}

/// Resolves a dataset argument: a directory holds `<split>.tsv` files, a plain
/// file is used as-is.
pub fn split_path(dataset: &Path, split: &str) -> PathBuf {
    if dataset.is_dir() {
        dataset.join(format!("{split}.tsv"))
    } else {
        dataset.to_path_buf()
    }
}

fn draw(
    split: &DatasetSplit,
    num_classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    split.check_labels(num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    split
        .indices_by_class(num_classes)
        .into_iter()
        .enumerate()
        .map(|(class, mut idx)| {
            if idx.len() < per_class {
                return Err(ClapsError::Sampling {
                    class,
                    available: idx.len(),
                    requested: per_class,
                });
            }
            idx.shuffle(&mut rng);
            idx.truncate(per_class);
            Ok(idx)
        })
        .collect()
}

fn to_set(
    name: &str,
    split: &DatasetSplit,
    picks: impl Iterator<Item = usize>,
    template: &Arc<TemplateSpec>,
    shots: usize,
) -> Result<FewShotSet> {
    let records = picks.map(|i| split.records[i].clone()).collect();
    FewShotSet::new(name, records, Arc::clone(template), shots)
}

/// Uniform per-class sample without replacement.
pub fn sample_few_shot(
    split: &DatasetSplit,
    template: &Arc<TemplateSpec>,
    shots_per_class: usize,
    seed: u64,
) -> Result<FewShotSet> {
    let picks = draw(split, template.num_classes(), shots_per_class, seed)?;
    to_set(
        &format!("{}-{shots_per_class}shot-{seed}", split.name),
        split,
        picks.into_iter().flatten(),
        template,
        shots_per_class,
    )
}

/// Disjoint training and validation few-shot sets drawn from one split.
pub fn sample_train_val(
    split: &DatasetSplit,
    template: &Arc<TemplateSpec>,
    shots_per_class: usize,
    seed: u64,
) -> Result<(FewShotSet, FewShotSet)> {
    let picks = draw(split, template.num_classes(), 2 * shots_per_class, seed)?;
    let train = picks
        .iter()
        .flat_map(|c| c[..shots_per_class].iter().copied());
    let val = picks
        .iter()
        .flat_map(|c| c[shots_per_class..].iter().copied());
    Ok((
        to_set(
            &format!("{}-train-{seed}", split.name),
            split,
            train,
            template,
            shots_per_class,
        )?,
        to_set(
            &format!("{}-val-{seed}", split.name),
            split,
            val,
            template,
            shots_per_class,
        )?,
    ))
}
