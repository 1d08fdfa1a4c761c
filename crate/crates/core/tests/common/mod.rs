#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use claps::harness::dataset::Record;
use claps::harness::template::builtin;
use claps::oracle::{ScoringClient, SyntheticBackend, SyntheticOracleSpec};
use claps::reward::FewShotSet;
use claps::vocab::Token;
use claps::{TokenId, Vocabulary};

pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Reward of a prompt whose utilities sum to `s`, computed without the library.
pub fn reference_reward(s: f64, offsets: &[f64]) -> f64 {
    offsets
        .iter()
        .map(|d| log_sigmoid(s + d).max(1e-9f64.ln()))
        .sum::<f64>()
        / offsets.len() as f64
}

pub fn vocab_of(n: usize) -> Vocabulary {
    Vocabulary::from_tokens(
        (0..n)
            .map(|i| Token {
                id: TokenId(i as u32),
                text: format!("\u{2581}w{i}"),
                space_flag: true,
            })
            .collect(),
    )
    .unwrap()
}

pub fn spec(utils: &[f64], offsets: &[f64]) -> SyntheticOracleSpec {
    SyntheticOracleSpec {
        num_classes: 2,
        utilities: utils
            .iter()
            .enumerate()
            .map(|(i, &u)| (TokenId(i as u32), u))
            .collect(),
        offsets: offsets.iter().copied().enumerate().collect(),
        default_offset: None,
    }
}

pub fn client(spec: SyntheticOracleSpec, parallelism: usize) -> ScoringClient {
    ScoringClient::builder(Arc::new(SyntheticBackend::new(spec).unwrap()))
        .parallelism(parallelism)
        .build()
        .unwrap()
}

/// `n` binary-labeled examples with distinct text, formatted with the sst2 template.
pub fn set(name: &str, n: usize) -> FewShotSet {
    let records = (0..n)
        .map(|i| Record {
            sentence_1: format!("{name} example {i}"),
            sentence_2: None,
            label: i % 2,
        })
        .collect();
    FewShotSet::new(
        name,
        records,
        Arc::new(builtin("sst2").unwrap()),
        n.div_ceil(2),
    )
    .unwrap()
}

/// Writes vocab, embeddings, synthetic oracle and a train/test dataset under `dir`.
pub fn write_fixture(
    dir: &Path,
    utils: &[f64],
    embeddings: &[Vec<f64>],
    train_per_class: usize,
    test_per_class: usize,
) {
    vocab_of(utils.len()).save(dir.join("vocab.tsv")).unwrap();
    if !embeddings.is_empty() {
        let dim = embeddings[0].len();
        let mut text = format!("dim={dim}\n");
        for (i, v) in embeddings.iter().enumerate() {
            let row: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            text.push_str(&format!("{i}\t{}\n", row.join(",")));
        }
        std::fs::write(dir.join("emb.txt"), text).unwrap();
    }
    let mut s = spec(utils, &[]);
    s.default_offset = Some(-0.5);
    std::fs::write(dir.join("oracle.json"), serde_json::to_string(&s).unwrap()).unwrap();
    std::fs::create_dir_all(dir.join("data")).unwrap();
    for (split, per_class) in [("train", train_per_class), ("test", test_per_class)] {
        let mut text = String::new();
        for i in 0..2 * per_class {
            text.push_str(&format!("{}\t{split} sentence {i}\n", i % 2));
        }
        std::fs::write(dir.join("data").join(format!("{split}.tsv")), text).unwrap();
    }
}

/// Minimal pipeline config over a fixture written by [`write_fixture`].
pub fn pipeline_toml(cluster: Option<usize>, keep: &str, search: &str, shots: usize) -> String {
    let cluster = match cluster {
        Some(k) => format!("embeddings = \"emb.txt\"\n\n[cluster]\nnum_clusters = {k}\n"),
        None => "\n[cluster]\nenabled = false\n".to_string(),
    };
    format!(
        "work_dir = \"work\"\nvocab = \"vocab.tsv\"\ndataset = \"data\"\ntemplate = \"sst2\"\nshots = {shots}\nseed = 1\n{cluster}\n[oracle]\nsynthetic = \"oracle.json\"\n\n[prune]\nkeep = \"{keep}\"\n\n[search]\n{search}\n"
    )
}
