//! End-to-end run: [cluster] → influence → prune → search → test evaluation.
//!
//! Every stage writes its output under the work directory with a name derived
//! from a hash of everything upstream of it. A rerun loads any artifact whose
//! hash still matches and recomputes the rest.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{sample_train_val, split_path, DatasetSplit};
use super::evaluate::{evaluate, EvalReport};
use super::template::TemplateSpec;
use crate::error::{ClapsError, Result};
use crate::oracle::{
    Backend, HttpBackend, QuerySnapshot, RetryPolicy, ScoringClient, SyntheticBackend,
    SyntheticOracleSpec,
};
use crate::prompt::Prompt;
use crate::reward::{Evaluator, InfluenceTable};
use crate::search::{
    GeneticConfig, RunLog, SearchContext, SearchResult, SearchStrategy, StrategyConfig,
};
use crate::space::{
    kmeanspp_cluster, rank_and_prune, select_centroid_tokens, ClusterConfig, Retention, SearchSpace,
};
use crate::vocab::{
    dedup_by_normalized_text, filter_word_tokens, TokenEmbeddings, Vocabulary, WordMarker,
};
use crate::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub endpoint: Option<String>,
    /// JSON spec for the deterministic synthetic oracle.
    pub synthetic: Option<PathBuf>,
    pub parallelism: usize,
    pub cache_dir: Option<PathBuf>,
    pub retries: u32,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            endpoint: None,
            synthetic: None,
            parallelism: 1,
            cache_dir: None,
            retries: RetryPolicy::default().attempts,
        }
    }
}

impl OracleConfig {
    pub fn backend(&self) -> Result<Arc<dyn Backend>> {
        match (&self.endpoint, &self.synthetic) {
            (Some(_), Some(_)) => Err(ClapsError::Config(
                "give either an endpoint or a synthetic oracle, not both".into(),
            )),
            (None, None) => Err(ClapsError::Config(
                "no oracle configured: set an endpoint or a synthetic oracle".into(),
            )),
            (Some(url), None) => {
                let retry = RetryPolicy {
                    attempts: self.retries.max(1),
                    ..RetryPolicy::default()
                };
                Ok(Arc::new(HttpBackend::new(url, retry)?))
            }
            (None, Some(path)) => Ok(Arc::new(SyntheticBackend::new(SyntheticOracleSpec::load(
                path,
            )?)?)),
        }
    }

    pub fn connect(&self) -> Result<ScoringClient> {
        ScoringClient::builder(self.backend()?)
            .parallelism(self.parallelism)
            .cache_dir(self.cache_dir.as_ref())
            .build()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterStage {
    pub enabled: bool,
    pub num_clusters: usize,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for ClusterStage {
    fn default() -> Self {
        let c = ClusterConfig::default();
        ClusterStage {
            enabled: true,
            num_clusters: c.num_clusters,
            max_iters: c.max_iters,
            tolerance: c.tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneStage {
    /// `count:M` or `fraction:A`.
    pub keep: String,
}

impl Default for PruneStage {
    fn default() -> Self {
        PruneStage {
            keep: "count:200".into(),
        }
    }
}

fn default_marker() -> String {
    "spm".into()
}

fn default_shots() -> usize {
    16
}

fn default_true() -> bool {
    true
}

fn default_strategy() -> StrategyConfig {
    StrategyConfig::Genetic(GeneticConfig::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub work_dir: PathBuf,
    pub vocab: PathBuf,
    /// Required when clustering is enabled.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Directory holding `train.tsv` and `test.tsv`.
    pub dataset: PathBuf,
    /// Built-in template name or JSON file.
    pub template: String,
    #[serde(default = "default_marker")]
    pub marker: String,
    #[serde(default = "default_true")]
    pub word_tokens_only: bool,
    /// Drop tokens whose case-folded text repeats an earlier token.
    #[serde(default = "default_true")]
    pub dedup_case: bool,
    #[serde(default = "default_shots")]
    pub shots: usize,
    /// Drives few-shot sampling and k-means seeding.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub cluster: ClusterStage,
    #[serde(default)]
    pub prune: PruneStage,
    #[serde(default = "default_strategy")]
    pub search: StrategyConfig,
}

impl PipelineConfig {
    /// Parses a TOML config. Relative paths are taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ClapsError::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = toml::from_str(&raw)
            .map_err(|e| ClapsError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.work_dir);
        fix(&mut cfg.vocab);
        fix(&mut cfg.dataset);
        cfg.embeddings.as_mut().map(fix);
        cfg.oracle.synthetic.as_mut().map(fix);
        cfg.oracle.cache_dir.as_mut().map(fix);
        let template_file = base.join(&cfg.template);
        if super::template::builtin(&cfg.template).is_none() && template_file.exists() {
            cfg.template = template_file.to_string_lossy().into_owned();
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("vocab", &self.vocab), ("dataset", &self.dataset)] {
            if !p.exists() {
                return Err(ClapsError::Config(format!(
                    "{what} `{}` does not exist",
                    p.display()
                )));
            }
        }
        if self.cluster.enabled {
            match &self.embeddings {
                Some(p) if p.exists() => {}
                Some(p) => {
                    return Err(ClapsError::Config(format!(
                        "embeddings `{}` do not exist",
                        p.display()
                    )))
                }
                None => {
                    return Err(ClapsError::Config(
                        "clustering is enabled but no embeddings are given".into(),
                    ))
                }
            }
        }
        if self.shots == 0 {
            return Err(ClapsError::Config("shots must be at least 1".into()));
        }
        self.retention()?;
        self.marker()?;
        Ok(())
    }

    pub fn retention(&self) -> Result<Retention> {
        self.prune.keep.parse()
    }

    pub fn marker(&self) -> Result<WordMarker> {
        self.marker.parse()
    }
}

/// Search output as written to disk, with the prompt's surface form for humans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchArtifact {
    pub surface: String,
    #[serde(flatten)]
    pub result: SearchResult,
}

impl SearchArtifact {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("search artifact serializes");
        write_atomic(path.as_ref(), json.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ClapsError::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&raw).map_err(|e| ClapsError::parse(path, e.line(), e.to_string()))
    }
}

/// Reads a prompt from a search artifact or from whitespace-separated token ids.
pub fn load_prompt(path: impl AsRef<Path>) -> Result<Prompt> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path)
        .map_err(|e| ClapsError::io(format!("reading {}", path.display()), e))?;
    if raw.trim_start().starts_with('{') {
        return Ok(SearchArtifact::load(path)?.result.best_prompt);
    }
    raw.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| ClapsError::parse(path, 1, format!("bad token id `{t}`")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Prompt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub artifact: PathBuf,
    /// Loaded from an earlier run rather than computed.
    pub reused: bool,
    pub queries: QuerySnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub prompt: String,
    pub search: SearchResult,
    pub test: EvalReport,
    pub stages: Vec<StageReport>,
}

impl PipelineOutcome {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

fn hash_parts(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| ClapsError::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ ClapsError::Stage { .. } => e,
        e => ClapsError::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

struct Recorder<'a> {
    client: &'a ScoringClient,
    stages: Vec<StageReport>,
}

impl Recorder<'_> {
    fn run<T>(
        &mut self,
        name: &'static str,
        artifact: PathBuf,
        load: impl FnOnce(&Path) -> Result<T>,
        compute: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let before = self.client.queries();
        let reused = artifact.exists();
        let value = if reused {
            log::info!("{name}: reusing {}", artifact.display());
            stage(name, load(&artifact))?
        } else {
            log::info!("{name}: computing {}", artifact.display());
            stage(name, compute(&artifact))?
        };
        self.stages.push(StageReport {
            stage: name.to_string(),
            artifact,
            reused,
            queries: self.client.queries().since(before),
        });
        Ok(value)
    }
}

pub fn run_pipeline(cfg: &PipelineConfig, client: &ScoringClient) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let work = &cfg.work_dir;
    std::fs::create_dir_all(work)
        .map_err(|e| ClapsError::io(format!("creating {}", work.display()), e))?;
    let marker = cfg.marker()?;
    let retention = cfg.retention()?;
    let template = Arc::new(TemplateSpec::resolve(&cfg.template)?);
    let identity = client.identity();

    let mut vocab = Vocabulary::load(&cfg.vocab)?;
    if cfg.word_tokens_only {
        vocab = filter_word_tokens(&vocab, &marker)?;
    }
    if cfg.dedup_case {
        vocab = dedup_by_normalized_text(&vocab, &marker);
    }
    let vocab_key = hash_parts(&[&vocab.content_hash(), &cfg.marker]);

    let train_path = split_path(&cfg.dataset, "train");
    let train_split = DatasetSplit::load(&train_path, "train")?;
    let (train_set, val_set) = sample_train_val(&train_split, &template, cfg.shots, cfg.seed)?;
    let template_json = serde_json::to_string(&*template).expect("template serializes");
    let data_key = hash_parts(&[
        &file_hash(&train_path)?,
        &template_json,
        &cfg.shots.to_string(),
        &cfg.seed.to_string(),
    ]);

    let evaluator = Evaluator::new(client, &vocab, &marker);
    let mut rec = Recorder {
        client,
        stages: Vec::new(),
    };

    let (candidates, space_key) = if cfg.cluster.enabled {
        let emb_path = cfg.embeddings.as_ref().expect("validated");
        let ccfg = ClusterConfig {
            num_clusters: cfg.cluster.num_clusters,
            max_iters: cfg.cluster.max_iters,
            seed: cfg.seed,
            tolerance: cfg.cluster.tolerance,
        };
        let key = hash_parts(&[
            &vocab_key,
            &file_hash(emb_path)?,
            &serde_json::to_string(&ccfg).expect("cluster config serializes"),
        ]);
        let space = rec.run(
            "cluster",
            work.join(format!("cluster-{key}.space")),
            |p| SearchSpace::load(p),
            |out| {
                let emb = TokenEmbeddings::load(emb_path)?.restrict_to(&vocab);
                let clustering = kmeanspp_cluster(&emb, &ccfg)?;
                let space = select_centroid_tokens(&emb, &clustering.centroids, &vocab)?;
                space.save(out)?;
                Ok(space)
            },
        )?;
        (space.token_ids().to_vec(), key)
    } else {
        (vocab.ids().collect(), vocab_key.clone())
    };

    let inf_key = hash_parts(&[&space_key, &data_key, &identity]);
    let table = rec.run(
        "influence",
        work.join(format!("influence-{inf_key}.tsv")),
        |p| InfluenceTable::load(p),
        |out| {
            let partial = work.join(format!("influence-{inf_key}.partial"));
            let table = evaluator.build_influence_table(&candidates, &train_set, Some(&partial))?;
            table.save(out)?;
            let _ = std::fs::remove_file(&partial);
            Ok(table)
        },
    )?;

    let prune_key = hash_parts(&[&inf_key, &retention.to_string()]);
    let space = rec.run(
        "prune",
        work.join(format!("pruned-{prune_key}.space")),
        |p| SearchSpace::load(p),
        |out| {
            let mut space = rank_and_prune(&table, retention)?;
            space.source_vocab = vocab.content_hash();
            space.save(out)?;
            Ok(space)
        },
    )?;

    let strategy_json = serde_json::to_string(&cfg.search).expect("strategy serializes");
    let search_key = hash_parts(&[&prune_key, &data_key, &strategy_json, &identity]);
    let artifact = rec.run(
        "search",
        work.join(format!("search-{search_key}.json")),
        |p| SearchArtifact::load(p),
        |out| {
            let log = RunLog::append_to(work.join(format!("search-{search_key}.jsonl")))?;
            let ctx = SearchContext::new(evaluator, &space, &val_set).with_log(Some(&log));
            let result = cfg.search.search(&ctx)?;
            let artifact = SearchArtifact {
                surface: result.best_prompt.surface(&vocab, &marker)?,
                result,
            };
            artifact.save(out)?;
            Ok(artifact)
        },
    )?;

    let test_path = split_path(&cfg.dataset, "test");
    let eval_key = hash_parts(&[&search_key, &file_hash(&test_path)?]);
    let test = rec.run(
        "eval",
        work.join(format!("eval-{eval_key}.json")),
        |p| {
            let raw = std::fs::read_to_string(p)
                .map_err(|e| ClapsError::io(format!("reading {}", p.display()), e))?;
            serde_json::from_str(&raw).map_err(|e| ClapsError::parse(p, e.line(), e.to_string()))
        },
        |out| {
            let split = DatasetSplit::load(&test_path, "test")?;
            let report = evaluate(&evaluator, &artifact.result.best_prompt, &template, &split)?;
            write_atomic(
                out,
                serde_json::to_string_pretty(&report)
                    .expect("report serializes")
                    .as_bytes(),
            )?;
            Ok(report)
        },
    )?;

    let outcome = PipelineOutcome {
        prompt: artifact.surface,
        search: artifact.result,
        test,
        stages: rec.stages,
    };
    let summary = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
    write_atomic(&work.join("result.json"), summary.as_bytes())?;
    Ok(outcome)
}
