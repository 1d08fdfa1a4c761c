use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use claps::harness::dataset::{sample_train_val, split_path, DatasetSplit};
use claps::harness::evaluate::evaluate;
use claps::harness::pipeline::{
    load_prompt, run_pipeline, OracleConfig, PipelineConfig, SearchArtifact,
};
use claps::harness::template::TemplateSpec;
use claps::oracle::{HttpBackend, RetryPolicy, ScoringClient};
use claps::reward::{Evaluator, FewShotSet, InfluenceTable};
use claps::search::{
    random_sample_study, GeneticConfig, GreedyConfig, PsoConfig, RunLog, SearchContext,
    SearchStrategy, StrategyConfig,
};
use claps::space::{
    kmeanspp_cluster, rank_and_prune, select_centroid_tokens, ClusterConfig, Retention, SearchSpace,
};
use claps::vocab::{dedup_by_normalized_text, filter_word_tokens, TokenEmbeddings, WordMarker};
use claps::{ClapsError, Result, Vocabulary};

/// Black-box discrete prompt search over a clustered and pruned token space.
#[derive(Parser, Debug)]
#[command(name = "claps", version)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Model server base URL
    #[arg(long, global = true, env = "CLAPS_ENDPOINT")]
    endpoint: Option<String>,

    /// JSON spec for the synthetic oracle (replaces the model server)
    #[arg(long, global = true, conflicts_with = "endpoint")]
    synthetic_oracle: Option<PathBuf>,

    /// Persist scored responses here
    #[arg(long, global = true, env = "CLAPS_CACHE_DIR")]
    cache_dir: Option<PathBuf>,

    /// Concurrent scoring calls
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    /// Write log output to this file instead of stderr
    #[arg(long, global = true)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VocabArgs {
    #[arg(long)]
    vocab: PathBuf,

    /// Leading-space convention: `spm`, `bpe`, `flag`, or a literal marker
    #[arg(long, default_value = "spm")]
    marker: WordMarker,

    /// Keep tokens without the leading-space marker
    #[arg(long)]
    all_tokens: bool,

    /// Keep tokens whose case-folded text repeats an earlier token
    #[arg(long)]
    keep_case_duplicates: bool,
}

impl VocabArgs {
    fn load(&self) -> Result<Vocabulary> {
        let mut vocab = Vocabulary::load(&self.vocab)?;
        if !self.all_tokens {
            vocab = filter_word_tokens(&vocab, &self.marker)?;
        }
        if !self.keep_case_duplicates {
            vocab = dedup_by_normalized_text(&vocab, &self.marker);
        }
        Ok(vocab)
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset directory with `<split>.tsv` files, or a single file
    #[arg(long)]
    dataset: PathBuf,

    /// Built-in template name or JSON file
    #[arg(long, default_value = "sst2")]
    template: String,

    /// Examples per class in each few-shot set
    #[arg(long, default_value_t = 16)]
    shots: usize,

    /// Seed for drawing the few-shot sets
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
}

impl DataArgs {
    fn template(&self) -> Result<Arc<TemplateSpec>> {
        Ok(Arc::new(TemplateSpec::resolve(&self.template)?))
    }

    /// Disjoint influence-stage and fitness-stage sets from the train split.
    fn sets(&self) -> Result<(FewShotSet, FewShotSet)> {
        let split = DatasetSplit::load(split_path(&self.dataset, "train"), "train")?;
        sample_train_val(&split, &self.template()?, self.shots, self.sample_seed)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Strategy {
    Genetic,
    Greedy,
    Pso,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster token embeddings and keep the token nearest each centroid
    Cluster {
        #[command(flatten)]
        vocab: VocabArgs,
        /// Embedding file; fetched from the endpoint when omitted
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score per-token influence and keep the most influential tokens
    Prune {
        #[command(flatten)]
        vocab: VocabArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Candidate space; the whole vocabulary when omitted
        #[arg(long)]
        space: Option<PathBuf>,
        /// Token count, `count:M`, or `fraction:A`
        #[arg(long, default_value = "200")]
        keep: String,
        /// Influence table output (default: `<out>.influence.tsv`)
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search for a K-token prompt within a space
    Search {
        #[command(flatten)]
        vocab: VocabArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        space: PathBuf,
        #[arg(long, value_enum, default_value = "genetic")]
        strategy: Strategy,
        #[arg(long, default_value_t = 5)]
        k_tokens: usize,
        #[arg(long)]
        epochs: Option<usize>,
        /// Genetic population or swarm size
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        mutation_prob: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-epoch JSONL log (default: `<out>.jsonl`)
        #[arg(long)]
        run_log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Influence histogram and random-prompt reward distribution for a space
    Analyze {
        #[command(flatten)]
        vocab: VocabArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 5)]
        k_tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Influence table to summarize
        #[arg(long)]
        influence: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Also sample from the whole vocabulary for comparison
        #[arg(long)]
        compare_full: bool,
    },
    /// Accuracy of a prompt on a dataset split
    Eval {
        #[command(flatten)]
        vocab: VocabArgs,
        /// Search output JSON or whitespace-separated token ids
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "sst2")]
        template: String,
        /// Write the report as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage from a TOML config
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn init_logging(path: Option<&Path>) -> Result<()> {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if let Some(p) = path {
        let f = File::create(p)
            .map_err(|e| ClapsError::Config(format!("log file {}: {e}", p.display())))?;
        b.target(env_logger::Target::Pipe(Box::new(f)));
    }
    b.init();
    Ok(())
}

impl Global {
    fn oracle(&self, base: Option<&OracleConfig>) -> OracleConfig {
        let mut cfg = base.cloned().unwrap_or_default();
        if self.endpoint.is_some() || self.synthetic_oracle.is_some() {
            cfg.endpoint = self.endpoint.clone();
            cfg.synthetic = self.synthetic_oracle.clone();
        }
        if let Some(n) = self.parallelism {
            cfg.parallelism = n;
        }
        if self.cache_dir.is_some() {
            cfg.cache_dir = self.cache_dir.clone();
        }
        cfg
    }

    fn client(&self) -> Result<ScoringClient> {
        self.oracle(None).connect()
    }
}

fn parse_keep(s: &str) -> Result<Retention> {
    match s.parse::<usize>() {
        Ok(m) => {
            let r = Retention::Count(m);
            r.validate()?;
            Ok(r)
        }
        Err(_) => s.parse(),
    }
}

fn load_space(path: &Path, vocab: &Vocabulary) -> Result<SearchSpace> {
    let space = SearchSpace::load(path)?;
    space.check_against(vocab)?;
    Ok(space)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn report_queries(client: &ScoringClient) {
    let q = client.queries();
    println!(
        "queries: {} prompt evaluations, {} example forwards",
        q.prompt_evals, q.example_forwards
    );
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Cluster {
            vocab,
            embeddings,
            k,
            seed,
            max_iters,
            out,
        } => {
            let v = vocab.load()?;
            let emb = match (&embeddings, &g.endpoint) {
                (Some(p), _) => TokenEmbeddings::load(p)?,
                (None, Some(url)) => HttpBackend::new(url, RetryPolicy::default())?
                    .embeddings(&v.ids().collect::<Vec<_>>())?,
                (None, None) => {
                    return Err(ClapsError::Config("give --embeddings or --endpoint".into()));
                }
            };
            let emb = emb.restrict_to(&v);
            let cfg = ClusterConfig {
                num_clusters: k,
                max_iters,
                seed,
                ..ClusterConfig::default()
            };
            let clustering = kmeanspp_cluster(&emb, &cfg)?;
            let space = select_centroid_tokens(&emb, &clustering.centroids, &v)?;
            space.save(&out)?;
            println!(
                "clustered {} tokens into {k} clusters in {} iterations; {} distinct tokens -> {}",
                emb.len(),
                clustering.iterations,
                space.len(),
                out.display()
            );
        }
        Command::Prune {
            vocab,
            data,
            space,
            keep,
            table,
            out,
        } => {
            let keep = parse_keep(&keep)?;
            let v = vocab.load()?;
            let candidates = match &space {
                Some(p) => load_space(p, &v)?,
                None => SearchSpace::full(&v)?,
            };
            let (train, _) = data.sets()?;
            let client = g.client()?;
            let ev = Evaluator::new(&client, &v, &vocab.marker);
            let table_path = table.unwrap_or_else(|| with_suffix(&out, ".influence.tsv"));
            let partial = with_suffix(&table_path, ".partial");
            let t = ev.build_influence_table(candidates.token_ids(), &train, Some(&partial))?;
            t.save(&table_path)?;
            let _ = std::fs::remove_file(&partial);
            let mut pruned = rank_and_prune(&t, keep)?;
            pruned.source_vocab = v.content_hash();
            pruned.save(&out)?;
            println!(
                "scored {} tokens (baseline reward {:.5}); kept {} -> {}",
                t.len(),
                t.baseline,
                pruned.len(),
                out.display()
            );
            report_queries(&client);
        }
        Command::Search {
            vocab,
            data,
            space,
            strategy,
            k_tokens,
            epochs,
            population,
            mutation_prob,
            seed,
            run_log,
            out,
        } => {
            let v = vocab.load()?;
            let space = load_space(&space, &v)?;
            let (_, val) = data.sets()?;
            let cfg = match strategy {
                Strategy::Genetic => {
                    let d = GeneticConfig::default();
                    let pop = population.unwrap_or(d.population);
                    StrategyConfig::Genetic(GeneticConfig {
                        prompt_len: k_tokens,
                        population: pop,
                        epochs: epochs.unwrap_or(d.epochs),
                        mutation_count: pop / 2,
                        crossover_count: pop - pop / 2,
                        mutation_prob: mutation_prob.unwrap_or(d.mutation_prob),
                        seed,
                        ..d
                    })
                }
                Strategy::Greedy => StrategyConfig::Greedy(GreedyConfig {
                    prompt_len: k_tokens,
                }),
                Strategy::Pso => {
                    let d = PsoConfig::default();
                    StrategyConfig::Pso(PsoConfig {
                        prompt_len: k_tokens,
                        swarm_size: population.unwrap_or(d.swarm_size),
                        epochs: epochs.unwrap_or(d.epochs),
                        seed,
                        ..d
                    })
                }
            };
            if k_tokens == 0 {
                return Err(ClapsError::Config("--k-tokens must be at least 1".into()));
            }
            let client = g.client()?;
            let log = RunLog::append_to(run_log.unwrap_or_else(|| with_suffix(&out, ".jsonl")))?;
            let ctx = SearchContext::new(Evaluator::new(&client, &v, &vocab.marker), &space, &val)
                .with_log(Some(&log));
            let result = cfg.search(&ctx)?;
            let artifact = SearchArtifact {
                surface: result.best_prompt.surface(&v, &vocab.marker)?,
                result,
            };
            artifact.save(&out)?;
            println!(
                "best prompt: \"{}\" {} reward {:.5} accuracy {:.4}",
                artifact.surface,
                artifact.result.best_prompt,
                artifact.result.best_fitness,
                artifact.result.best_accuracy
            );
            report_queries(&client);
        }
        Command::Analyze {
            vocab,
            data,
            space,
            samples,
            k_tokens,
            seed,
            influence,
            bins,
            compare_full,
        } => {
            let v = vocab.load()?;
            let space = load_space(&space, &v)?;
            if let Some(p) = &influence {
                let t = InfluenceTable::load(p)?;
                println!(
                    "influence histogram ({} tokens, baseline {:.5})",
                    t.len(),
                    t.baseline
                );
                println!("{:>12} {:>12} {:>8}", "low", "high", "count");
                for (lo, hi, c) in t.histogram(bins) {
                    println!("{lo:>12.5} {hi:>12.5} {c:>8}");
                }
            }
            let (_, val) = data.sets()?;
            let client = g.client()?;
            let ev = Evaluator::new(&client, &v, &vocab.marker);
            let mut rows = vec![("space", SearchContext::new(ev, &space, &val))];
            let full = SearchSpace::full(&v)?;
            if compare_full {
                rows.push(("vocabulary", SearchContext::new(ev, &full, &val)));
            }
            println!("random {k_tokens}-token prompts, {samples} samples");
            println!(
                "{:<12} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
                "source", "size", "min", "median", "mean", "max", "mean acc"
            );
            for (name, ctx) in &rows {
                let s = random_sample_study(ctx, samples, k_tokens, seed)?;
                println!(
                    "{name:<12} {:>6} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.4}",
                    ctx.space.len(),
                    s.reward.min,
                    s.reward.median,
                    s.reward.mean,
                    s.reward.max,
                    s.accuracy.mean
                );
            }
            report_queries(&client);
        }
        Command::Eval {
            vocab,
            prompt,
            dataset,
            split,
            template,
            out,
        } => {
            let v = vocab.load()?;
            let prompt = load_prompt(&prompt)?;
            for &id in prompt.ids() {
                if !v.contains(id) {
                    return Err(ClapsError::UnknownToken(id));
                }
            }
            let template = Arc::new(TemplateSpec::resolve(&template)?);
            let data = DatasetSplit::load(split_path(&dataset, &split), &split)?;
            let client = g.client()?;
            let report = evaluate(
                &Evaluator::new(&client, &v, &vocab.marker),
                &prompt,
                &template,
                &data,
            )?;
            println!(
                "{}: accuracy {:.4} over {} examples (reward {:.5})",
                report.split, report.accuracy, report.examples, report.reward
            );
            for c in &report.per_class {
                println!(
                    "  {:<16} {:>5}/{:<5} {:.4}",
                    c.verbalizer, c.correct, c.support, c.accuracy
                );
            }
            if let Some(p) = out {
                let json = serde_json::to_string_pretty(&report).expect("report serializes");
                std::fs::write(&p, json)
                    .map_err(|e| ClapsError::Data(format!("writing {}: {e}", p.display())))?;
            }
            report_queries(&client);
        }
        Command::Run { config } => {
            let mut cfg = PipelineConfig::load(&config)?;
            cfg.oracle = g.oracle(Some(&cfg.oracle));
            let client = cfg.oracle.connect()?;
            let outcome = run_pipeline(&cfg, &client)?;
            for s in &outcome.stages {
                println!(
                    "{:<10} {:<8} {:>8} prompt evals  {}",
                    s.stage,
                    if s.reused { "reused" } else { "computed" },
                    s.queries.prompt_evals,
                    s.artifact.display()
                );
            }
            println!(
                "best prompt: \"{}\" {} val reward {:.5}; test accuracy {:.4}",
                outcome.prompt,
                outcome.search.best_prompt,
                outcome.search.best_fitness,
                outcome.test.accuracy
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_logging(cli.global.log.as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
