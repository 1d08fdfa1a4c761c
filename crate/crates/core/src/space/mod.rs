//! Prompt search spaces: clustered representatives and influence-pruned subsets.
//!
//! Persisted form: a header line `provenance=<full|clustered|pruned> source_vocab=<hash>`
//! (optionally followed by ` retention=<spec>`), then one token id per line.

mod kmeans;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use kmeans::{kmeanspp_cluster, ClusterConfig, Clustering};

use crate::error::{ClapsError, Result};
use crate::reward::InfluenceTable;
use crate::vocab::{TokenEmbeddings, TokenId, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Full,
    Clustered,
    Pruned,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Full => "full",
            Provenance::Clustered => "clustered",
            Provenance::Pruned => "pruned",
        })
    }
}

impl FromStr for Provenance {
    type Err = ClapsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Provenance::Full),
            "clustered" => Ok(Provenance::Clustered),
            "pruned" => Ok(Provenance::Pruned),
            other => Err(ClapsError::Data(format!("unknown provenance `{other}`"))),
        }
    }
}

/// How many ranked tokens survive pruning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retention {
    /// Top fraction in (0, 1], rounded up.
    Fraction(f64),
    Count(usize),
}

impl Retention {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Retention::Fraction(a) if a > 0.0 && a <= 1.0 => Ok(()),
            Retention::Count(m) if m >= 1 => Ok(()),
            other => Err(ClapsError::Config(format!("invalid retention {other}"))),
        }
    }

    pub fn keep_of(&self, total: usize) -> usize {
        match *self {
            Retention::Fraction(a) => ((a * total as f64).ceil() as usize).clamp(1, total.max(1)),
            Retention::Count(m) => m,
        }
    }
}

impl fmt::Display for Retention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Retention::Fraction(a) => write!(f, "fraction:{a}"),
            Retention::Count(m) => write!(f, "count:{m}"),
        }
    }
}

impl FromStr for Retention {
    type Err = ClapsError;

    fn from_str(s: &str) -> Result<Self> {
        let r = match s.split_once(':') {
            Some(("fraction", v)) => v.parse().map(Retention::Fraction).ok(),
            Some(("count", v)) => v.parse().map(Retention::Count).ok(),
            _ => None,
        }
        .ok_or_else(|| ClapsError::Config(format!("bad retention `{s}`")))?;
        r.validate()?;
        Ok(r)
    }
}

/// Per-position candidate tokens shared by every prompt slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    token_ids: Vec<TokenId>,
    pub provenance: Provenance,
    pub retention: Option<Retention>,
    pub source_vocab: String,
}

impl SearchSpace {
    pub fn new(
        token_ids: Vec<TokenId>,
        provenance: Provenance,
        source_vocab: impl Into<String>,
    ) -> Result<Self> {
        if token_ids.is_empty() {
            return Err(ClapsError::EmptySpace("search space has no tokens".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = token_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(ClapsError::DuplicateId(*dup));
        }
        Ok(SearchSpace {
            token_ids,
            provenance,
            retention: None,
            source_vocab: source_vocab.into(),
        })
    }

    pub fn full(vocab: &Vocabulary) -> Result<Self> {
        Self::new(
            vocab.ids().collect(),
            Provenance::Full,
            vocab.content_hash(),
        )
    }

    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.token_ids.contains(&id)
    }

    /// Fails unless every id exists in `vocab`.
    pub fn check_against(&self, vocab: &Vocabulary) -> Result<()> {
        match self.token_ids.iter().find(|id| !vocab.contains(**id)) {
            Some(id) => Err(ClapsError::UnknownToken(*id)),
            None => Ok(()),
        }
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!(
            "provenance={} source_vocab={}",
            self.provenance, self.source_vocab
        );
        if let Some(r) = &self.retention {
            out.push_str(&format!(" retention={r}"));
        }
        out.push('\n');
        for id in &self.token_ids {
            out.push_str(&format!("{id}\n"));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::write_atomic(path.as_ref(), self.to_file_string().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ClapsError::io(format!("reading search space {}", path.display()), e))?;
        let mut lines = raw.lines().enumerate();
        let header = lines
            .next()
            .map(|(_, l)| l)
            .ok_or_else(|| ClapsError::parse(path, 1, "empty search space file"))?;
        let mut provenance = None;
        let mut source = None;
        let mut retention = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("provenance", v)) => provenance = Some(v.parse::<Provenance>()?),
                Some(("source_vocab", v)) => source = Some(v.to_string()),
                Some(("retention", v)) => retention = Some(v.parse::<Retention>()?),
                _ => {
                    return Err(ClapsError::parse(
                        path,
                        1,
                        format!("unexpected header field `{field}`"),
                    ))
                }
            }
        }
        let (Some(provenance), Some(source)) = (provenance, source) else {
            return Err(ClapsError::parse(
                path,
                1,
                "header needs provenance= and source_vocab=",
            ));
        };
        let mut ids = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            ids.push(line.trim().parse::<TokenId>().map_err(|_| {
                ClapsError::parse(path, lineno + 1, format!("bad token id `{line}`"))
            })?);
        }
        let mut space = SearchSpace::new(ids, provenance, source)?;
        space.retention = retention;
        Ok(space)
    }
}

/// For each centroid, the vocabulary token whose embedding is nearest in l2
/// (ties to the lower token id). Repeated picks are kept once, first-seen order.
pub fn select_centroid_tokens(
    emb: &TokenEmbeddings,
    centroids: &[Vec<f64>],
    vocab: &Vocabulary,
) -> Result<SearchSpace> {
    if centroids.is_empty() {
        return Err(ClapsError::Precondition("no centroids".into()));
    }
    let rows: Vec<usize> = (0..emb.len())
        .filter(|&i| vocab.contains(emb.ids()[i]))
        .collect();
    if rows.is_empty() {
        return Err(ClapsError::EmptySpace(
            "no vocabulary token has an embedding".into(),
        ));
    }
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    for c in centroids {
        let mut best: Option<(f64, TokenId)> = None;
        for &i in &rows {
            let d = kmeans::sq_dist(emb.row(i), c);
            let id = emb.ids()[i];
            let better = match best {
                None => true,
                Some((bd, bid)) => d < bd || (d == bd && id < bid),
            };
            if better {
                best = Some((d, id));
            }
        }
        let (_, id) = best.expect("rows non-empty");
        if seen.insert(id) {
            ids.push(id);
        }
    }
    SearchSpace::new(ids, Provenance::Clustered, vocab.content_hash())
}

/// Keeps the highest-influence tokens (ties to the lower id), in ranked order.
pub fn rank_and_prune(table: &InfluenceTable, keep: Retention) -> Result<SearchSpace> {
    keep.validate()?;
    if table.is_empty() {
        return Err(ClapsError::EmptySpace("influence table is empty".into()));
    }
    let ranked = table.ranked();
    let mut n = keep.keep_of(ranked.len());
    if n > ranked.len() {
        log::warn!(
            "retention {keep} exceeds the {} scored tokens; keeping all",
            ranked.len()
        );
        n = ranked.len();
    }
    let mut space = SearchSpace::new(
        ranked[..n].iter().map(|(id, _)| *id).collect(),
        Provenance::Pruned,
        String::new(),
    )?;
    space.retention = Some(keep);
    Ok(space)
}
