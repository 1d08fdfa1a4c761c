//! Token vocabulary and embedding tables.
//!
//! Vocabulary file: one record per line, `id<TAB>text<TAB>space_flag` with
//! `space_flag` either `0` or `1`.
//!
//! Embeddings come in two layouts, detected by the first bytes of the file:
//!
//! * text: a `dim=<D>` header line, then `id<TAB>v1,v2,...,vD` per line;
//! * binary: little-endian `u64` row count, `u64` dim, then `count * dim`
//!   little-endian `f32` values. Row `r` holds the vector of token id `r`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ClapsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl std::str::FromStr for TokenId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.parse().map(TokenId)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    pub text: String,
    /// Explicit "starts a new word" flag from the vocabulary file.
    pub space_flag: bool,
}

/// How a tokenizer marks tokens that begin a new word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WordMarker {
    /// Surface forms start with this glyph (`▁` for sentencepiece, `Ġ` for byte-level BPE).
    Prefix(String),
    /// Use the per-token `space_flag` column.
    Flag,
}

impl WordMarker {
    pub fn sentencepiece() -> Self {
        WordMarker::Prefix("\u{2581}".to_string())
    }

    pub fn byte_bpe() -> Self {
        WordMarker::Prefix("\u{0120}".to_string())
    }

    pub fn is_word_start(&self, token: &Token) -> bool {
        match self {
            WordMarker::Prefix(p) => {
                token.text.starts_with(p.as_str()) && token.text.len() > p.len()
            }
            WordMarker::Flag => token.space_flag,
        }
    }

    /// Surface form with the marker glyph removed.
    pub fn strip<'a>(&self, text: &'a str) -> &'a str {
        match self {
            WordMarker::Prefix(p) => text.strip_prefix(p.as_str()).unwrap_or(text),
            WordMarker::Flag => text,
        }
    }
}

impl std::str::FromStr for WordMarker {
    type Err = ClapsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flag" => Ok(WordMarker::Flag),
            "sentencepiece" | "spm" => Ok(WordMarker::sentencepiece()),
            "bpe" | "byte-bpe" => Ok(WordMarker::byte_bpe()),
            "" => Err(ClapsError::Config("empty word marker".into())),
            other => Ok(WordMarker::Prefix(other.to_string())),
        }
    }
}

impl Default for WordMarker {
    fn default() -> Self {
        WordMarker::sentencepiece()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<TokenId, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<Token>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (pos, tok) in tokens.iter().enumerate() {
            if tok.text.is_empty() {
                return Err(ClapsError::Data(format!("token {} has empty text", tok.id)));
            }
            if index.insert(tok.id, pos).is_some() {
                return Err(ClapsError::DuplicateId(tok.id));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.tokens.iter().map(|t| t.id)
    }

    pub fn get(&self, id: TokenId) -> Option<&Token> {
        self.index.get(&id).map(|&pos| &self.tokens[pos])
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn text(&self, id: TokenId) -> Result<&str> {
        self.get(id)
            .map(|t| t.text.as_str())
            .ok_or(ClapsError::UnknownToken(id))
    }

    /// Sub-vocabulary restricted to `ids`, in the order given.
    pub fn subset(&self, ids: &[TokenId]) -> Result<Vocabulary> {
        let tokens = ids
            .iter()
            .map(|&id| self.get(id).cloned().ok_or(ClapsError::UnknownToken(id)))
            .collect::<Result<Vec<_>>>()?;
        Vocabulary::from_tokens(tokens)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path)
            .map_err(|e| ClapsError::io(format!("reading vocabulary {}", path.display()), e))?;
        Self::parse(&raw, path)
    }

    pub fn parse(raw: &str, origin: &Path) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in raw.lines().enumerate() {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(id), Some(text), Some(flag), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(ClapsError::parse(
                    origin,
                    lineno,
                    "expected `id<TAB>text<TAB>space_flag`",
                ));
            };
            let id: TokenId = id
                .trim()
                .parse()
                .map_err(|_| ClapsError::parse(origin, lineno, format!("bad token id `{id}`")))?;
            if text.is_empty() {
                return Err(ClapsError::parse(origin, lineno, "empty token text"));
            }
            let space_flag = match flag.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(ClapsError::parse(
                        origin,
                        lineno,
                        format!("space flag must be 0 or 1, got `{other}`"),
                    ))
                }
            };
            if !seen.insert(id) {
                return Err(ClapsError::DuplicateId(id));
            }
            tokens.push(Token {
                id,
                text: text.to_string(),
                space_flag,
            });
        }
        if tokens.is_empty() {
            return Err(ClapsError::parse(
                origin,
                1,
                "vocabulary file has no records",
            ));
        }
        Vocabulary::from_tokens(tokens)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                t.id,
                t.text,
                u8::from(t.space_flag)
            ));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string())
            .map_err(|e| ClapsError::io(format!("writing vocabulary {}", path.display()), e))
    }

    /// Short content hash used to tie persisted search spaces to their vocabulary.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Keeps tokens that start a new word, preserving order and ids.
pub fn filter_word_tokens(vocab: &Vocabulary, marker: &WordMarker) -> Result<Vocabulary> {
    let tokens: Vec<Token> = vocab
        .tokens()
        .iter()
        .filter(|t| marker.is_word_start(t))
        .cloned()
        .collect();
    if tokens.is_empty() {
        return Err(ClapsError::EmptySpace(
            "no token carries the word-start marker".into(),
        ));
    }
    Vocabulary::from_tokens(tokens)
}

/// Normalized form used for dedup: marker stripped, then lowercased.
pub fn normalized_text(marker: &WordMarker, text: &str) -> String {
    marker.strip(text).to_lowercase()
}

/// Keeps the first token of every normalized surface form.
pub fn dedup_by_normalized_text(vocab: &Vocabulary, marker: &WordMarker) -> Vocabulary {
    let mut seen = HashSet::new();
    let tokens: Vec<Token> = vocab
        .tokens()
        .iter()
        .filter(|t| seen.insert(normalized_text(marker, &t.text)))
        .cloned()
        .collect();
    Vocabulary::from_tokens(tokens).expect("subset of a valid vocabulary is valid")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenEmbeddings {
    dim: usize,
    ids: Vec<TokenId>,
    data: Vec<f64>,
    index: HashMap<TokenId, usize>,
}

impl TokenEmbeddings {
    pub fn new(dim: usize, rows: Vec<(TokenId, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(ClapsError::Data("embedding dim must be positive".into()));
        }
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut index = HashMap::with_capacity(rows.len());
        for (id, v) in rows {
            if v.len() != dim {
                return Err(ClapsError::Data(format!(
                    "vector for token {id} has length {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ClapsError::Data(format!(
                    "vector for token {id} is not finite"
                )));
            }
            if index.insert(id, ids.len()).is_some() {
                return Err(ClapsError::DuplicateId(id));
            }
            ids.push(id);
            data.extend_from_slice(&v);
        }
        Ok(TokenEmbeddings {
            dim,
            ids,
            data,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn vector(&self, id: TokenId) -> Option<&[f64]> {
        self.index.get(&id).map(|&pos| self.row(pos))
    }

    /// Fails if any embedded id is missing from `vocab`.
    pub fn check_against(&self, vocab: &Vocabulary) -> Result<()> {
        match self.ids.iter().find(|id| !vocab.contains(**id)) {
            Some(&id) => Err(ClapsError::UnknownToken(id)),
            None => Ok(()),
        }
    }

    /// Rows for the tokens of `vocab`, in vocabulary order. Tokens without a
    /// vector are skipped.
    pub fn restrict_to(&self, vocab: &Vocabulary) -> TokenEmbeddings {
        let rows = vocab
            .ids()
            .filter_map(|id| self.vector(id).map(|v| (id, v.to_vec())))
            .collect();
        TokenEmbeddings::new(self.dim, rows).expect("rows taken from a valid table")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)
            .map_err(|e| ClapsError::io(format!("reading embeddings {}", path.display()), e))?;
        if bytes.starts_with(b"dim=") {
            let raw = String::from_utf8(bytes)
                .map_err(|_| ClapsError::parse(path, 1, "text embeddings must be UTF-8"))?;
            Self::parse_text(&raw, path)
        } else {
            Self::parse_binary(&bytes, path)
        }
    }

    pub fn parse_text(raw: &str, origin: &Path) -> Result<Self> {
        let mut lines = raw.lines().enumerate();
        let dim = match lines.next() {
            Some((_, header)) => header
                .trim()
                .strip_prefix("dim=")
                .and_then(|d| d.parse::<usize>().ok())
                .ok_or_else(|| ClapsError::parse(origin, 1, "expected header `dim=<D>`"))?,
            None => return Err(ClapsError::parse(origin, 1, "empty embeddings file")),
        };
        let mut rows = Vec::new();
        for (lineno, line) in lines {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| ClapsError::parse(origin, lineno, "expected `id<TAB>v1,...,vD`"))?;
            let id: TokenId = id
                .trim()
                .parse()
                .map_err(|_| ClapsError::parse(origin, lineno, format!("bad token id `{id}`")))?;
            let v = values
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| ClapsError::parse(origin, lineno, format!("bad float: {e}")))?;
            if v.len() != dim {
                return Err(ClapsError::parse(
                    origin,
                    lineno,
                    format!("expected {dim} values, found {}", v.len()),
                ));
            }
            rows.push((id, v));
        }
        Self::new(dim, rows).map_err(|e| match e {
            ClapsError::Data(msg) => ClapsError::parse(origin, 0, msg),
            other => other,
        })
    }

    pub fn parse_binary(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(ClapsError::parse(
                origin,
                0,
                "binary embeddings header truncated",
            ));
        }
        let count = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| ClapsError::parse(origin, 0, "binary embeddings header overflows"))?;
        let body = &bytes[16..];
        if body.len() != expected {
            return Err(ClapsError::parse(
                origin,
                0,
                format!(
                    "binary body has {} bytes, header implies {expected}",
                    body.len()
                ),
            ));
        }
        let rows = body
            .chunks_exact(dim.max(1) * 4)
            .take(count)
            .enumerate()
            .map(|(row, chunk)| {
                let v = chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect();
                (TokenId(row as u32), v)
            })
            .collect();
        Self::new(dim, rows)
    }

    pub fn to_text_string(&self) -> String {
        let mut out = format!("dim={}\n", self.dim);
        for (pos, id) in self.ids.iter().enumerate() {
            let values: Vec<String> = self.row(pos).iter().map(|x| x.to_string()).collect();
            out.push_str(&format!("{id}\t{}\n", values.join(",")));
        }
        out
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text_string())
            .map_err(|e| ClapsError::io(format!("writing embeddings {}", path.display()), e))
    }

    /// Writes the binary layout. Requires ids to be exactly `0..len` in order.
    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self
            .ids
            .iter()
            .enumerate()
            .any(|(row, id)| id.0 as usize != row)
        {
            return Err(ClapsError::Precondition(
                "binary embeddings require dense ids 0..n".into(),
            ));
        }
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        let mut f = fs::File::create(path)
            .map_err(|e| ClapsError::io(format!("creating {}", path.display()), e))?;
        f.write_all(&out)
            .map_err(|e| ClapsError::io(format!("writing {}", path.display()), e))
    }
}
