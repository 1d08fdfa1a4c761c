use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::vocab::{TokenId, Vocabulary, WordMarker};

/// A discrete prompt: an ordered sequence of vocabulary token ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Prompt(pub Vec<TokenId>);

impl Prompt {
    pub fn empty() -> Self {
        Prompt(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn pushed(&self, id: TokenId) -> Prompt {
        let mut ids = self.0.clone();
        ids.push(id);
        Prompt(ids)
    }

    /// Marker-stripped surface forms joined with single spaces.
    pub fn surface(&self, vocab: &Vocabulary, marker: &WordMarker) -> Result<String> {
        let words = self
            .0
            .iter()
            .map(|&id| vocab.text(id).map(|t| marker.strip(t).trim()))
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.0.iter().map(|id| id.to_string()).collect();
        write!(f, "[{}]", ids.join(","))
    }
}

impl From<Vec<u32>> for Prompt {
    fn from(v: Vec<u32>) -> Self {
        Prompt(v.into_iter().map(TokenId).collect())
    }
}

/// Prepends a prompt surface to an already formatted query, separated by `". "`.
/// An empty surface leaves the query untouched.
pub fn concat_prompt(surface: &str, formatted_query: &str) -> String {
    if surface.is_empty() {
        formatted_query.to_string()
    } else {
        format!("{surface}. {formatted_query}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Token;

    fn vocab() -> Vocabulary {
        let words = [
            "\u{2581}review",
            "\u{2581}cruise",
            "\u{2581}perfect",
            "\u{2581}properly",
        ];
        Vocabulary::from_tokens(
            words
                .iter()
                .enumerate()
                .map(|(i, w)| Token {
                    id: TokenId(i as u32),
                    text: w.to_string(),
                    space_flag: true,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_token_prompt() {
        let m = WordMarker::sentencepiece();
        let s = Prompt::from(vec![0]).surface(&vocab(), &m).unwrap();
        assert_eq!(
            concat_prompt(&s, "Sentence: great movie , Sentiment: "),
            "review. Sentence: great movie , Sentiment: "
        );
    }

    #[test]
    fn empty_prompt_is_identity() {
        let s = Prompt::empty()
            .surface(&vocab(), &WordMarker::sentencepiece())
            .unwrap();
        assert_eq!(concat_prompt(&s, "Q"), "Q");
    }

    #[test]
    fn five_tokens_join_with_spaces() {
        let v = vocab();
        let m = WordMarker::sentencepiece();
        let p = Prompt::from(vec![1, 2, 3, 0, 1]);
        let s = p.surface(&v, &m).unwrap();
        // string oracle: strip the marker glyph by hand and join
        let expected: Vec<String> = p
            .ids()
            .iter()
            .map(|id| v.text(*id).unwrap().chars().skip(1).collect())
            .collect();
        assert_eq!(s, "cruise perfect properly review cruise");
        assert_eq!(concat_prompt(&s, "Q"), format!("{}. Q", expected.join(" ")));
    }

    #[test]
    fn unknown_id_fails() {
        assert!(Prompt::from(vec![99])
            .surface(&vocab(), &WordMarker::sentencepiece())
            .is_err());
    }
}
