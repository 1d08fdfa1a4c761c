//! Prompt templates and verbalizers.
//!
//! A pattern holds the slots `{prompt}`, `{sentence_1}` and optionally
//! `{sentence_2}`. When the prompt is empty, the `{prompt}` slot is removed
//! together with the separator that follows it (one of `.,:;` and any
//! whitespace), which yields the prompt-free baseline input.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Record;
use crate::error::{ClapsError, Result};

const PROMPT: &str = "{prompt}";
const S1: &str = "{sentence_1}";
const S2: &str = "{sentence_2}";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    #[serde(default)]
    pub name: String,
    pub pattern: String,
    pub verbalizers: Vec<String>,
}

impl TemplateSpec {
    pub fn new(name: &str, pattern: &str, verbalizers: &[&str]) -> Result<Self> {
        let t = TemplateSpec {
            name: name.to_string(),
            pattern: pattern.to_string(),
            verbalizers: verbalizers.iter().map(|s| s.to_string()).collect(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pattern.matches(PROMPT).count() != 1 {
            return Err(ClapsError::Template(format!(
                "pattern must contain {PROMPT} exactly once: {:?}",
                self.pattern
            )));
        }
        if !self.pattern.contains(S1) {
            return Err(ClapsError::Template(format!(
                "pattern must contain {S1}: {:?}",
                self.pattern
            )));
        }
        if self.verbalizers.len() < 2 {
            return Err(ClapsError::Template(
                "at least two verbalizers required".into(),
            ));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.verbalizers.len()
    }

    pub fn needs_sentence_2(&self) -> bool {
        self.pattern.contains(S2)
    }

    /// Loads a built-in template by name or a JSON file
    /// `{"name": .., "pattern": .., "verbalizers": [..]}`.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(t) = builtin(name_or_path) {
            return Ok(t);
        }
        let path = Path::new(name_or_path);
        let raw = std::fs::read_to_string(path).map_err(|e| {
            ClapsError::Config(format!(
                "`{name_or_path}` is neither a built-in template nor a readable file: {e}"
            ))
        })?;
        let t: TemplateSpec = serde_json::from_str(&raw)
            .map_err(|e| ClapsError::Config(format!("{}: {e}", path.display())))?;
        t.validate()?;
        Ok(t)
    }
}

/// Fills the template. An empty `prompt_surface` drops the prompt slot and its separator.
pub fn apply_template(t: &TemplateSpec, record: &Record, prompt_surface: &str) -> Result<String> {
    let sentence_2 = match (&record.sentence_2, t.needs_sentence_2()) {
        (Some(s), _) => s.as_str(),
        (None, false) => "",
        (None, true) => {
            return Err(ClapsError::Template(format!(
                "template `{}` needs sentence_2 but the record has none",
                t.name
            )))
        }
    };
    let start = t
        .pattern
        .find(PROMPT)
        .ok_or_else(|| ClapsError::Template("pattern lacks {prompt}".into()))?;
    let head = &t.pattern[..start];
    let tail = &t.pattern[start + PROMPT.len()..];
    let (prompt_part, tail) = if prompt_surface.is_empty() {
        ("", strip_separator(tail))
    } else {
        (prompt_surface, tail)
    };
    let fill = |s: &str| fill_slots(s, &record.sentence_1, sentence_2);
    Ok(format!("{}{prompt_part}{}", fill(head), fill(tail)))
}

/// Single left-to-right pass, so slot-like text inside a record is kept verbatim.
fn fill_slots(segment: &str, sentence_1: &str, sentence_2: &str) -> String {
    let mut out = String::with_capacity(segment.len() + sentence_1.len() + sentence_2.len());
    let mut rest = segment;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix(S1) {
            out.push_str(sentence_1);
            rest = after;
        } else if let Some(after) = tail.strip_prefix(S2) {
            out.push_str(sentence_2);
            rest = after;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

fn strip_separator(tail: &str) -> &str {
    let tail = tail.strip_prefix(['.', ',', ':', ';']).unwrap_or(tail);
    tail.trim_start()
}

/// Templates used for the GLUE-style and news classification tasks.
pub fn builtin(name: &str) -> Option<TemplateSpec> {
    let nli_instruction = "{prompt}. In this task, the goal is to predict textual entailment with 'yes' 'maybe' 'no'. sentence A implies sentence B entailment: yes; sentence A is neutral to sentence B entailment: maybe; sentence A contradicts sentence B entailment: no. Sentence A: {sentence_1}, Sentence B: {sentence_2}, Entailment: ";
    let (pattern, verbalizers): (&str, &[&str]) = match name {
        "sst2" => ("{prompt}. Sentence: {sentence_1}, Sentiment: ", &["negative", "positive"]),
        "rte" => (
            "{prompt}. Sentence 1: {sentence_1}, Sentence 2: {sentence_2}, Textual Entailment: ",
            &["yes", "no"],
        ),
        "qnli" => (
            "{prompt}. Question: {sentence_1}, Sentence: {sentence_2}, Entailment: ",
            &["yes", "no"],
        ),
        "mrpc" => (
            "{prompt}. Sentence 1: {sentence_1}, Sentence 2: {sentence_2}, Semantically Equivalent: ",
            &["no", "yes"],
        ),
        "qqp" => (
            "{prompt}. Sentence 1: {sentence_1}, Sentence 2: {sentence_2}, Semantically Equivalent:",
            &["no", "yes"],
        ),
        "snli" | "mnli" | "xnli" => (
            "{prompt} {sentence_1} {sentence_2} Entailment: ",
            &["yes", "maybe", "no"],
        ),
        "snli-instruct" | "mnli-instruct" | "xnli-instruct" => (nli_instruction, &["yes", "maybe", "no"]),
        "agnews" => (
            "{prompt}. Classify the news articles into the categories of World, Sports, Business, and Technology. {sentence_1}: ",
            &["World", "Sports", "Business", "Technology"],
        ),
        _ => return None,
    };
    Some(TemplateSpec::new(name, pattern, verbalizers).expect("built-in templates are valid"))
}

pub const BUILTIN_TEMPLATES: &[&str] = &[
    "sst2",
    "rte",
    "qnli",
    "mrpc",
    "qqp",
    "snli",
    "mnli",
    "xnli",
    "snli-instruct",
    "mnli-instruct",
    "xnli-instruct",
    "agnews",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn record(s1: &str, s2: Option<&str>) -> Record {
        Record {
            sentence_1: s1.to_string(),
            sentence_2: s2.map(str::to_string),
            label: 1,
        }
    }

    #[test]
    fn sst2_with_prompt() {
        let t = builtin("sst2").unwrap();
        let out = apply_template(&t, &record("great movie", None), "review").unwrap();
        assert_eq!(out, "review. Sentence: great movie, Sentiment: ");
    }

    #[test]
    fn sst2_baseline_drops_slot_and_separator() {
        let t = builtin("sst2").unwrap();
        let out = apply_template(&t, &record("great movie", None), "").unwrap();
        assert_eq!(out, "Sentence: great movie, Sentiment: ");
    }

    #[test]
    fn space_separated_template_baseline() {
        let t = builtin("mnli").unwrap();
        let r = record("A man sleeps.", Some("A person rests."));
        assert_eq!(
            apply_template(&t, &r, "").unwrap(),
            "A man sleeps. A person rests. Entailment: "
        );
        assert_eq!(
            apply_template(&t, &r, "tell relevant").unwrap(),
            "tell relevant A man sleeps. A person rests. Entailment: "
        );
    }

    #[test]
    fn pair_template_requires_second_sentence() {
        let t = builtin("rte").unwrap();
        let err = apply_template(&t, &record("only one", None), "x").unwrap_err();
        assert!(matches!(err, ClapsError::Template(_)));
    }

    #[test]
    fn record_text_is_not_rescanned() {
        let t = builtin("rte").unwrap();
        let r = record("mentions {sentence_2} literally", Some("second"));
        let out = apply_template(&t, &r, "").unwrap();
        assert!(out.contains("mentions {sentence_2} literally"));
    }

    #[test]
    fn invalid_patterns_are_rejected() {
        assert!(TemplateSpec::new("x", "{sentence_1}", &["a", "b"]).is_err());
        assert!(TemplateSpec::new("x", "{prompt}{prompt} {sentence_1}", &["a", "b"]).is_err());
        assert!(TemplateSpec::new("x", "{prompt}", &["a", "b"]).is_err());
        assert!(TemplateSpec::new("x", "{prompt} {sentence_1}", &["a"]).is_err());
    }

    #[test]
    fn all_builtins_resolve() {
        for name in BUILTIN_TEMPLATES {
            let t = TemplateSpec::resolve(name).unwrap();
            assert_eq!(&t.name, name);
        }
        assert_eq!(builtin("agnews").unwrap().num_classes(), 4);
    }

    #[test]
    fn template_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let t = builtin("qnli").unwrap();
        std::fs::write(&path, serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(TemplateSpec::resolve(path.to_str().unwrap()).unwrap(), t);
    }
}
