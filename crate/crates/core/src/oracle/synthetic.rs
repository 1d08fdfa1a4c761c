use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::Digest;

use super::{Backend, ClassDistribution, ScoringInput};
use crate::error::{ClapsError, Result};
use crate::vocab::TokenId;

/// Additive test oracle: `p_true = sigmoid(sum_k u(p_k) + d_i)`, with the
/// remaining mass split evenly over the other classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracleSpec {
    pub num_classes: usize,
    pub utilities: HashMap<TokenId, f64>,
    #[serde(default)]
    pub offsets: HashMap<usize, f64>,
    /// Offset for example indices missing from `offsets`. Without it, such
    /// indices are a lookup error.
    #[serde(default)]
    pub default_offset: Option<f64>,
}

impl SyntheticOracleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(ClapsError::Config(
                "synthetic oracle needs at least 2 classes".into(),
            ));
        }
        let finite = self
            .utilities
            .values()
            .chain(self.offsets.values())
            .all(|x| x.is_finite())
            && self.default_offset.is_none_or(f64::is_finite);
        if !finite {
            return Err(ClapsError::Config(
                "synthetic oracle values must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ClapsError::io(format!("reading {}", path.display()), e))?;
        let spec: Self = serde_json::from_str(&raw)
            .map_err(|e| ClapsError::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn utility(&self, id: TokenId) -> Result<f64> {
        self.utilities
            .get(&id)
            .copied()
            .ok_or(ClapsError::UnknownToken(id))
    }

    pub fn offset(&self, example_index: usize) -> Result<f64> {
        self.offsets
            .get(&example_index)
            .copied()
            .or(self.default_offset)
            .ok_or(ClapsError::UnknownExample(example_index))
    }

    /// Logit of the true class. Utilities are summed in sorted order so any
    /// permutation of the prompt gives a bit-identical result.
    pub fn logit(&self, prompt: &[TokenId], example_index: usize) -> Result<f64> {
        let mut utils = prompt
            .iter()
            .map(|&id| self.utility(id))
            .collect::<Result<Vec<_>>>()?;
        utils.sort_by(f64::total_cmp);
        Ok(utils.iter().sum::<f64>() + self.offset(example_index)?)
    }

    pub fn score(
        &self,
        prompt: &[TokenId],
        example_index: usize,
        label: usize,
    ) -> Result<ClassDistribution> {
        if label >= self.num_classes {
            return Err(ClapsError::Data(format!(
                "label {label} out of range for {} classes",
                self.num_classes
            )));
        }
        let p_true = sigmoid(self.logit(prompt, example_index)?);
        let rest = (1.0 - p_true) / (self.num_classes - 1) as f64;
        let mut probs = vec![rest; self.num_classes];
        probs[label] = p_true;
        Ok(ClassDistribution(probs))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
pub struct SyntheticBackend {
    spec: SyntheticOracleSpec,
    identity: String,
}

impl SyntheticBackend {
    pub fn new(spec: SyntheticOracleSpec) -> Result<Self> {
        spec.validate()?;
        let mut utils: Vec<_> = spec
            .utilities
            .iter()
            .map(|(k, v)| (k.0, v.to_bits()))
            .collect();
        utils.sort_unstable();
        let mut offsets: Vec<_> = spec
            .offsets
            .iter()
            .map(|(k, v)| (*k, v.to_bits()))
            .collect();
        offsets.sort_unstable();
        let fingerprint = format!(
            "{}|{utils:?}|{offsets:?}|{:?}",
            spec.num_classes,
            spec.default_offset.map(f64::to_bits)
        );
        let digest = sha2::Sha256::digest(fingerprint.as_bytes());
        Ok(SyntheticBackend {
            identity: format!("synthetic:{}", hex::encode(&digest[..8])),
            spec,
        })
    }

    pub fn spec(&self) -> &SyntheticOracleSpec {
        &self.spec
    }
}

impl Backend for SyntheticBackend {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn score(
        &self,
        inputs: &[&ScoringInput],
        classes: &[String],
    ) -> Result<Vec<ClassDistribution>> {
        if classes.len() != self.spec.num_classes {
            return Err(ClapsError::Protocol(format!(
                "synthetic oracle has {} classes, request has {}",
                self.spec.num_classes,
                classes.len()
            )));
        }
        inputs
            .iter()
            .map(|inp| self.spec.score(&inp.prompt, inp.example_index, inp.label))
            .collect()
    }
}
