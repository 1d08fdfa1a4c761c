//! Search-space clustering, influence pruning and derivative-free search for
//! discrete prompts on black-box classifiers.
//!
//! The pipeline runs in fixed stage order:
//! optional K-means++ clustering of the token embeddings, per-token influence
//! scoring against a few-shot training set, top-k pruning, and finally a
//! genetic, greedy or particle-swarm search over the pruned space.

pub mod error;
pub mod harness;
pub mod oracle;
pub mod prompt;
pub mod reward;
pub mod search;
pub mod space;
pub mod vocab;

pub use error::{ClapsError, Result};
pub use prompt::Prompt;
pub use vocab::{TokenId, Vocabulary};

use std::path::Path;

/// Writes through a sibling temp file and renames, so readers never see a torn artifact.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, bytes)
        .map_err(|e| ClapsError::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| ClapsError::io(format!("renaming to {}", path.display()), e))
}
