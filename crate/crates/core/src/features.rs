//! Student feature vectors (`h`) for samples and tokens.

use std::sync::Arc;

use crate::data::{Sample, TaskKind};
use crate::embedding::{hashed_featurize, EmbeddingError, EmbeddingProvider};
use crate::tokenize::{tokenize, TokenizedSample};

/// Tokens on each side of the centre token included in a token feature.
pub const TOKEN_WINDOW: usize = 2;

/// Turns samples into the feature vectors the linear student consumes.
///
/// Sequence tasks use the context embedding directly. Token tasks hash each
/// token of a ±[`TOKEN_WINDOW`] window into its own block and concatenate the
/// blocks in position order; positions past either edge are zero blocks.
#[derive(Clone)]
pub struct Featurizer {
    provider: Arc<dyn EmbeddingProvider>,
    token_dim: usize,
    token_seed: u64,
}

impl std::fmt::Debug for Featurizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Featurizer")
            .field("provider_dim", &self.provider.dim())
            .field("token_dim", &self.token_dim)
            .finish()
    }
}

impl Featurizer {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, token_dim: usize, token_seed: u64) -> Self {
        Self {
            provider,
            token_dim,
            token_seed,
        }
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    /// Feature dimension for `task`.
    pub fn dim(&self, task: TaskKind) -> usize {
        if task.is_token_task() {
            self.token_dim * (2 * TOKEN_WINDOW + 1)
        } else {
            self.provider.dim()
        }
    }

    /// One vector for sequence tasks, one per token for the token task.
    pub fn sample_features(&self, sample: &Sample) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        if sample.task.is_token_task() {
            self.token_features(&tokenize(sample))
        } else {
            Ok(vec![self.provider.embed(&sample.context)?.into_values()])
        }
    }

    pub fn token_features(&self, ts: &TokenizedSample) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let blocks = ts
            .tokens
            .iter()
            .map(|t| hashed_featurize(t, self.token_dim, self.token_seed).map(|v| v.into_values()))
            .collect::<Result<Vec<_>, _>>()?;
        let width = 2 * TOKEN_WINDOW + 1;
        Ok((0..blocks.len())
            .map(|k| {
                let mut h = vec![0.0; self.token_dim * width];
                for slot in 0..width {
                    let pos = k as isize + slot as isize - TOKEN_WINDOW as isize;
                    if pos >= 0 && (pos as usize) < blocks.len() {
                        h[slot * self.token_dim..(slot + 1) * self.token_dim]
                            .copy_from_slice(&blocks[pos as usize]);
                    }
                }
                h
            })
            .collect())
    }
}
