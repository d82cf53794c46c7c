//! The attention network: joint item/indicator embeddings, stacked
//! Sustainability Integrated Attention layers, and the per-user weighted
//! prediction head.

mod checkpoint;
mod forward;
mod init_p;
mod params;

use serde::{Deserialize, Serialize};

use crate::dataset::Corpus;
use crate::error::{GrapeError, Result};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, RunMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use forward::{
    embed_sequences, forward, score_candidates, score_catalog, sia_forward, user_state, Embedded, ForwardOutput,
    SequenceInput, UserState,
};
pub use init_p::{grape_row, init_p, project_simplex, PVariant, P_GRAPE_EPSILON};
pub use params::{Bound, LayerParams, Layout, ParameterSet};

/// Hyperparameters chosen by the user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    /// Indicator discretization step.
    pub delta: f64,
    /// Most recent interactions kept; shorter histories are left-padded.
    pub w_max: usize,
    /// Scale attention logits by `1/sqrt(d/heads)`.
    pub attention_scaling: bool,
    pub ffn_hidden: usize,
    /// Dedicated query/key projections for each ordered channel pair.
    pub per_pair_projections: bool,
    /// Residual connections around the head merge and the FFN.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 16,
            heads: 2,
            layers: 1,
            delta: 5.0,
            w_max: 20,
            attention_scaling: true,
            ffn_hidden: 32,
            per_pair_projections: false,
            residual: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GrapeError::Config(format!("model: {m}")));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad("d must be a positive multiple of heads");
        }
        if self.layers == 0 {
            return bad("layers must be >= 1");
        }
        if !self.delta.is_finite() || self.delta <= 0.0 {
            return bad("delta must be positive");
        }
        if self.w_max < 2 {
            return bad("w_max must be >= 2");
        }
        if self.ffn_hidden == 0 {
            return bad("ffn_hidden must be >= 1");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

/// A [`ModelConfig`] bound to catalog dimensions; enough to rebuild the
/// parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub config: ModelConfig,
    pub users: usize,
    pub items: usize,
    pub indicators: usize,
    /// Largest indicator bin; higher values are clamped into it.
    pub max_bin: usize,
    /// One weight row shared by every user instead of one per user.
    pub shared_p: bool,
}

impl Architecture {
    pub fn new(config: ModelConfig, users: usize, items: usize, indicators: usize, max_raw: f64, shared_p: bool) -> Result<Self> {
        config.validate()?;
        if users == 0 || items == 0 {
            return Err(GrapeError::Config("empty corpus".into()));
        }
        let max_bin = (max_raw.max(0.0) / config.delta).floor() as usize;
        Ok(Architecture {
            config,
            users,
            items,
            indicators,
            max_bin,
            shared_p,
        })
    }

    pub fn for_corpus(config: &ModelConfig, corpus: &Corpus, variant: PVariant) -> Result<Self> {
        Architecture::new(
            config.clone(),
            corpus.users(),
            corpus.items(),
            corpus.indicator_count(),
            corpus.catalog.max_raw(),
            variant.is_shared(),
        )
    }

    pub fn channels(&self) -> usize {
        self.indicators + 1
    }

    /// Discrete bin of a raw indicator value, clamped to the table.
    pub fn bin(&self, g: f64) -> Result<usize> {
        if g < 0.0 || !g.is_finite() {
            return Err(GrapeError::Contract(format!(
                "indicator value {g} cannot be discretized (must be finite and >= 0)"
            )));
        }
        Ok(((g / self.config.delta).floor() as usize).min(self.max_bin))
    }

    /// Row of the indicator table for a raw value; row 0 is padding.
    pub fn bin_row(&self, g: f64) -> Result<usize> {
        Ok(self.bin(g)? + 1)
    }
}
