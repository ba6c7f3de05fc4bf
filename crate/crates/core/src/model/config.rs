use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;
use crate::world::{WorldConfig, GEOMETRY_DIM};

/// Entangled self-attention shares one q/k/v projection set across
/// modalities; disentangled attention gives visual rows their own set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Esa,
    Dim,
}

impl AttentionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Esa => "esa",
            Self::Dim => "dim",
        }
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "esa" => Ok(Self::Esa),
            "dim" => Ok(Self::Dim),
            other => Err(Error::Config(format!("unknown attention mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_width: usize,
    pub mode: AttentionMode,
    /// Rows of the position table; bounds concept count and sentence length.
    pub max_positions: usize,
    pub max_rois: usize,
    pub appearance_dim: usize,
    pub class_dim: usize,
    pub ln_eps: f64,
    pub dropout: f64,
    /// Standard deviation for weight matrices.
    pub init_std: f64,
    /// Standard deviation for token, position and segment tables.
    pub embed_init_std: f64,
    /// Use the transposed token table as the word-prediction matrix.
    pub tie_word_head: bool,
}

impl ModelConfig {
    /// Desk-scale defaults sized for the given world and vocabulary.
    pub fn for_world(world: &WorldConfig, vocab: &Vocabulary) -> Self {
        let d_model = 64;
        Self {
            vocab_size: vocab.len(),
            d_model,
            n_layers: 2,
            n_heads: 4,
            ffn_width: 4 * d_model,
            mode: AttentionMode::Dim,
            max_positions: 48,
            max_rois: 36,
            appearance_dim: world.appearance_dim(),
            class_dim: world.class_dim,
            ln_eps: 1e-12,
            dropout: 0.0,
            init_std: scaled_init_std(d_model),
            embed_init_std: 0.5,
            tie_word_head: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail("d_model must be a positive multiple of n_heads");
        }
        if self.d_model % 2 != 0 {
            return fail("d_model must be even");
        }
        if self.vocab_size <= crate::vocab::NUM_SPECIAL {
            return fail("vocabulary has no words");
        }
        if self.ffn_width == 0 || self.max_positions == 0 || self.appearance_dim == 0 || self.class_dim == 0 {
            return fail("zero-width component");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.ln_eps > 0.0 && self.init_std > 0.0 && self.embed_init_std > 0.0) {
            return fail("eps and init scales must be positive");
        }
        Ok(())
    }

    pub fn geometry_dim(&self) -> usize {
        GEOMETRY_DIM
    }

    /// Stable digest of every field that determines the parameter set.
    pub fn fingerprint(&self) -> String {
        let canonical = format!(
            "vocab={};d={};L={};n={};ffn={};mode={};pos={};rois={};dr={};dc={};eps={:e};tie={}",
            self.vocab_size,
            self.d_model,
            self.n_layers,
            self.n_heads,
            self.ffn_width,
            self.mode.as_str(),
            self.max_positions,
            self.max_rois,
            self.appearance_dim,
            self.class_dim,
            self.ln_eps,
            self.tie_word_head,
        );
        Sha256::digest(canonical.as_bytes())[..16]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// 0.02 at width 768, scaled by `sqrt(768 / d_model)`.
pub fn scaled_init_std(d_model: usize) -> f64 {
    0.02 * (768.0 / d_model as f64).sqrt()
}
