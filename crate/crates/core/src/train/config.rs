//! Run configuration stored as a flat `key = value` text file. Blank lines
//! and lines starting with `#` are ignored; unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::decoding::GenerationConfig;
use crate::error::{Error, Result};
use crate::model::{scaled_init_std, AttentionMode, ModelConfig};
use crate::objectives::{MaskingPolicy, TaskMix};
use crate::vocab::Vocabulary;
use crate::world::WorldConfig;

/// How caption fine-tuning chooses targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaptionMasking {
    /// Every sentence slot, `[END]` included, is predicted once per epoch in
    /// shuffled order.
    FullCoverage,
    /// Sequence-to-sequence instances under the pre-training masking policy.
    Policy,
}

impl CaptionMasking {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FullCoverage => "full",
            Self::Policy => "policy",
        }
    }
}

impl FromStr for CaptionMasking {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::FullCoverage),
            "policy" => Ok(Self::Policy),
            other => Err(Error::Config(format!("unknown caption masking {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Base seed for data order, masking and task sampling.
    pub seed: u64,
    /// Seed for parameter initialization.
    pub init_seed: u64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Extra pre-training epochs on the fine-tuning corpus before fine-tuning.
    pub domain_epochs: usize,
    pub caption_epochs: usize,
    pub caption_lr: f64,
    pub referring_epochs: usize,
    pub referring_lr: f64,
    /// Fraction of each phase's steps spent in linear warmup.
    pub warmup_fraction: f64,
    pub task_mix: TaskMix,
    pub masking: MaskingPolicy,
    pub caption_masking: CaptionMasking,
    pub use_concepts: bool,
    pub average_k: usize,
    pub mode: AttentionMode,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_width: usize,
    pub dropout: f64,
    pub generation: GenerationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            init_seed: 0,
            batch_size: 16,
            pretrain_epochs: 10,
            pretrain_lr: 3e-4,
            domain_epochs: 2,
            caption_epochs: 10,
            caption_lr: 1e-4,
            referring_epochs: 10,
            referring_lr: 1e-4,
            warmup_fraction: 0.0,
            task_mix: TaskMix::default(),
            masking: MaskingPolicy::default(),
            caption_masking: CaptionMasking::FullCoverage,
            use_concepts: true,
            average_k: crate::train::DEFAULT_AVERAGE_K,
            mode: AttentionMode::Dim,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_width: 256,
            dropout: 0.0,
            generation: GenerationConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub fn model_config(&self, world: &WorldConfig, vocab: &Vocabulary) -> Result<ModelConfig> {
        let mut c = ModelConfig::for_world(world, vocab);
        c.mode = self.mode;
        c.d_model = self.d_model;
        c.n_layers = self.n_layers;
        c.n_heads = self.n_heads;
        c.ffn_width = self.ffn_width;
        c.dropout = self.dropout;
        c.init_std = scaled_init_std(self.d_model);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.average_k == 0 {
            return Err(Error::Config("average_k must be at least 1".into()));
        }
        for (name, lr) in [("pretrain_lr", self.pretrain_lr), ("caption_lr", self.caption_lr), ("referring_lr", self.referring_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1)".into()));
        }
        self.task_mix.validate()?;
        self.masking.validate()?;
        self.generation.validate()
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "init_seed" => self.init_seed = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, v)?,
            "domain_epochs" => self.domain_epochs = parse(key, v)?,
            "caption_epochs" => self.caption_epochs = parse(key, v)?,
            "caption_lr" => self.caption_lr = parse(key, v)?,
            "referring_epochs" => self.referring_epochs = parse(key, v)?,
            "referring_lr" => self.referring_lr = parse(key, v)?,
            "warmup_fraction" => self.warmup_fraction = parse(key, v)?,
            "blm_weight" => {
                let w: f64 = parse(key, v)?;
                self.task_mix = TaskMix { blm: w, s2slm: 1.0 - w };
            }
            "p_select" => self.masking.p_select = parse(key, v)?,
            "p_mask_token" => self.masking.p_mask_token = parse(key, v)?,
            "p_random" => self.masking.p_random = parse(key, v)?,
            "p_keep" => self.masking.p_keep = parse(key, v)?,
            "mask_concepts" => self.masking.mask_concepts = parse(key, v)?,
            "caption_masking" => self.caption_masking = v.parse()?,
            "use_concepts" => self.use_concepts = parse(key, v)?,
            "average_k" => self.average_k = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            "d_model" => self.d_model = parse(key, v)?,
            "n_layers" => self.n_layers = parse(key, v)?,
            "n_heads" => self.n_heads = parse(key, v)?,
            "ffn_width" => self.ffn_width = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "beam_size" => self.generation.beam_size = parse(key, v)?,
            "max_length" => self.generation.max_length = parse(key, v)?,
            "alpha" => self.generation.alpha = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply(text)?;
        Ok(c)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        self.apply(assignment)
    }

    pub fn to_pairs(&self) -> BTreeMap<&'static str, String> {
        let m = &self.masking;
        let g = &self.generation;
        [
            ("seed", self.seed.to_string()),
            ("init_seed", self.init_seed.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("domain_epochs", self.domain_epochs.to_string()),
            ("caption_epochs", self.caption_epochs.to_string()),
            ("caption_lr", self.caption_lr.to_string()),
            ("referring_epochs", self.referring_epochs.to_string()),
            ("referring_lr", self.referring_lr.to_string()),
            ("warmup_fraction", self.warmup_fraction.to_string()),
            ("blm_weight", self.task_mix.blm.to_string()),
            ("p_select", m.p_select.to_string()),
            ("p_mask_token", m.p_mask_token.to_string()),
            ("p_random", m.p_random.to_string()),
            ("p_keep", m.p_keep.to_string()),
            ("mask_concepts", m.mask_concepts.to_string()),
            ("caption_masking", self.caption_masking.as_str().to_string()),
            ("use_concepts", self.use_concepts.to_string()),
            ("average_k", self.average_k.to_string()),
            ("mode", self.mode.as_str().to_string()),
            ("d_model", self.d_model.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("ffn_width", self.ffn_width.to_string()),
            ("dropout", self.dropout.to_string()),
            ("beam_size", g.beam_size.to_string()),
            ("max_length", g.max_length.to_string()),
            ("alpha", g.alpha.to_string()),
        ]
        .into_iter()
        .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
