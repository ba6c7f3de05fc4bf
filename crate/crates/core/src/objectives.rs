//! Masked language modeling with bidirectional and sequence-to-sequence
//! attention masks.

use dimvl_tensor::{Graph, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{SegmentId, SequenceLayout};
use crate::error::{Error, Result};
use crate::model::{word_logits, AttentionMask, BoundParams, ModelConfig};
use crate::vocab::{TokenId, Vocabulary, END, MASK};
use crate::world::{Example, RoiFeature};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskingPolicy {
    pub p_select: f64,
    pub p_mask_token: f64,
    pub p_random: f64,
    pub p_keep: f64,
    /// Also corrupt concept tokens (the masked-concept ablation).
    pub mask_concepts: bool,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self { p_select: 0.15, p_mask_token: 0.8, p_random: 0.1, p_keep: 0.1, mask_concepts: false }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_select, self.p_mask_token, self.p_random, self.p_keep];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("masking probabilities out of [0,1]: {self:?}")));
        }
        if (self.p_mask_token + self.p_random + self.p_keep - 1.0).abs() > 1e-9 {
            return Err(Error::Config("mask/random/keep probabilities must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Corruption {
    Mask,
    Random,
    Keep,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskingOutcome {
    pub tokens: Vec<TokenId>,
    /// Indices into `tokens`, ascending.
    pub targets: Vec<usize>,
    pub corruption: Vec<Corruption>,
}

/// Selects each token with `p_select`, then corrupts selected tokens to
/// `[MASK]`, a uniformly random word, or leaves them unchanged. When nothing
/// is selected one position is chosen uniformly so that every outcome has a
/// target.
pub fn apply_masking(
    tokens: &[TokenId],
    policy: &MaskingPolicy,
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Result<MaskingOutcome> {
    policy.validate()?;
    if tokens.is_empty() {
        return Err(Error::Contract("cannot mask an empty sentence".into()));
    }
    let mut targets: Vec<usize> = (0..tokens.len()).filter(|_| rng.gen::<f64>() < policy.p_select).collect();
    if targets.is_empty() {
        targets.push(rng.gen_range(0..tokens.len()));
    }
    let words = vocab.word_ids();
    let mut out = tokens.to_vec();
    let mut corruption = Vec::with_capacity(targets.len());
    for &t in &targets {
        let u: f64 = rng.gen();
        let kind = if u < policy.p_mask_token {
            out[t] = MASK;
            Corruption::Mask
        } else if u < policy.p_mask_token + policy.p_random {
            out[t] = rng.gen_range(words.clone());
            Corruption::Random
        } else {
            Corruption::Keep
        };
        corruption.push(kind);
    }
    Ok(MaskingOutcome { tokens: out, targets, corruption })
}

/// Every real position attends every real position. Padding columns are never
/// attendable; padding rows attend the real positions.
pub fn build_blm_mask_padded(layout: &SequenceLayout, total: usize) -> Result<AttentionMask> {
    let real = layout.len();
    if total < real {
        return Err(Error::Length { what: "padded mask", len: real, limit: total });
    }
    let allowed = (0..total).flat_map(|_| (0..total).map(move |j| j < real)).collect();
    AttentionMask::new(total, allowed)
}

pub fn build_blm_mask(layout: &SequenceLayout) -> AttentionMask {
    AttentionMask::full(layout.len())
}

/// Rows in the RoI and concept segments (including `[CLS]` and both `[SEP]`s)
/// attend exactly those segments. Sentence slot `j` (with `[END]` as the last
/// slot) attends those segments plus sentence slots `0..=j`.
pub fn build_s2slm_mask(layout: &SequenceLayout) -> AttentionMask {
    let s = layout.len();
    let mut allowed = vec![false; s * s];
    for i in 0..s {
        for j in 0..s {
            allowed[i * s + j] = layout.in_visual_block(j) || (!layout.in_visual_block(i) && j <= i);
        }
    }
    AttentionMask::new(s, allowed).expect("every row attends the visual block")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Blm,
    S2slm,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Blm => "blm",
            Self::S2slm => "s2slm",
        }
    }

    pub fn mask(self, layout: &SequenceLayout) -> AttentionMask {
        match self {
            Self::Blm => build_blm_mask(layout),
            Self::S2slm => build_s2slm_mask(layout),
        }
    }
}

/// Sampling weights over the two language-modeling tasks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMix {
    pub blm: f64,
    pub s2slm: f64,
}

impl Default for TaskMix {
    fn default() -> Self {
        Self { blm: 0.25, s2slm: 0.75 }
    }
}

impl TaskMix {
    pub fn only(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Blm => Self { blm: 1.0, s2slm: 0.0 },
            TaskKind::S2slm => Self { blm: 0.0, s2slm: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blm < 0.0 || self.s2slm < 0.0 || (self.blm + self.s2slm - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("task weights must be non-negative and sum to 1: {self:?}")));
        }
        Ok(())
    }
}

pub fn sample_task(mix: &TaskMix, rng: &mut impl Rng) -> TaskKind {
    if rng.gen::<f64>() < mix.blm {
        TaskKind::Blm
    } else {
        TaskKind::S2slm
    }
}

/// One masked input with its prediction targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingInstance {
    pub layout: SequenceLayout,
    pub rois: Vec<RoiFeature>,
    pub target_rows: Vec<usize>,
    pub target_ids: Vec<TokenId>,
    pub mask: AttentionMask,
    pub kind: TaskKind,
}

/// Token ids of an example's concepts and caption.
pub fn encode_example(example: &Example, vocab: &Vocabulary, use_concepts: bool) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
    let concepts = if use_concepts { vocab.encode(&example.concepts.words())? } else { Vec::new() };
    Ok((concepts, vocab.encode(&example.caption)?))
}

/// Builds a masked instance. Sentence words and the closing `[END]` are
/// maskable; concepts are too when the policy says so.
pub fn make_instance(
    example: &Example,
    kind: TaskKind,
    policy: &MaskingPolicy,
    vocab: &Vocabulary,
    config: &ModelConfig,
    use_concepts: bool,
    seed: u64,
) -> Result<TrainingInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (concepts, caption) = encode_example(example, vocab, use_concepts)?;
    let mut layout = SequenceLayout::new(example.roi_features.len(), &concepts, &caption, config)?;

    let mut rows: Vec<usize> = layout.sentence_rows().collect();
    if policy.mask_concepts {
        rows.splice(0..0, layout.concept_rows());
    }
    let originals: Vec<TokenId> = rows.iter().map(|&r| layout.get(r).token_id.expect("textual row")).collect();
    let outcome = apply_masking(&originals, policy, vocab, &mut rng)?;
    let mut target_rows = Vec::with_capacity(outcome.targets.len());
    let mut target_ids = Vec::with_capacity(outcome.targets.len());
    for &t in &outcome.targets {
        layout.set_token(rows[t], outcome.tokens[t], true)?;
        target_rows.push(rows[t]);
        target_ids.push(originals[t]);
    }
    let mask = kind.mask(&layout);
    Ok(TrainingInstance { layout, rois: example.roi_features.clone(), target_rows, target_ids, mask, kind })
}

/// Sequence-to-sequence instance predicting sentence slot `slot` (slot
/// `caption.len()` is `[END]`). Under the sequence-to-sequence mask nothing
/// after the masked slot is visible to it, so the sentence is cut after the
/// `[MASK]`, which is exactly the layout seen during generation.
pub fn make_slot_instance(
    example: &Example,
    slot: usize,
    vocab: &Vocabulary,
    config: &ModelConfig,
    use_concepts: bool,
) -> Result<TrainingInstance> {
    let (concepts, caption) = encode_example(example, vocab, use_concepts)?;
    if slot > caption.len() {
        return Err(Error::Contract(format!("slot {slot} beyond a caption of {} words", caption.len())));
    }
    let original = if slot == caption.len() { END } else { caption[slot] };
    let mut layout = SequenceLayout::for_generation(example.roi_features.len(), &concepts, &caption[..slot], config)?;
    let row = layout.len() - 1;
    layout.set_token(row, MASK, true)?;
    let mask = build_s2slm_mask(&layout);
    Ok(TrainingInstance {
        layout,
        rois: example.roi_features.clone(),
        target_rows: vec![row],
        target_ids: vec![original],
        mask,
        kind: TaskKind::S2slm,
    })
}

/// Mean cross-entropy over the targets of one instance.
pub fn mlm_loss(
    g: &mut Graph,
    p: &BoundParams,
    config: &ModelConfig,
    hidden: Var,
    layout: &SequenceLayout,
    target_rows: &[usize],
    target_ids: &[TokenId],
) -> Result<Var> {
    if target_rows.is_empty() || target_rows.len() != target_ids.len() {
        return Err(Error::Contract(format!(
            "{} target rows with {} target ids",
            target_rows.len(),
            target_ids.len()
        )));
    }
    for &r in target_rows {
        let info = layout.positions().get(r);
        let maskable = info.is_some_and(|p| {
            layout.sentence_rows().contains(&r) || (p.segment == SegmentId::Concept && p.is_target && layout.concept_rows().contains(&r))
        });
        if !maskable {
            return Err(Error::Contract(format!("target row {r} is outside the sentence segment")));
        }
    }
    let logits = word_logits(g, p, config, hidden, target_rows)?;
    Ok(g.cross_entropy(logits, target_ids)?)
}
