//! Caption generation by repeated `[MASK]` prediction, and the referring
//! expression head.

use std::cmp::Ordering;

use dimvl_tensor::{Graph, Var};
use serde::{Deserialize, Serialize};

use crate::embeddings::SequenceLayout;
use crate::error::{Error, Result};
use crate::model::{roi_scores, word_logits, BoundParams, Model};
use crate::objectives::{build_blm_mask, build_s2slm_mask};
use crate::vocab::{TokenId, END, NUM_SPECIAL};
use crate::world::RoiFeature;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub beam_size: usize,
    /// Maximum number of decoding steps; `[END]` counts as a step.
    pub max_length: usize,
    /// Length-normalization exponent; 0 ranks by the raw log-probability sum.
    pub alpha: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { beam_size: 3, max_length: 24, alpha: 0.0 }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_length == 0 {
            return Err(Error::Config("beam_size and max_length must be at least 1".into()));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Next-token log-probabilities given a prefix. Tokens with a log-probability
/// of negative infinity are never emitted.
pub trait StepScorer {
    fn end_token(&self) -> TokenId;
    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Emitted tokens, including a final `[END]` when finished.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    fn score(&self, alpha: f64) -> f64 {
        if alpha == 0.0 {
            self.log_prob
        } else {
            self.log_prob / (self.tokens.len().max(1) as f64).powf(alpha)
        }
    }
}

/// A decoded caption without its `[END]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub finished: bool,
}

impl From<BeamHypothesis> for Decoded {
    fn from(h: BeamHypothesis) -> Self {
        let mut tokens = h.tokens;
        if h.finished {
            tokens.pop();
        }
        Self { tokens, log_prob: h.log_prob, finished: h.finished }
    }
}

fn argmax_lowest(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        if x == f64::NEG_INFINITY {
            continue;
        }
        if best.map_or(true, |b| x > xs[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn greedy<S: StepScorer>(scorer: &S, max_length: usize) -> Result<Decoded> {
    let end = scorer.end_token();
    let mut h = BeamHypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false };
    while h.tokens.len() < max_length {
        let lp = scorer.log_probs(&h.tokens)?;
        let t = argmax_lowest(&lp).ok_or_else(|| Error::Contract("no emittable token".into()))?;
        h.tokens.push(t);
        h.log_prob += lp[t];
        if t == end {
            h.finished = true;
            break;
        }
    }
    Ok(h.into())
}

/// Ranks hypotheses: higher score, then shorter (finished earlier), then
/// lexicographically smaller token ids.
fn rank(alpha: f64) -> impl Fn(&BeamHypothesis, &BeamHypothesis) -> Ordering {
    move |a, b| {
        b.score(alpha)
            .total_cmp(&a.score(alpha))
            .then(a.tokens.len().cmp(&b.tokens.len()))
            .then_with(|| a.tokens.cmp(&b.tokens))
    }
}

/// Keeps the `beam_size` best expansions each step; expansions ending in
/// `[END]` leave the frontier. Unfinished hypotheses still alive after
/// `max_length` steps compete as they are.
pub fn beam<S: StepScorer>(scorer: &S, config: &GenerationConfig) -> Result<Decoded> {
    config.validate()?;
    let end = scorer.end_token();
    let mut alive = vec![BeamHypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }];
    let mut done = Vec::new();
    for _ in 0..config.max_length {
        let mut candidates = Vec::new();
        for h in &alive {
            let lp = scorer.log_probs(&h.tokens)?;
            for (t, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                candidates.push(BeamHypothesis { tokens, log_prob: h.log_prob + l, finished: t == end });
            }
        }
        candidates.sort_by(rank(0.0));
        candidates.truncate(config.beam_size);
        alive.clear();
        for c in candidates {
            if c.finished {
                done.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() {
            break;
        }
    }
    done.extend(alive);
    done.sort_by(rank(config.alpha));
    done.into_iter()
        .next()
        .map(Decoded::from)
        .ok_or_else(|| Error::Contract("beam search produced no hypothesis".into()))
}

/// Vocabulary distribution at the `[MASK]` that follows `prefix`.
pub fn caption_step(model: &Model, rois: &[RoiFeature], concepts: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>> {
    let layout = SequenceLayout::for_generation(rois.len(), concepts, prefix, &model.config)?;
    let mask = build_s2slm_mask(&layout);
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, &model.params)?;
    let enc = model.encode_on(&mut g, &p, &layout, rois, &mask, None)?;
    let logits = word_logits(&mut g, &p, &model.config, enc.hidden, &[layout.len() - 1])?;
    let probs = g.softmax(logits, 1)?;
    Ok(g.value(probs).data().to_vec())
}

/// Adapts [`caption_step`] to the decoders. Only words and `[END]` are
/// emittable.
pub struct CaptionScorer<'a> {
    pub model: &'a Model,
    pub rois: &'a [RoiFeature],
    pub concepts: &'a [TokenId],
}

impl StepScorer for CaptionScorer<'_> {
    fn end_token(&self) -> TokenId {
        END
    }

    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let mut lp: Vec<f64> = caption_step(self.model, self.rois, self.concepts, prefix)?
            .into_iter()
            .map(f64::ln)
            .collect();
        for (t, l) in lp.iter_mut().enumerate().take(NUM_SPECIAL) {
            if t != END {
                *l = f64::NEG_INFINITY;
            }
        }
        Ok(lp)
    }
}

pub fn greedy_decode(model: &Model, rois: &[RoiFeature], concepts: &[TokenId], config: &GenerationConfig) -> Result<Decoded> {
    config.validate()?;
    greedy(&CaptionScorer { model, rois, concepts }, config.max_length)
}

pub fn beam_search(model: &Model, rois: &[RoiFeature], concepts: &[TokenId], config: &GenerationConfig) -> Result<Decoded> {
    beam(&CaptionScorer { model, rois, concepts }, config)
}

/// Layout for a referring query: the query takes the sentence segment.
pub fn referring_layout(model: &Model, rois: &[RoiFeature], concepts: &[TokenId], query: &[TokenId]) -> Result<SequenceLayout> {
    if rois.is_empty() {
        return Err(Error::Contract("referring needs at least one RoI".into()));
    }
    SequenceLayout::new(rois.len(), concepts, query, &model.config)
}

/// Records the referring forward (full bidirectional mask) on `g` and
/// returns the `R × 1` score column.
pub fn referring_scores_on(
    g: &mut Graph,
    p: &BoundParams,
    model: &Model,
    layout: &SequenceLayout,
    rois: &[RoiFeature],
    rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<Var> {
    let mask = build_blm_mask(layout);
    let enc = model.encode_on(g, p, layout, rois, &mask, rng)?;
    roi_scores(g, p, enc.hidden, layout)
}

pub fn referring_scores(model: &Model, rois: &[RoiFeature], concepts: &[TokenId], query: &[TokenId]) -> Result<Vec<f64>> {
    let layout = referring_layout(model, rois, concepts, query)?;
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, &model.params)?;
    let s = referring_scores_on(&mut g, &p, model, &layout, rois, None)?;
    Ok(g.value(s).data().to_vec())
}

fn one_hot(n: usize, target: usize) -> Result<Vec<f64>> {
    if target >= n {
        return Err(Error::Contract(format!("target {target} out of range for {n} RoIs")));
    }
    Ok((0..n).map(|i| if i == target { 1.0 } else { 0.0 }).collect())
}

/// Sum over RoIs of binary cross-entropy, label 1 at the target.
pub fn referring_loss(g: &mut Graph, scores: Var, target: usize) -> Result<Var> {
    let labels = one_hot(g.value(scores).len(), target)?;
    Ok(g.bce_with_logits(scores, &labels)?)
}

pub fn referring_loss_value(scores: &[f64], target: usize) -> Result<f64> {
    let labels = one_hot(scores.len(), target)?;
    Ok(scores
        .iter()
        .zip(&labels)
        .map(|(&s, &y)| s.max(0.0) - s * y + (-s.abs()).exp().ln_1p())
        .sum())
}

/// Index of the highest score; the lowest index wins ties.
pub fn referring_predict(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Contract("no scores to rank".into()));
    }
    Ok(scores.iter().enumerate().fold(0, |best, (i, &s)| if s > scores[best] { i } else { best }))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Table(Vec<Vec<f64>>);

    impl StepScorer for Table {
        fn end_token(&self) -> TokenId {
            0
        }
        fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
            Ok(self.0[prefix.len()].clone())
        }
    }

    #[test]
    fn end_first_gives_empty_caption() {
        let t = Table(vec![vec![0.0, f64::NEG_INFINITY]]);
        let d = greedy(&t, 5).unwrap();
        assert!(d.tokens.is_empty() && d.finished);
        let d = beam(&t, &GenerationConfig { beam_size: 3, max_length: 5, alpha: 0.0 }).unwrap();
        assert!(d.tokens.is_empty() && d.finished);
    }

    #[test]
    fn greedy_respects_max_length() {
        let never_end = vec![f64::NEG_INFINITY, 0.0];
        let t = Table(vec![never_end; 4]);
        let d = greedy(&t, 3).unwrap();
        assert_eq!(d.tokens, vec![1, 1, 1]);
        assert!(!d.finished);
    }

    #[test]
    fn beam_recovers_path_greedy_misses() {
        // Greedy takes token 1 (ln 0.6) then is forced into a poor ending;
        // token 2 (ln 0.4) leads to a certain [END].
        let l = f64::ln;
        let table = Table(vec![vec![f64::NEG_INFINITY, l(0.6), l(0.4)], vec![l(0.5), l(0.25), l(0.25)], vec![l(1.0), f64::NEG_INFINITY, f64::NEG_INFINITY]]);
        struct Branch(Table);
        impl StepScorer for Branch {
            fn end_token(&self) -> TokenId {
                0
            }
            fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
                Ok(match prefix {
                    [] => self.0 .0[0].clone(),
                    [1, ..] => self.0 .0[1].clone(),
                    _ => self.0 .0[2].clone(),
                })
            }
        }
        let s = Branch(table);
        let g = greedy(&s, 2).unwrap();
        assert_eq!(g.tokens, vec![1]);
        let b = beam(&s, &GenerationConfig { beam_size: 2, max_length: 2, alpha: 0.0 }).unwrap();
        assert_eq!(b.tokens, vec![2]);
        assert!(b.log_prob > g.log_prob);
    }

    #[test]
    fn referring_loss_uniform_zero_scores() {
        let loss = referring_loss_value(&[0.0; 4], 2).unwrap();
        assert!((loss - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let mut g = Graph::new();
        let s = g.leaf(dimvl_tensor::Tensor::matrix(4, 1, vec![0.0; 4]).unwrap(), true).unwrap();
        let l = referring_loss(&mut g, s, 2).unwrap();
        assert!((g.value(l).item().unwrap() - 2.772588722239781).abs() < 1e-12);
        assert!(referring_loss(&mut g, s, 4).is_err());
    }

    #[test]
    fn predict_lowest_index_tie() {
        assert_eq!(referring_predict(&[1.0, 3.0, 3.0]).unwrap(), 1);
        assert_eq!(referring_predict(&[-5.0]).unwrap(), 0);
        assert!(referring_predict(&[]).is_err());
    }
}
