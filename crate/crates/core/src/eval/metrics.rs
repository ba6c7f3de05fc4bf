use std::collections::HashMap;

use crate::decoding::{caption_step, referring_predict, referring_scores};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::vocab::{TokenId, END, NUM_SPECIAL};
use crate::world::RoiFeature;

fn ngram_counts<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-`max_n` with uniform weights and brevity penalty.
///
/// Each candidate has one or more references. Clipped n-gram matches and
/// candidate n-gram totals are pooled over the corpus; the effective
/// reference length per candidate is the closest reference length (shorter
/// wins ties). Orders for which the corpus has no candidate n-grams are left
/// out of the geometric mean.
pub fn bleu<T: Eq + std::hash::Hash>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>], max_n: usize) -> Result<f64> {
    if references.is_empty() || references.iter().any(|r| r.is_empty()) {
        return Err(Error::Contract("BLEU needs at least one reference per candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates for {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Config("BLEU order must be at least 1".into()));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .expect("non-empty references");
        for n in 1..=max_n {
            let counts = ngram_counts(cand, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            for (gram, &c) in &counts {
                let max_ref = ref_counts.iter().map(|rc| rc.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
                matched[n - 1] += c.min(max_ref);
            }
            total[n - 1] += counts.values().sum::<usize>();
        }
    }
    let orders: Vec<usize> = (0..max_n).filter(|&n| total[n] > 0).collect();
    if orders.is_empty() || orders.iter().any(|&n| matched[n] == 0) {
        return Ok(0.0);
    }
    let log_p = orders.iter().map(|&n| (matched[n] as f64 / total[n] as f64).ln()).sum::<f64>() / orders.len() as f64;
    let bp = if cand_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / cand_len as f64).exp() };
    Ok(bp * log_p.exp())
}

/// Teacher-forced next-token predictions: at each sentence slot the gold
/// prefix is given and the most probable word or `[END]` is compared with
/// the gold token. Returns `(correct, total)`.
pub fn teacher_forced_counts(
    model: &Model,
    rois: &[RoiFeature],
    concepts: &[TokenId],
    reference: &[TokenId],
    include_end: bool,
) -> Result<(usize, usize)> {
    let mut correct = 0;
    let slots = reference.len() + usize::from(include_end);
    for j in 0..slots {
        let gold = reference.get(j).copied().unwrap_or(END);
        let probs = caption_step(model, rois, concepts, &reference[..j])?;
        let mut best = END;
        for t in NUM_SPECIAL..probs.len() {
            if probs[t] > probs[best] {
                best = t;
            }
        }
        correct += usize::from(best == gold);
    }
    Ok((correct, slots))
}

/// Fraction of referring tasks whose highest-scoring RoI is the target.
pub fn referring_accuracy<'a>(
    model: &Model,
    tasks: impl IntoIterator<Item = (&'a [RoiFeature], Vec<TokenId>, Vec<TokenId>, usize)>,
) -> Result<(usize, usize)> {
    let (mut correct, mut total) = (0, 0);
    for (rois, concepts, query, target) in tasks {
        let scores = referring_scores(model, rois, &concepts, &query)?;
        correct += usize::from(referring_predict(&scores)? == target);
        total += 1;
    }
    Ok((correct, total))
}
