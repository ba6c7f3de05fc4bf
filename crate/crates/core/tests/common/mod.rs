#![allow(dead_code)]

use dimvl::decoding::{Decoded, StepScorer};
use dimvl::model::{scaled_init_std, AttentionMode, Model, ModelConfig};
use dimvl::vocab::{TokenId, Vocabulary};
use dimvl::world::{generate_corpus, Corpus, Example, RoiFeature, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn vocab() -> Vocabulary {
    Vocabulary::standard()
}

pub fn world() -> WorldConfig {
    WorldConfig::default()
}

/// Narrow two-layer configuration that keeps finite differences cheap.
pub fn tiny_config(mode: AttentionMode) -> ModelConfig {
    let mut c = ModelConfig::for_world(&world(), &vocab());
    c.d_model = 8;
    c.n_heads = 2;
    c.ffn_width = 16;
    c.max_positions = 32;
    c.mode = mode;
    c.init_std = scaled_init_std(c.d_model);
    c
}

pub fn tiny_model(mode: AttentionMode, seed: u64) -> Model {
    Model::new(tiny_config(mode), seed).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn corpus(seed: u64, count: usize) -> Corpus {
    generate_corpus(seed, count, &world()).unwrap()
}

pub fn example(seed: u64) -> Example {
    corpus(seed, 1).examples.remove(0)
}

/// Feature vectors of the right widths with uniform entries in `[-1, 1)`.
pub fn random_rois(n: usize, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<RoiFeature> {
    let mut v = |k: usize| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    (0..n)
        .map(|_| RoiFeature { appearance: v(config.appearance_dim), geometry: v(5), class_dist: v(config.class_dim) })
        .collect()
}

pub fn random_words(len: usize, vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
    let ids = vocab.word_ids();
    (0..len).map(|_| rng.gen_range(ids.clone())).collect()
}

/// Every complete hypothesis of at most `max_len` tokens: those ending in
/// `end`, plus unfinished ones of exactly `max_len` tokens.
pub fn exhaustive<S: StepScorer>(scorer: &S, max_len: usize) -> Decoded {
    let mut best: Option<(f64, Vec<TokenId>, bool)> = None;
    let mut frontier = vec![(Vec::new(), 0.0)];
    for depth in 1..=max_len {
        let mut next = Vec::new();
        for (prefix, lp) in frontier {
            let scores = scorer.log_probs(&prefix).unwrap();
            for (t, &l) in scores.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut seq: Vec<TokenId> = prefix.clone();
                seq.push(t);
                let total = lp + l;
                let finished = t == scorer.end_token();
                if finished || depth == max_len {
                    let better = match &best {
                        None => true,
                        Some((b, bs, _)) => total > *b || (total == *b && (seq.len(), &seq) < (bs.len(), bs)),
                    };
                    if better {
                        best = Some((total, seq.clone(), finished));
                    }
                }
                if !finished {
                    next.push((seq, total));
                }
            }
        }
        frontier = next;
    }
    let (log_prob, mut tokens, finished) = best.unwrap();
    if finished {
        tokens.pop();
    }
    Decoded { tokens, log_prob, finished }
}
