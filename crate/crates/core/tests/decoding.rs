mod common;

use common::{exhaustive, random_rois, random_words, rng, tiny_config, vocab};
use dimvl::decoding::*;
use dimvl::model::{AttentionMode, Model};
use dimvl::vocab::{TokenId, Vocabulary, END};
use dimvl::Result;
use proptest::prelude::*;
use rand::Rng;

/// Fixed random next-token distribution for every prefix over `n` tokens.
struct TableScorer {
    seed: u64,
    n: usize,
    end: TokenId,
}

impl StepScorer for TableScorer {
    fn end_token(&self) -> TokenId {
        self.end
    }

    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let key = prefix.iter().fold(self.seed.wrapping_mul(1_000_003), |h, &t| h.wrapping_mul(31).wrapping_add(t as u64 + 1));
        let mut r = rng(key);
        let logits: Vec<f64> = (0..self.n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let z = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
        Ok(logits.iter().map(|l| l - z).collect())
    }
}

fn tiny_vocab_model(seed: u64, words: usize) -> (Model, Vocabulary) {
    let v = Vocabulary::with_words((0..words).map(|i| format!("w{i}"))).unwrap();
    let mut c = tiny_config(AttentionMode::Dim);
    c.vocab_size = v.len();
    (Model::new(c, seed).unwrap(), v)
}

#[test]
fn beam_of_one_is_greedy() {
    let v = vocab();
    for seed in 0..50 {
        let model = Model::new(tiny_config(AttentionMode::Dim), seed).unwrap();
        let mut r = rng(seed);
        let rois = random_rois(r.gen_range(1..5), &model.config, &mut r);
        let concepts = random_words(r.gen_range(0..4), &v, &mut r);
        let config = GenerationConfig { beam_size: 1, max_length: 6, alpha: 0.0 };
        let b = beam_search(&model, &rois, &concepts, &config).unwrap();
        let g = greedy_decode(&model, &rois, &concepts, &config).unwrap();
        assert_eq!(b, g, "seed {seed}");
    }
}

#[test]
fn wide_beam_equals_exhaustive_search_on_tables() {
    for seed in 0..30 {
        let scorer = TableScorer { seed, n: 5, end: 0 };
        let config = GenerationConfig { beam_size: 125, max_length: 3, alpha: 0.0 };
        assert_eq!(beam(&scorer, &config).unwrap(), exhaustive(&scorer, 3), "seed {seed}");
    }
}

#[test]
fn wide_beam_equals_exhaustive_search_on_a_model() {
    for seed in 0..5 {
        let (model, _) = tiny_vocab_model(seed, 5);
        let rois = random_rois(2, &model.config, &mut rng(seed));
        let scorer = CaptionScorer { model: &model, rois: &rois, concepts: &[] };
        let config = GenerationConfig { beam_size: 216, max_length: 3, alpha: 0.0 };
        assert_eq!(beam(&scorer, &config).unwrap(), exhaustive(&scorer, 3), "seed {seed}");
    }
}

#[test]
fn beam_never_scores_below_greedy() {
    let (mut better, mut equal) = (0, 0);
    for seed in 0..50 {
        let scorer = TableScorer { seed, n: 6, end: 0 };
        let g = greedy(&scorer, 5).unwrap();
        let b = beam(&scorer, &GenerationConfig { beam_size: 4, max_length: 5, alpha: 0.0 }).unwrap();
        assert!(b.log_prob >= g.log_prob - 1e-12, "seed {seed}: {} < {}", b.log_prob, g.log_prob);
        if b.log_prob > g.log_prob { better += 1 } else { equal += 1 }
    }
    println!("beam strictly better on {better} of 50 seeds, equal on {equal}");
}

#[test]
fn special_tokens_other_than_end_are_never_emitted() {
    let v = vocab();
    for seed in 0..10 {
        let model = Model::new(tiny_config(AttentionMode::Esa), seed).unwrap();
        let rois = random_rois(3, &model.config, &mut rng(seed));
        let d = beam_search(&model, &rois, &[], &GenerationConfig { beam_size: 3, max_length: 8, alpha: 0.5 }).unwrap();
        assert!(d.tokens.iter().all(|&t| !Vocabulary::is_special(t)));
        assert!(d.tokens.len() <= 8);
        assert!(v.decode(&d.tokens).is_ok());
    }
}

#[test]
fn caption_step_is_a_distribution() {
    let model = Model::new(tiny_config(AttentionMode::Dim), 1).unwrap();
    let rois = random_rois(2, &model.config, &mut rng(1));
    let probs = caption_step(&model, &rois, &[10], &[11, 12]).unwrap();
    assert_eq!(probs.len(), model.config.vocab_size);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(probs[END] > 0.0);
}

#[test]
fn referring_scores_one_per_roi() {
    let model = Model::new(tiny_config(AttentionMode::Dim), 2).unwrap();
    for n in 1..=6 {
        let rois = random_rois(n, &model.config, &mut rng(n as u64));
        assert_eq!(referring_scores(&model, &rois, &[10], &[11, 12]).unwrap().len(), n);
    }
    assert!(referring_scores(&model, &[], &[10], &[11]).is_err());
}

proptest! {
    #[test]
    fn prediction_ignores_monotone_transforms(scores in prop::collection::vec(-20.0f64..20.0, 1..10), a in 0.1f64..5.0, b in -5.0f64..5.0) {
        let base = referring_predict(&scores).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        prop_assert_eq!(referring_predict(&affine).unwrap(), base);
        prop_assert_eq!(referring_predict(&cubed).unwrap(), base);
        // The logistic saturates to 1.0 for large scores, which can create ties.
        let ties = scores.iter().filter(|&&s| s > 30.0).count();
        if ties == 0 {
            prop_assert_eq!(referring_predict(&squashed).unwrap(), base);
        }
    }

    #[test]
    fn referring_loss_is_positive_and_matches_the_graph(scores in prop::collection::vec(-8.0f64..8.0, 1..7), pick in 0usize..7) {
        let target = pick % scores.len();
        let value = referring_loss_value(&scores, target).unwrap();
        let mut g = dimvl_tensor::Graph::new();
        let s = g.constant(dimvl_tensor::Tensor::matrix(scores.len(), 1, scores.clone()).unwrap()).unwrap();
        let l = referring_loss(&mut g, s, target).unwrap();
        prop_assert!(value > 0.0);
        prop_assert!((g.value(l).item().unwrap() - value).abs() < 1e-10);
    }
}
