use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rng_for, Scene, WorldConfig, STREAM_CONCEPTS};
use crate::error::{Error, Result};
use crate::vocab::{CLASS_WORDS, COLOR_WORDS, NUM_SPECIAL, SIZE_WORDS};

/// Precision/recall dials for the synthetic concept extractor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConceptNoise {
    /// Probability that an absent word is reported anyway.
    pub inject_rate: f64,
    /// Probability that a present word is missed.
    pub drop_rate: f64,
}

impl ConceptNoise {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.inject_rate) && (0.0..=1.0).contains(&self.drop_rate) {
            Ok(())
        } else {
            Err(Error::Config(format!("concept noise rates out of [0,1]: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub word: String,
    pub score: f64,
}

/// Concepts sorted by descending score; equal scores ordered by vocabulary id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConceptSet {
    pub concepts: Vec<Concept>,
}

impl ConceptSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn words(&self) -> Vec<&str> {
        self.concepts.iter().map(|c| c.word.as_str()).collect()
    }

    pub fn truncated(&self, m: usize) -> Self {
        Self { concepts: self.concepts.iter().take(m).cloned().collect() }
    }
}

/// Concept-eligible words for this universe, paired with their standard vocabulary id.
fn eligible_words(config: &WorldConfig) -> Vec<(usize, &'static str)> {
    let classes = CLASS_WORDS.iter().enumerate().take(config.num_classes).map(|(i, w)| (NUM_SPECIAL + i, *w));
    let colors = COLOR_WORDS
        .iter()
        .enumerate()
        .take(config.num_colors)
        .map(|(i, w)| (NUM_SPECIAL + CLASS_WORDS.len() + i, *w));
    let sizes = SIZE_WORDS
        .iter()
        .enumerate()
        .take(config.num_sizes)
        .map(|(i, w)| (NUM_SPECIAL + CLASS_WORDS.len() + COLOR_WORDS.len() + i, *w));
    classes.chain(colors).chain(sizes).collect()
}

/// Summed object-area fraction per word, in [`eligible_words`] order.
fn salience(scene: &Scene, config: &WorldConfig) -> Vec<f64> {
    let mut scores = vec![0.0; config.num_classes + config.num_colors + config.num_sizes];
    for o in &scene.objects {
        let a = o.bbox.area() as f64 / scene.area();
        scores[o.class_id] += a;
        scores[config.num_classes + o.color_id] += a;
        scores[config.num_classes + config.num_colors + o.size_id] += a;
    }
    scores
}

/// Words that truly describe some object in the scene.
pub fn concept_ground_truth(scene: &Scene) -> BTreeSet<&'static str> {
    scene
        .objects
        .iter()
        .flat_map(|o| [CLASS_WORDS[o.class_id], COLOR_WORDS[o.color_id], SIZE_WORDS[o.size_id]])
        .collect()
}

/// Top-`m` visual concepts by salience, with the configured noise applied.
pub fn extract_concepts(scene: &Scene, m: usize, config: &WorldConfig) -> Result<ConceptSet> {
    if m == 0 {
        return Err(Error::Config("concept count M must be positive".into()));
    }
    let noise = config.concept_noise;
    noise.validate()?;
    let mut rng = rng_for(scene.seed, STREAM_CONCEPTS);
    let scores = salience(scene, config);
    let top = scores.iter().copied().fold(0.0, f64::max);
    let mut ranked: Vec<(f64, usize, &str)> = Vec::new();
    for ((id, word), &s) in eligible_words(config).into_iter().zip(&scores) {
        // Draw both variates for every word so each dial leaves the other's stream untouched.
        let (u_keep, u_score) = (rng.gen::<f64>(), rng.gen::<f64>());
        if s > 0.0 {
            if u_keep >= noise.drop_rate {
                ranked.push((s, id, word));
            }
        } else if u_keep < noise.inject_rate {
            ranked.push((u_score * top, id, word));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(ConceptSet {
        concepts: ranked
            .into_iter()
            .take(m)
            .map(|(score, _, word)| Concept { word: word.to_string(), score })
            .collect(),
    })
}
