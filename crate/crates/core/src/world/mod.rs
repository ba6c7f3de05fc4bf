//! Procedural scenes standing in for detector output, concept extraction
//! and captioning data. Every product is a pure function of a seed and a
//! [`WorldConfig`].

mod caption;
mod concepts;
mod corpus;
mod features;
mod referring;
mod scene;

pub use caption::{render_caption, CaptionStyle};
pub use concepts::{concept_ground_truth, extract_concepts, Concept, ConceptNoise, ConceptSet};
pub use corpus::{generate_corpus, Corpus, CorpusHeader, Example, CORPUS_FORMAT, CORPUS_VERSION};
pub use features::{geometry_feature, roi_features, RoiFeature, GEOMETRY_DIM};
pub use referring::{make_referring, query_matches, ReferringTask};
pub use scene::{generate_scene, BBox, Scene, SceneObject};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{CLASS_WORDS, COLOR_WORDS, SIZE_WORDS};

/// Largest box side a size bucket can produce, in pixels.
pub(crate) const MAX_BOX_SIDE: u32 = 42;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub num_classes: usize,
    pub num_colors: usize,
    pub num_sizes: usize,
    /// Every object in a scene has a distinct class.
    pub unique_classes: bool,
    /// Standard deviation of the additive appearance noise; 0 disables noise.
    pub noise_sigma: f64,
    /// Upper bound on probability mass moved off the true class in `c_i`.
    pub class_smoothing: f64,
    /// Width of the class distribution vector (at least `num_classes`).
    pub class_dim: usize,
    pub max_concepts: usize,
    pub concept_noise: ConceptNoise,
    pub caption_style: CaptionStyle,
    pub caption_max_len: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            canvas_width: 100,
            canvas_height: 100,
            min_objects: 1,
            max_objects: 6,
            num_classes: 16,
            num_colors: 6,
            num_sizes: 3,
            unique_classes: false,
            noise_sigma: 0.05,
            class_smoothing: 0.1,
            class_dim: 16,
            max_concepts: 5,
            concept_noise: ConceptNoise::default(),
            caption_style: CaptionStyle::Salient { objects: 3 },
            caption_max_len: 24,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.canvas_width < MAX_BOX_SIDE || self.canvas_height < MAX_BOX_SIDE {
            return fail(format!("canvas must be at least {MAX_BOX_SIDE}x{MAX_BOX_SIDE} pixels"));
        }
        if self.max_objects == 0 || self.min_objects == 0 {
            return fail("scenes need at least one object".into());
        }
        if self.min_objects > self.max_objects {
            return fail(format!("min_objects {} > max_objects {}", self.min_objects, self.max_objects));
        }
        if !(1..=CLASS_WORDS.len()).contains(&self.num_classes)
            || !(1..=COLOR_WORDS.len()).contains(&self.num_colors)
            || !(1..=SIZE_WORDS.len()).contains(&self.num_sizes)
        {
            return fail("attribute universe outside vocabulary".into());
        }
        if self.unique_classes && self.max_objects > self.num_classes {
            return fail(format!(
                "{} unique objects requested from {} classes",
                self.max_objects, self.num_classes
            ));
        }
        if self.class_dim < self.num_classes {
            return fail(format!("class_dim {} < num_classes {}", self.class_dim, self.num_classes));
        }
        if !(self.noise_sigma >= 0.0 && (0.0..1.0).contains(&self.class_smoothing)) {
            return fail("noise parameters out of range".into());
        }
        if self.max_concepts == 0 {
            return fail("max_concepts must be positive".into());
        }
        self.concept_noise.validate()?;
        if self.caption_max_len == 0 {
            return fail("caption_max_len must be positive".into());
        }
        Ok(())
    }

    /// Width of the appearance vector: class, color and size one-hots.
    pub fn appearance_dim(&self) -> usize {
        self.num_classes + self.num_colors + self.num_sizes
    }
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

// Seed streams, so independent draws from one scene seed never collide.
pub(crate) const STREAM_SCENE: u64 = 1;
pub(crate) const STREAM_FEATURES: u64 = 2;
pub(crate) const STREAM_CONCEPTS: u64 = 3;
pub(crate) const STREAM_CAPTION: u64 = 4;
pub(crate) const STREAM_REFERRING: u64 = 5;
