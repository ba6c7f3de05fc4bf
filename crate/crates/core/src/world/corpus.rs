//! Line-delimited corpus documents.
//!
//! Line 1 is a [`CorpusHeader`]; each following line is one [`Example`]
//! with fields `id`, `scene`, `roi_features`, `concepts`, `caption` and
//! `referring_tasks`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    derive_seed, extract_concepts, generate_scene, make_referring, render_caption, roi_features, ConceptSet,
    ReferringTask, RoiFeature, Scene, WorldConfig,
};
use crate::error::{Error, Result};

pub const CORPUS_FORMAT: &str = "dimvl-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub count: usize,
    pub world: WorldConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub scene: Scene,
    pub roi_features: Vec<RoiFeature>,
    pub concepts: ConceptSet,
    pub caption: Vec<String>,
    pub referring_tasks: Vec<ReferringTask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub examples: Vec<Example>,
}

pub fn generate_example(id: usize, scene_seed: u64, config: &WorldConfig) -> Result<Example> {
    let scene = generate_scene(scene_seed, config)?;
    Ok(Example {
        id,
        roi_features: roi_features(&scene, config)?,
        concepts: extract_concepts(&scene, config.max_concepts, config)?,
        caption: render_caption(&scene, scene_seed, config),
        referring_tasks: make_referring(&scene, scene_seed).into_iter().collect(),
        scene,
    })
}

pub fn generate_corpus(seed: u64, count: usize, config: &WorldConfig) -> Result<Corpus> {
    config.validate()?;
    let examples = (0..count)
        .map(|i| generate_example(i, derive_seed(seed, i as u64), config))
        .collect::<Result<_>>()?;
    Ok(Corpus {
        header: CorpusHeader {
            format: CORPUS_FORMAT.to_string(),
            version: CORPUS_VERSION,
            seed,
            count,
            world: config.clone(),
        },
        examples,
    })
}

impl Corpus {
    pub fn world(&self) -> &WorldConfig {
        &self.header.world
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for e in &self.examples {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: CorpusHeader =
            serde_json::from_str(lines.next().ok_or_else(|| Error::Format("empty corpus file".into()))?)?;
        if header.format != CORPUS_FORMAT || header.version != CORPUS_VERSION {
            return Err(Error::Format(format!(
                "expected {CORPUS_FORMAT} v{CORPUS_VERSION}, found {} v{}",
                header.format, header.version
            )));
        }
        let examples: Vec<Example> = lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
        if examples.len() != header.count {
            return Err(Error::Format(format!(
                "header announces {} examples, file has {}",
                header.count,
                examples.len()
            )));
        }
        Ok(Self { header, examples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_jsonl()?)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    /// Examples carrying at least one referring task.
    pub fn referring_examples(&self) -> impl Iterator<Item = (&Example, &ReferringTask)> {
        self.examples.iter().flat_map(|e| e.referring_tasks.iter().map(move |t| (e, t)))
    }
}
