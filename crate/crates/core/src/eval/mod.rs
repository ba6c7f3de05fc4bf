//! Metrics, evaluation runs, the ablation grid, the concept sweep and the
//! attention dump.

mod ablate;
mod attention_dump;
mod metrics;
mod report;
mod sweep;

pub use ablate::{ablate, AblationCell, AblationConfig, AblationGrid, PretrainVariant};
pub use attention_dump::{dump_attention, dump_caption_attention, dump_referring_attention, AttentionDump, PositionNote, TopEntry, TopList};
pub use metrics::{bleu, referring_accuracy, teacher_forced_counts};
pub use report::MetricReport;
pub use sweep::{sweep_concepts, sweep_to_text, SweepRow};

use std::fmt::Write as _;

use crate::decoding::{beam_search, greedy_decode, referring_predict, referring_scores, Decoded, GenerationConfig};
use crate::error::Result;
use crate::model::Model;
use crate::vocab::{TokenId, Vocabulary};
use crate::world::{Corpus, Example};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub label: String,
    pub seeds: Vec<u64>,
    pub use_concepts: bool,
    pub generation: GenerationConfig,
    /// Decode with greedy search instead of beam search.
    pub greedy: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            label: "eval".into(),
            seeds: Vec::new(),
            use_concepts: true,
            generation: GenerationConfig::default(),
            greedy: false,
        }
    }
}

fn concepts_of(example: &Example, vocab: &Vocabulary, use_concepts: bool) -> Result<Vec<TokenId>> {
    if use_concepts {
        vocab.encode(&example.concepts.words())
    } else {
        Ok(Vec::new())
    }
}

pub fn decode_example(model: &Model, example: &Example, vocab: &Vocabulary, opts: &EvalOptions) -> Result<Decoded> {
    let concepts = concepts_of(example, vocab, opts.use_concepts)?;
    if opts.greedy {
        greedy_decode(model, &example.roi_features, &concepts, &opts.generation)
    } else {
        beam_search(model, &example.roi_features, &concepts, &opts.generation)
    }
}

/// One decoded caption per example, in corpus order.
pub fn generate_captions(model: &Model, corpus: &Corpus, vocab: &Vocabulary, opts: &EvalOptions) -> Result<Vec<(usize, Vec<String>)>> {
    corpus
        .examples
        .iter()
        .map(|ex| Ok((ex.id, vocab.decode(&decode_example(model, ex, vocab, opts)?.tokens)?)))
        .collect()
}

/// `id<TAB>caption` lines.
pub fn captions_to_text(captions: &[(usize, Vec<String>)]) -> String {
    let mut out = String::new();
    for (id, words) in captions {
        let _ = writeln!(out, "{id}\t{}", words.join(" "));
    }
    out
}

/// Referring output: `id<TAB>predicted<TAB>score,score,...` per task.
pub fn referring_to_text(model: &Model, corpus: &Corpus, vocab: &Vocabulary, use_concepts: bool) -> Result<String> {
    let mut out = String::new();
    for (ex, task) in corpus.referring_examples() {
        let concepts = concepts_of(ex, vocab, use_concepts)?;
        let scores = referring_scores(model, &ex.roi_features, &concepts, &vocab.encode(&task.query)?)?;
        let joined: Vec<String> = scores.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}\t{}\t{}", ex.id, referring_predict(&scores)?, joined.join(","));
    }
    Ok(out)
}

/// Token accuracy (teacher forced, `[END]` included), BLEU of decoded
/// captions against the corpus captions, and referring accuracy.
pub fn evaluate(model: &Model, corpus: &Corpus, vocab: &Vocabulary, opts: &EvalOptions) -> Result<MetricReport> {
    let (mut correct, mut total) = (0, 0);
    let mut candidates = Vec::with_capacity(corpus.len());
    let mut references = Vec::with_capacity(corpus.len());
    for ex in &corpus.examples {
        let concepts = concepts_of(ex, vocab, opts.use_concepts)?;
        let gold = vocab.encode(&ex.caption)?;
        let (c, t) = teacher_forced_counts(model, &ex.roi_features, &concepts, &gold, true)?;
        correct += c;
        total += t;
        candidates.push(decode_example(model, ex, vocab, opts)?.tokens);
        references.push(vec![gold]);
    }
    let mut bleu_n = [0.0; 4];
    if !candidates.is_empty() {
        for (n, b) in bleu_n.iter_mut().enumerate() {
            *b = bleu(&candidates, &references, n + 1)?;
        }
    }
    let tasks = corpus
        .referring_examples()
        .map(|(ex, task)| Ok((ex.roi_features.as_slice(), concepts_of(ex, vocab, opts.use_concepts)?, vocab.encode(&task.query)?, task.target)))
        .collect::<Result<Vec<_>>>()?;
    let (ref_correct, ref_total) = referring_accuracy(model, tasks)?;
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(MetricReport {
        label: opts.label.clone(),
        fingerprint: model.config.fingerprint(),
        seeds: opts.seeds.clone(),
        token_accuracy: rate(correct, total),
        bleu: bleu_n,
        referring_accuracy: rate(ref_correct, ref_total),
        caption_count: corpus.len(),
        token_count: total,
        referring_count: ref_total,
    })
}
