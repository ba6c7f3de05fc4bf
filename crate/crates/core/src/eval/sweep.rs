use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::Result;
use crate::world::{concept_ground_truth, extract_concepts, Corpus};

/// Extractor quality at one concept count, micro-averaged over a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub m: usize,
    pub predicted: usize,
    pub truth: usize,
    pub hits: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Compares the top-`M` extracted concepts of every scene with the words
/// that describe its objects. `M = 0` extracts nothing; precision of an empty
/// prediction is reported as 0.
pub fn sweep_concepts(corpus: &Corpus, ms: &[usize]) -> Result<Vec<SweepRow>> {
    let world = corpus.world();
    ms.iter()
        .map(|&m| {
            let (mut predicted, mut truth, mut hits) = (0, 0, 0);
            for ex in &corpus.examples {
                let gt = concept_ground_truth(&ex.scene);
                let got: BTreeSet<String> = if m == 0 {
                    BTreeSet::new()
                } else {
                    extract_concepts(&ex.scene, m, world)?.words().into_iter().map(str::to_string).collect()
                };
                predicted += got.len();
                truth += gt.len();
                hits += got.iter().filter(|w| gt.contains(w.as_str())).count();
            }
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let (precision, recall) = (ratio(hits, predicted), ratio(hits, truth));
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            Ok(SweepRow { m, predicted, truth, hits, precision, recall, f1 })
        })
        .collect()
}

pub fn sweep_to_text(rows: &[SweepRow]) -> String {
    let mut out = String::from("m\tpredicted\ttruth\thits\tprecision\trecall\tf1\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}\t{}", r.m, r.predicted, r.truth, r.hits, r.precision, r.recall, r.f1);
    }
    out
}
