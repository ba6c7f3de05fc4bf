use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Evaluation results with enough provenance to regenerate them: the model
/// fingerprint and the seeds that produced the numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub label: String,
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    pub token_accuracy: f64,
    /// BLEU-1 through BLEU-4.
    pub bleu: [f64; 4],
    pub referring_accuracy: f64,
    pub caption_count: usize,
    pub token_count: usize,
    pub referring_count: usize,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.token_accuracy, self.referring_accuracy].into_iter().chain(self.bleu);
        for r in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Contract(format!("rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Tab-separated `key value` lines.
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k}\t{v}");
        };
        line("label", self.label.clone());
        line("fingerprint", self.fingerprint.clone());
        line("seeds", seeds.join(","));
        line("token_accuracy", self.token_accuracy.to_string());
        for (n, b) in self.bleu.iter().enumerate() {
            line(&format!("bleu{}", n + 1), b.to_string());
        }
        line("referring_accuracy", self.referring_accuracy.to_string());
        line("caption_count", self.caption_count.to_string());
        line("token_count", self.token_count.to_string());
        line("referring_count", self.referring_count.to_string());
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('\t').ok_or_else(|| Error::Format(format!("malformed report line {line:?}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| fields.get(k).cloned().ok_or_else(|| Error::Format(format!("report lacks {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Format(format!("bad number for {k}"))) };
        let count = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Format(format!("bad count for {k}"))) };
        let seeds = get("seeds")?;
        let seeds = if seeds.is_empty() {
            Vec::new()
        } else {
            seeds
                .split(',')
                .map(|s| s.parse().map_err(|_| Error::Format(format!("bad seed {s:?}"))))
                .collect::<Result<_>>()?
        };
        let report = Self {
            label: get("label")?,
            fingerprint: get("fingerprint")?,
            seeds,
            token_accuracy: num("token_accuracy")?,
            bleu: [num("bleu1")?, num("bleu2")?, num("bleu3")?, num("bleu4")?],
            referring_accuracy: num("referring_accuracy")?,
            caption_count: count("caption_count")?,
            token_count: count("token_count")?,
            referring_count: count("referring_count")?,
        };
        report.validate()?;
        Ok(report)
    }
}
