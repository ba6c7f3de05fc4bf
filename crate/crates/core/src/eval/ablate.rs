//! Attention mode × concept input × pre-training task grid.

use std::fmt::Write as _;

use super::{evaluate, referring_accuracy, EvalOptions, MetricReport};
use crate::error::{Error, Result};
use crate::model::AttentionMode;
use crate::objectives::{TaskKind, TaskMix};
use crate::train::{finetune_caption, finetune_referring, initial_checkpoint, pretrain, RunConfig};
use crate::vocab::Vocabulary;
use crate::world::Corpus;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PretrainVariant {
    None,
    Blm,
    S2slm,
    Both,
}

impl PretrainVariant {
    pub const ALL: [Self; 4] = [Self::None, Self::Blm, Self::S2slm, Self::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Blm => "blm",
            Self::S2slm => "s2slm",
            Self::Both => "both",
        }
    }

    fn mix(self, default: TaskMix) -> Option<TaskMix> {
        match self {
            Self::None => None,
            Self::Blm => Some(TaskMix::only(TaskKind::Blm)),
            Self::S2slm => Some(TaskMix::only(TaskKind::S2slm)),
            Self::Both => Some(default),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationConfig {
    pub train: Corpus,
    pub eval: Corpus,
    /// Base settings; mode, concept use and seeds are overridden per cell.
    pub run: RunConfig,
    pub seeds: Vec<u64>,
    pub greedy: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub mode: AttentionMode,
    pub use_concepts: bool,
    pub pretrain: PretrainVariant,
    /// One report per seed, in seed order.
    pub reports: Vec<MetricReport>,
}

fn metrics(r: &MetricReport) -> [f64; 6] {
    [r.token_accuracy, r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3], r.referring_accuracy]
}

const METRIC_NAMES: [&str; 6] = ["token_accuracy", "bleu1", "bleu2", "bleu3", "bleu4", "referring_accuracy"];

impl AblationCell {
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}",
            self.mode.as_str(),
            if self.use_concepts { "concepts" } else { "no-concepts" },
            self.pretrain.as_str()
        )
    }

    /// Per-metric (mean, min, max) over seeds.
    pub fn summary(&self) -> [(f64, f64, f64); 6] {
        let mut out = [(0.0, f64::INFINITY, f64::NEG_INFINITY); 6];
        for r in &self.reports {
            for (o, v) in out.iter_mut().zip(metrics(r)) {
                o.0 += v / self.reports.len() as f64;
                o.1 = o.1.min(v);
                o.2 = o.2.max(v);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    pub fn cell(&self, mode: AttentionMode, use_concepts: bool, pretrain: PretrainVariant) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.mode == mode && c.use_concepts == use_concepts && c.pretrain == pretrain)
    }

    /// Mean of `metric` over cells selected by `pick`.
    fn mean_where(&self, metric: usize, pick: impl Fn(&AblationCell) -> bool) -> f64 {
        let xs: Vec<f64> = self.cells.iter().filter(|c| pick(c)).map(|c| c.summary()[metric].0).collect();
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    }

    /// Mean difference DiM minus ESA, and concepts on minus off, per metric.
    pub fn deltas(&self) -> ([f64; 6], [f64; 6]) {
        let mut mode = [0.0; 6];
        let mut concepts = [0.0; 6];
        for m in 0..6 {
            mode[m] = self.mean_where(m, |c| c.mode == AttentionMode::Dim) - self.mean_where(m, |c| c.mode == AttentionMode::Esa);
            concepts[m] = self.mean_where(m, |c| c.use_concepts) - self.mean_where(m, |c| !c.use_concepts);
        }
        (mode, concepts)
    }

    /// One row per cell with mean, min and max of each metric, followed by the deltas.
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = String::new();
        let _ = write!(out, "mode\tconcepts\tpretrain\tseeds\tfingerprint");
        for n in METRIC_NAMES {
            let _ = write!(out, "\t{n}_mean\t{n}_min\t{n}_max");
        }
        out.push('\n');
        for c in &self.cells {
            let fp = c.reports.first().map(|r| r.fingerprint.as_str()).unwrap_or("");
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}\t{fp}",
                c.mode.as_str(),
                if c.use_concepts { "on" } else { "off" },
                c.pretrain.as_str(),
                seeds.join(",")
            );
            for (mean, lo, hi) in c.summary() {
                let _ = write!(out, "\t{mean:.6}\t{lo:.6}\t{hi:.6}");
            }
            out.push('\n');
        }
        let (mode, concepts) = self.deltas();
        for (name, d) in [("delta_dim_minus_esa", mode), ("delta_concepts_on_minus_off", concepts)] {
            let _ = write!(out, "{name}");
            for (n, v) in METRIC_NAMES.iter().zip(d) {
                let _ = write!(out, "\t{n}={v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every cell for every seed. Each cell pre-trains with its task
/// variant (or not at all), fine-tunes separately for captioning and
/// referring on the training corpus, and is evaluated on the held-out
/// corpus.
pub fn ablate(config: &AblationConfig, vocab: &Vocabulary) -> Result<AblationGrid> {
    if config.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut cells = Vec::new();
    for mode in [AttentionMode::Esa, AttentionMode::Dim] {
        for use_concepts in [true, false] {
            for variant in PretrainVariant::ALL {
                let mut reports = Vec::with_capacity(config.seeds.len());
                for &seed in &config.seeds {
                    let mut run = config.run.clone();
                    run.mode = mode;
                    run.use_concepts = use_concepts;
                    run.seed = seed;
                    run.init_seed = seed;
                    let init = match variant.mix(config.run.task_mix) {
                        None => initial_checkpoint(config.train.world(), vocab, &run)?,
                        Some(mix) => {
                            run.task_mix = mix;
                            pretrain(&config.train, vocab, &run)?.model
                        }
                    };
                    let caption = finetune_caption(&config.train, vocab, &init, &run)?.model.model()?;
                    let referring = finetune_referring(&config.train, vocab, &init, &run)?.model.model()?;
                    let opts = EvalOptions {
                        label: String::new(),
                        seeds: vec![seed],
                        use_concepts,
                        generation: run.generation,
                        greedy: config.greedy,
                    };
                    let mut report = evaluate(&caption, &config.eval, vocab, &opts)?;
                    let tasks = config
                        .eval
                        .referring_examples()
                        .map(|(ex, task)| {
                            let concepts = if use_concepts { vocab.encode(&ex.concepts.words())? } else { Vec::new() };
                            Ok((ex.roi_features.as_slice(), concepts, vocab.encode(&task.query)?, task.target))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let (hit, total) = referring_accuracy(&referring, tasks)?;
                    report.referring_accuracy = if total == 0 { 0.0 } else { hit as f64 / total as f64 };
                    reports.push(report);
                }
                let mut cell = AblationCell { mode, use_concepts, pretrain: variant, reports };
                let label = cell.label();
                cell.reports.iter_mut().for_each(|r| r.label = label.clone());
                cells.push(cell);
            }
        }
    }
    Ok(AblationGrid { seeds: config.seeds.clone(), cells })
}
