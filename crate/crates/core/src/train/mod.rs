//! Optimization loops for pre-training, domain adaptation and the two
//! fine-tunes, plus checkpoints and run logs.

mod checkpoint;
mod config;
mod optim;

pub use checkpoint::{average_checkpoints, average_last, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, DEFAULT_AVERAGE_K};
pub use config::{CaptionMasking, RunConfig};
pub use optim::{adam_step, AdamConfig, AdamState, LrSchedule};

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use dimvl_tensor::{Graph, TensorError, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoding::{referring_layout, referring_loss, referring_scores_on};
use crate::embeddings::SequenceLayout;
use crate::error::{Error, Result};
use crate::model::{BoundParams, Model};
use crate::objectives::{make_instance, make_slot_instance, mlm_loss, sample_task, TaskKind, TaskMix, TrainingInstance};
use crate::vocab::Vocabulary;
use crate::world::{derive_seed, Corpus, RoiFeature, WorldConfig};

const STREAM_PRETRAIN: u64 = 11;
const STREAM_DOMAIN: u64 = 12;
const STREAM_CAPTION: u64 = 13;
const STREAM_REFERRING: u64 = 14;
const STREAM_TASKS: u64 = 21;
const STREAM_ORDER: u64 = 22;
const STREAM_MASKING: u64 = 23;
const STREAM_DROPOUT: u64 = 24;

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub phase: String,
    pub step: u64,
    pub task: String,
    pub loss: f64,
    pub lr: f64,
    pub wall_secs: f64,
}

/// Tab-separated training log: `phase step task loss lr wall_secs`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

pub const LOG_HEADER: &str = "phase\tstep\ttask\tloss\tlr\twall_secs";

impl RunLog {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{:.3}", r.phase, r.step, r.task, r.loss, r.lr, r.wall_secs);
        }
        out
    }

    /// Appends the records to `path`, writing the header if the file is new.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let fresh = !path.exists();
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{LOG_HEADER}")?;
        }
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn extend(&mut self, other: &RunLog) {
        self.records.extend(other.records.iter().cloned());
    }

    /// Mean loss over the records of `task` (all tasks when `None`).
    pub fn mean_loss(&self, task: Option<&str>) -> Option<f64> {
        let xs: Vec<f64> =
            self.records.iter().filter(|r| task.map_or(true, |t| r.task == t)).map(|r| r.loss).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Result of one training phase.
#[derive(Clone, Debug)]
pub struct PhaseOutcome {
    /// One checkpoint per epoch, with optimizer state.
    pub checkpoints: Vec<Checkpoint>,
    pub log: RunLog,
    /// Average of the last `average_k` epoch checkpoints, or the initial
    /// parameters when no epoch ran.
    pub model: Checkpoint,
}

enum Job {
    Lm(TrainingInstance),
    Referring { layout: SequenceLayout, rois: Vec<RoiFeature>, target: usize },
}

impl Job {
    fn loss(&self, g: &mut Graph, p: &BoundParams, model: &Model, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        match self {
            Job::Lm(inst) => {
                let enc = model.encode_on(g, p, &inst.layout, &inst.rois, &inst.mask, rng)?;
                mlm_loss(g, p, &model.config, enc.hidden, &inst.layout, &inst.target_rows, &inst.target_ids)
            }
            Job::Referring { layout, rois, target } => {
                let scores = referring_scores_on(g, p, model, layout, rois, rng)?;
                referring_loss(g, scores, *target)
            }
        }
    }
}

struct Trainer {
    model: Model,
    adam: AdamState,
    schedule: LrSchedule,
    log: RunLog,
    phase: &'static str,
    started: Instant,
    dropout_rng: ChaCha8Rng,
    checkpoints: Vec<Checkpoint>,
}

impl Trainer {
    fn new(model: Model, phase: &'static str, lr: f64, total_steps: usize, run: &RunConfig, seed: u64) -> Self {
        let adam = AdamState::new(&model.params, AdamConfig::default());
        let warmup_steps = (run.warmup_fraction * total_steps as f64).floor() as u64;
        Self {
            model,
            adam,
            schedule: LrSchedule { base: lr, warmup_steps },
            log: RunLog::default(),
            phase,
            started: Instant::now(),
            dropout_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DROPOUT)),
            checkpoints: Vec::new(),
        }
    }

    /// Forward, backward and one Adam update on the mean loss of `jobs`.
    fn step(&mut self, task: &str, jobs: &[Job]) -> Result<f64> {
        let step = self.adam.step + 1;
        let diverged = |detail: String| Error::Divergence { step: step as usize, detail };
        let mut g = Graph::new();
        let p = BoundParams::bind(&mut g, &self.model.params)?;
        let mut rng = (self.model.config.dropout > 0.0).then_some(&mut self.dropout_rng);
        let mut losses = Vec::with_capacity(jobs.len());
        for job in jobs {
            match job.loss(&mut g, &p, &self.model, rng.as_deref_mut()) {
                Ok(l) => losses.push(l),
                Err(Error::Tensor(TensorError::NonFinite { op })) => {
                    return Err(diverged(format!("non-finite value in {op}")))
                }
                Err(e) => return Err(e),
            }
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = g.add(total, l)?;
        }
        let loss = g.scale(total, 1.0 / losses.len() as f64)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(diverged(format!("loss is {value}")));
        }
        match g.backward(loss) {
            Err(TensorError::NonFinite { op }) => return Err(diverged(format!("non-finite gradient in {op}"))),
            other => other?,
        }
        let grads = p.gradients(&g);
        let lr = self.schedule.at(step);
        adam_step(&mut self.model.params, &grads, &mut self.adam, lr)?;
        self.log.records.push(LogRecord {
            phase: self.phase.to_string(),
            step,
            task: task.to_string(),
            loss: value,
            lr,
            wall_secs: self.started.elapsed().as_secs_f64(),
        });
        Ok(value)
    }

    fn end_epoch(&mut self, epoch: usize) {
        self.checkpoints.push(Checkpoint::from_model(&self.model, Some(&self.adam), epoch, self.adam.step));
    }

    fn finish(self, init: &Checkpoint, average_k: usize) -> Result<PhaseOutcome> {
        let model = if self.checkpoints.is_empty() {
            Checkpoint { optimizer: None, ..init.clone() }
        } else {
            average_last(&self.checkpoints, average_k)?
        };
        Ok(PhaseOutcome { checkpoints: self.checkpoints, log: self.log, model })
    }
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, STREAM_ORDER), epoch as u64)));
    order
}

fn steps_per_epoch(items: usize, batch: usize) -> usize {
    items.div_ceil(batch)
}

/// Task kind of every step of a language-modeling phase seeded with `seed`.
pub fn task_schedule(mix: &TaskMix, seed: u64, steps: usize) -> Vec<TaskKind> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TASKS));
    (0..steps).map(|_| sample_task(mix, &mut rng)).collect()
}

/// Fresh parameters for the run's model configuration.
pub fn initial_checkpoint(world: &WorldConfig, vocab: &Vocabulary, run: &RunConfig) -> Result<Checkpoint> {
    let model = Model::new(run.model_config(world, vocab)?, run.init_seed)?;
    Ok(Checkpoint::from_model(&model, None, 0, 0))
}

fn check_init(corpus: &Corpus, vocab: &Vocabulary, init: &Checkpoint, run: &RunConfig) -> Result<Model> {
    run.validate()?;
    let expected = run.model_config(corpus.world(), vocab)?;
    init.expect_fingerprint(&expected.fingerprint())?;
    let mut config = init.config.clone();
    config.dropout = run.dropout;
    Model::from_parts(config, init.params.clone())
}

fn lm_phase(
    corpus: &Corpus,
    vocab: &Vocabulary,
    init: &Checkpoint,
    run: &RunConfig,
    epochs: usize,
    phase: &'static str,
    stream: u64,
) -> Result<PhaseOutcome> {
    let model = check_init(corpus, vocab, init, run)?;
    if corpus.is_empty() {
        return Err(Error::Contract("cannot train on an empty corpus".into()));
    }
    let seed = derive_seed(run.seed, stream);
    let per_epoch = steps_per_epoch(corpus.len(), run.batch_size);
    let tasks = task_schedule(&run.task_mix, seed, per_epoch * epochs);
    let mask_seed = derive_seed(seed, STREAM_MASKING);
    let mut t = Trainer::new(model, phase, run.pretrain_lr, per_epoch * epochs, run, seed);
    for epoch in 0..epochs {
        let order = shuffled(corpus.len(), seed, epoch);
        for batch in order.chunks(run.batch_size) {
            let step = t.adam.step as usize;
            let kind = tasks[step];
            let jobs = batch
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let s = derive_seed(mask_seed, (step * run.batch_size + k) as u64);
                    let inst = make_instance(&corpus.examples[i], kind, &run.masking, vocab, &t.model.config, run.use_concepts, s)?;
                    Ok(Job::Lm(inst))
                })
                .collect::<Result<Vec<_>>>()?;
            t.step(kind.as_str(), &jobs)?;
        }
        t.end_epoch(epoch + 1);
    }
    t.finish(init, run.average_k)
}

/// Pre-training from fresh parameters: each step samples one task kind for
/// the whole batch, masks every example and takes one Adam step.
pub fn pretrain(corpus: &Corpus, vocab: &Vocabulary, run: &RunConfig) -> Result<PhaseOutcome> {
    let init = initial_checkpoint(corpus.world(), vocab, run)?;
    lm_phase(corpus, vocab, &init, run, run.pretrain_epochs, "pretrain", STREAM_PRETRAIN)
}

/// Further pre-training on the downstream corpus for `domain_epochs` epochs.
pub fn domain_adapt(corpus: &Corpus, vocab: &Vocabulary, init: &Checkpoint, run: &RunConfig) -> Result<PhaseOutcome> {
    lm_phase(corpus, vocab, init, run, run.domain_epochs, "domain", STREAM_DOMAIN)
}

/// Caption fine-tuning with the sequence-to-sequence objective only.
pub fn finetune_caption(corpus: &Corpus, vocab: &Vocabulary, init: &Checkpoint, run: &RunConfig) -> Result<PhaseOutcome> {
    let model = check_init(corpus, vocab, init, run)?;
    let seed = derive_seed(run.seed, STREAM_CAPTION);
    let slots: Vec<(usize, usize)> = match run.caption_masking {
        CaptionMasking::FullCoverage => corpus
            .examples
            .iter()
            .enumerate()
            .flat_map(|(i, e)| (0..=e.caption.len()).map(move |s| (i, s)))
            .collect(),
        CaptionMasking::Policy => (0..corpus.len()).map(|i| (i, 0)).collect(),
    };
    if slots.is_empty() {
        return Err(Error::Contract("cannot train on an empty corpus".into()));
    }
    let per_epoch = steps_per_epoch(slots.len(), run.batch_size);
    let mask_seed = derive_seed(seed, STREAM_MASKING);
    let mut t = Trainer::new(model, "caption", run.caption_lr, per_epoch * run.caption_epochs, run, seed);
    for epoch in 0..run.caption_epochs {
        let order = shuffled(slots.len(), seed, epoch);
        for batch in order.chunks(run.batch_size) {
            let step = t.adam.step as usize;
            let jobs = batch
                .iter()
                .enumerate()
                .map(|(k, &j)| {
                    let (i, slot) = slots[j];
                    let ex = &corpus.examples[i];
                    let inst = match run.caption_masking {
                        CaptionMasking::FullCoverage => make_slot_instance(ex, slot, vocab, &t.model.config, run.use_concepts)?,
                        CaptionMasking::Policy => {
                            let s = derive_seed(mask_seed, (step * run.batch_size + k) as u64);
                            make_instance(ex, TaskKind::S2slm, &run.masking, vocab, &t.model.config, run.use_concepts, s)?
                        }
                    };
                    Ok(Job::Lm(inst))
                })
                .collect::<Result<Vec<_>>>()?;
            t.step(TaskKind::S2slm.as_str(), &jobs)?;
        }
        t.end_epoch(epoch + 1);
    }
    t.finish(init, run.average_k)
}

/// Referring fine-tuning: summed binary cross-entropy over each task's RoIs.
pub fn finetune_referring(corpus: &Corpus, vocab: &Vocabulary, init: &Checkpoint, run: &RunConfig) -> Result<PhaseOutcome> {
    let model = check_init(corpus, vocab, init, run)?;
    let seed = derive_seed(run.seed, STREAM_REFERRING);
    let mut tasks = Vec::new();
    for (ex, task) in corpus.referring_examples() {
        let concepts = if run.use_concepts { vocab.encode(&ex.concepts.words())? } else { Vec::new() };
        let query = vocab.encode(&task.query)?;
        let layout = referring_layout(&model, &ex.roi_features, &concepts, &query)?;
        tasks.push((layout, ex.roi_features.clone(), task.target));
    }
    if tasks.is_empty() {
        return Err(Error::Contract("corpus has no referring tasks".into()));
    }
    let per_epoch = steps_per_epoch(tasks.len(), run.batch_size);
    let mut t = Trainer::new(model, "referring", run.referring_lr, per_epoch * run.referring_epochs, run, seed);
    for epoch in 0..run.referring_epochs {
        let order = shuffled(tasks.len(), seed, epoch);
        for batch in order.chunks(run.batch_size) {
            let jobs: Vec<Job> = batch
                .iter()
                .map(|&j| {
                    let (layout, rois, target) = &tasks[j];
                    Job::Referring { layout: layout.clone(), rois: rois.clone(), target: *target }
                })
                .collect();
            t.step("referring", &jobs)?;
        }
        t.end_epoch(epoch + 1);
    }
    t.finish(init, run.average_k)
}
