//! Command-line front end. Every subcommand prints `ok\t<artifact>` on
//! success; failures print one `error\t<kind>\t<reason>` line to stderr and
//! exit nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dimvl::eval::*;
use dimvl::train::*;
use dimvl::vocab::Vocabulary;
use dimvl::world::{generate_corpus, CaptionStyle, ConceptNoise, Corpus, WorldConfig};
use dimvl::{Error, Result};

#[derive(Parser)]
#[command(name = "dimvl", version, about = "Train and evaluate a disentangled vision-language transformer on a synthetic world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat `key = value` run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set d_model=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory receiving checkpoints, logs and reports.
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Caption,
    Referring,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as JSON lines.
    GenerateCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        count: usize,
        /// Mention every object in the caption instead of the three largest.
        #[arg(long)]
        exhaustive: bool,
        /// Probability of injecting a spurious concept.
        #[arg(long, default_value_t = 0.0)]
        inject_rate: f64,
        /// Probability of dropping a true concept.
        #[arg(long, default_value_t = 0.0)]
        drop_rate: f64,
    },
    /// Pre-train from scratch with the BLM/S2SLM task mix.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fine-tune for captioning or referring, after domain-adaptive pre-training.
    Finetune {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        corpus: PathBuf,
        /// Starting checkpoint; fresh parameters when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Skip the domain-adaptive pre-training phase.
        #[arg(long)]
        no_domain_adapt: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write captions or referring predictions for every example.
    Generate {
        #[arg(long, value_enum, default_value = "caption")]
        task: Task,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        greedy: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint: token accuracy, BLEU-1..4 and referring accuracy.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        greedy: bool,
        #[arg(long, default_value = "eval")]
        label: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train and score the attention × concepts × pre-training grid.
    Ablate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        greedy: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Precision, recall and F1 of the concept extractor for each M.
    SweepConcepts {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,2,5,8")]
        m: Vec<usize>,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Head-averaged last-layer attention for one example.
    DumpAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Example id within the corpus.
        #[arg(long, default_value_t = 0)]
        example: usize,
        /// Dump the referring query layout instead of the caption layout.
        #[arg(long)]
        referring: bool,
        #[command(flatten)]
        run: RunArgs,
    },
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Tensor(_) => "tensor",
        Error::Config(_) => "config",
        Error::Dimension(_) => "dimension",
        Error::Vocabulary(_) => "vocabulary",
        Error::Length { .. } => "length",
        Error::Contract(_) => "contract",
        Error::Format(_) => "format",
        Error::Fingerprint { .. } => "fingerprint",
        Error::Divergence { .. } => "divergence",
        Error::Io(_) => "io",
        Error::Json(_) => "format",
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} is not a readable file", path.display())))
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    existing(path, "corpus")?;
    Corpus::read(path)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    existing(path, "checkpoint")?;
    Checkpoint::load(path)
}

impl RunArgs {
    /// Resolves the configuration, creates the run directory and records the
    /// effective settings in it.
    fn prepare(&self) -> Result<RunConfig> {
        let mut run = match &self.config {
            Some(p) => {
                existing(p, "config")?;
                RunConfig::read(p)?
            }
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            run.set_override(o)?;
        }
        std::fs::create_dir_all(&self.run_dir)?;
        run.write(&self.run_dir.join("config.txt"))?;
        Ok(run)
    }

    fn file(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }
}

/// Saves every epoch checkpoint plus the averaged model and appends the log.
fn save_phase(out: &PhaseOutcome, name: &str, run: &RunArgs) -> Result<PathBuf> {
    let dir = run.file("checkpoints");
    std::fs::create_dir_all(&dir)?;
    for ck in &out.checkpoints {
        ck.save(&dir.join(format!("{name}-{:03}.ckpt", ck.epoch)))?;
    }
    out.log.append_to(&run.file("log.tsv"))?;
    let path = run.file(&format!("{name}.ckpt"));
    out.model.save(&path)?;
    Ok(path)
}

fn eval_options(run: &RunConfig, label: &str, greedy: bool) -> EvalOptions {
    EvalOptions {
        label: label.to_string(),
        seeds: vec![run.seed],
        use_concepts: run.use_concepts,
        generation: run.generation,
        greedy,
    }
}

fn execute(command: Command) -> Result<PathBuf> {
    let vocab = Vocabulary::standard();
    match command {
        Command::GenerateCorpus { out, seed, count, exhaustive, inject_rate, drop_rate } => {
            let mut world = WorldConfig {
                concept_noise: ConceptNoise { inject_rate, drop_rate },
                ..WorldConfig::default()
            };
            if exhaustive {
                world.caption_style = CaptionStyle::Exhaustive;
            }
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            generate_corpus(seed, count, &world)?.write(&out)?;
            Ok(out)
        }
        Command::Pretrain { corpus, run } => {
            let config = run.prepare()?;
            let corpus = load_corpus(&corpus)?;
            save_phase(&pretrain(&corpus, &vocab, &config)?, "pretrain", &run)
        }
        Command::Finetune { task, corpus, init, no_domain_adapt, run } => {
            let config = run.prepare()?;
            let corpus = load_corpus(&corpus)?;
            let mut start = match &init {
                Some(p) => load_checkpoint(p)?,
                None => initial_checkpoint(corpus.world(), &vocab, &config)?,
            };
            if !no_domain_adapt && config.domain_epochs > 0 {
                let out = domain_adapt(&corpus, &vocab, &start, &config)?;
                save_phase(&out, "domain", &run)?;
                start = out.model;
            }
            match task {
                Task::Caption => save_phase(&finetune_caption(&corpus, &vocab, &start, &config)?, "caption", &run),
                Task::Referring => save_phase(&finetune_referring(&corpus, &vocab, &start, &config)?, "referring", &run),
            }
        }
        Command::Generate { task, checkpoint, corpus, greedy, run } => {
            let config = run.prepare()?;
            let model = load_checkpoint(&checkpoint)?.model()?;
            let corpus = load_corpus(&corpus)?;
            let (name, text) = match task {
                Task::Caption => {
                    let caps = generate_captions(&model, &corpus, &vocab, &eval_options(&config, "generate", greedy))?;
                    ("captions.tsv", captions_to_text(&caps))
                }
                Task::Referring => ("referring.tsv", referring_to_text(&model, &corpus, &vocab, config.use_concepts)?),
            };
            let path = run.file(name);
            std::fs::write(&path, text)?;
            Ok(path)
        }
        Command::Evaluate { checkpoint, corpus, greedy, label, run } => {
            let config = run.prepare()?;
            let model = load_checkpoint(&checkpoint)?.model()?;
            let corpus = load_corpus(&corpus)?;
            let report = evaluate(&model, &corpus, &vocab, &eval_options(&config, &label, greedy))?;
            let path = run.file("report.tsv");
            std::fs::write(&path, report.to_text())?;
            Ok(path)
        }
        Command::Ablate { train, eval, seeds, greedy, run } => {
            let config = run.prepare()?;
            if seeds.is_empty() {
                return Err(Error::Config("ablation needs at least one seed".into()));
            }
            let grid = ablate(
                &AblationConfig { train: load_corpus(&train)?, eval: load_corpus(&eval)?, run: config, seeds, greedy },
                &vocab,
            )?;
            let path = run.file("ablation.tsv");
            std::fs::write(&path, grid.to_text())?;
            Ok(path)
        }
        Command::SweepConcepts { corpus, m, run_dir } => {
            let corpus = load_corpus(&corpus)?;
            std::fs::create_dir_all(&run_dir)?;
            let path = run_dir.join("sweep.tsv");
            std::fs::write(&path, sweep_to_text(&sweep_concepts(&corpus, &m)?))?;
            Ok(path)
        }
        Command::DumpAttention { checkpoint, corpus, example, referring, run } => {
            let config = run.prepare()?;
            let model = load_checkpoint(&checkpoint)?.model()?;
            let corpus = load_corpus(&corpus)?;
            let ex = corpus
                .examples
                .iter()
                .find(|e| e.id == example)
                .ok_or_else(|| Error::Config(format!("corpus has no example {example}")))?;
            let dump = if referring {
                let task = ex
                    .referring_tasks
                    .first()
                    .ok_or_else(|| Error::Config(format!("example {example} has no referring task")))?;
                dump_referring_attention(&model, ex, task, &vocab, config.use_concepts)?
            } else {
                dump_caption_attention(&model, ex, &vocab, config.use_concepts)?
            };
            let path = run.file(&format!("attention-{example}.json"));
            std::fs::write(&path, dump.to_json()?)?;
            Ok(path)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("error\tusage\t{}", one_line(msg.lines().next().unwrap_or("invalid arguments")));
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(path) => {
            println!("ok\t{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error\t{}\t{}", kind(&e), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
