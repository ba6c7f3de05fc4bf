//! Overfits a referring model on a handful of scenes, then prints which RoIs
//! each query word attends to in the last layer and writes the full dump.
//!
//! ```text
//! cargo run --release --example attention_dump
//! ```

use dimvl::eval::dump_referring_attention;
use dimvl::train::{finetune_referring, initial_checkpoint, RunConfig};
use dimvl::vocab::Vocabulary;
use dimvl::world::{generate_corpus, WorldConfig};

fn main() -> dimvl::Result<()> {
    let vocab = Vocabulary::standard();
    let mut corpus = generate_corpus(7, 32, &WorldConfig::default())?;
    corpus.examples.retain(|e| !e.referring_tasks.is_empty() && e.roi_features.len() > 1);
    corpus.examples.truncate(16);
    let run = RunConfig { referring_epochs: 40, referring_lr: 1e-3, batch_size: 4, average_k: 1, ..RunConfig::default() };
    let init = initial_checkpoint(corpus.world(), &vocab, &run)?;
    let model = finetune_referring(&corpus, &vocab, &init, &run)?.model.model()?;

    let mut last = None;
    for (ex, task) in corpus.referring_examples().take(4) {
        let dump = dump_referring_attention(&model, ex, task, &vocab, true)?;
        println!("\"{}\" (target RoI {})", task.query.join(" "), task.target);
        for list in &dump.text_to_roi {
            let top: Vec<String> = list.top.iter().map(|e| format!("{}={:.2}", e.label, e.weight)).collect();
            println!("  {:>8} -> {}", list.label, top.join("  "));
        }
        last = Some((ex.id, dump));
    }

    if let Some((id, dump)) = last {
        let path = std::env::temp_dir().join(format!("dimvl-attention-{id}.json"));
        std::fs::write(&path, dump.to_json()?)?;
        println!("full matrix for scene {id} written to {}", path.display());
    }
    Ok(())
}
