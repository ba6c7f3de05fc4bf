//! Fine-tunes the region head for referring expressions and reports held-in
//! and held-out accuracy.
//!
//! ```text
//! cargo run --release --example referring
//! ```

use dimvl::decoding::{referring_predict, referring_scores};
use dimvl::eval::referring_accuracy;
use dimvl::train::{finetune_referring, initial_checkpoint, RunConfig};
use dimvl::vocab::Vocabulary;
use dimvl::world::{generate_corpus, Corpus, WorldConfig};

fn accuracy(model: &dimvl::model::Model, corpus: &Corpus, vocab: &Vocabulary) -> dimvl::Result<f64> {
    let tasks = corpus
        .referring_examples()
        .map(|(ex, t)| Ok((ex.roi_features.as_slice(), vocab.encode(&ex.concepts.words())?, vocab.encode(&t.query)?, t.target)))
        .collect::<dimvl::Result<Vec<_>>>()?;
    let (hits, total) = referring_accuracy(model, tasks)?;
    Ok(hits as f64 / total as f64)
}

fn main() -> dimvl::Result<()> {
    let vocab = Vocabulary::standard();
    let world = WorldConfig::default();
    let train = generate_corpus(1, 256, &world)?;
    let held_out = generate_corpus(2, 200, &world)?;
    let run = RunConfig { referring_epochs: 20, referring_lr: 1e-3, average_k: 1, ..RunConfig::default() };

    let init = initial_checkpoint(train.world(), &vocab, &run)?;
    let out = finetune_referring(&train, &vocab, &init, &run)?;
    let model = out.model.model()?;
    println!("held-in accuracy  {:.3}", accuracy(&model, &train, &vocab)?);
    println!("held-out accuracy {:.3}", accuracy(&model, &held_out, &vocab)?);

    for (ex, task) in held_out.referring_examples().filter(|(e, _)| e.roi_features.len() > 2).take(3) {
        let scores = referring_scores(&model, &ex.roi_features, &vocab.encode(&ex.concepts.words())?, &vocab.encode(&task.query)?)?;
        let shown: Vec<String> = scores.iter().map(|s| format!("{s:+.2}")).collect();
        println!("\"{}\": target {} predicted {}  scores [{}]", task.query.join(" "), task.target, referring_predict(&scores)?, shown.join(" "));
    }
    Ok(())
}
