//! Pre-trains, fine-tunes for captioning and decodes with greedy and beam
//! search, then scores the model on held-out scenes.
//!
//! ```text
//! cargo run --release --example caption
//! ```

use dimvl::decoding::GenerationConfig;
use dimvl::eval::{decode_example, evaluate, EvalOptions};
use dimvl::train::{finetune_caption, pretrain, RunConfig};
use dimvl::vocab::Vocabulary;
use dimvl::world::{generate_corpus, WorldConfig};

fn main() -> dimvl::Result<()> {
    let vocab = Vocabulary::standard();
    let world = WorldConfig::default();
    let train = generate_corpus(1, 64, &world)?;
    let held_out = generate_corpus(2, 32, &world)?;
    let run = RunConfig {
        pretrain_epochs: 10,
        pretrain_lr: 1e-3,
        caption_epochs: 20,
        caption_lr: 1e-3,
        average_k: 1,
        ..RunConfig::default()
    };

    let pre = pretrain(&train, &vocab, &run)?;
    let cap = finetune_caption(&train, &vocab, &pre.model, &run)?;
    let model = cap.model.model()?;
    println!("caption fine-tune: {} steps, final loss {:.3}", cap.log.records.len(), cap.log.records.last().map_or(f64::NAN, |r| r.loss));

    let greedy = EvalOptions { greedy: true, ..EvalOptions::default() };
    let beam = EvalOptions { generation: GenerationConfig { beam_size: 3, ..run.generation }, ..EvalOptions::default() };
    for ex in held_out.examples.iter().take(4) {
        println!("scene {}", ex.id);
        println!("  reference: {}", ex.caption.join(" "));
        println!("  greedy:    {}", vocab.decode(&decode_example(&model, ex, &vocab, &greedy)?.tokens)?.join(" "));
        let b = decode_example(&model, ex, &vocab, &beam)?;
        println!("  beam 3:    {}  (log p = {:.2})", vocab.decode(&b.tokens)?.join(" "), b.log_prob);
    }

    for (name, corpus) in [("train", &train), ("held-out", &held_out)] {
        let r = evaluate(&model, corpus, &vocab, &EvalOptions { label: name.into(), seeds: vec![run.seed], ..beam.clone() })?;
        println!("{name:>9}: token accuracy {:.3}  BLEU-4 {:.3}", r.token_accuracy, r.bleu[3]);
    }
    Ok(())
}
