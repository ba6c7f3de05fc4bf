//! Pre-trains a small model with the bidirectional and sequence-to-sequence
//! masked objectives, printing the mean loss of each task per epoch.
//!
//! ```text
//! cargo run --release --example pretrain
//! ```

use dimvl::train::{pretrain, RunConfig};
use dimvl::vocab::Vocabulary;
use dimvl::world::{generate_corpus, WorldConfig};

fn main() -> dimvl::Result<()> {
    let vocab = Vocabulary::standard();
    let corpus = generate_corpus(1, 64, &WorldConfig::default())?;
    let run = RunConfig { pretrain_epochs: 8, pretrain_lr: 1e-3, d_model: 32, ffn_width: 128, average_k: 4, ..RunConfig::default() };

    let out = pretrain(&corpus, &vocab, &run)?;
    let per_epoch = out.log.records.len() / run.pretrain_epochs;
    println!("epoch  blm     s2slm");
    for (epoch, chunk) in out.log.records.chunks(per_epoch).enumerate() {
        let mean = |task: &str| {
            let xs: Vec<f64> = chunk.iter().filter(|r| r.task == task).map(|r| r.loss).collect();
            if xs.is_empty() { "-".to_string() } else { format!("{:.3}", xs.iter().sum::<f64>() / xs.len() as f64) }
        };
        println!("{:>5}  {:<7} {}", epoch + 1, mean("blm"), mean("s2slm"));
    }

    let path = std::env::temp_dir().join("dimvl-pretrain.ckpt");
    out.model.save(&path)?;
    println!("averaged the last {} epoch checkpoints into {} ({})", run.average_k, path.display(), out.model.checksum()?);
    Ok(())
}
