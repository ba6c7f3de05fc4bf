//! Trains every cell of the attention × concepts × pre-training grid on one
//! corpus and prints the seed-averaged table with the DiM and concept deltas.
//!
//! ```text
//! cargo run --release --example ablate
//! ```

use dimvl::decoding::GenerationConfig;
use dimvl::eval::{ablate, AblationConfig};
use dimvl::train::RunConfig;
use dimvl::vocab::Vocabulary;
use dimvl::world::{generate_corpus, WorldConfig};

fn main() -> dimvl::Result<()> {
    let vocab = Vocabulary::standard();
    let world = WorldConfig::default();
    let config = AblationConfig {
        train: generate_corpus(1, 32, &world)?,
        eval: generate_corpus(2, 16, &world)?,
        run: RunConfig {
            pretrain_epochs: 3,
            pretrain_lr: 1e-3,
            caption_epochs: 3,
            caption_lr: 1e-3,
            referring_epochs: 3,
            referring_lr: 1e-3,
            d_model: 16,
            n_heads: 2,
            ffn_width: 32,
            average_k: 1,
            generation: GenerationConfig { beam_size: 2, ..GenerationConfig::default() },
            ..RunConfig::default()
        },
        seeds: vec![0, 1],
        greedy: false,
    };
    let grid = ablate(&config, &vocab)?;
    print!("{}", grid.to_text());
    Ok(())
}
