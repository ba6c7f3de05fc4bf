//! Measures how the number of extracted visual concepts trades precision for
//! recall on a corpus whose concept extractor injects spurious words.
//!
//! ```text
//! cargo run --release --example sweep_concepts
//! ```

use dimvl::eval::{sweep_concepts, sweep_to_text};
use dimvl::world::{generate_corpus, ConceptNoise, WorldConfig};

fn main() -> dimvl::Result<()> {
    let world = WorldConfig { concept_noise: ConceptNoise { inject_rate: 0.3, drop_rate: 0.0 }, ..WorldConfig::default() };
    let corpus = generate_corpus(5, 200, &world)?;
    let ms: Vec<usize> = (0..=24).collect();
    let rows = sweep_concepts(&corpus, &ms)?;
    print!("{}", sweep_to_text(&rows));
    let best = rows.iter().max_by(|a, b| a.f1.total_cmp(&b.f1)).expect("non-empty sweep");
    println!("best F1 {:.3} at M = {}", best.f1, best.m);
    Ok(())
}
