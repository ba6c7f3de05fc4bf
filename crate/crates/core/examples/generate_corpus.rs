//! Generates a small synthetic corpus, prints a few scenes with their
//! captions, concepts and referring queries, and writes it as JSON lines.
//!
//! ```text
//! cargo run --release --example generate_corpus -- [out.jsonl]
//! ```

use dimvl::vocab::{CLASS_WORDS, COLOR_WORDS, SIZE_WORDS};
use dimvl::world::{generate_corpus, Corpus, WorldConfig};

fn main() -> dimvl::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("dimvl-corpus.jsonl"), Into::into);
    let corpus = generate_corpus(7, 64, &WorldConfig::default())?;

    for ex in corpus.examples.iter().take(4) {
        println!("scene {} ({} objects)", ex.id, ex.scene.objects.len());
        for (o, f) in ex.scene.objects.iter().zip(&ex.roi_features) {
            println!(
                "  {:>5} {:>6} {:>8}  box {:?}  geometry [{}]",
                SIZE_WORDS[o.size_id],
                COLOR_WORDS[o.color_id],
                CLASS_WORDS[o.class_id],
                (o.bbox.x_tl, o.bbox.y_tl, o.bbox.x_br, o.bbox.y_br),
                f.geometry.iter().map(|g| format!("{g:.2}")).collect::<Vec<_>>().join(" "),
            );
        }
        println!("  caption:  {}", ex.caption.join(" "));
        println!("  concepts: {}", ex.concepts.words().join(" "));
        for t in &ex.referring_tasks {
            println!("  refer:    \"{}\" -> object {}", t.query.join(" "), t.target);
        }
    }

    corpus.write(&out)?;
    let back = Corpus::read(&out)?;
    assert_eq!(back, corpus);
    println!("wrote {} examples to {}", back.len(), out.display());
    Ok(())
}
