//! Shows what the separate visual projections add: the parameter overhead,
//! the exact reduction to shared attention when the visual weights are tied
//! to the textual ones, and the change once they are not.
//!
//! ```text
//! cargo run --release --example disentangled_attention
//! ```

use dimvl::embeddings::SequenceLayout;
use dimvl::model::{AttentionMode, Model, ModelConfig};
use dimvl::objectives::build_s2slm_mask;
use dimvl::vocab::Vocabulary;
use dimvl::world::{generate_corpus, WorldConfig};

fn main() -> dimvl::Result<()> {
    let vocab = Vocabulary::standard();
    let world = WorldConfig::default();
    let config = |mode| ModelConfig { mode, ..ModelConfig::for_world(&world, &vocab) };
    let esa = Model::new(config(AttentionMode::Esa), 3)?;
    let dim = Model::new(config(AttentionMode::Dim), 3)?;
    let mut tied = dim.clone();
    tied.params.tie_visual_to_text(tied.config.n_layers)?;

    let d = esa.config.d_model;
    println!("shared attention:       {} parameters", esa.parameter_count());
    println!("disentangled attention: {} parameters (+{} = 3·L·d² with L = {}, d = {d})", dim.parameter_count(), dim.parameter_count() - esa.parameter_count(), dim.config.n_layers);

    let ex = &generate_corpus(4, 1, &world)?.examples[0];
    let layout = SequenceLayout::new(ex.roi_features.len(), &vocab.encode(&ex.concepts.words())?, &vocab.encode(&ex.caption)?, &esa.config)?;
    let mask = build_s2slm_mask(&layout);
    let a = esa.forward(&layout, &ex.roi_features, &mask)?;
    let b = tied.forward(&layout, &ex.roi_features, &mask)?;
    let c = dim.forward(&layout, &ex.roi_features, &mask)?;
    println!("max |h_shared - h_tied|   = {:.2e}", a.hidden.max_abs_diff(&b.hidden)?);
    println!("max |h_shared - h_untied| = {:.2e}", a.hidden.max_abs_diff(&c.hidden)?);
    Ok(())
}
