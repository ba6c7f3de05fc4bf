//! Compares tape gradients with central finite differences for every
//! parameter of a narrow model, on both pre-training masks.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use dimvl::gradcheck::{check_gradients, GradientProbe};
use dimvl::model::{scaled_init_std, AttentionMode, Model, ModelConfig};
use dimvl::objectives::TaskKind;
use dimvl::vocab::Vocabulary;
use dimvl::world::{generate_corpus, WorldConfig};

fn main() -> dimvl::Result<()> {
    let vocab = Vocabulary::standard();
    let world = WorldConfig::default();
    let mut config = ModelConfig::for_world(&world, &vocab);
    config.d_model = 8;
    config.n_heads = 2;
    config.ffn_width = 16;
    config.max_positions = 32;
    config.mode = AttentionMode::Dim;
    config.init_std = scaled_init_std(config.d_model);
    let model = Model::new(config, 0)?;
    let example = generate_corpus(0, 8, &world)?.examples.into_iter().find(|e| e.roi_features.len() > 1).expect("multi-object scene");

    for kind in [TaskKind::Blm, TaskKind::S2slm] {
        let probe = GradientProbe::from_example(&example, kind, &model, &vocab, 1)?;
        let checks = check_gradients(&model, &probe, None)?;
        let worst = checks.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).expect("model has parameters");
        println!("{} mask, loss {:.4}", kind.as_str(), probe.loss_value(&model)?);
        for c in &checks {
            println!("  {:<28} {:>6} scalars  |g| {:>9.3e}  rel err {:.2e}", c.name, c.scalars, c.analytic_norm, c.rel_err);
        }
        println!("  worst: {} at {:.2e}", worst.name, worst.rel_err);
    }
    Ok(())
}
