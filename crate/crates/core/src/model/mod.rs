//! The single-stream encoder: `L` post-LN layers whose attention is either
//! entangled (one q/k/v set) or disentangled (separate visual q/k/v).
//! The output map and the feed-forward block are shared by both modalities.

mod attention;
mod config;
mod params;

pub use attention::{attention, project_qkv, AttentionMask, MASK_BIAS};
pub use config::{scaled_init_std, AttentionMode, ModelConfig};
pub use params::{projection_name, BoundParams, GradMap, ParamStore, QKV};

use dimvl_tensor::{Graph, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{embed_sequence, SequenceLayout};
use crate::error::{Error, Result};
use crate::world::RoiFeature;

/// Hidden states plus every layer's per-head attention weights, as graph handles.
#[derive(Debug)]
pub struct Encoded {
    pub hidden: Var,
    pub attention: Vec<Vec<Var>>,
}

fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mask = (0..g.value(x).len())
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            Ok(g.dropout(x, mask)?)
        }
        _ => Ok(x),
    }
}

/// `LN(x + FFN(LN(x + Attn(x))))`
#[allow(clippy::too_many_arguments)]
pub fn encoder_layer(
    g: &mut Graph,
    p: &BoundParams,
    config: &ModelConfig,
    layer: usize,
    x: Var,
    visual_rows: &[bool],
    mask_bias: Var,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Vec<Var>)> {
    let name = |s: &str| format!("layer{layer}.{s}");
    let qkv = project_qkv(g, p, config.mode, layer, x, visual_rows)?;
    let (heads, weights) = attention(g, qkv, mask_bias, config.n_heads)?;
    let attn = g.matmul(heads, p.var(&name("attn.out.w"))?)?;
    let attn = g.add_bias(attn, p.var(&name("attn.out.b"))?)?;
    let attn = dropout(g, attn, config.dropout, rng.as_deref_mut())?;
    let res = g.add(x, attn)?;
    let h = g.layer_norm(res, p.var(&name("ln1.gain"))?, p.var(&name("ln1.bias"))?, config.ln_eps)?;

    let f = g.matmul(h, p.var(&name("ffn.w1"))?)?;
    let f = g.add_bias(f, p.var(&name("ffn.b1"))?)?;
    let f = g.gelu(f)?;
    let f = g.matmul(f, p.var(&name("ffn.w2"))?)?;
    let f = g.add_bias(f, p.var(&name("ffn.b2"))?)?;
    let f = dropout(g, f, config.dropout, rng)?;
    let res = g.add(h, f)?;
    let out = g.layer_norm(res, p.var(&name("ln2.gain"))?, p.var(&name("ln2.bias"))?, config.ln_eps)?;
    Ok((out, weights))
}

/// Runs all layers over `h0`. Dropout is applied only when `rng` is given.
pub fn encode(
    g: &mut Graph,
    p: &BoundParams,
    config: &ModelConfig,
    h0: Var,
    visual_rows: &[bool],
    mask: &AttentionMask,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Encoded> {
    let s = g.value(h0).rows();
    if mask.size() != s || visual_rows.len() != s {
        return Err(Error::Dimension(format!(
            "sequence of {s} rows with mask {} and {} modality tags",
            mask.size(),
            visual_rows.len()
        )));
    }
    let bias = g.constant(mask.bias())?;
    let mut h = h0;
    let mut attention = Vec::with_capacity(config.n_layers);
    for l in 0..config.n_layers {
        let (next, w) = encoder_layer(g, p, config, l, h, visual_rows, bias, rng.as_deref_mut())?;
        h = next;
        attention.push(w);
    }
    Ok(Encoded { hidden: h, attention })
}

/// Vocabulary logits at the given rows of the final hidden states.
pub fn word_logits(g: &mut Graph, p: &BoundParams, config: &ModelConfig, hidden: Var, rows: &[usize]) -> Result<Var> {
    let h = g.gather_rows(hidden, rows)?;
    let logits = if config.tie_word_head {
        g.matmul_t(h, p.var("emb.token")?)?
    } else {
        g.matmul(h, p.var("head.word.w")?)?
    };
    Ok(g.add_bias(logits, p.var("head.word.b")?)?)
}

/// One score per RoI row.
pub fn roi_scores(g: &mut Graph, p: &BoundParams, hidden: Var, layout: &SequenceLayout) -> Result<Var> {
    let rows: Vec<usize> = layout.roi_rows().collect();
    if rows.is_empty() {
        return Err(Error::Contract("referring needs at least one RoI".into()));
    }
    let h = g.gather_rows(hidden, &rows)?;
    let s = g.matmul(h, p.var("head.referring.w")?)?;
    Ok(g.add_bias(s, p.var("head.referring.b")?)?)
}

/// Concrete result of a standalone forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub hidden: Tensor,
    /// `[layer][head]`, each `S × S`.
    pub attention: Vec<Vec<Tensor>>,
}

impl ForwardOutput {
    fn rows(&self, rows: impl Iterator<Item = usize>) -> Vec<Vec<f64>> {
        rows.map(|r| self.hidden.row(r).to_vec()).collect()
    }

    pub fn roi_states(&self, layout: &SequenceLayout) -> Vec<Vec<f64>> {
        self.rows(layout.roi_rows())
    }

    pub fn concept_states(&self, layout: &SequenceLayout) -> Vec<Vec<f64>> {
        self.rows(layout.concept_rows())
    }

    pub fn sentence_states(&self, layout: &SequenceLayout) -> Vec<Vec<f64>> {
        self.rows(layout.sentence_rows())
    }
}

/// Configuration and parameters together.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParamStore::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, params })
    }

    /// Records embedding and encoder on `g` using already-bound parameters.
    pub fn encode_on(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        layout: &SequenceLayout,
        rois: &[RoiFeature],
        mask: &AttentionMask,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Encoded> {
        let h0 = embed_sequence(g, p, &self.config, layout, rois)?;
        encode(g, p, &self.config, h0, &layout.visual_rows(), mask, rng)
    }

    pub fn forward(&self, layout: &SequenceLayout, rois: &[RoiFeature], mask: &AttentionMask) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let p = BoundParams::bind(&mut g, &self.params)?;
        let enc = self.encode_on(&mut g, &p, layout, rois, mask, None)?;
        Ok(ForwardOutput {
            hidden: g.value(enc.hidden).clone(),
            attention: enc
                .attention
                .iter()
                .map(|heads| heads.iter().map(|&a| g.value(a).clone()).collect())
                .collect(),
        })
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }
}
