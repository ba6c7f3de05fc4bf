use std::collections::BTreeMap;

use dimvl_tensor::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::config::{AttentionMode, ModelConfig};
use crate::error::{Error, Result};
use crate::world::derive_seed;

/// Named parameter tensors in a fixed (sorted) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

pub type GradMap = BTreeMap<String, Tensor>;

/// Names of the q/k/v projections; `visual` selects the disentangled set.
pub fn projection_name(layer: usize, which: &str, visual: bool) -> String {
    format!("layer{layer}.attn.{which}.{}", if visual { "visual" } else { "text" })
}

pub const QKV: [&str; 3] = ["query", "key", "value"];

fn name_stream(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fresh random parameters. Textual and visual projection sets are drawn
    /// independently from the same distribution.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let weight = Normal::new(0.0, config.init_std).expect("positive std");
        let table = Normal::new(0.0, config.embed_init_std).expect("positive std");
        let d = config.d_model;
        let half = d / 2;
        let mut s = Self::new();
        // Each tensor draws from its own stream so that parameters shared by
        // both attention modes get identical values for the same seed.
        let normal = |s: &mut Self, name: String, shape: &[usize], dist: &Normal<f64>| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, name_stream(&name)));
            let n = shape.iter().product();
            let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
            s.insert(name, Tensor::new(shape.to_vec(), data).expect("shape"));
        };

        normal(&mut s, "emb.token".into(), &[config.vocab_size, d], &table);
        normal(&mut s, "emb.position".into(), &[config.max_positions, d], &table);
        normal(&mut s, "emb.segment".into(), &[3, d], &table);

        normal(&mut s, "roi.appearance.w".into(), &[config.appearance_dim, d], &weight);
        s.insert("roi.appearance.b".into(), Tensor::zeros(&[d]));
        normal(&mut s, "roi.geometry.w".into(), &[config.geometry_dim(), half], &weight);
        normal(&mut s, "roi.class.w".into(), &[config.class_dim, half], &weight);
        for part in ["geometry", "class"] {
            s.insert(format!("roi.{part}.ln.gain"), Tensor::filled(&[half], 1.0));
            s.insert(format!("roi.{part}.ln.bias"), Tensor::zeros(&[half]));
        }
        for gain in ["appearance", "geometry", "segment"] {
            s.insert(format!("roi.gain.{gain}"), Tensor::filled(&[1], 1.0));
        }

        for l in 0..config.n_layers {
            for which in QKV {
                normal(&mut s, projection_name(l, which, false), &[d, d], &weight);
            }
            if config.mode == AttentionMode::Dim {
                for which in QKV {
                    normal(&mut s, projection_name(l, which, true), &[d, d], &weight);
                }
            }
            normal(&mut s, format!("layer{l}.attn.out.w"), &[d, d], &weight);
            s.insert(format!("layer{l}.attn.out.b"), Tensor::zeros(&[d]));
            normal(&mut s, format!("layer{l}.ffn.w1"), &[d, config.ffn_width], &weight);
            s.insert(format!("layer{l}.ffn.b1"), Tensor::zeros(&[config.ffn_width]));
            normal(&mut s, format!("layer{l}.ffn.w2"), &[config.ffn_width, d], &weight);
            s.insert(format!("layer{l}.ffn.b2"), Tensor::zeros(&[d]));
            for ln in ["ln1", "ln2"] {
                s.insert(format!("layer{l}.{ln}.gain"), Tensor::filled(&[d], 1.0));
                s.insert(format!("layer{l}.{ln}.bias"), Tensor::zeros(&[d]));
            }
        }

        if !config.tie_word_head {
            normal(&mut s, "head.word.w".into(), &[d, config.vocab_size], &weight);
        }
        s.insert("head.word.b".into(), Tensor::zeros(&[config.vocab_size]));
        normal(&mut s, "head.referring.w".into(), &[d, 1], &weight);
        s.insert("head.referring.b".into(), Tensor::zeros(&[1]));
        Ok(s)
    }

    pub fn insert(&mut self, name: String, t: Tensor) {
        self.tensors.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Copies the textual q/k/v projections over the visual ones.
    pub fn tie_visual_to_text(&mut self, n_layers: usize) -> Result<()> {
        for l in 0..n_layers {
            for which in QKV {
                let text = self.get(&projection_name(l, which, false))?.clone();
                *self.get_mut(&projection_name(l, which, true))? = text;
            }
        }
        Ok(())
    }
}

/// Parameters recorded as leaves of one graph.
#[derive(Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn bind(graph: &mut Graph, store: &ParamStore) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (name, t) in store.iter() {
            vars.insert(name.clone(), graph.param(t.clone())?);
        }
        Ok(Self { vars })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradient of every bound parameter; parameters the loss does not reach get zeros.
    pub fn gradients(&self, graph: &Graph) -> GradMap {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = graph.grad(v).unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
