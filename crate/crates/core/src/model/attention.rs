use dimvl_tensor::{Graph, Tensor, Var};

use super::config::AttentionMode;
use super::params::{projection_name, BoundParams};
use crate::error::{Error, Result};

/// Added to the scores of masked columns before the softmax.
pub const MASK_BIAS: f64 = -1e9;

/// `S × S` attendability matrix; `allows(i, j)` means row `i` may attend column `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Fails when some row has no attendable column.
    pub fn new(size: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != size * size {
            return Err(Error::Dimension(format!("mask of {} entries for size {size}", allowed.len())));
        }
        if let Some(row) = (0..size).find(|&i| !allowed[i * size..(i + 1) * size].iter().any(|&a| a)) {
            return Err(Error::Contract(format!("mask row {row} has no attendable column")));
        }
        Ok(Self { size, allowed })
    }

    pub fn full(size: usize) -> Self {
        Self { size, allowed: vec![true; size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.size + col]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.size..(i + 1) * self.size]
    }

    pub fn count_row(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&a| a).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.size).all(|i| (0..i).all(|j| self.allows(i, j) == self.allows(j, i)))
    }

    /// Additive score bias: 0 where attendable, [`MASK_BIAS`] elsewhere.
    pub fn bias(&self) -> Tensor {
        let data = self.allowed.iter().map(|&a| if a { 0.0 } else { MASK_BIAS }).collect();
        Tensor::matrix(self.size, self.size, data).expect("square mask")
    }
}

/// Queries, keys and values for every row. In entangled mode all rows use
/// the textual projections; in disentangled mode rows flagged in
/// `visual_rows` use the visual set.
pub fn project_qkv(
    g: &mut Graph,
    p: &BoundParams,
    mode: AttentionMode,
    layer: usize,
    x: Var,
    visual_rows: &[bool],
) -> Result<[Var; 3]> {
    let mut out = [x; 3];
    for (slot, which) in out.iter_mut().zip(super::params::QKV) {
        let text = p.var(&projection_name(layer, which, false))?;
        *slot = match mode {
            AttentionMode::Esa => g.matmul(x, text)?,
            AttentionMode::Dim => {
                let visual = p.var(&projection_name(layer, which, true))?;
                g.routed_matmul(x, text, visual, visual_rows)?
            }
        };
    }
    Ok(out)
}

/// Multi-head scaled dot-product attention. Returns the concatenated head
/// outputs (before the output map) and each head's weight matrix.
pub fn attention(
    g: &mut Graph,
    [q, k, v]: [Var; 3],
    mask_bias: Var,
    n_heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let d = g.value(q).cols();
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Config(format!("{d} columns do not split into {n_heads} heads")));
    }
    let s = g.value(q).rows();
    if g.value(mask_bias).shape() != [s, s] {
        return Err(Error::Dimension(format!(
            "mask {:?} for sequence length {s}",
            g.value(mask_bias).shape()
        )));
    }
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, scale)?;
        let scores = g.add(scores, mask_bias)?;
        let a = g.softmax(scores, 1)?;
        heads.push(g.matmul(a, vh)?);
        weights.push(a);
    }
    let joined = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
    Ok((joined, weights))
}
