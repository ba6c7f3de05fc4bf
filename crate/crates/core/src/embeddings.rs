//! Input sequence layout and the embedding of each position.
//!
//! A sequence is laid out as
//! `[CLS] RoI… [SEP] Concept… [SEP] Word… [END]`.
//! RoIs are the only visual positions; concepts, words and the special
//! tokens are textual. RoIs carry no position embedding, concepts are
//! numbered by score rank and words (with the closing `[END]`) by sentence
//! order.

use dimvl_tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundParams, ModelConfig, ParamStore};
use crate::vocab::{TokenId, CLS, END, SEP};
use crate::world::{RoiFeature, GEOMETRY_DIM};

pub use crate::world::geometry_feature;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Visual,
    Textual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentId {
    Roi = 0,
    Concept = 1,
    Sentence = 2,
}

/// What a position holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Cls,
    Roi(usize),
    /// Boundary after the RoIs (`0`) or after the concepts (`1`).
    Sep(u8),
    Concept(usize),
    Word(usize),
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionInfo {
    pub slot: Slot,
    pub modality: Modality,
    pub segment: SegmentId,
    pub position_id: Option<usize>,
    pub token_id: Option<TokenId>,
    pub is_target: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceLayout {
    positions: Vec<PositionInfo>,
    num_rois: usize,
    num_concepts: usize,
    num_words: usize,
    has_end: bool,
}

impl SequenceLayout {
    /// Training/scoring layout, closed by `[END]`.
    pub fn new(num_rois: usize, concepts: &[TokenId], sentence: &[TokenId], config: &ModelConfig) -> Result<Self> {
        Self::build(num_rois, concepts, sentence, true, config)
    }

    /// Generation layout: the prefix followed by `[MASK]`, with no `[END]`.
    pub fn for_generation(num_rois: usize, concepts: &[TokenId], prefix: &[TokenId], config: &ModelConfig) -> Result<Self> {
        let mut sentence = prefix.to_vec();
        sentence.push(crate::vocab::MASK);
        Self::build(num_rois, concepts, &sentence, false, config)
    }

    fn build(num_rois: usize, concepts: &[TokenId], sentence: &[TokenId], has_end: bool, config: &ModelConfig) -> Result<Self> {
        if num_rois > config.max_rois {
            return Err(Error::Length { what: "RoI list", len: num_rois, limit: config.max_rois });
        }
        if concepts.len() > config.max_positions {
            return Err(Error::Length { what: "concept list", len: concepts.len(), limit: config.max_positions });
        }
        let sentence_slots = sentence.len() + usize::from(has_end);
        if sentence_slots > config.max_positions {
            return Err(Error::Length { what: "sentence", len: sentence_slots, limit: config.max_positions });
        }
        for &t in concepts.iter().chain(sentence) {
            if t >= config.vocab_size {
                return Err(Error::Vocabulary(format!("#{t}")));
            }
        }

        let text = |slot, segment, position_id, token_id| PositionInfo {
            slot,
            modality: Modality::Textual,
            segment,
            position_id,
            token_id: Some(token_id),
            is_target: false,
        };
        let mut positions = Vec::with_capacity(4 + num_rois + concepts.len() + sentence.len());
        positions.push(text(Slot::Cls, SegmentId::Roi, None, CLS));
        positions.extend((0..num_rois).map(|i| PositionInfo {
            slot: Slot::Roi(i),
            modality: Modality::Visual,
            segment: SegmentId::Roi,
            position_id: None,
            token_id: None,
            is_target: false,
        }));
        positions.push(text(Slot::Sep(0), SegmentId::Roi, None, SEP));
        positions.extend(
            concepts.iter().enumerate().map(|(r, &t)| text(Slot::Concept(r), SegmentId::Concept, Some(r), t)),
        );
        positions.push(text(Slot::Sep(1), SegmentId::Concept, None, SEP));
        positions.extend(
            sentence.iter().enumerate().map(|(j, &t)| text(Slot::Word(j), SegmentId::Sentence, Some(j), t)),
        );
        if has_end {
            positions.push(text(Slot::End, SegmentId::Sentence, Some(sentence.len()), END));
        }
        Ok(Self {
            positions,
            num_rois,
            num_concepts: concepts.len(),
            num_words: sentence.len(),
            has_end,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[PositionInfo] {
        &self.positions
    }

    pub fn get(&self, i: usize) -> &PositionInfo {
        &self.positions[i]
    }

    pub fn num_rois(&self) -> usize {
        self.num_rois
    }

    pub fn num_concepts(&self) -> usize {
        self.num_concepts
    }

    pub fn num_words(&self) -> usize {
        self.num_words
    }

    pub fn has_end(&self) -> bool {
        self.has_end
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.positions.iter().map(|p| p.modality).collect()
    }

    /// `true` for rows that use the visual projections.
    pub fn visual_rows(&self) -> Vec<bool> {
        self.positions.iter().map(|p| p.modality == Modality::Visual).collect()
    }

    pub fn roi_rows(&self) -> std::ops::Range<usize> {
        1..1 + self.num_rois
    }

    pub fn concept_rows(&self) -> std::ops::Range<usize> {
        let start = 2 + self.num_rois;
        start..start + self.num_concepts
    }

    /// Index of the `[SEP]` closing the concept segment.
    pub fn second_sep_row(&self) -> usize {
        2 + self.num_rois + self.num_concepts
    }

    /// Word rows followed by `[END]` when present.
    pub fn sentence_rows(&self) -> std::ops::Range<usize> {
        let start = self.second_sep_row() + 1;
        start..self.positions.len()
    }

    /// Row of sentence slot `j` (`j == num_words` is `[END]`).
    pub fn sentence_row(&self, j: usize) -> Result<usize> {
        let rows = self.sentence_rows();
        if j < rows.len() {
            Ok(rows.start + j)
        } else {
            Err(Error::Contract(format!("sentence slot {j} outside {} slots", rows.len())))
        }
    }

    /// Rows in the RoI and concept segments, boundary tokens included.
    pub fn in_visual_block(&self, row: usize) -> bool {
        row <= self.second_sep_row()
    }

    pub fn token_ids(&self) -> Vec<Option<TokenId>> {
        self.positions.iter().map(|p| p.token_id).collect()
    }

    /// Replaces the token at a concept or sentence row and sets its target flag.
    pub(crate) fn set_token(&mut self, row: usize, token: TokenId, target: bool) -> Result<()> {
        if !self.sentence_rows().contains(&row) && !self.concept_rows().contains(&row) {
            return Err(Error::Contract(format!("row {row} is not a concept or sentence row")));
        }
        let p = &mut self.positions[row];
        p.token_id = Some(token);
        p.is_target = target;
        Ok(())
    }

    pub fn target_rows(&self) -> Vec<usize> {
        (0..self.positions.len()).filter(|&i| self.positions[i].is_target).collect()
    }
}

/// Embeds every RoI: `λ_r·(r W_r + b_r) + λ_g·[LN(g W_g); LN(c W_c)] + λ_s·E_roi`.
pub fn roi_embed(g: &mut Graph, p: &BoundParams, config: &ModelConfig, rois: &[RoiFeature]) -> Result<Var> {
    let n = rois.len();
    if n == 0 {
        return Err(Error::Dimension("no RoIs to embed".into()));
    }
    for (i, r) in rois.iter().enumerate() {
        if r.appearance.len() != config.appearance_dim
            || r.geometry.len() != GEOMETRY_DIM
            || r.class_dist.len() != config.class_dim
        {
            return Err(Error::Dimension(format!(
                "RoI {i}: appearance {} geometry {} class {} vs expected {} {} {}",
                r.appearance.len(),
                r.geometry.len(),
                r.class_dist.len(),
                config.appearance_dim,
                GEOMETRY_DIM,
                config.class_dim
            )));
        }
    }
    let stack = |f: fn(&RoiFeature) -> &Vec<f64>, cols| {
        Tensor::matrix(n, cols, rois.iter().flat_map(|r| f(r).iter().copied()).collect())
    };
    let app = g.constant(stack(|r| &r.appearance, config.appearance_dim)?)?;
    let geo = g.constant(stack(|r| &r.geometry, GEOMETRY_DIM)?)?;
    let cls = g.constant(stack(|r| &r.class_dist, config.class_dim)?)?;

    let proj = g.matmul(app, p.var("roi.appearance.w")?)?;
    let proj = g.add_bias(proj, p.var("roi.appearance.b")?)?;

    let geo = g.matmul(geo, p.var("roi.geometry.w")?)?;
    let geo = g.layer_norm(geo, p.var("roi.geometry.ln.gain")?, p.var("roi.geometry.ln.bias")?, config.ln_eps)?;
    let cls = g.matmul(cls, p.var("roi.class.w")?)?;
    let cls = g.layer_norm(cls, p.var("roi.class.ln.gain")?, p.var("roi.class.ln.bias")?, config.ln_eps)?;
    let fused_geometry = g.concat(&[geo, cls], 1)?;

    let seg = g.embedding_lookup(p.var("emb.segment")?, &vec![SegmentId::Roi as usize; n])?;

    let a = g.scale_by(proj, p.var("roi.gain.appearance")?)?;
    let b = g.scale_by(fused_geometry, p.var("roi.gain.geometry")?)?;
    let c = g.scale_by(seg, p.var("roi.gain.segment")?)?;
    let ab = g.add(a, b)?;
    Ok(g.add(ab, c)?)
}

/// Token + segment (+ position where assigned) embeddings for the given rows.
pub fn text_embed(g: &mut Graph, p: &BoundParams, infos: &[PositionInfo]) -> Result<Var> {
    let mut tokens = Vec::with_capacity(infos.len());
    for info in infos {
        tokens.push(info.token_id.ok_or_else(|| Error::Contract(format!("{:?} has no token", info.slot)))?);
    }
    let segments: Vec<usize> = infos.iter().map(|i| i.segment as usize).collect();
    let tok = g.embedding_lookup(p.var("emb.token")?, &tokens)?;
    let seg = g.embedding_lookup(p.var("emb.segment")?, &segments)?;
    let mut out = g.add(tok, seg)?;
    let (with_pos, pos_ids): (Vec<usize>, Vec<usize>) =
        infos.iter().enumerate().filter_map(|(k, i)| i.position_id.map(|pid| (k, pid))).unzip();
    if !with_pos.is_empty() {
        let pos = g.embedding_lookup(p.var("emb.position")?, &pos_ids)?;
        out = g.scatter_add_rows(out, pos, &with_pos)?;
    }
    Ok(out)
}

/// The `S × d_model` input matrix for a layout.
pub fn embed_sequence(
    g: &mut Graph,
    p: &BoundParams,
    config: &ModelConfig,
    layout: &SequenceLayout,
    rois: &[RoiFeature],
) -> Result<Var> {
    if rois.len() != layout.num_rois() {
        return Err(Error::Dimension(format!(
            "layout has {} RoI slots but {} features were given",
            layout.num_rois(),
            rois.len()
        )));
    }
    for info in layout.positions() {
        if let Some(pid) = info.position_id {
            if pid >= config.max_positions {
                return Err(Error::Length { what: "position id", len: pid + 1, limit: config.max_positions });
            }
        }
    }
    let base = g.constant(Tensor::zeros(&[layout.len(), config.d_model]))?;
    let text_rows: Vec<usize> =
        (0..layout.len()).filter(|&i| layout.get(i).modality == Modality::Textual).collect();
    let infos: Vec<PositionInfo> = text_rows.iter().map(|&i| *layout.get(i)).collect();
    let text = text_embed(g, p, &infos)?;
    let mut h = g.scatter_add_rows(base, text, &text_rows)?;
    if !rois.is_empty() {
        let r = roi_embed(g, p, config, rois)?;
        let rows: Vec<usize> = layout.roi_rows().collect();
        h = g.scatter_add_rows(h, r, &rows)?;
    }
    Ok(h)
}

/// A laid-out sequence together with its input matrix `H⁰`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSequence {
    pub layout: SequenceLayout,
    pub embeddings: Tensor,
}

/// Lays out and embeds one input outside any training graph.
pub fn assemble_sequence(
    rois: &[RoiFeature],
    concepts: &[TokenId],
    sentence: &[TokenId],
    params: &ParamStore,
    config: &ModelConfig,
) -> Result<MultimodalSequence> {
    let layout = SequenceLayout::new(rois.len(), concepts, sentence, config)?;
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, params)?;
    let h = embed_sequence(&mut g, &p, config, &layout, rois)?;
    Ok(MultimodalSequence { layout, embeddings: g.value(h).clone() })
}
