//! Head-averaged last-layer attention as a JSON artifact.
//!
//! ```text
//! {
//!   "layer": 1, "heads": 4,
//!   "positions": [{"row", "slot", "modality", "segment", "token"}],
//!   "matrix": [[f64; S]; S],          row-major, each row sums to 1
//!   "text_to_roi": [{"row", "label", "top": [{"col", "label", "weight"}]}],
//!   "roi_to_text": [{"row", "label", "top": [...]}]
//! }
//! ```
//! Top lists hold at most three attendable columns in descending weight.

use serde::{Deserialize, Serialize};

use crate::embeddings::{Modality, SegmentId, SequenceLayout, Slot};
use crate::error::{Error, Result};
use crate::model::{AttentionMask, Model};
use crate::objectives::{build_blm_mask, build_s2slm_mask, encode_example};
use crate::vocab::Vocabulary;
use crate::world::{Example, ReferringTask, RoiFeature};

const TOP_K: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionNote {
    pub row: usize,
    pub slot: String,
    pub modality: String,
    pub segment: String,
    pub token: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopEntry {
    pub col: usize,
    pub label: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopList {
    pub row: usize,
    pub label: String,
    pub top: Vec<TopEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub layer: usize,
    pub heads: usize,
    pub positions: Vec<PositionNote>,
    pub matrix: Vec<Vec<f64>>,
    pub text_to_roi: Vec<TopList>,
    pub roi_to_text: Vec<TopList>,
}

impl AttentionDump {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn label(layout: &SequenceLayout, vocab: &Vocabulary, row: usize) -> String {
    let p = layout.get(row);
    match (p.slot, p.token_id) {
        (Slot::Roi(i), _) => format!("RoI{i}"),
        (_, Some(t)) => vocab.token(t).map(str::to_string).unwrap_or_else(|_| format!("#{t}")),
        (slot, None) => format!("{slot:?}"),
    }
}

fn top(matrix: &[Vec<f64>], mask: &AttentionMask, row: usize, cols: &[usize], labels: &[String]) -> Vec<TopEntry> {
    let mut entries: Vec<TopEntry> = cols
        .iter()
        .filter(|&&c| mask.allows(row, c))
        .map(|&c| TopEntry { col: c, label: labels[c].clone(), weight: matrix[row][c] })
        .collect();
    entries.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.col.cmp(&b.col)));
    entries.truncate(TOP_K);
    entries
}

/// Averages the last layer's heads for one forward pass.
pub fn dump_attention(
    model: &Model,
    layout: &SequenceLayout,
    rois: &[RoiFeature],
    mask: &AttentionMask,
    vocab: &Vocabulary,
) -> Result<AttentionDump> {
    let out = model.forward(layout, rois, mask)?;
    let last = out
        .attention
        .last()
        .ok_or_else(|| Error::Contract("a model without layers has no attention".into()))?;
    let s = layout.len();
    let heads = last.len() as f64;
    let matrix: Vec<Vec<f64>> = (0..s)
        .map(|i| (0..s).map(|j| last.iter().map(|h| h.at(i, j)).sum::<f64>() / heads).collect())
        .collect();
    let labels: Vec<String> = (0..s).map(|r| label(layout, vocab, r)).collect();
    let positions = layout
        .positions()
        .iter()
        .enumerate()
        .map(|(row, p)| PositionNote {
            row,
            slot: format!("{:?}", p.slot),
            modality: match p.modality {
                Modality::Visual => "visual",
                Modality::Textual => "textual",
            }
            .into(),
            segment: match p.segment {
                SegmentId::Roi => "roi",
                SegmentId::Concept => "concept",
                SegmentId::Sentence => "sentence",
            }
            .into(),
            token: p.token_id.map(|_| labels[row].clone()),
        })
        .collect();
    let roi_cols: Vec<usize> = layout.roi_rows().collect();
    let text_cols: Vec<usize> = (0..s).filter(|&c| layout.get(c).modality == Modality::Textual).collect();
    let text_to_roi = (0..s)
        .filter(|&r| matches!(layout.get(r).slot, Slot::Word(_)))
        .map(|r| TopList { row: r, label: labels[r].clone(), top: top(&matrix, mask, r, &roi_cols, &labels) })
        .collect();
    let roi_to_text = roi_cols
        .iter()
        .map(|&r| TopList { row: r, label: labels[r].clone(), top: top(&matrix, mask, r, &text_cols, &labels) })
        .collect();
    Ok(AttentionDump {
        layer: out.attention.len() - 1,
        heads: last.len(),
        positions,
        matrix,
        text_to_roi,
        roi_to_text,
    })
}

/// Dump for a referring query under the full mask.
pub fn dump_referring_attention(
    model: &Model,
    example: &Example,
    task: &ReferringTask,
    vocab: &Vocabulary,
    use_concepts: bool,
) -> Result<AttentionDump> {
    let (concepts, _) = encode_example(example, vocab, use_concepts)?;
    let query = vocab.encode(&task.query)?;
    let layout = SequenceLayout::new(example.roi_features.len(), &concepts, &query, &model.config)?;
    dump_attention(model, &layout, &example.roi_features, &build_blm_mask(&layout), vocab)
}

/// Dump for the example's caption under the sequence-to-sequence mask.
pub fn dump_caption_attention(model: &Model, example: &Example, vocab: &Vocabulary, use_concepts: bool) -> Result<AttentionDump> {
    let (concepts, caption) = encode_example(example, vocab, use_concepts)?;
    let layout = SequenceLayout::new(example.roi_features.len(), &concepts, &caption, &model.config)?;
    dump_attention(model, &layout, &example.roi_features, &build_s2slm_mask(&layout), vocab)
}
