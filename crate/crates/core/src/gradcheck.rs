//! Central finite differences over every model parameter, compared with the
//! gradients recorded on the tape.

use dimvl_tensor::finite_diff::{relative_error, DEFAULT_STEP};
use dimvl_tensor::{Graph, Var};

use crate::decoding::{referring_loss, referring_scores_on};
use crate::error::{Error, Result};
use crate::model::{BoundParams, Model};
use crate::objectives::{make_instance, mlm_loss, MaskingPolicy, TaskKind, TrainingInstance};
use crate::vocab::Vocabulary;
use crate::world::Example;

/// One masked instance whose loss adds the word-prediction loss and the
/// referring loss, so every head receives gradient.
#[derive(Clone, Debug)]
pub struct GradientProbe {
    pub instance: TrainingInstance,
    pub referring_target: usize,
}

impl GradientProbe {
    pub fn from_example(example: &Example, kind: TaskKind, model: &Model, vocab: &Vocabulary, seed: u64) -> Result<Self> {
        let policy = MaskingPolicy { p_select: 0.5, ..MaskingPolicy::default() };
        let instance = make_instance(example, kind, &policy, vocab, &model.config, true, seed)?;
        let referring_target = seed as usize % example.roi_features.len().max(1);
        Ok(Self { instance, referring_target })
    }

    pub fn loss(&self, g: &mut Graph, p: &BoundParams, model: &Model) -> Result<Var> {
        let inst = &self.instance;
        let enc = model.encode_on(g, p, &inst.layout, &inst.rois, &inst.mask, None)?;
        let lm = mlm_loss(g, p, &model.config, enc.hidden, &inst.layout, &inst.target_rows, &inst.target_ids)?;
        let scores = referring_scores_on(g, p, model, &inst.layout, &inst.rois, None)?;
        let referring = referring_loss(g, scores, self.referring_target)?;
        Ok(g.add(lm, referring)?)
    }

    pub fn loss_value(&self, model: &Model) -> Result<f64> {
        let mut g = Graph::new();
        let p = BoundParams::bind(&mut g, &model.params)?;
        let l = self.loss(&mut g, &p, model)?;
        Ok(g.value(l).item()?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub scalars: usize,
    pub analytic_norm: f64,
    pub rel_err: f64,
}

/// Compares the analytic gradient of every parameter tensor with central
/// differences at `step` (the default step when `None`).
pub fn check_gradients(model: &Model, probe: &GradientProbe, step: Option<f64>) -> Result<Vec<ParamCheck>> {
    let h = step.unwrap_or(DEFAULT_STEP);
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, &model.params)?;
    let loss = probe.loss(&mut g, &p, model)?;
    g.backward(loss)?;
    let grads = p.gradients(&g);

    let mut work = model.clone();
    let mut out = Vec::with_capacity(grads.len());
    for (name, analytic) in &grads {
        let n = analytic.len();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = work.params.get(name)?.data()[i];
            work.params.get_mut(name)?.data_mut()[i] = orig + h;
            let up = probe.loss_value(&work)?;
            work.params.get_mut(name)?.data_mut()[i] = orig - h;
            let down = probe.loss_value(&work)?;
            work.params.get_mut(name)?.data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let norm = analytic.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        out.push(ParamCheck {
            name: name.clone(),
            scalars: n,
            analytic_norm: norm,
            rel_err: relative_error(analytic.data(), &numeric),
        });
    }
    if out.is_empty() {
        return Err(Error::Contract("model has no parameters".into()));
    }
    Ok(out)
}
