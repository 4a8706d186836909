use serde::{Deserialize, Serialize};

use crate::error::{BicError, Result};
use crate::numerics::{Real, Tape};

use super::{BicModel, UserInput};

const EVAL_CHUNK: usize = 64;

/// Binary classification metrics with bots (label 1) as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Metrics {
    pub fn from_predictions(pred: &[u8], truth: &[u8]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(BicError::dim("metrics", &[pred.len()], &[truth.len()]));
        }
        if pred.is_empty() {
            return Err(BicError::EmptyDataset("no predictions to score".into()));
        }
        let mut m = Metrics::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (1, 1) => m.tp += 1,
                (1, _) => m.fp += 1,
                (_, 1) => m.fn_ += 1,
                _ => m.tn += 1,
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        m.accuracy = ratio(m.tp + m.tn, pred.len());
        m.precision = ratio(m.tp, m.tp + m.fp);
        m.recall = ratio(m.tp, m.tp + m.fn_);
        m.f1 = if m.precision + m.recall == 0.0 {
            0.0
        } else {
            2.0 * m.precision * m.recall / (m.precision + m.recall)
        };
        Ok(m)
    }
}

fn logits_chunk<R: Real>(model: &BicModel<R>, chunk: &[UserInput<R>]) -> Result<Vec<[R; 2]>> {
    let mut tape = Tape::new();
    let b = model.params.bind_frozen(&mut tape);
    let mut ctx = model.eval_ctx();
    ctx.per_head = false;
    chunk
        .iter()
        .map(|x| {
            let v = model.forward_vars(&mut tape, &b, x, &mut ctx)?.logits;
            let t = tape.value(v);
            Ok([t.get(0, 0), t.get(0, 1)])
        })
        .collect()
}

/// Deterministic logits for every input.
pub fn predict<R: Real>(model: &BicModel<R>, inputs: &[UserInput<R>]) -> Result<Vec<[R; 2]>> {
    let chunks: Vec<&[UserInput<R>]> = inputs.chunks(EVAL_CHUNK).collect();
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<Vec<[R; 2]>>> = {
        use rayon::prelude::*;
        chunks.par_iter().map(|c| logits_chunk(model, c)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<Vec<[R; 2]>>> = chunks.iter().map(|c| logits_chunk(model, c)).collect();
    let mut out = Vec::with_capacity(inputs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Accuracy and F1 over labelled inputs.
pub fn evaluate<R: Real>(model: &BicModel<R>, inputs: &[UserInput<R>]) -> Result<Metrics> {
    let truth = inputs
        .iter()
        .map(|x| x.label.ok_or_else(|| BicError::Training(format!("user {} has no label", x.id))))
        .collect::<Result<Vec<u8>>>()?;
    let pred: Vec<u8> = predict(model, inputs)?.iter().map(|l| u8::from(l[1] > l[0])).collect();
    Metrics::from_predictions(&pred, &truth)
}
