//! Text block: one post-norm transformer encoder layer per interaction step
//! over `{h_int, h_1, …, h_T}`. The head-averaged attention matrix is kept
//! for the consistency pipeline.

use crate::error::{BicError, Result};
use crate::numerics::{Bound, Init, ParamId, ParamStore, Real, SeededRng, SoftmaxMask, Tape, Tensor, Var};

/// Per-call settings shared by every block in a forward pass.
pub struct Ctx<'a> {
    /// Dropout probability; only applied when `rng` is present.
    pub dropout: f64,
    pub rng: Option<&'a mut SeededRng>,
    /// Negative slope of the leaky-relu activation.
    pub slope: f64,
    pub ln_eps: f64,
    /// Keep per-head attention matrices as well as the average.
    pub per_head: bool,
}

impl Ctx<'_> {
    pub fn eval(slope: f64) -> Ctx<'static> {
        Ctx {
            dropout: 0.0,
            rng: None,
            slope,
            ln_eps: 1e-5,
            per_head: false,
        }
    }

    pub(crate) fn dropout<R: Real>(&mut self, tape: &mut Tape<R>, x: Var) -> Result<Var> {
        let p = self.dropout;
        tape.dropout(x, p, self.rng.as_deref_mut())
    }
}

/// Multi-head self-attention + position-wise feed-forward, each with a
/// residual connection and layer norm. Weights are stored `[in, out]` and
/// applied as `x · W`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub heads: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

pub struct LayerOutput {
    pub hidden: Var,
    /// Head-averaged post-softmax attention, `n×n`.
    pub attention: Var,
    pub per_head: Vec<Var>,
}

impl TransformerLayer {
    pub fn register<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(BicError::Config(format!(
                "hidden size {dim} is not divisible by {heads} heads"
            )));
        }
        let mut w = |name: &str, r: usize, c: usize, init: Init| store.init(format!("{prefix}.{name}"), r, c, init, rng);
        Ok(TransformerLayer {
            heads,
            wq: w("wq", dim, dim, Init::XavierUniform)?,
            bq: w("bq", 1, dim, Init::Zeros)?,
            wk: w("wk", dim, dim, Init::XavierUniform)?,
            bk: w("bk", 1, dim, Init::Zeros)?,
            wv: w("wv", dim, dim, Init::XavierUniform)?,
            bv: w("bv", 1, dim, Init::Zeros)?,
            wo: w("wo", dim, dim, Init::XavierUniform)?,
            bo: w("bo", 1, dim, Init::Zeros)?,
            ln1_g: w("ln1_g", 1, dim, Init::Ones)?,
            ln1_b: w("ln1_b", 1, dim, Init::Zeros)?,
            w1: w("w1", dim, ffn_dim, Init::XavierUniform)?,
            b1: w("b1", 1, ffn_dim, Init::Zeros)?,
            w2: w("w2", ffn_dim, dim, Init::XavierUniform)?,
            b2: w("b2", 1, dim, Init::Zeros)?,
            ln2_g: w("ln2_g", 1, dim, Init::Ones)?,
            ln2_b: w("ln2_b", 1, dim, Init::Zeros)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo, self.ln1_g,
            self.ln1_b, self.w1, self.b1, self.w2, self.b2, self.ln2_g, self.ln2_b,
        ]
    }

    fn linear<R: Real>(tape: &mut Tape<R>, b: &Bound, x: Var, w: ParamId, bias: ParamId) -> Result<Var> {
        let y = tape.matmul(x, b.var(w))?;
        tape.add_row(y, b.var(bias))
    }

    /// `x` is `n×D`; `mask[i] = false` removes position `i` as a key and
    /// zeroes its attention row. `None` attends everywhere.
    pub fn forward<R: Real>(
        &self,
        tape: &mut Tape<R>,
        b: &Bound,
        x: Var,
        mask: Option<&[bool]>,
        ctx: &mut Ctx<'_>,
    ) -> Result<LayerOutput> {
        let [n, dim] = tape.shape(x);
        if dim % self.heads != 0 {
            return Err(BicError::Config(format!(
                "hidden size {dim} is not divisible by {} heads",
                self.heads
            )));
        }
        if let Some(m) = mask {
            if m.len() != n {
                return Err(BicError::dim("attention mask", &[n, dim], &[m.len()]));
            }
        }
        let dh = dim / self.heads;
        let q = Self::linear(tape, b, x, self.wq, self.bq)?;
        let k = Self::linear(tape, b, x, self.wk, self.bk)?;
        let v = Self::linear(tape, b, x, self.wv, self.bv)?;
        let inv_sqrt = R::lit(1.0 / (dh as f64).sqrt());
        let sm = SoftmaxMask { rows: mask, cols: mask };

        let mut outs = Vec::with_capacity(self.heads);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh)?,
                    tape.slice_cols(k, h * dh, dh)?,
                    tape.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, inv_sqrt);
            let a = tape.softmax_masked(scores, sm)?;
            outs.push(tape.matmul(a, vh)?);
            probs.push(a);
        }
        let mut attention = probs[0];
        for &p in &probs[1..] {
            attention = tape.add(attention, p)?;
        }
        if self.heads > 1 {
            attention = tape.scale(attention, R::lit(1.0 / self.heads as f64));
        }

        let cat = if self.heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let o = Self::linear(tape, b, cat, self.wo, self.bo)?;
        let o = ctx.dropout(tape, o)?;
        let r1 = tape.add(x, o)?;
        let x1 = tape.layer_norm(r1, b.var(self.ln1_g), b.var(self.ln1_b), ctx.ln_eps)?;

        let f = Self::linear(tape, b, x1, self.w1, self.b1)?;
        let f = tape.relu(f);
        let f = Self::linear(tape, b, f, self.w2, self.b2)?;
        let f = ctx.dropout(tape, f)?;
        let r2 = tape.add(x1, f)?;
        let hidden = tape.layer_norm(r2, b.var(self.ln2_g), b.var(self.ln2_b), ctx.ln_eps)?;

        Ok(LayerOutput {
            hidden,
            attention,
            per_head: if ctx.per_head { probs } else { Vec::new() },
        })
    }
}

/// Value-level text state for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct TextState<R> {
    pub h_int: Vec<R>,
    /// `T_cap` rows; padded rows are zero on entry.
    pub h_tweets: Vec<Vec<R>>,
    pub mask: Vec<bool>,
}

/// Attention produced by one text layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord<R> {
    /// `(T_cap+1)×(T_cap+1)`, head-averaged, post-softmax, pre-dropout.
    pub matrix: Tensor<R>,
    pub layer: usize,
    pub per_head: Vec<Tensor<R>>,
}

impl<R: Real> TextState<R> {
    pub(crate) fn to_tensor(&self) -> Result<Tensor<R>> {
        let dim = self.h_int.len();
        let mut data = self.h_int.clone();
        for row in &self.h_tweets {
            if row.len() != dim {
                return Err(BicError::dim("text state", &[dim], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(1 + self.h_tweets.len(), dim, data)
    }

    /// Mask over the whole sequence, interaction token first.
    pub fn sequence_mask(&self) -> Vec<bool> {
        std::iter::once(true).chain(self.mask.iter().copied()).collect()
    }
}

/// Runs text layer `l` on `state` with frozen parameters and returns the
/// updated state and its attention record. `masking = false` attends over
/// padded rows too.
pub fn text_forward<R: Real>(
    state: &TextState<R>,
    layer: &TransformerLayer,
    params: &ParamStore<R>,
    l: usize,
    masking: bool,
    per_head: bool,
) -> Result<(TextState<R>, AttentionRecord<R>)> {
    if state.mask.len() != state.h_tweets.len() {
        return Err(BicError::dim("text mask", &[state.h_tweets.len()], &[state.mask.len()]));
    }
    let mut tape = Tape::new();
    let b = params.bind_frozen(&mut tape);
    let x = tape.constant(state.to_tensor()?);
    let mask = state.sequence_mask();
    let mut ctx = Ctx {
        per_head,
        ..Ctx::eval(0.01)
    };
    let out = layer.forward(&mut tape, &b, x, masking.then_some(mask.as_slice()), &mut ctx)?;
    let h = tape.value(out.hidden);
    let next = TextState {
        h_int: h.row(0).to_vec(),
        h_tweets: (1..h.rows()).map(|r| h.row(r).to_vec()).collect(),
        mask: state.mask.clone(),
    };
    let record = AttentionRecord {
        matrix: tape.value(out.attention).clone(),
        layer: l,
        per_head: out.per_head.iter().map(|&v| tape.value(v).clone()).collect(),
    };
    Ok((next, record))
}

/// The `(T+1)×(T+1)` consistency-matrix input carried by a record.
pub fn attention_of<R: Real>(record: &AttentionRecord<R>) -> &Tensor<R> {
    &record.matrix
}
