//! The full detector: input encoders, `M` interaction steps, consistency
//! features and the classifier, plus training and checkpointing.

mod checkpoint;
mod config;
mod input;
mod metrics;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use config::{Modality, ModelConfig, Precision};
pub use input::{prepare_inputs, InputSpec, UserInput};
pub use metrics::{evaluate, predict, Metrics};
pub use train::{train, train_prepared, EarlyStopping, EpochRecord, PlateauScheduler, TrainOutcome};

use crate::consistency::ConsistencyParams;
use crate::error::{BicError, Result};
use crate::graph::Rgcn;
use crate::interaction::{InteractionParams, InteractionWeights};
use crate::numerics::{
    grad_check, rng_from, Bound, GradCheckConfig, GradCheckReport, Init, ParamId, ParamStore, Real, Tape, Tensor, Var,
};
use crate::text::{Ctx, TransformerLayer};

/// Parameter handles of every block.
#[derive(Clone, Debug)]
pub struct Blocks {
    pub graph_in: (ParamId, ParamId),
    pub positions: Option<ParamId>,
    pub text: Vec<TransformerLayer>,
    pub rgcn: Vec<Rgcn>,
    pub graph_attn: Vec<TransformerLayer>,
    pub interaction: Vec<InteractionParams>,
    pub consistency: ConsistencyParams,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct BicModel<R> {
    pub config: ModelConfig,
    pub spec: InputSpec,
    pub params: ParamStore<R>,
    pub blocks: Blocks,
    active: Vec<ParamId>,
}

impl Blocks {
    fn active(&self, config: &ModelConfig) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if config.uses_text() {
            ids.extend(self.positions);
            self.text.iter().for_each(|t| ids.extend(t.param_ids()));
        }
        if config.uses_graph() {
            ids.extend([self.graph_in.0, self.graph_in.1]);
            for (r, g) in self.rgcn.iter().zip(&self.graph_attn) {
                ids.extend(r.param_ids());
                ids.extend(g.param_ids());
            }
        }
        if config.uses_interaction() {
            self.interaction.iter().for_each(|i| ids.extend(i.param_ids()));
        }
        if config.uses_consistency() {
            ids.extend(self.consistency.param_ids());
        }
        ids.extend([self.cls_w, self.cls_b]);
        ids.sort();
        ids
    }
}

/// Variables of one user's forward pass.
pub struct ForwardVars {
    /// `1×2`.
    pub logits: Var,
    pub text_attention: Vec<Var>,
    pub text_heads: Vec<Vec<Var>>,
    pub graph_attention: Vec<Var>,
    pub scores: Vec<Option<[Var; 4]>>,
    pub consistency: Option<Var>,
    pub h_int: Option<Var>,
    pub g_int: Option<Var>,
}

#[derive(Default)]
struct Partial {
    text_attention: Vec<Var>,
    text_heads: Vec<Vec<Var>>,
    graph_attention: Vec<Var>,
    scores: Vec<Option<[Var; 4]>>,
    consistency: Option<Var>,
    h_int: Option<Var>,
    g_int: Option<Var>,
}

/// Plain-value record of one user's forward pass.
#[derive(Clone, Debug)]
pub struct Trace<R> {
    pub logits: [R; 2],
    /// Per-step head-averaged text attention, `(1+P)×(1+P)`.
    pub attention: Vec<Tensor<R>>,
    pub attention_heads: Vec<Vec<Tensor<R>>>,
    /// Per-step interaction-token row of the neighbor attention.
    pub neighbor_attention: Vec<Vec<R>>,
    pub interaction: Vec<Option<InteractionWeights>>,
    pub consistency: Option<Vec<R>>,
    pub h_int: Option<Vec<R>>,
    pub g_int: Option<Vec<R>>,
}

impl<R: Real> BicModel<R> {
    /// Builds a freshly initialized model. Parameters are only created for
    /// the blocks the configuration uses.
    pub fn new(config: ModelConfig, spec: InputSpec) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        if config.uses_text() && spec.emb_dim != d {
            return Err(BicError::Config(format!(
                "text embeddings have size {} but hidden_dim is {d}",
                spec.emb_dim
            )));
        }
        if config.uses_consistency() && spec.pad_len + 1 < config.pool {
            return Err(BicError::Size(format!(
                "sequence length {} is shorter than pool size {}",
                spec.pad_len + 1,
                config.pool
            )));
        }
        let mut rng = rng_from(config.seed);
        let mut store = ParamStore::new();
        let graph_in = (
            store.init("graph_in.w", spec.node_dim(), d, Init::XavierUniform, &mut rng)?,
            store.init("graph_in.b", 1, d, Init::Zeros, &mut rng)?,
        );
        let positions = if config.strict_padding {
            Some(store.init("text.positions", config.tweet_cap + 1, d, Init::XavierUniform, &mut rng)?)
        } else {
            None
        };
        let (mut text, mut rgcn, mut graph_attn, mut interaction) = (vec![], vec![], vec![], vec![]);
        for l in 0..config.steps {
            let layer = |store: &mut ParamStore<R>, rng: &mut _, name: &str| {
                TransformerLayer::register(store, &format!("step{l}.{name}"), d, config.heads, config.ffn_dim, rng)
            };
            text.push(layer(&mut store, &mut rng, "text")?);
            rgcn.push(Rgcn::register(&mut store, &format!("step{l}.rgcn"), d, &spec.relations, &mut rng)?);
            graph_attn.push(layer(&mut store, &mut rng, "graph")?);
            interaction.push(InteractionParams::register(
                &mut store,
                &format!("step{l}.interaction"),
                config.interaction,
                d,
                config.four_matrix,
                &mut rng,
            )?);
        }
        let consistency = ConsistencyParams::register(
            &mut store,
            "consistency",
            config.pool,
            config.steps,
            config.consistency_dim,
            config.consistency_out,
            config.aggregation,
            &mut rng,
        )?;
        let cls_w = store.init("classifier.w", classifier_width(&config), 2, Init::XavierUniform, &mut rng)?;
        let cls_b = store.init("classifier.b", 1, 2, Init::Zeros, &mut rng)?;
        let blocks = Blocks { graph_in, positions, text, rgcn, graph_attn, interaction, consistency, cls_w, cls_b };
        let active = blocks.active(&config);
        Ok(BicModel { config, spec, params: store, blocks, active })
    }

    /// Parameters that take part in the forward pass under the current
    /// configuration; only these are regularized and updated.
    pub fn active_params(&self) -> &[ParamId] {
        &self.active
    }

    /// Trainable scalars under the current configuration.
    pub fn param_count(&self) -> usize {
        self.active.iter().map(|&id| self.params.get(id).len()).sum()
    }

    /// One user's forward pass on `tape`. Dropout is active iff `ctx.rng` is set.
    pub fn forward_vars(&self, tape: &mut Tape<R>, b: &Bound, x: &UserInput<R>, ctx: &mut Ctx<'_>) -> Result<ForwardVars> {
        let cfg = &self.config;
        let bl = &self.blocks;
        let slope = R::lit(cfg.leaky_slope);
        let masking = !cfg.strict_padding;

        let mut h_seq = None;
        if cfg.uses_text() {
            if x.text.cols() != cfg.hidden_dim {
                return Err(BicError::dim("text input", &[x.text.rows(), cfg.hidden_dim], &x.text.shape()));
            }
            let mut t = tape.constant(x.text.clone());
            if let Some(pos) = bl.positions {
                let n = x.text.rows();
                if n > cfg.tweet_cap + 1 {
                    return Err(BicError::Size(format!("sequence of {n} exceeds positional table")));
                }
                let p = tape.slice_rows(b.var(pos), 0, n)?;
                t = tape.add(t, p)?;
            }
            h_seq = Some(t);
        }
        let mut g0 = None;
        let mut g_seq = None;
        if cfg.uses_graph() {
            let (w, bias) = bl.graph_in;
            let nodes = tape.constant(x.nodes.clone());
            let y = tape.matmul(nodes, b.var(w))?;
            let y = tape.add_row(y, b.var(bias))?;
            let y = tape.leaky_relu(y, slope);
            g0 = Some(y);
            g_seq = Some(y);
        }
        let graph_mask: Vec<bool> = std::iter::once(true).chain(x.neighbor_mask.iter().copied()).collect();
        let n_nb = x.links.len();

        let mut out = Partial::default();
        for l in 0..cfg.steps {
            if let Some(h) = h_seq {
                let o = bl.text[l].forward(tape, b, h, masking.then_some(x.text_mask.as_slice()), ctx)?;
                h_seq = Some(o.hidden);
                out.text_attention.push(o.attention);
                out.text_heads.push(o.per_head);
            }
            if let Some(g) = g_seq {
                let g_in = if l > 0 && !cfg.persist_neighbors && n_nb > 0 {
                    let center = tape.slice_rows(g, 0, 1)?;
                    let rest = tape.slice_rows(g0.expect("graph input"), 1, n_nb)?;
                    tape.concat_rows(&[center, rest])?
                } else {
                    g
                };
                let conv = bl.rgcn[l].forward(tape, b, g_in, &x.links, &x.neighbor_mask, cfg.leaky_slope)?;
                let o = bl.graph_attn[l].forward(tape, b, conv, Some(&graph_mask), ctx)?;
                g_seq = Some(o.hidden);
                out.graph_attention.push(o.attention);
            }
            if let (Some(h), Some(g)) = (h_seq, g_seq) {
                let hi = tape.slice_rows(h, 0, 1)?;
                let gi = tape.slice_rows(g, 0, 1)?;
                let io = bl.interaction[l].forward(tape, b, hi, gi, cfg.leaky_slope)?;
                out.scores.push(io.scores);
                let rest = tape.slice_rows(h, 1, x.text.rows() - 1)?;
                h_seq = Some(tape.concat_rows(&[io.h, rest])?);
                g_seq = Some(if n_nb > 0 {
                    let rest = tape.slice_rows(g, 1, n_nb)?;
                    tape.concat_rows(&[io.g, rest])?
                } else {
                    io.g
                });
            }
        }

        let mut parts = Vec::with_capacity(3);
        if let Some(h) = h_seq {
            let v = tape.slice_rows(h, 0, 1)?;
            out.h_int = Some(v);
            parts.push(v);
        }
        if let Some(g) = g_seq {
            let v = tape.slice_rows(g, 0, 1)?;
            out.g_int = Some(v);
            parts.push(v);
        }
        if cfg.uses_consistency() {
            let c = &bl.consistency;
            let steps = out
                .text_attention
                .iter()
                .map(|&a| c.step(tape, b, a))
                .collect::<Result<Vec<_>>>()?;
            let d = c.aggregate(tape, b, &steps, cfg.leaky_slope)?;
            out.consistency = Some(d);
            parts.push(d);
        }
        let z = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
        let z = ctx.dropout(tape, z)?;
        let logits = tape.matmul(z, b.var(bl.cls_w))?;
        let logits = tape.add_row(logits, b.var(bl.cls_b))?;
        Ok(ForwardVars {
            logits,
            text_attention: out.text_attention,
            text_heads: out.text_heads,
            graph_attention: out.graph_attention,
            scores: out.scores,
            consistency: out.consistency,
            h_int: out.h_int,
            g_int: out.g_int,
        })
    }

    pub(crate) fn eval_ctx(&self) -> Ctx<'static> {
        Ctx {
            dropout: 0.0,
            rng: None,
            slope: self.config.leaky_slope,
            ln_eps: self.config.ln_eps,
            per_head: self.config.export_per_head,
        }
    }

    /// Deterministic forward pass with every intermediate exported.
    pub fn forward(&self, x: &UserInput<R>) -> Result<Trace<R>> {
        let mut tape = Tape::new();
        let b = self.params.bind_frozen(&mut tape);
        let mut ctx = self.eval_ctx();
        let v = self.forward_vars(&mut tape, &b, x, &mut ctx)?;
        let val = |v: Var| tape.value(v).clone();
        let row = |v: Var| tape.value(v).data().to_vec();
        let lg = tape.value(v.logits);
        Ok(Trace {
            logits: [lg.get(0, 0), lg.get(0, 1)],
            attention: v.text_attention.iter().map(|&a| val(a)).collect(),
            attention_heads: v.text_heads.iter().map(|hs| hs.iter().map(|&a| val(a)).collect()).collect(),
            neighbor_attention: v.graph_attention.iter().map(|&a| tape.value(a).row(0).to_vec()).collect(),
            interaction: v
                .scores
                .iter()
                .map(|s| {
                    s.map(|s| InteractionWeights {
                        hh: tape.value(s[0]).item().as_f64(),
                        hg: tape.value(s[1]).item().as_f64(),
                        gg: tape.value(s[2]).item().as_f64(),
                        gh: tape.value(s[3]).item().as_f64(),
                    })
                })
                .collect(),
            consistency: v.consistency.map(row),
            h_int: v.h_int.map(row),
            g_int: v.g_int.map(row),
        })
    }

    /// Mean cross-entropy over `batch` plus `l2·Σω²` over the active parameters.
    pub fn loss_on_tape(&self, tape: &mut Tape<R>, b: &Bound, batch: &[&UserInput<R>], ctx: &mut Ctx<'_>) -> Result<Var> {
        self.objective(tape, b, batch, R::one(), true, ctx)
    }

    /// `weight·CE(batch)`, plus the penalty when `with_l2` is set.
    pub(crate) fn objective(
        &self,
        tape: &mut Tape<R>,
        b: &Bound,
        batch: &[&UserInput<R>],
        weight: R,
        with_l2: bool,
        ctx: &mut Ctx<'_>,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(BicError::EmptyDataset("empty batch".into()));
        }
        let mut logits = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for x in batch {
            let label = x
                .label
                .ok_or_else(|| BicError::Training(format!("user {} has no label", x.id)))?;
            logits.push(self.forward_vars(tape, b, x, ctx)?.logits);
            labels.push(label as usize);
        }
        let all = if logits.len() == 1 { logits[0] } else { tape.concat_rows(&logits)? };
        let mut loss = tape.cross_entropy(all, &labels)?;
        if weight != R::one() {
            loss = tape.scale(loss, weight);
        }
        if with_l2 && self.config.l2 > 0.0 {
            let mut reg: Option<Var> = None;
            for &id in &self.active {
                let s = tape.sum_squares(b.var(id));
                reg = Some(match reg {
                    Some(r) => tape.add(r, s)?,
                    None => s,
                });
            }
            if let Some(r) = reg {
                let r = tape.scale(r, R::lit(self.config.l2));
                loss = tape.add(loss, r)?;
            }
        }
        Ok(loss)
    }

    pub fn cast<S: Real>(&self) -> BicModel<S> {
        BicModel {
            config: self.config.clone(),
            spec: self.spec.clone(),
            params: self.params.cast(),
            blocks: self.blocks.clone(),
            active: self.active.clone(),
        }
    }
}

/// Finite-difference check of the training objective (cross-entropy plus
/// penalty, no dropout) over `batch`, for every registered parameter.
pub fn grad_check_model(
    model: &BicModel<f64>,
    batch: &[UserInput<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let frozen = model.clone();
    let mut params = model.params.clone();
    let refs: Vec<&UserInput<f64>> = batch.iter().collect();
    grad_check(
        &mut params,
        |t, b| frozen.loss_on_tape(t, b, &refs, &mut frozen.eval_ctx()),
        cfg,
    )
}

/// Input width of the classifier for a configuration.
pub fn classifier_width(config: &ModelConfig) -> usize {
    let d = config.hidden_dim;
    let mut w = 0;
    if config.uses_text() {
        w += d;
    }
    if config.uses_graph() {
        w += d;
    }
    if config.uses_consistency() {
        w += config.consistency_out;
    }
    w
}
