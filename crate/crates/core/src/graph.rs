//! Graph block: a relational graph convolution over the ego network followed
//! by a transformer layer over `{g_int, ĝ_1, …, ĝ_J}`.

use crate::error::{BicError, Result};
use crate::numerics::{Bound, Init, ParamId, ParamStore, Real, SeededRng, Tape, Tensor, Var};
use crate::text::{Ctx, TransformerLayer};

/// One relational convolution: `ĝ_i = σ(W_0·g_i + Σ_r Σ_{j∈N_r(i)} W_r·g_j / |N_r(i)|)`.
/// Only the center is connected to its neighbors; relations are treated as
/// undirected, so a neighbor's sole incoming message is from the center.
#[derive(Clone, Debug)]
pub struct Rgcn {
    pub w_self: ParamId,
    pub w_rel: Vec<ParamId>,
}

impl Rgcn {
    pub fn register<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        dim: usize,
        relations: &[String],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let w_self = store.init(format!("{prefix}.w_self"), dim, dim, Init::XavierUniform, rng)?;
        let w_rel = relations
            .iter()
            .map(|r| store.init(format!("{prefix}.w_rel.{r}"), dim, dim, Init::XavierUniform, rng))
            .collect::<Result<_>>()?;
        Ok(Rgcn { w_self, w_rel })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.w_self).chain(self.w_rel.iter().copied()).collect()
    }

    /// Mean-normalized adjacency of relation `r` over the node list
    /// `[center, neighbor_1, …]`, or `None` when the relation is absent.
    /// `links[j]` lists relation indices joining neighbor `j` to the center;
    /// neighbors with `mask[j] = false` are dropped.
    pub fn adjacency<R: Real>(links: &[Vec<usize>], mask: &[bool], r: usize) -> Option<Tensor<R>> {
        let n = links.len() + 1;
        let present: Vec<usize> = (0..links.len())
            .filter(|&j| mask[j] && links[j].contains(&r))
            .collect();
        if present.is_empty() {
            return None;
        }
        let mut a = Tensor::zeros(n, n);
        let inv = R::lit(1.0 / present.len() as f64);
        for &j in &present {
            a.set(0, j + 1, inv);
            a.set(j + 1, 0, R::one());
        }
        Some(a)
    }

    /// `g` is `(1+J)×D` with the center first.
    pub fn forward<R: Real>(
        &self,
        tape: &mut Tape<R>,
        b: &Bound,
        g: Var,
        links: &[Vec<usize>],
        mask: &[bool],
        slope: f64,
    ) -> Result<Var> {
        let [n, _] = tape.shape(g);
        if links.len() + 1 != n || mask.len() != links.len() {
            return Err(BicError::dim("rgcn", &[n], &[links.len() + 1, mask.len()]));
        }
        if let Some(r) = links.iter().flatten().find(|&&r| r >= self.w_rel.len()) {
            return Err(BicError::Config(format!(
                "relation index {r} has no weight matrix ({} relations configured)",
                self.w_rel.len()
            )));
        }
        let mut acc = tape.matmul(g, b.var(self.w_self))?;
        for (r, &w) in self.w_rel.iter().enumerate() {
            if let Some(a) = Self::adjacency::<R>(links, mask, r) {
                let msg = tape.matmul(g, b.var(w))?;
                let a = tape.constant(a);
                let agg = tape.matmul(a, msg)?;
                acc = tape.add(acc, agg)?;
            }
        }
        Ok(tape.leaky_relu(acc, R::lit(slope)))
    }
}

/// Value-level graph state for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphState<R> {
    pub g_int: Vec<R>,
    pub g_neighbors: Vec<Vec<R>>,
    /// Relation indices per neighbor.
    pub links: Vec<Vec<usize>>,
    pub mask: Vec<bool>,
}

impl<R: Real> GraphState<R> {
    fn to_tensor(&self) -> Result<Tensor<R>> {
        let dim = self.g_int.len();
        let mut data = self.g_int.clone();
        for row in &self.g_neighbors {
            if row.len() != dim {
                return Err(BicError::dim("graph state", &[dim], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(1 + self.g_neighbors.len(), dim, data)
    }

    fn with_values(&self, t: &Tensor<R>) -> Self {
        GraphState {
            g_int: t.row(0).to_vec(),
            g_neighbors: (1..t.rows()).map(|r| t.row(r).to_vec()).collect(),
            links: self.links.clone(),
            mask: self.mask.clone(),
        }
    }

    pub fn sequence_mask(&self) -> Vec<bool> {
        std::iter::once(true).chain(self.mask.iter().copied()).collect()
    }
}

/// Applies the relational convolution with frozen parameters.
pub fn rgcn_forward<R: Real>(
    state: &GraphState<R>,
    rgcn: &Rgcn,
    params: &ParamStore<R>,
    slope: f64,
) -> Result<GraphState<R>> {
    let mut tape = Tape::new();
    let b = params.bind_frozen(&mut tape);
    let g = tape.constant(state.to_tensor()?);
    let out = rgcn.forward(&mut tape, &b, g, &state.links, &state.mask, slope)?;
    Ok(state.with_values(tape.value(out)))
}

/// Applies the neighbor transformer layer with frozen parameters. Returns the
/// new state and the interaction token's attention row.
pub fn neighbor_attention<R: Real>(
    state: &GraphState<R>,
    layer: &TransformerLayer,
    params: &ParamStore<R>,
) -> Result<(GraphState<R>, Vec<R>)> {
    let mut tape = Tape::new();
    let b = params.bind_frozen(&mut tape);
    let g = tape.constant(state.to_tensor()?);
    let mask = state.sequence_mask();
    let out = layer.forward(&mut tape, &b, g, Some(&mask), &mut Ctx::eval(0.01))?;
    let row = tape.value(out.attention).row(0).to_vec();
    Ok((state.with_values(tape.value(out.hidden)), row))
}
