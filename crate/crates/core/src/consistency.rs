//! Semantic-consistency features: per-step attention matrices are max-pooled
//! to `K×K`, flattened and projected, then aggregated across steps.

use serde::{Deserialize, Serialize};

use crate::error::{BicError, Result};
use crate::numerics::{Bound, Init, ParamId, ParamStore, Real, SeededRng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Concat,
    Mean,
}

#[derive(Clone, Debug)]
pub struct ConsistencyParams {
    pub pool: usize,
    pub steps: usize,
    pub aggregation: Aggregation,
    /// `[K², d_c]`.
    pub theta_sc: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

impl ConsistencyParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        pool: usize,
        steps: usize,
        step_dim: usize,
        out_dim: usize,
        aggregation: Aggregation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if pool == 0 {
            return Err(BicError::Config("pool size must be positive".into()));
        }
        let agg_dim = match aggregation {
            Aggregation::Concat => steps * step_dim,
            Aggregation::Mean => step_dim,
        };
        Ok(ConsistencyParams {
            pool,
            steps,
            aggregation,
            theta_sc: store.init(format!("{prefix}.theta_sc"), pool * pool, step_dim, Init::XavierUniform, rng)?,
            w_out: store.init(format!("{prefix}.w_out"), agg_dim, out_dim, Init::XavierUniform, rng)?,
            b_out: store.init(format!("{prefix}.b_out"), 1, out_dim, Init::Zeros, rng)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.theta_sc, self.w_out, self.b_out]
    }

    /// Pools and projects one step's attention matrix to a `1×d_c` row.
    pub fn step<R: Real>(&self, tape: &mut Tape<R>, b: &Bound, attention: Var) -> Result<Var> {
        let pooled = tape.maxpool_fixed(attention, self.pool)?;
        let flat = tape.flatten(pooled);
        tape.matmul(flat, b.var(self.theta_sc))
    }

    /// Combines the per-step rows into the consistency vector `d`.
    pub fn aggregate<R: Real>(&self, tape: &mut Tape<R>, b: &Bound, steps: &[Var], slope: f64) -> Result<Var> {
        if steps.is_empty() {
            return Err(BicError::Config("aggregation needs at least one step".into()));
        }
        if steps.len() != self.steps {
            return Err(BicError::Size(format!(
                "expected {} consistency steps, got {}",
                self.steps,
                steps.len()
            )));
        }
        let x = match self.aggregation {
            Aggregation::Concat => tape.concat_cols(steps)?,
            Aggregation::Mean => {
                let rows = tape.concat_rows(steps)?;
                tape.mean_rows(rows)
            }
        };
        let y = tape.matmul(x, b.var(self.w_out))?;
        let y = tape.add_row(y, b.var(self.b_out))?;
        Ok(tape.leaky_relu(y, R::lit(slope)))
    }
}

/// Max-pools a square matrix into `k×k` bands; band `b` covers rows
/// `⌊b·n/k⌋ .. ⌊(b+1)·n/k⌋−1`.
pub fn pool_matrix<R: Real>(m: &Tensor<R>, k: usize) -> Result<Tensor<R>> {
    let mut tape = Tape::new();
    let v = tape.constant(m.clone());
    let p = tape.maxpool_fixed(v, k)?;
    Ok(tape.value(p).clone())
}

/// `flatten(pooled) · θ_sc`.
pub fn step_vector<R: Real>(pooled: &Tensor<R>, theta_sc: &Tensor<R>) -> Result<Vec<R>> {
    let flat = Tensor::row_vector(pooled.data());
    Ok(flat.matmul(theta_sc)?.into_data())
}

/// Aggregates per-step vectors and applies the output projection with a
/// leaky-relu of the given slope (`slope = 1` is the identity).
pub fn aggregate<R: Real>(
    steps: &[Vec<R>],
    aggregation: Aggregation,
    w_out: &Tensor<R>,
    b_out: &[R],
    slope: f64,
) -> Result<Vec<R>> {
    let mut store = ParamStore::new();
    let w = store.register("w_out", w_out.clone())?;
    let bo = store.register("b_out", Tensor::row_vector(b_out))?;
    let th = store.register("theta_sc", Tensor::zeros(1, 1))?;
    let params = ConsistencyParams {
        pool: 1,
        steps: steps.len(),
        aggregation,
        theta_sc: th,
        w_out: w,
        b_out: bo,
    };
    let mut tape = Tape::new();
    let b = store.bind_frozen(&mut tape);
    let vars: Vec<Var> = steps.iter().map(|s| tape.constant(Tensor::row_vector(s))).collect();
    let d = params.aggregate(&mut tape, &b, &vars, slope)?;
    Ok(tape.value(d).data().to_vec())
}
