use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{BicError, Result};

/// Index of a registered parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug)]
pub struct Parameter<R> {
    pub name: String,
    pub tensor: Tensor<R>,
}

/// Registry of named parameters. Names are unique; registration order is
/// the canonical order for checkpoints and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<R> {
    params: Vec<Parameter<R>>,
    by_name: HashMap<String, ParamId>,
}

/// How a weight tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    XavierUniform,
    Zeros,
    Ones,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<R>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(BicError::Config(format!("parameter `{name}` registered twice")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, tensor });
        Ok(id)
    }

    pub fn init<G: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut G,
    ) -> Result<ParamId> {
        let t = match init {
            Init::Zeros => Tensor::zeros(rows, cols),
            Init::Ones => Tensor::filled(rows, cols, R::one()),
            Init::XavierUniform => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols)
                    .map(|_| R::lit(rng.random_range(-bound..bound)))
                    .collect();
                Tensor::new(rows, cols, data)?
            }
        };
        self.register(name, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor<R> {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.params[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<R>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<R>> {
        self.params.iter()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Records every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<R>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf(p.tensor.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (no gradients).
    pub fn bind_frozen(&self, tape: &mut Tape<R>) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.constant(p.tensor.clone()))
                .collect(),
        }
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Parameters bound to tape leaves for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Pulls per-parameter gradients out of a backward pass, aligned with the
    /// store's registration order. Parameters the loss never reached are `None`.
    pub fn collect<R: Real>(&self, grads: &mut Gradients<R>) -> Vec<Option<Tensor<R>>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.register("a", Tensor::zeros(1, 1)).unwrap();
        assert!(s.register("a", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::<f64>::new();
        let id = s.init("w", 10, 20, Init::XavierUniform, &mut rng).unwrap();
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(s.get(id).data().iter().all(|x| x.abs() < bound));
        assert_eq!(s.scalar_count(), 200);
    }
}
