#![allow(dead_code)]

pub mod gradients;
pub mod oracle;

use bic::data::{Dataset, Edge, Splits, UserRecord};
use bic::model::{BicModel, InputSpec, ModelConfig, UserInput};
use bic::numerics::rng_from;
use rand::Rng;

fn vecn(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Four users on a square of typed edges; every user has two tweets and two
/// neighbors.
pub fn tiny_dataset(dim: usize, seed: u64) -> Dataset {
    let mut rng = rng_from(seed);
    let users = ["a", "b", "c", "d"]
        .iter()
        .enumerate()
        .map(|(i, id)| UserRecord {
            id: id.to_string(),
            description_emb: vecn(&mut rng, dim),
            tweet_embs: vec![vecn(&mut rng, dim), vecn(&mut rng, dim)],
            features: vecn(&mut rng, 3),
            label: Some((i % 2) as u8),
        })
        .collect();
    let e = |a: &str, b: &str, r: &str| Edge(a.into(), b.into(), r.into());
    let edges = vec![
        e("a", "b", "follower"),
        e("a", "c", "following"),
        e("b", "d", "following"),
        e("c", "d", "follower"),
    ];
    let splits = Splits {
        train: vec!["a".into(), "b".into()],
        val: vec!["c".into()],
        test: vec!["d".into()],
    };
    Dataset::new(dim, vec!["follower".into(), "following".into()], users, edges, splits, 200).unwrap()
}

pub fn tiny_config(steps: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: 4,
        heads: 2,
        ffn_dim: 6,
        steps,
        pool: 2,
        consistency_dim: 3,
        consistency_out: 3,
        dropout: 0.0,
        precision: bic::model::Precision::F64,
        seed: 11,
        ..ModelConfig::default()
    }
}

/// Tiny model with biases and norm gains perturbed away from their
/// initial constants so every term is exercised.
pub fn tiny_model(cfg: ModelConfig, ds: &Dataset) -> BicModel<f64> {
    let spec = InputSpec::from_dataset(ds, &cfg);
    let mut m = BicModel::<f64>::new(cfg, spec).unwrap();
    let mut rng = rng_from(99);
    let ids: Vec<_> = m.params.ids().collect();
    for id in ids {
        for x in m.params.get_mut(id).data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    m
}

pub fn inputs(m: &BicModel<f64>, ds: &Dataset, ids: &[&str]) -> Vec<UserInput<f64>> {
    let ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    bic::model::prepare_inputs(ds, &ids, &m.config, &m.spec).unwrap()
}

/// Trainable scalars of an active default-shaped model, counted by hand.
pub fn param_closed_form(c: &ModelConfig, node_dim: usize, relations: usize) -> usize {
    let d = c.hidden_dim;
    let f = c.ffn_dim;
    let layer = 4 * (d * d + d) + 4 * d + (d * f + f) + (f * d + d);
    let step = 2 * layer + (relations + 1) * d * d + 2 * d * d;
    node_dim * d + d + c.steps * step + c.pool * c.pool * c.consistency_dim
        + c.steps * c.consistency_dim * c.consistency_out
        + c.consistency_out
        + (2 * d + c.consistency_out) * 2
        + 2
}
