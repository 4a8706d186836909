use std::collections::HashMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{ego_graph, pad_tweets, Dataset};
use crate::error::{BicError, Result};
use crate::numerics::{derive_seed, rng_from, Real, Tensor};

use super::ModelConfig;

/// Shape of the inputs a model was built for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub emb_dim: usize,
    pub feature_dim: usize,
    pub relations: Vec<String>,
    /// Padded tweet slots per user.
    pub pad_len: usize,
}

impl InputSpec {
    pub fn from_dataset(dataset: &Dataset, config: &ModelConfig) -> Self {
        InputSpec {
            emb_dim: dataset.dim(),
            feature_dim: dataset.feature_dim(),
            relations: dataset.relations().to_vec(),
            pad_len: config.pad_len(dataset.max_tweets()),
        }
    }

    /// Width of a graph node's raw encoding: features, description, mean tweet.
    pub fn node_dim(&self) -> usize {
        self.feature_dim + 2 * self.emb_dim
    }
}

/// Everything the forward pass needs for one user, precomputed once.
#[derive(Clone, Debug)]
pub struct UserInput<R> {
    pub id: String,
    pub label: Option<u8>,
    /// `(1+P)×E`: description row then padded tweets.
    pub text: Tensor<R>,
    /// Length `1+P`; the first entry is always true.
    pub text_mask: Vec<bool>,
    /// `(1+J)×node_dim`, center first.
    pub nodes: Tensor<R>,
    /// Model relation indices per neighbor.
    pub links: Vec<Vec<usize>>,
    pub neighbor_mask: Vec<bool>,
    pub neighbor_ids: Vec<String>,
}

impl<R: Real> UserInput<R> {
    pub fn tweet_count(&self) -> usize {
        self.text_mask.iter().skip(1).filter(|&&m| m).count()
    }
}

fn node_row(dataset: &Dataset, idx: usize, spec: &InputSpec) -> Vec<f64> {
    let u = dataset.user_at(idx);
    let mut row = Vec::with_capacity(spec.node_dim());
    row.extend_from_slice(&u.features);
    row.extend_from_slice(&u.description_emb);
    let mut mean = vec![0.0; spec.emb_dim];
    if !u.tweet_embs.is_empty() {
        for t in &u.tweet_embs {
            for (m, x) in mean.iter_mut().zip(t) {
                *m += x;
            }
        }
        let n = u.tweet_embs.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
    }
    row.extend(mean);
    row
}

/// Masks `round(frac·count)` of the `true` entries of `mask`, chosen with `seed`.
fn remove_fraction(mask: &mut [bool], frac: f64, seed: u64) -> Vec<usize> {
    let live: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let k = (frac * live.len() as f64).round() as usize;
    if k == 0 {
        return Vec::new();
    }
    let mut rng = rng_from(seed);
    let mut gone: Vec<usize> = sample(&mut rng, live.len(), k).into_iter().map(|i| live[i]).collect();
    gone.sort_unstable();
    for &i in &gone {
        mask[i] = false;
    }
    gone
}

/// Builds the inputs for `ids`. Tweets beyond `spec.pad_len` are dropped.
pub fn prepare_inputs<R: Real>(
    dataset: &Dataset,
    ids: &[String],
    config: &ModelConfig,
    spec: &InputSpec,
) -> Result<Vec<UserInput<R>>> {
    if dataset.dim() != spec.emb_dim || dataset.feature_dim() != spec.feature_dim {
        return Err(BicError::dim(
            "dataset vs model inputs",
            &[dataset.dim(), dataset.feature_dim()],
            &[spec.emb_dim, spec.feature_dim],
        ));
    }
    let rel_map: HashMap<&str, usize> = spec.relations.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let to_model: Vec<Option<usize>> = dataset.relations().iter().map(|r| rel_map.get(r.as_str()).copied()).collect();
    let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();

    ids.iter()
        .map(|id| {
            let idx = dataset.index_of(id)?;
            let rec = dataset.user_at(idx);
            let (mut rows, tweet_mask) = pad_tweets(rec, spec.emb_dim, spec.pad_len);
            let mut text_mask: Vec<bool> = std::iter::once(true).chain(tweet_mask).collect();
            if config.text_removal > 0.0 {
                let mut tm = text_mask[1..].to_vec();
                for i in remove_fraction(&mut tm, config.text_removal, derive_seed(config.seed, &[idx as u64, 1])) {
                    rows[i].iter_mut().for_each(|x| *x = 0.0);
                }
                text_mask[1..].copy_from_slice(&tm);
            }
            let mut text = rec.description_emb.clone();
            rows.iter().for_each(|r| text.extend_from_slice(r));

            let ego = ego_graph(dataset, id, config.neighbor_cap, config.seed)?;
            let mut nodes = Vec::with_capacity((1 + ego.neighbor_count()) * spec.node_dim());
            let mut links = Vec::with_capacity(ego.neighbor_count());
            for node in std::iter::once(idx).chain(ego.neighbor_links.iter().map(|(n, _)| *n)) {
                let row = cache.entry(node).or_insert_with(|| node_row(dataset, node, spec));
                nodes.extend_from_slice(row);
            }
            for (_, rels) in &ego.neighbor_links {
                let mapped = rels
                    .iter()
                    .map(|&r| {
                        to_model[r].ok_or_else(|| {
                            BicError::Config(format!("relation `{}` is unknown to the model", dataset.relations()[r]))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                links.push(mapped);
            }
            let mut neighbor_mask = vec![true; links.len()];
            if config.graph_removal > 0.0 {
                remove_fraction(&mut neighbor_mask, config.graph_removal, derive_seed(config.seed, &[idx as u64, 2]));
            }
            let cast = |v: Vec<f64>| v.into_iter().map(R::lit).collect::<Vec<R>>();
            Ok(UserInput {
                id: id.clone(),
                label: rec.label,
                text: Tensor::new(1 + spec.pad_len, spec.emb_dim, cast(text))?,
                text_mask,
                nodes: Tensor::new(1 + links.len(), spec.node_dim(), cast(nodes))?,
                links,
                neighbor_mask,
                neighbor_ids: ego.neighbors.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn removal_counts_round() {
        let mut m = vec![true; 10];
        assert_eq!(remove_fraction(&mut m, 0.25, 3).len(), 3);
        assert_eq!(m.iter().filter(|&&x| !x).count(), 3);
        let mut m = vec![true; 4];
        assert_eq!(remove_fraction(&mut m, 1.0, 3).len(), 4);
        let mut m = vec![true; 4];
        assert!(remove_fraction(&mut m, 0.0, 3).is_empty());
    }
}
