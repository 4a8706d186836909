//! Consistency-matrix analyses and per-user case studies of a trained model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::cluster::{kmeans, v_measure, VMeasure};
use super::linalg::{dominant_eigenvalue, pca_2d, Pca2};
use super::stats::{standardized_difference, summarize, Summary};
use crate::consistency::pool_matrix;
use crate::data::{Archetype, Dataset};
use crate::error::{BicError, Result};
use crate::model::{prepare_inputs, BicModel, Trace, UserInput};
use crate::numerics::Real;

/// Class name of a user: its synthetic archetype when the id carries one,
/// otherwise `human` or `bot` from the label.
pub fn class_of(id: &str, label: Option<u8>) -> String {
    match (Archetype::from_id(id), label) {
        (Some(a), _) => a.prefix().to_string(),
        (None, Some(0)) => "human".into(),
        (None, Some(_)) => "bot".into(),
        (None, None) => "unlabeled".into(),
    }
}

fn traces<R: Real>(model: &BicModel<R>, dataset: &Dataset, ids: &[String]) -> Result<Vec<(UserInput<R>, Trace<R>)>> {
    let inputs = prepare_inputs(dataset, ids, &model.config, &model.spec)?;
    inputs
        .into_iter()
        .map(|x| {
            let t = model.forward(&x)?;
            Ok((x, t))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenRow {
    pub user_id: String,
    pub class: String,
    pub step: usize,
    pub value: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Boxplot {
    pub rows: Vec<EigenRow>,
    pub summary: BTreeMap<String, Summary>,
}

impl Boxplot {
    pub fn values(&self, class: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.class == class).map(|r| r.value).collect()
    }

    /// Standardized difference of class means, `(mean(a) − mean(b)) / pooled SD`.
    pub fn separation(&self, a: &str, b: &str) -> f64 {
        standardized_difference(&self.values(a), &self.values(b))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("user_id,class,step,dominant_value,converged\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.9},{}", r.user_id, r.class, r.step, r.value, r.converged);
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("class,count,mean,std,min,q1,median,q3,max\n");
        for (c, x) in &self.summary {
            let _ = writeln!(
                s,
                "{c},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                x.count, x.mean, x.std, x.min, x.q1, x.median, x.q3, x.max
            );
        }
        s
    }
}

/// Dominant value of every step's pooled text-attention matrix for the
/// given users, with per-class quartiles.
pub fn consistency_boxplot_data<R: Real>(model: &BicModel<R>, dataset: &Dataset, ids: &[String]) -> Result<Boxplot> {
    if !model.config.uses_text() {
        return Err(BicError::Config("consistency analysis needs the text branch".into()));
    }
    let mut rows = Vec::new();
    for (x, t) in traces(model, dataset, ids)? {
        let class = class_of(&x.id, x.label);
        for (step, m) in t.attention.iter().enumerate() {
            let pooled = pool_matrix(m, model.config.pool)?.cast::<f64>();
            let d = dominant_eigenvalue(&pooled)?;
            rows.push(EigenRow { user_id: x.id.clone(), class: class.clone(), step, value: d.value, converged: d.converged });
        }
    }
    let mut by_class: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        by_class.entry(r.class.clone()).or_default().push(r.value);
    }
    let summary = by_class.into_iter().map(|(c, v)| (c, summarize(&v))).collect();
    Ok(Boxplot { rows, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Clustering {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub assignments: Vec<usize>,
    pub score: VMeasure,
    pub vectors: Vec<Vec<f64>>,
    pub projection: Pca2,
}

impl Clustering {
    /// Raw vectors with labels, clusters and 2-D coordinates.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("user_id,label,cluster,pc1,pc2");
        let d = self.vectors.first().map_or(0, Vec::len);
        for j in 0..d {
            let _ = write!(s, ",d{j}");
        }
        s.push('\n');
        for i in 0..self.ids.len() {
            let [a, b] = self.projection.coords[i];
            let _ = write!(s, "{},{},{},{a:.9},{b:.9}", self.ids[i], self.labels[i], self.assignments[i]);
            for v in &self.vectors[i] {
                let _ = write!(s, ",{v:.9}");
            }
            s.push('\n');
        }
        s
    }
}

/// k-means on the aggregated consistency vectors of labelled users, scored
/// by V-measure against the labels, with a PCA projection for plotting.
pub fn cluster_consistency<R: Real>(
    model: &BicModel<R>,
    dataset: &Dataset,
    ids: &[String],
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Clustering> {
    if !model.config.uses_consistency() {
        return Err(BicError::Config("model has no consistency vectors".into()));
    }
    let mut out_ids = Vec::new();
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    for (x, t) in traces(model, dataset, ids)? {
        let Some(label) = x.label else { continue };
        let d = t.consistency.expect("consistency is enabled");
        out_ids.push(x.id);
        labels.push(label as usize);
        vectors.push(d.iter().map(|v| v.as_f64()).collect::<Vec<f64>>());
    }
    if vectors.len() < k {
        return Err(BicError::Size(format!("{} labelled users cannot form {k} clusters", vectors.len())));
    }
    let km = kmeans(&vectors, k, restarts, seed)?;
    let score = v_measure(&labels, &km.assignments)?;
    let projection = pca_2d(&vectors)?;
    Ok(Clustering { ids: out_ids, labels, assignments: km.assignments, score, vectors, projection })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ranked {
    /// Tweet position in the user's timeline, or neighbor id.
    pub key: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseStep {
    pub step: usize,
    /// Interaction-token row of the text attention over real tweets, in
    /// timeline order.
    pub tweet_attention: Vec<f64>,
    pub top_tweets: Vec<Ranked>,
    pub neighbor_attention: Vec<f64>,
    pub top_neighbors: Vec<Ranked>,
    /// `(w_hh, w_hg)` and `(w_gg, w_gh)` after normalization.
    pub text_weights: Option<[f64; 2]>,
    pub graph_weights: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseStudy {
    pub user_id: String,
    pub class: String,
    pub label: Option<u8>,
    pub bot_probability: f64,
    pub steps: Vec<CaseStep>,
}

fn top3(mut items: Vec<Ranked>) -> Vec<Ranked> {
    items.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    items.truncate(3);
    items
}

/// Attention and interaction report for one user.
pub fn case_study_export<R: Real>(model: &BicModel<R>, dataset: &Dataset, user_id: &str) -> Result<CaseStudy> {
    dataset.index_of(user_id)?;
    let (x, t) = traces(model, dataset, &[user_id.to_string()])?.remove(0);
    let [l0, l1] = t.logits.map(|v| v.as_f64());
    let bot_probability = 1.0 / (1.0 + (l0 - l1).exp());
    let mut steps = Vec::new();
    for step in 0..model.config.steps {
        let tweet_attention: Vec<f64> = match t.attention.get(step) {
            Some(m) => (1..m.cols()).filter(|&c| x.text_mask[c]).map(|c| m.get(0, c).as_f64()).collect(),
            None => Vec::new(),
        };
        let top_tweets = top3(
            tweet_attention
                .iter()
                .enumerate()
                .map(|(i, &w)| Ranked { key: i.to_string(), weight: w })
                .collect(),
        );
        let neighbor_attention: Vec<f64> = t
            .neighbor_attention
            .get(step)
            .map(|row| row.iter().map(|v| v.as_f64()).collect())
            .unwrap_or_default();
        let top_neighbors = top3(
            x.neighbor_ids
                .iter()
                .zip(&x.neighbor_mask)
                .enumerate()
                .filter(|(_, (_, &live))| live)
                .map(|(j, (id, _))| Ranked { key: id.clone(), weight: neighbor_attention[j + 1] })
                .collect(),
        );
        let pairs = t.interaction.get(step).copied().flatten().map(|w| w.normalized());
        steps.push(CaseStep {
            step,
            tweet_attention,
            top_tweets,
            neighbor_attention,
            top_neighbors,
            text_weights: pairs.map(|p| p.0),
            graph_weights: pairs.map(|p| p.1),
        });
    }
    Ok(CaseStudy {
        class: class_of(&x.id, x.label),
        user_id: x.id,
        label: x.label,
        bot_probability,
        steps,
    })
}
