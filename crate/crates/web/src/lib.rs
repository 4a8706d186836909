//! In-browser demo. Each exported function returns a JSON string for the
//! page in `www/` to draw.
//!
//! The consistency view uses parameter-free dot-product attention over unit
//! tweet embeddings, so it shows the structure the consistency block sees
//! without needing trained weights in the browser.

use bic::analysis::{dominant_eigenvalue, kmeans, pca_2d, v_measure};
use bic::consistency::pool_matrix;
use bic::data::{generate_synthetic, Archetype, Dataset, SynthConfig};
use bic::interaction::interact_similarity;
use bic::numerics::{Tape, Tensor};
use bic::{BicError, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn small_world(seed: u64, per_class: usize) -> Result<Dataset> {
    generate_synthetic(&SynthConfig {
        n_genuine: 2 * per_class,
        n_traditional: per_class,
        n_advanced: per_class,
        dim: 16,
        tweets_min: 6,
        tweets_max: 12,
        data_seed: seed,
        ..SynthConfig::default()
    })
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

#[derive(Serialize)]
struct ConsistencyView {
    user: String,
    archetype: String,
    tweets: usize,
    raw: Vec<Vec<f64>>,
    pooled: Vec<Vec<f64>>,
    dominant: f64,
}

/// Attention over `[description, tweets]` of the first user of `archetype`
/// in a seeded synthetic world, its `pool×pool` max-pooled form and the
/// pooled matrix's dominant value.
pub fn consistency_view(seed: u64, archetype: &str, pool: usize, sharpness: f64) -> Result<String> {
    let ds = small_world(seed, 4)?;
    let kind = [Archetype::Genuine, Archetype::Traditional, Archetype::Advanced]
        .into_iter()
        .find(|a| a.prefix() == archetype)
        .ok_or_else(|| BicError::Config(format!("unknown archetype `{archetype}`")))?;
    let user = ds
        .users()
        .iter()
        .find(|u| Archetype::from_id(&u.id) == Some(kind))
        .ok_or_else(|| BicError::Lookup(archetype.to_string()))?;
    let seq: Vec<Vec<f64>> = std::iter::once(&user.description_emb).chain(&user.tweet_embs).map(|v| unit(v)).collect();
    if pool == 0 || pool > seq.len() {
        return Err(BicError::Size(format!("pool size must be in 1..={}", seq.len())));
    }
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_rows(&seq));
    let s = tape.matmul_nt(x, x)?;
    let s = tape.scale(s, sharpness);
    let a = tape.softmax(s, 1)?;
    let raw = tape.value(a).clone();
    let pooled = pool_matrix(&raw, pool)?;
    let dominant = dominant_eigenvalue(&pooled)?.value;
    let view = ConsistencyView {
        user: user.id.clone(),
        archetype: archetype.to_string(),
        tweets: user.tweet_embs.len(),
        raw: rows(&raw),
        pooled: rows(&pooled),
        dominant,
    };
    Ok(serde_json::to_string(&view)?)
}

fn parse_vec(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| BicError::Config(format!("`{t}` is not a number"))))
        .collect()
}

#[derive(Serialize)]
struct InteractionView {
    text_weights: [f64; 2],
    graph_weights: [f64; 2],
    h: Vec<f64>,
    g: Vec<f64>,
}

/// One similarity interaction step with `θ₁ = θ₂ = scale·I`.
pub fn interaction_view(h: &str, g: &str, scale: f64) -> Result<String> {
    let (h, g) = (parse_vec(h)?, parse_vec(g)?);
    if h.len() != g.len() || h.is_empty() {
        return Err(BicError::Size("h and g need the same non-zero length".into()));
    }
    let n = h.len();
    let theta = Tensor::new(n, n, (0..n * n).map(|i| if i % (n + 1) == 0 { scale } else { 0.0 }).collect())?;
    let (h2, g2, w) = interact_similarity(&h, &g, &theta, &theta)?;
    let (text_weights, graph_weights) = w.normalized();
    Ok(serde_json::to_string(&InteractionView { text_weights, graph_weights, h: h2, g: g2 })?)
}

#[derive(Serialize)]
struct Point {
    id: String,
    label: u8,
    cluster: usize,
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct ProjectionView {
    v_measure: f64,
    homogeneity: f64,
    completeness: f64,
    points: Vec<Point>,
}

/// k-means on each user's mean tweet embedding, scored by V-measure against
/// the bot labels, with a PCA projection for the scatter plot.
pub fn projection_view(seed: u64, per_class: usize, k: usize) -> Result<String> {
    let ds = small_world(seed, per_class.max(1))?;
    let users: Vec<_> = ds.users().iter().filter(|u| !u.tweet_embs.is_empty()).collect();
    let vectors: Vec<Vec<f64>> = users
        .iter()
        .map(|u| {
            let n = u.tweet_embs.len() as f64;
            let mut m = vec![0.0; ds.dim()];
            for t in &u.tweet_embs {
                m.iter_mut().zip(t).for_each(|(a, b)| *a += b / n);
            }
            m
        })
        .collect();
    let labels: Vec<usize> = users.iter().map(|u| u.label.unwrap_or(0) as usize).collect();
    let km = kmeans(&vectors, k, 10, seed)?;
    let score = v_measure(&labels, &km.assignments)?;
    let pca = pca_2d(&vectors)?;
    let points = users
        .iter()
        .zip(&km.assignments)
        .zip(&pca.coords)
        .map(|((u, &c), p)| Point { id: u.id.clone(), label: u.label.unwrap_or(0), cluster: c, x: p[0], y: p[1] })
        .collect();
    Ok(serde_json::to_string(&ProjectionView {
        v_measure: score.v_measure,
        homogeneity: score.homogeneity,
        completeness: score.completeness,
        points,
    })?)
}

fn js(r: Result<String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn consistency(seed: u32, archetype: &str, pool: usize, sharpness: f64) -> Result<String, JsValue> {
    js(consistency_view(seed.into(), archetype, pool, sharpness))
}

#[wasm_bindgen]
pub fn interaction(h: &str, g: &str, scale: f64) -> Result<String, JsValue> {
    js(interaction_view(h, g, scale))
}

#[wasm_bindgen]
pub fn projection(seed: u32, per_class: usize, k: usize) -> Result<String, JsValue> {
    js(projection_view(seed.into(), per_class, k))
}
