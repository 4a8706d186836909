//! Dataset schema, ingestion, ego-network extraction, splitting and the
//! synthetic benchmark generator.

mod ego;
mod embedder;
mod schema;
mod split;
mod synth;

pub use ego::{ego_graph, HeteroEgoGraph};
pub use embedder::ToyEmbedder;
pub use schema::{Dataset, Edge, Splits, UserRecord, DEFAULT_TWEET_CAP};
pub use split::{split, SplitRatios};
pub use synth::{generate_synthetic, Archetype, SynthConfig};

/// Zero-pads (or truncates) a user's tweet embeddings to `cap` rows and
/// returns the padded rows with a mask marking real tweets.
pub fn pad_tweets(rec: &UserRecord, dim: usize, cap: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rows = Vec::with_capacity(cap);
    let mut mask = Vec::with_capacity(cap);
    for i in 0..cap {
        match rec.tweet_embs.get(i) {
            Some(t) => {
                rows.push(t.clone());
                mask.push(true);
            }
            None => {
                rows.push(vec![0.0; dim]);
                mask.push(false);
            }
        }
    }
    (rows, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize) -> UserRecord {
        UserRecord {
            id: "u".into(),
            description_emb: vec![1.0, 1.0],
            tweet_embs: (0..t).map(|i| vec![i as f64 + 1.0, 2.0]).collect(),
            features: vec![],
            label: Some(0),
        }
    }

    #[test]
    fn pad_full_empty_and_partial() {
        let (_, mask) = pad_tweets(&rec(5), 2, 5);
        assert!(mask.iter().all(|&m| m));

        let (rows, mask) = pad_tweets(&rec(0), 2, 4);
        assert!(mask.iter().all(|&m| !m));
        assert!(rows.iter().flatten().all(|&x| x == 0.0));

        let (rows, mask) = pad_tweets(&rec(3), 2, 5);
        assert_eq!(mask, vec![true, true, true, false, false]);
        assert_eq!(rows[3], vec![0.0, 0.0]);
        assert_eq!(rows[4], vec![0.0, 0.0]);
        assert_eq!(rows[2], vec![3.0, 2.0]);
    }
}
