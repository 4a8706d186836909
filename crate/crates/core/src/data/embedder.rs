use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{derive_seed, rng_from};

/// Deterministic bag-of-tokens embedder for demo corpora: each token hashes
/// to one of `buckets` seeded Gaussian vectors and a text embeds to the mean
/// of its token vectors.
#[derive(Clone, Debug)]
pub struct ToyEmbedder {
    dim: usize,
    buckets: usize,
    seed: u64,
}

impl ToyEmbedder {
    pub fn new(dim: usize, buckets: usize, seed: u64) -> Self {
        assert!(dim > 0 && buckets > 0);
        ToyEmbedder { dim, buckets, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn bucket(&self, token: &str) -> u64 {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h % self.buckets as u64
    }

    fn token_vector(&self, bucket: u64) -> Vec<f64> {
        let mut rng = rng_from(derive_seed(self.seed, &[bucket]));
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Lowercased alphanumeric tokens.
    pub fn tokens(text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric() && c != '#' && c != '@')
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let toks = Self::tokens(text);
        let mut out = vec![0.0; self.dim];
        if toks.is_empty() {
            return out;
        }
        for t in &toks {
            for (o, v) in out.iter_mut().zip(self.token_vector(self.bucket(t))) {
                *o += v;
            }
        }
        let inv = 1.0 / toks.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_case_insensitive() {
        let e = ToyEmbedder::new(16, 1024, 3);
        assert_eq!(e.embed("Free crypto NOW"), e.embed("free crypto now"));
        assert_eq!(e.embed(""), vec![0.0; 16]);
        assert_ne!(e.embed("hello world"), e.embed("buy followers"));
        let other = ToyEmbedder::new(16, 1024, 4);
        assert_ne!(e.embed("hello"), other.embed("hello"));
    }
}
