use serde::{Deserialize, Serialize};

use crate::consistency::Aggregation;
use crate::error::{BicError, Result};
use crate::interaction::InteractionKind;

/// Which modalities the detector uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Both,
    /// Graph branch removed: text layers and consistency only.
    TextOnly,
    /// Text branch removed: graph layers only, no consistency.
    GraphOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Hyperparameters and structural switches of the detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `D`; must equal the dataset embedding size.
    pub hidden_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Number of interaction steps `M`.
    pub steps: usize,
    /// Pooled size `K`.
    pub pool: usize,
    /// Per-step consistency width `d_c`.
    pub consistency_dim: usize,
    /// Output width `D_d` of the consistency projection.
    pub consistency_out: usize,
    pub aggregation: Aggregation,
    pub use_consistency: bool,
    pub interaction: InteractionKind,
    /// Separate matrices for the graph-side similarity scores.
    pub four_matrix: bool,
    pub modality: Modality,
    /// Carry neighbor representations from one step to the next. When false
    /// every step restarts the neighbors from their input encoding.
    pub persist_neighbors: bool,
    /// Attend over padded tweet rows and add learned positional embeddings.
    pub strict_padding: bool,
    pub export_per_head: bool,
    pub leaky_slope: f64,
    pub ln_eps: f64,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Coefficient of the explicit `Σω²` penalty.
    pub l2: f64,
    pub rectify: bool,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub neighbor_cap: usize,
    pub tweet_cap: usize,
    /// Fraction of each user's tweets masked out.
    pub text_removal: f64,
    /// Fraction of each user's neighbors masked out.
    pub graph_removal: f64,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 64,
            heads: 4,
            ffn_dim: 128,
            steps: 2,
            pool: 8,
            consistency_dim: 32,
            consistency_out: 32,
            aggregation: Aggregation::Concat,
            use_consistency: true,
            interaction: InteractionKind::Similarity,
            four_matrix: false,
            modality: Modality::Both,
            persist_neighbors: true,
            strict_padding: false,
            export_per_head: false,
            leaky_slope: 0.01,
            ln_eps: 1e-5,
            dropout: 0.5,
            lr: 1e-4,
            weight_decay: 1e-5,
            l2: 1e-5,
            rectify: true,
            batch_size: 64,
            max_epochs: 30,
            early_stop_patience: 10,
            lr_patience: 5,
            lr_factor: 0.1,
            neighbor_cap: 32,
            tweet_cap: 200,
            text_removal: 0.0,
            graph_removal: 0.0,
            precision: Precision::F32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BicError::Config(m));
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            ));
        }
        for (name, v) in [
            ("ffn_dim", self.ffn_dim),
            ("steps", self.steps),
            ("pool", self.pool),
            ("consistency_dim", self.consistency_dim),
            ("consistency_out", self.consistency_out),
            ("batch_size", self.batch_size),
            ("tweet_cap", self.tweet_cap),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        for (name, v) in [("text_removal", self.text_removal), ("graph_removal", self.graph_removal)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} not in [0, 1]"));
            }
        }
        for (name, v) in [
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
            ("l2", self.l2),
            ("ln_eps", self.ln_eps),
            ("leaky_slope", self.leaky_slope),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor {} not in (0, 1)", self.lr_factor));
        }
        Ok(())
    }

    pub fn uses_text(&self) -> bool {
        self.modality != Modality::GraphOnly
    }

    pub fn uses_graph(&self) -> bool {
        self.modality != Modality::TextOnly
    }

    /// Consistency is computed from text attention, so it needs the text branch.
    pub fn uses_consistency(&self) -> bool {
        self.use_consistency && self.uses_text()
    }

    pub fn uses_interaction(&self) -> bool {
        self.modality == Modality::Both
    }

    /// Padded tweet slots for a dataset whose longest timeline has
    /// `max_tweets` tweets. The sequence (with the interaction token) is never
    /// shorter than the pool size.
    pub fn pad_len(&self, max_tweets: usize) -> usize {
        if self.strict_padding {
            return self.tweet_cap;
        }
        max_tweets.min(self.tweet_cap).max(self.pool.saturating_sub(1)).max(1)
    }
}
