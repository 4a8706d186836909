//! Synthetic benchmark: genuine users with topical timelines, traditional
//! bots posting near-duplicate spam, and advanced bots that mix stolen
//! genuine-looking tweets into a spam timeline.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schema::{Dataset, Edge, Splits, UserRecord, DEFAULT_TWEET_CAP};
use super::split::{split, SplitRatios};
use crate::error::{BicError, Result};
use crate::numerics::rng_from;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Genuine,
    Traditional,
    Advanced,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::Genuine, Archetype::Traditional, Archetype::Advanced];

    pub fn prefix(self) -> &'static str {
        match self {
            Archetype::Genuine => "genuine",
            Archetype::Traditional => "traditional",
            Archetype::Advanced => "advanced",
        }
    }

    pub fn label(self) -> u8 {
        match self {
            Archetype::Genuine => 0,
            _ => 1,
        }
    }

    /// Recovers the archetype of a synthetic user from its id prefix.
    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| {
            id.strip_prefix(a.prefix())
                .is_some_and(|rest| rest.starts_with('_'))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_genuine: usize,
    pub n_traditional: usize,
    pub n_advanced: usize,
    /// Embedding (topic) dimension.
    pub dim: usize,
    pub feature_dim: usize,
    /// Per-coordinate tweet noise around a genuine user's topic.
    pub sigma_genuine: f64,
    /// Per-coordinate noise around a spam campaign vector.
    pub sigma_spam: f64,
    /// Share of an advanced bot's tweets drawn from genuine users' topics.
    pub steal_fraction: f64,
    /// Probability that an edge connects users of the same class.
    pub homophily: f64,
    pub tweets_min: usize,
    pub tweets_max: usize,
    /// Edges started per user; the mean degree is about twice this.
    pub edges_per_user: usize,
    pub spam_campaigns: usize,
    /// Shared interest communities; each genuine user's topic is drawn
    /// around one of them. Zero gives every user an independent topic.
    pub communities: usize,
    /// Per-coordinate spread of user topics around their community.
    pub community_spread: f64,
    /// Mean shift of bot profile features, in feature standard deviations.
    pub feature_shift: f64,
    pub relations: Vec<String>,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub data_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_genuine: 500,
            n_traditional: 250,
            n_advanced: 250,
            dim: 64,
            feature_dim: 8,
            sigma_genuine: 0.08,
            sigma_spam: 0.02,
            steal_fraction: 0.5,
            homophily: 0.8,
            tweets_min: 4,
            tweets_max: 10,
            edges_per_user: 3,
            spam_campaigns: 4,
            communities: 16,
            community_spread: 0.05,
            feature_shift: 0.5,
            relations: vec!["follower".into(), "following".into()],
            train_ratio: 0.8,
            val_ratio: 0.1,
            test_ratio: 0.1,
            data_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(BicError::Config(format!("{name} = {p} is not a probability")))
            }
        };
        prob("steal_fraction", self.steal_fraction)?;
        prob("homophily", self.homophily)?;
        if !(self.sigma_genuine > 0.0 && self.sigma_spam > 0.0) {
            return Err(BicError::Config("noise scales must be positive".into()));
        }
        if !(self.community_spread >= 0.0 && self.community_spread.is_finite()) {
            return Err(BicError::Config("community_spread must be non-negative".into()));
        }
        if self.dim == 0 {
            return Err(BicError::Config("dim must be positive".into()));
        }
        if self.tweets_min > self.tweets_max {
            return Err(BicError::Config("tweets_min exceeds tweets_max".into()));
        }
        if self.tweets_max > DEFAULT_TWEET_CAP {
            return Err(BicError::Config(format!("tweets_max exceeds the {DEFAULT_TWEET_CAP}-tweet cap")));
        }
        if self.spam_campaigns == 0 {
            return Err(BicError::Config("need at least one spam campaign".into()));
        }
        if self.relations.is_empty() {
            return Err(BicError::Config("relation set is empty".into()));
        }
        if self.n_genuine + self.n_traditional + self.n_advanced == 0 {
            return Err(BicError::EmptyDataset("all archetype counts are zero".into()));
        }
        Ok(())
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios::new(self.train_ratio, self.val_ratio, self.test_ratio)
    }

    pub fn count(&self, a: Archetype) -> usize {
        match a {
            Archetype::Genuine => self.n_genuine,
            Archetype::Traditional => self.n_traditional,
            Archetype::Advanced => self.n_advanced,
        }
    }
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn jitter(rng: &mut impl Rng, center: &[f64], noise: &Normal<f64>) -> Vec<f64> {
    center.iter().map(|c| c + noise.sample(rng)).collect()
}

/// Generates a labelled, split dataset. Fully determined by `cfg.data_seed`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = rng_from(cfg.data_seed);
    let g_noise = Normal::new(0.0, cfg.sigma_genuine).expect("positive sigma");
    let s_noise = Normal::new(0.0, cfg.sigma_spam).expect("positive sigma");
    let campaigns: Vec<Vec<f64>> = (0..cfg.spam_campaigns).map(|_| unit_vector(&mut rng, cfg.dim)).collect();
    let communities: Vec<Vec<f64>> = (0..cfg.communities).map(|_| unit_vector(&mut rng, cfg.dim)).collect();
    let genuine_topics: Vec<Vec<f64>> = (0..cfg.n_genuine)
        .map(|_| {
            if communities.is_empty() {
                return unit_vector(&mut rng, cfg.dim);
            }
            let c = &communities[rng.random_range(0..communities.len())];
            let v: Vec<f64> = c
                .iter()
                .map(|x| x + cfg.community_spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();

    let features = |rng: &mut rand_chacha::ChaCha8Rng, shift: f64| -> Vec<f64> {
        (0..cfg.feature_dim)
            .map(|_| shift + rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let mut users = Vec::with_capacity(cfg.n_genuine + cfg.n_traditional + cfg.n_advanced);
    for (i, topic) in genuine_topics.iter().enumerate() {
        let t = rng.random_range(cfg.tweets_min..=cfg.tweets_max);
        users.push(UserRecord {
            id: format!("genuine_{i:04}"),
            description_emb: jitter(&mut rng, topic, &g_noise),
            tweet_embs: (0..t).map(|_| jitter(&mut rng, topic, &g_noise)).collect(),
            features: features(&mut rng, 0.0),
            label: Some(0),
        });
    }

    for arche in [Archetype::Traditional, Archetype::Advanced] {
        let steal = if arche == Archetype::Advanced { cfg.steal_fraction } else { 0.0 };
        for i in 0..cfg.count(arche) {
            let campaign = &campaigns[rng.random_range(0..campaigns.len())];
            let t = rng.random_range(cfg.tweets_min..=cfg.tweets_max);
            let n_stolen = (steal * t as f64).round() as usize;
            // Same draw sequence for every bot so that steal = 0 reproduces
            // the traditional law exactly.
            let mut stolen_slots: Vec<bool> = (0..t).map(|j| j < n_stolen).collect();
            stolen_slots.shuffle(&mut rng);
            let tweet_embs = stolen_slots
                .iter()
                .map(|&stolen| {
                    if stolen && !genuine_topics.is_empty() {
                        let src = &genuine_topics[rng.random_range(0..genuine_topics.len())];
                        jitter(&mut rng, src, &g_noise)
                    } else {
                        jitter(&mut rng, campaign, &s_noise)
                    }
                })
                .collect();
            let steal_description = rng.random::<f64>() < steal && !genuine_topics.is_empty();
            let description_emb = if steal_description {
                let src = &genuine_topics[rng.random_range(0..genuine_topics.len())];
                jitter(&mut rng, src, &g_noise)
            } else {
                jitter(&mut rng, campaign, &s_noise)
            };
            users.push(UserRecord {
                id: format!("{}_{i:04}", arche.prefix()),
                description_emb,
                tweet_embs,
                features: features(&mut rng, cfg.feature_shift),
                label: Some(1),
            });
        }
    }

    let humans: Vec<usize> = (0..users.len()).filter(|&i| users[i].label == Some(0)).collect();
    let bots: Vec<usize> = (0..users.len()).filter(|&i| users[i].label == Some(1)).collect();
    let mut edges = Vec::new();
    for u in 0..users.len() {
        let is_bot = users[u].label == Some(1);
        for _ in 0..cfg.edges_per_user {
            let same = rng.random::<f64>() < cfg.homophily;
            let pool = if same == is_bot { &bots } else { &humans };
            let rel = &cfg.relations[rng.random_range(0..cfg.relations.len())];
            if pool.is_empty() {
                continue;
            }
            let v = pool[rng.random_range(0..pool.len())];
            if v != u {
                edges.push(Edge(users[u].id.clone(), users[v].id.clone(), rel.clone()));
            }
        }
    }

    let base = Dataset::new(cfg.dim, cfg.relations.clone(), users, edges, Splits::default(), DEFAULT_TWEET_CAP)?;
    split(&base, cfg.split_ratios(), cfg.data_seed)
}
