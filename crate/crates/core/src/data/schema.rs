use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BicError, Result};

/// Tweets beyond this count are dropped at load time.
pub const DEFAULT_TWEET_CAP: usize = 200;

/// One account: embedding-level text, profile features and an optional label
/// (0 = human, 1 = bot).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: String,
    pub description_emb: Vec<f64>,
    pub tweet_embs: Vec<Vec<f64>>,
    pub features: Vec<f64>,
    pub label: Option<u8>,
}

/// Typed edge, serialized as `[src, dst, relation]`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge(pub String, pub String, pub String);

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawDataset {
    dim: usize,
    relations: Vec<String>,
    users: Vec<UserRecord>,
    #[serde(default)]
    edges: Vec<Edge>,
    #[serde(default)]
    splits: Splits,
}

/// Validated, immutable dataset. Users are ordered by id.
#[derive(Clone, Debug)]
pub struct Dataset {
    dim: usize,
    relations: Vec<String>,
    users: Vec<UserRecord>,
    edges: Vec<Edge>,
    splits: Splits,
    index: HashMap<String, usize>,
    /// Per user: (neighbor index, relation index) for every incident edge.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Dataset {
    /// Validates and indexes the parts of a dataset. Tweets past `tweet_cap`
    /// are dropped.
    pub fn new(
        dim: usize,
        relations: Vec<String>,
        mut users: Vec<UserRecord>,
        mut edges: Vec<Edge>,
        splits: Splits,
        tweet_cap: usize,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &relations {
            if !seen.insert(r.as_str()) {
                return Err(BicError::Integrity(format!("duplicate relation `{r}`")));
            }
        }
        users.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = HashMap::with_capacity(users.len());
        let feat_dim = users.first().map_or(0, |u| u.features.len());
        for (i, u) in users.iter_mut().enumerate() {
            if index.insert(u.id.clone(), i).is_some() {
                return Err(BicError::Integrity(format!("duplicate user id `{}`", u.id)));
            }
            u.tweet_embs.truncate(tweet_cap);
            let check = |what: &str, v: &[f64]| -> Result<()> {
                if v.len() != dim {
                    return Err(BicError::Integrity(format!(
                        "user `{}`: {what} has length {} but dim is {dim}",
                        u.id,
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(BicError::Integrity(format!("user `{}`: non-finite {what}", u.id)));
                }
                Ok(())
            };
            check("description_emb", &u.description_emb)?;
            for (j, t) in u.tweet_embs.iter().enumerate() {
                check(&format!("tweet_embs[{j}]"), t)?;
            }
            if u.features.len() != feat_dim {
                return Err(BicError::Integrity(format!(
                    "user `{}`: {} features, expected {feat_dim}",
                    u.id,
                    u.features.len()
                )));
            }
            if u.features.iter().any(|x| !x.is_finite()) {
                return Err(BicError::Integrity(format!("user `{}`: non-finite features", u.id)));
            }
            if let Some(l) = u.label {
                if l > 1 {
                    return Err(BicError::Integrity(format!("user `{}`: label {l} not in {{0, 1}}", u.id)));
                }
            }
        }

        let rel_index: HashMap<&str, usize> = relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        edges.sort();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); users.len()];
        for Edge(s, d, r) in &edges {
            let si = *index.get(s).ok_or_else(|| {
                BicError::Integrity(format!("edge endpoint `{s}` is not a known user"))
            })?;
            let di = *index.get(d).ok_or_else(|| {
                BicError::Integrity(format!("edge endpoint `{d}` is not a known user"))
            })?;
            let ri = *rel_index
                .get(r.as_str())
                .ok_or_else(|| BicError::Integrity(format!("edge relation `{r}` not in relation set")))?;
            adjacency[si].push((di, ri));
            if si != di {
                adjacency[di].push((si, ri));
            }
        }

        let mut members = HashSet::new();
        for (name, ids) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
            for id in ids {
                let &i = index.get(id).ok_or_else(|| {
                    BicError::Integrity(format!("{name} split references unknown user `{id}`"))
                })?;
                if !members.insert(id.as_str()) {
                    return Err(BicError::Integrity(format!("user `{id}` appears in more than one split")));
                }
                if users[i].label.is_none() {
                    return Err(BicError::Integrity(format!("{name} split user `{id}` has no label")));
                }
            }
        }

        Ok(Dataset {
            dim,
            relations,
            users,
            edges,
            splits,
            index,
            adjacency,
        })
    }

    pub fn from_json_str(s: &str, tweet_cap: usize) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let raw: RawDataset = serde_path_to_error::deserialize(de).map_err(|e| BicError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Dataset::new(raw.dim, raw.relations, raw.users, raw.edges, raw.splits, tweet_cap)
    }

    /// Loads and validates a dataset file.
    pub fn load(path: impl AsRef<Path>, tweet_cap: usize) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| BicError::io(path, e))?;
        Dataset::from_json_str(&s, tweet_cap)
    }

    pub fn to_json_string(&self) -> String {
        let raw = RawDataset {
            dim: self.dim,
            relations: self.relations.clone(),
            users: self.users.clone(),
            edges: self.edges.clone(),
            splits: self.splits.clone(),
        };
        serde_json::to_string(&raw).expect("dataset serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| BicError::io(path, e))
    }

    /// Git-style content hash (`sha256("blob <len>\0" ++ json)`) of the
    /// canonical serialization.
    pub fn content_hash(&self) -> String {
        let body = self.to_json_string();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature_dim(&self) -> usize {
        self.users.first().map_or(0, |u| u.features.len())
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| BicError::Lookup(id.to_string()))
    }

    pub fn user(&self, id: &str) -> Result<&UserRecord> {
        Ok(&self.users[self.index_of(id)?])
    }

    pub fn user_at(&self, i: usize) -> &UserRecord {
        &self.users[i]
    }

    pub(crate) fn adjacency(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    /// Longest timeline in the dataset.
    pub fn max_tweets(&self) -> usize {
        self.users.iter().map(|u| u.tweet_embs.len()).max().unwrap_or(0)
    }

    pub fn split_ids(&self, name: &str) -> Result<&[String]> {
        self.splits
            .get(name)
            .ok_or_else(|| BicError::Config(format!("unknown split `{name}`")))
    }

    pub fn with_splits(&self, splits: Splits) -> Result<Self> {
        Dataset::new(
            self.dim,
            self.relations.clone(),
            self.users.clone(),
            self.edges.clone(),
            splits,
            usize::MAX,
        )
    }

    /// Ids of all labelled users, ascending.
    pub fn labelled_ids(&self) -> Vec<String> {
        self.users
            .iter()
            .filter(|u| u.label.is_some())
            .map(|u| u.id.clone())
            .collect()
    }

    pub fn relation_set(&self) -> BTreeSet<&str> {
        self.relations.iter().map(String::as_str).collect()
    }
}
