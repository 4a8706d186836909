use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::schema::{Dataset, Edge};
use crate::error::Result;
use crate::numerics::{derive_seed, rng_from};

/// A user and its 1-hop typed neighborhood.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeteroEgoGraph {
    pub center: String,
    pub neighbors: Vec<String>,
    pub edges: Vec<Edge>,
    pub relations: Vec<String>,
    #[serde(skip)]
    pub(crate) center_index: usize,
    /// Dataset index and relation indices of each neighbor, aligned with `neighbors`.
    #[serde(skip)]
    pub(crate) neighbor_links: Vec<(usize, Vec<usize>)>,
}

impl HeteroEgoGraph {
    pub fn neighbor_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Relation indices linking each neighbor to the center.
    pub fn neighbor_relations(&self) -> impl Iterator<Item = &[usize]> {
        self.neighbor_links.iter().map(|(_, r)| r.as_slice())
    }
}

/// Extracts the ego network of `user_id`. When there are more than
/// `neighbor_cap` distinct neighbors a seeded subsample is drawn, with quotas
/// per relation proportional to each relation's share of neighbors.
pub fn ego_graph(dataset: &Dataset, user_id: &str, neighbor_cap: usize, seed: u64) -> Result<HeteroEgoGraph> {
    let c = dataset.index_of(user_id)?;
    let mut links: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(n, r) in dataset.adjacency(c) {
        let rels = links.entry(n).or_default();
        if !rels.contains(&r) {
            rels.push(r);
        }
    }
    for rels in links.values_mut() {
        rels.sort_unstable();
    }

    let mut chosen: Vec<usize> = links.keys().copied().collect();
    if chosen.len() > neighbor_cap {
        // stratify on each neighbor's first relation
        let n_rel = dataset.relations().len().max(1);
        let mut strata: Vec<Vec<usize>> = vec![Vec::new(); n_rel];
        for (&n, rels) in &links {
            strata[rels[0]].push(n);
        }
        let total = chosen.len();
        let mut quotas: Vec<usize> = strata.iter().map(|s| s.len() * neighbor_cap / total).collect();
        let mut rema: Vec<(usize, usize)> = strata
            .iter()
            .enumerate()
            .map(|(i, s)| (s.len() * neighbor_cap % total, i))
            .collect();
        rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut left = neighbor_cap - quotas.iter().sum::<usize>();
        for &(_, i) in &rema {
            if left == 0 {
                break;
            }
            if quotas[i] < strata[i].len() {
                quotas[i] += 1;
                left -= 1;
            }
        }
        let mut rng = rng_from(derive_seed(seed, &[c as u64]));
        chosen.clear();
        for (stratum, &q) in strata.iter_mut().zip(&quotas) {
            stratum.shuffle(&mut rng);
            chosen.extend_from_slice(&stratum[..q]);
        }
        chosen.sort_unstable();
    }

    let center_id = dataset.user_at(c).id.clone();
    let neighbors: Vec<String> = chosen.iter().map(|&n| dataset.user_at(n).id.clone()).collect();
    let keep: std::collections::HashSet<&str> = neighbors.iter().map(String::as_str).collect();
    let edges = dataset
        .edges()
        .iter()
        .filter(|Edge(s, d, _)| {
            (*s == center_id && keep.contains(d.as_str())) || (*d == center_id && keep.contains(s.as_str()))
        })
        .cloned()
        .collect();
    let neighbor_links = chosen.iter().map(|&n| (n, links[&n].clone())).collect();

    Ok(HeteroEgoGraph {
        center: center_id,
        neighbors,
        edges,
        relations: dataset.relations().to_vec(),
        center_index: c,
        neighbor_links,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Splits, UserRecord};
    use crate::BicError;

    fn user(id: &str) -> UserRecord {
        UserRecord {
            id: id.into(),
            description_emb: vec![0.0],
            tweet_embs: vec![],
            features: vec![],
            label: Some(0),
        }
    }

    fn star(followers: usize, followings: usize) -> Dataset {
        let mut users = vec![user("c"), user("lonely")];
        let mut edges = Vec::new();
        for i in 0..followers {
            let id = format!("f{i:03}");
            users.push(user(&id));
            edges.push(Edge(id, "c".into(), "follower".into()));
        }
        for i in 0..followings {
            let id = format!("g{i:03}");
            users.push(user(&id));
            edges.push(Edge("c".into(), id, "following".into()));
        }
        Dataset::new(
            1,
            vec!["follower".into(), "following".into()],
            users,
            edges,
            Splits::default(),
            200,
        )
        .unwrap()
    }

    #[test]
    fn isolated_user_has_no_neighbors() {
        let g = ego_graph(&star(2, 2), "lonely", 32, 0).unwrap();
        assert!(g.neighbors.is_empty() && g.edges.is_empty());
    }

    #[test]
    fn under_cap_keeps_everything_with_relations() {
        let g = ego_graph(&star(3, 2), "c", 10, 0).unwrap();
        assert_eq!(g.neighbor_count(), 5);
        let rels: Vec<&[usize]> = g.neighbor_relations().collect();
        assert_eq!(rels.iter().filter(|r| **r == [0usize]).count(), 3);
        assert_eq!(rels.iter().filter(|r| **r == [1usize]).count(), 2);
        assert_eq!(g.edges.len(), 5);
    }

    #[test]
    fn over_cap_is_seeded_and_stratified() {
        let d = star(60, 20);
        let a = ego_graph(&d, "c", 8, 42).unwrap();
        let b = ego_graph(&d, "c", 8, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.neighbor_count(), 8);
        let followers = a.neighbors.iter().filter(|n| n.starts_with('f')).count();
        assert_eq!(followers, 6);
        let c = ego_graph(&d, "c", 8, 43).unwrap();
        assert_ne!(a.neighbors, c.neighbors);
    }

    #[test]
    fn unknown_user_is_lookup_error() {
        assert!(matches!(ego_graph(&star(1, 1), "nobody", 4, 0), Err(BicError::Lookup(_))));
    }

    #[test]
    fn self_loops_only_from_edge_list() {
        let g = ego_graph(&star(3, 3), "c", 32, 0).unwrap();
        assert!(!g.neighbors.contains(&g.center));
        let looped = Dataset::new(
            1,
            vec!["follower".into()],
            vec![user("c")],
            vec![Edge("c".into(), "c".into(), "follower".into())],
            Splits::default(),
            200,
        )
        .unwrap();
        let g = ego_graph(&looped, "c", 32, 0).unwrap();
        assert_eq!(g.neighbors, vec!["c".to_string()]);
    }
}
