use std::collections::HashMap;

use super::Track;
use crate::features::{Feature, MatchSet};
use crate::geometry::Observation;

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the `(image, feature)` match graph. Components
/// holding two different features of one image are discarded; singletons
/// are not tracks. Tracks are ordered by their first node and numbered from
/// zero; observations are ordered by image id.
pub fn build_tracks(match_sets: &[MatchSet], features: &[(u32, Vec<Feature>)]) -> Vec<Track> {
    let mut offset = Vec::with_capacity(features.len() + 1);
    offset.push(0usize);
    for (_, f) in features {
        offset.push(offset.last().unwrap() + f.len());
    }
    let slot: HashMap<u32, usize> = features.iter().enumerate().map(|(k, (id, _))| (*id, k)).collect();
    let total = *offset.last().unwrap();
    let mut dsu = DisjointSet::new(total);
    let mut linked = vec![false; total];
    for ms in match_sets {
        let (Some(&a), Some(&b)) = (slot.get(&ms.image_i), slot.get(&ms.image_j)) else { continue };
        for m in &ms.matches {
            let (na, nb) = (offset[a] + m.i, offset[b] + m.j);
            linked[na] = true;
            linked[nb] = true;
            dsu.union(na, nb);
        }
    }

    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut first_seen = Vec::new();
    for node in 0..total {
        if !linked[node] {
            continue;
        }
        let root = dsu.find(node);
        let members = groups.entry(root).or_default();
        if members.is_empty() {
            first_seen.push(root);
        }
        members.push(node);
    }

    let image_of = |node: usize| offset.partition_point(|&o| o <= node) - 1;
    let mut tracks = Vec::new();
    for root in first_seen {
        let members = &groups[&root];
        let mut obs: Vec<Observation> = members
            .iter()
            .map(|&node| {
                let k = image_of(node);
                let f = &features[k].1[node - offset[k]];
                Observation { image: features[k].0, uv: f.pixel, label: f.label }
            })
            .collect();
        obs.sort_by_key(|o| o.image);
        if obs.windows(2).any(|w| w[0].image == w[1].image) {
            continue;
        }
        tracks.push(Track { id: tracks.len() as u32, observations: obs, point: None });
    }
    tracks
}
