//! Coarse stage: top-K map images by cube-patch similarity, then DBSCAN over
//! the candidates' projecting positions to keep a spatially consistent top-K′.

use serde::{Deserialize, Serialize};

use crate::features::{similarity, GlobalDescriptor};
use crate::mapdb::Database;
use crate::projection::CubeFace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub k_prime: usize,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 50,
            k_prime: 10,
            dbscan_eps: 2.5,
            dbscan_min_pts: 2,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k_prime == 0 || self.k < self.k_prime {
            return Err(format!("retrieval needs k >= k_prime >= 1 (k {}, k_prime {})", self.k, self.k_prime));
        }
        if !(self.dbscan_eps > 0.0) || self.dbscan_min_pts == 0 {
            return Err("retrieval needs dbscan_eps > 0 and dbscan_min_pts >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub image_id: usize,
    pub best_patch: CubeFace,
    pub score: f64,
    /// Covisibility cluster; `None` for noise or before clustering.
    pub cluster_label: Option<usize>,
}

/// Scores every map image by its best patch and returns the `k` best,
/// highest score first, lower image id first on ties.
pub fn retrieve_topk(q: &GlobalDescriptor, db: &Database, k: usize) -> Vec<Candidate> {
    let mut cands: Vec<Candidate> = (0..db.len())
        .map(|i| {
            let mut best = (CubeFace::Front, f64::NEG_INFINITY);
            for face in CubeFace::ALL {
                let s = similarity(q, db.patch_descriptor(i, face)).unwrap_or(f64::NEG_INFINITY);
                if s > best.1 {
                    best = (face, s);
                }
            }
            Candidate {
                image_id: i,
                best_patch: best.0,
                score: best.1,
                cluster_label: None,
            }
        })
        .collect();
    cands.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.image_id.cmp(&b.image_id)));
    cands.truncate(k);
    cands
}

fn dist_sq<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// DBSCAN with Euclidean distance. A point's neighbourhood (distance ≤ eps)
/// includes itself. Seeds are expanded in index order, so a border point
/// joins the first cluster that reaches it. `None` marks noise.
pub fn dbscan<const D: usize>(points: &[[f64; D]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let eps_sq = eps * eps;
    let neighbours = |i: usize| -> Vec<usize> { (0..n).filter(|&j| dist_sq(&points[i], &points[j]) <= eps_sq).collect() };
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = neighbours(i);
        if seeds.len() < min_pts {
            continue;
        }
        let c = next;
        next += 1;
        labels[i] = Some(c);
        let mut queue = seeds;
        let mut head = 0;
        while head < queue.len() {
            let q = queue[head];
            head += 1;
            if labels[q].is_none() {
                labels[q] = Some(c);
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            let nq = neighbours(q);
            if nq.len() >= min_pts {
                queue.extend(nq);
            }
        }
    }
    labels
}

/// Groups candidates by projecting-position density and returns up to
/// `k_prime` members of the best cluster (largest, then highest member
/// score), best score first. Falls back to the plain top-`k_prime` when
/// every candidate is noise.
pub fn covisibility_cluster(cands: &[Candidate], db: &Database, cfg: &RetrievalConfig) -> Vec<Candidate> {
    let labeled = label_candidates(cands, db, cfg);
    let labels: Vec<Option<usize>> = labeled.iter().map(|c| c.cluster_label).collect();
    select_cluster(cands, &labels, cfg.k_prime)
}

/// The candidates with their DBSCAN labels over projecting positions.
pub fn label_candidates(cands: &[Candidate], db: &Database, cfg: &RetrievalConfig) -> Vec<Candidate> {
    let pts: Vec<[f64; 3]> = cands
        .iter()
        .map(|c| {
            let t = db.pose(c.image_id).translation();
            [t.x, t.y, t.z]
        })
        .collect();
    let labels = dbscan(&pts, cfg.dbscan_eps, cfg.dbscan_min_pts);
    cands
        .iter()
        .zip(labels)
        .map(|(c, l)| Candidate { cluster_label: l, ..*c })
        .collect()
}

/// Cluster selection given precomputed labels.
pub fn select_cluster(cands: &[Candidate], labels: &[Option<usize>], k_prime: usize) -> Vec<Candidate> {
    let n_clusters = labels.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);
    if n_clusters == 0 {
        return cands.iter().take(k_prime).copied().collect();
    }
    let mut size = vec![0usize; n_clusters];
    let mut top = vec![f64::NEG_INFINITY; n_clusters];
    for (c, l) in cands.iter().zip(labels) {
        if let Some(l) = *l {
            size[l] += 1;
            top[l] = top[l].max(c.score);
        }
    }
    let best = (0..n_clusters)
        .max_by(|&a, &b| size[a].cmp(&size[b]).then(top[a].total_cmp(&top[b])).then(b.cmp(&a)))
        .expect("at least one cluster");
    let mut out: Vec<Candidate> = cands
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Some(best))
        .map(|(c, l)| Candidate {
            cluster_label: *l,
            ..*c
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.image_id.cmp(&b.image_id)));
    out.truncate(k_prime);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Union-find over core points; each border point takes the adjacent
    /// cluster whose smallest core index is lowest.
    fn oracle(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
        let n = points.len();
        let adj = |i: usize, j: usize| dist_sq(&points[i], &points[j]) <= eps * eps;
        let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| adj(i, j)).count() >= min_pts).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, i: usize) -> usize {
            if p[i] != i {
                let r = find(p, p[i]);
                p[i] = r;
            }
            p[i]
        }
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && adj(i, j) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        // roots are the smallest core index of each component
        let mut out = vec![None; n];
        for i in 0..n {
            if core[i] {
                out[i] = Some(find(&mut parent, i));
            } else {
                out[i] = (0..n).filter(|&j| core[j] && adj(i, j)).map(|j| find(&mut parent, j)).min();
            }
        }
        out
    }

    fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
        use std::collections::HashMap;
        let mut fwd = HashMap::new();
        let mut bwd = HashMap::new();
        a.iter().zip(b).all(|(x, y)| match (x, y) {
            (None, None) => true,
            (Some(x), Some(y)) => *fwd.entry(*x).or_insert(*y) == *y && *bwd.entry(*y).or_insert(*x) == *x,
            _ => false,
        })
    }

    fn cand(id: usize, score: f64) -> Candidate {
        Candidate {
            image_id: id,
            best_patch: CubeFace::Front,
            score,
            cluster_label: None,
        }
    }

    #[test]
    fn chain_and_isolated() {
        let pts = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0], [100.0, 0.0, 0.0]];
        assert_eq!(dbscan(&pts, 0.6, 2), vec![Some(0), Some(0), Some(0), None]);
        assert_eq!(dbscan::<3>(&[], 1.0, 1), Vec::<Option<usize>>::new());
        assert_eq!(dbscan(&[[0.0]], 1.0, 1), vec![Some(0)]);
    }

    #[test]
    fn size_beats_score() {
        // A: three co-located candidates, B: two better-scoring ones
        let cands = [cand(3, 0.9), cand(4, 0.85), cand(0, 0.8), cand(1, 0.7), cand(2, 0.6)];
        let labels = [Some(1), Some(1), Some(0), Some(0), Some(0)];
        let out = select_cluster(&cands, &labels, 2);
        let ids: Vec<usize> = out.iter().map(|c| c.image_id).collect();
        assert_eq!(ids, vec![0, 1]);
        assert!(out.iter().all(|c| c.cluster_label == Some(0)));
    }

    #[test]
    fn fallback_and_trivial() {
        let cands = [cand(0, 0.9), cand(1, 0.8), cand(2, 0.7)];
        let out = select_cluster(&cands, &[None, None, None], 2);
        assert_eq!(out.iter().map(|c| c.image_id).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(select_cluster(&cands[..1], &[Some(0)], 5).len(), 1);
        assert_eq!(select_cluster(&cands[..1], &[None], 5).len(), 1);
    }

    #[test]
    fn equal_size_tie_uses_top_score() {
        let cands = [cand(0, 0.9), cand(1, 0.8), cand(2, 0.7), cand(3, 0.6)];
        let labels = [Some(1), Some(0), Some(0), Some(1)];
        let out = select_cluster(&cands, &labels, 5);
        assert_eq!(out.iter().map(|c| c.image_id).collect::<Vec<_>>(), vec![0, 3]);
    }

    proptest! {
        #[test]
        fn matches_union_find_oracle(
            pts in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 0..120),
            eps in 0.2f64..2.0,
            min_pts in 1usize..6,
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let got = dbscan(&pts, eps, min_pts);
            prop_assert!(same_partition(&got, &oracle(&pts, eps, min_pts)));
        }
    }
}
