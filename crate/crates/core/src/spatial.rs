//! Spatial acceleration structures: a hashed-grid nearest-neighbor index for
//! 2D clouds and a k-d tree over fixed-length descriptor vectors.
//!
//! Clouds are plain sequences ([`crate::geom::Cloud2`]); consumers build these
//! indices on demand.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::geom::{Cloud2, Point2};

/// Uniform grid over a point set for radius-bounded nearest-neighbor queries.
///
/// Exact within the query radius supplied at construction: any neighbor within
/// `radius` of a query point lies in the 3x3 cell neighborhood when the cell
/// edge equals the radius.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: f64,
    points: Vec<Point2>,
    bins: BTreeMap<(i64, i64), Vec<u32>>,
}

impl GridIndex {
    pub fn build(cloud: &Cloud2, radius: f64) -> Self {
        debug_assert!(radius > 0.0);
        let cell = radius;
        let mut bins: BTreeMap<(i64, i64), Vec<u32>> = BTreeMap::new();
        for (i, p) in cloud.points.iter().enumerate() {
            bins.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        GridIndex {
            cell,
            points: cloud.points.clone(),
            bins,
        }
    }

    fn key(p: &Point2, cell: f64) -> (i64, i64) {
        (
            libm::floor(p.x / cell) as i64,
            libm::floor(p.y / cell) as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point within the construction radius. Ties broken by lowest
    /// point index.
    pub fn nearest_within(&self, q: &Point2) -> Option<(usize, f64)> {
        let (kx, ky) = Self::key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(idxs) = self.bins.get(&(kx + dx, ky + dy)) {
                    for &i in idxs {
                        let d = self.points[i as usize].dist(q);
                        if d <= self.cell {
                            match best {
                                Some((bi, bd)) if d > bd || (d == bd && i as usize >= bi) => {}
                                _ => best = Some((i as usize, d)),
                            }
                        }
                    }
                }
            }
        }
        best
    }

    /// True when any indexed point lies within the construction radius.
    pub fn has_neighbor_within(&self, q: &Point2) -> bool {
        self.nearest_within(q).is_some()
    }
}

/// One entry in a [`VecKdTree`]: a descriptor vector and a caller-supplied id
/// used for deterministic tie-breaking.
#[derive(Debug, Clone)]
pub struct KdEntry {
    pub id: u64,
    pub vector: Vec<f64>,
}

enum KdNode {
    Leaf {
        entries: Vec<u32>,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// k-d tree over equal-length f64 vectors with exact k-nearest-neighbor
/// search under Euclidean distance.
pub struct VecKdTree {
    dim: usize,
    entries: Vec<KdEntry>,
    nodes: Vec<KdNode>,
    root: Option<usize>,
}

const LEAF_SIZE: usize = 8;

impl VecKdTree {
    pub fn build(entries: Vec<KdEntry>, dim: usize) -> Self {
        debug_assert!(entries.iter().all(|e| e.vector.len() == dim));
        let mut tree = VecKdTree {
            dim,
            entries,
            nodes: Vec::new(),
            root: None,
        };
        if !tree.entries.is_empty() {
            let mut idx: Vec<u32> = (0..tree.entries.len() as u32).collect();
            let root = tree.build_node(&mut idx);
            tree.root = Some(root);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn build_node(&mut self, idx: &mut [u32]) -> usize {
        if idx.len() <= LEAF_SIZE {
            let node = KdNode::Leaf {
                entries: idx.to_vec(),
            };
            self.nodes.push(node);
            return self.nodes.len() - 1;
        }
        // Split on the dimension with the largest spread; lowest dimension on
        // ties so that rebuilds are reproducible.
        let mut split_dim = 0;
        let mut best_spread = -1.0;
        for d in 0..self.dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in idx.iter() {
                let v = self.entries[i as usize].vector[d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let spread = hi - lo;
            if spread > best_spread {
                best_spread = spread;
                split_dim = d;
            }
        }
        if best_spread <= 0.0 {
            // All vectors identical along every dimension: keep as one leaf.
            let node = KdNode::Leaf {
                entries: idx.to_vec(),
            };
            self.nodes.push(node);
            return self.nodes.len() - 1;
        }
        idx.sort_by(|&a, &b| {
            let va = self.entries[a as usize].vector[split_dim];
            let vb = self.entries[b as usize].vector[split_dim];
            va.total_cmp(&vb)
                .then(self.entries[a as usize].id.cmp(&self.entries[b as usize].id))
        });
        let mid = idx.len() / 2;
        let value = self.entries[idx[mid] as usize].vector[split_dim];
        let (left_idx, right_idx) = idx.split_at_mut(mid);
        let left = self.build_node(left_idx);
        let right = self.build_node(right_idx);
        self.nodes.push(KdNode::Split {
            dim: split_dim,
            value,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    /// `k` nearest entries to `query`, sorted by (distance, id).
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<(u64, f64)> {
        debug_assert_eq!(query.len(), self.dim);
        let mut best = BoundedBest::new(k);
        if let Some(root) = self.root {
            self.search(root, query, &mut best);
        }
        best.into_sorted()
    }

    fn search(&self, node: usize, query: &[f64], best: &mut BoundedBest) {
        match &self.nodes[node] {
            KdNode::Leaf { entries } => {
                for &i in entries {
                    let e = &self.entries[i as usize];
                    let d2 = sq_dist(&e.vector, query);
                    best.offer(e.id, d2);
                }
            }
            KdNode::Split {
                dim,
                value,
                left,
                right,
            } => {
                let delta = query[*dim] - value;
                let (near, far) = if delta < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, query, best);
                if !best.can_prune(delta * delta) {
                    self.search(far, query, best);
                }
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Keeps the k smallest (squared distance, id) pairs, id ascending on ties.
struct BoundedBest {
    k: usize,
    items: Vec<(f64, u64)>,
}

impl BoundedBest {
    fn new(k: usize) -> Self {
        BoundedBest {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, id: u64, d2: f64) {
        if self.k == 0 {
            return;
        }
        self.items.push((d2, id));
        self.items
            .sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        self.items.truncate(self.k);
    }

    fn can_prune(&self, plane_d2: f64) -> bool {
        self.items.len() == self.k
            && self
                .items
                .last()
                .map(|&(d2, _)| plane_d2 > d2)
                .unwrap_or(false)
    }

    fn into_sorted(self) -> Vec<(u64, f64)> {
        self.items
            .into_iter()
            .map(|(d2, id)| (id, libm::sqrt(d2)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;
    use alloc::vec;

    #[test]
    fn grid_index_matches_brute_force() {
        let mut rng = Pcg32::new(11, 2);
        let pts: Vec<Point2> = (0..400)
            .map(|_| Point2::new(rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)))
            .collect();
        let cloud = Cloud2::new(pts.clone());
        let radius = 1.5;
        let index = GridIndex::build(&cloud, radius);
        for _ in 0..200 {
            let q = Point2::new(rng.uniform(-22.0, 22.0), rng.uniform(-22.0, 22.0));
            let brute = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, p.dist(&q)))
                .filter(|&(_, d)| d <= radius)
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let got = index.nearest_within(&q);
            match (brute, got) {
                (None, None) => {}
                (Some((bi, bd)), Some((gi, gd))) => {
                    assert_eq!(bi, gi);
                    assert!((bd - gd).abs() < 1e-12);
                }
                other => panic!("mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn kdtree_matches_brute_force() {
        let mut rng = Pcg32::new(5, 77);
        let dim = 16;
        let entries: Vec<KdEntry> = (0..300)
            .map(|i| KdEntry {
                id: i as u64,
                vector: (0..dim).map(|_| rng.uniform(0.0, 1.0)).collect(),
            })
            .collect();
        let tree = VecKdTree::build(entries.clone(), dim);
        for _ in 0..50 {
            let q: Vec<f64> = (0..dim).map(|_| rng.uniform(0.0, 1.0)).collect();
            let mut brute: Vec<(u64, f64)> = entries
                .iter()
                .map(|e| (e.id, libm::sqrt(sq_dist(&e.vector, &q))))
                .collect();
            brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            brute.truncate(5);
            let got = tree.knn(&q, 5);
            assert_eq!(got.len(), 5);
            for (b, g) in brute.iter().zip(got.iter()) {
                assert_eq!(b.0, g.0);
                assert!((b.1 - g.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kdtree_duplicate_vectors_tie_break_by_id() {
        let v = vec![0.5; 4];
        let entries: Vec<KdEntry> = (0..20)
            .map(|i| KdEntry {
                id: 19 - i as u64,
                vector: v.clone(),
            })
            .collect();
        let tree = VecKdTree::build(entries, 4);
        let got = tree.knn(&v, 3);
        let ids: Vec<u64> = got.iter().map(|g| g.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }
}
