//! Exact k-nearest-neighbor search over a static point set.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::cloud::LabeledCloud;
use super::vec::Vec3;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree. Queries are read-only and may run concurrently.
#[derive(Debug, Clone)]
pub struct KdIndex {
    points: Vec<Vec3>,
    /// Point indices, permuted so that each leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Heap entry ordered by (squared distance, index); the max sits on top so
/// the current worst candidate can be evicted.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn coord(p: &Vec3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

impl KdIndex {
    pub fn build(cloud: &LabeledCloud) -> Self {
        Self::from_points(cloud.points().to_vec())
    }

    pub fn from_points(points: Vec<Vec3>) -> Self {
        let mut index = KdIndex {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !index.points.is_empty() {
            index.build_node(0, index.points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }

        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = self.points[i].to_array();
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] == 0.0 {
            // Every point in range coincides.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }

        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coord(&points[a], axis).total_cmp(&coord(&points[b], axis))
        });
        let value = coord(&self.points[self.order[mid]], axis);

        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    /// Indices of the `k` points closest to `query`, ascending by distance,
    /// equal distances ordered by ascending index.
    pub fn knn(&self, query: Vec3, k: usize) -> Result<Vec<usize>> {
        Ok(self
            .knn_with_distances(query, k)?
            .into_iter()
            .map(|(i, _)| i)
            .collect())
    }

    /// Like [`knn`](Self::knn) but also returns squared distances.
    pub fn knn_with_distances(&self, query: Vec3, k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 || k > self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} must be in 1..={}",
                self.points.len()
            )));
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        Ok(out.into_iter().map(|c| (c.index, c.dist2)).collect())
    }

    fn search(&self, node: usize, q: Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        dist2: self.points[i].distance_squared(q),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if heap.peek().is_some_and(|w| c < *w) {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = coord(&q, axis) - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, heap);
                // Equal bound must still be visited: a tie may carry a smaller index.
                let visit_far = heap.len() < k || heap.peek().is_some_and(|w| diff * diff <= w.dist2);
                if visit_far {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &[Vec3], q: Vec3, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.distance_squared(q), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn single_point() {
        let idx = KdIndex::from_points(vec![Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(idx.knn(Vec3::ZERO, 1).unwrap(), vec![0]);
        assert!(idx.knn(Vec3::ZERO, 2).is_err());
        assert!(idx.knn(Vec3::ZERO, 0).is_err());
    }

    #[test]
    fn cube_corners_tie_by_index() {
        let mut pts = Vec::new();
        for x in [-1.0, 1.0] {
            for y in [-1.0, 1.0] {
                for z in [-1.0, 1.0] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        let idx = KdIndex::from_points(pts);
        assert_eq!(idx.knn(Vec3::ZERO, 8).unwrap(), (0..8).collect::<Vec<_>>());
        assert_eq!(idx.knn(Vec3::ZERO, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let idx = KdIndex::from_points(pts.clone());
        for _ in 0..200 {
            let q = Vec3::new(rng.random(), rng.random(), rng.random());
            assert_eq!(idx.knn(q, 16).unwrap(), brute_force(&pts, q, 16));
        }
        for i in (0..1000).step_by(37) {
            assert_eq!(idx.knn(pts[i], 16).unwrap(), brute_force(&pts, pts[i], 16));
        }
    }

    #[test]
    fn duplicate_heavy_grid_matches_brute_force() {
        // Integer lattice with repeats: lots of exact distance ties.
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                for r in 0..3 {
                    pts.push(Vec3::new(i as f64, j as f64, (r % 2) as f64));
                }
            }
        }
        let idx = KdIndex::from_points(pts.clone());
        for (n, p) in pts.iter().enumerate().step_by(5) {
            for k in [1, 5, 17, 40] {
                assert_eq!(idx.knn(*p, k).unwrap(), brute_force(&pts, *p, k), "point {n} k {k}");
            }
        }
    }
}
