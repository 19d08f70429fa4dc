//! Exact k-d tree over descriptor vectors.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{invalid_input, Result};

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f32, left: usize, right: usize },
}

/// A neighbour returned by a query: point index and Euclidean distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    sq: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sq.total_cmp(&other.sq).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Balanced k-d tree with median splits along the widest dimension.
///
/// Queries are exact: results equal a brute-force scan ordered by
/// (distance, index).
#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    points: Vec<f32>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: &[Vec<f32>]) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(invalid_input!("cannot index an empty descriptor set"));
        };
        let dim = first.len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(invalid_input!("descriptors must share one non-zero dimension"));
        }
        let flat: Vec<f32> = points.iter().flatten().copied().collect();
        let mut tree = Self { dim, points: flat, order: (0..points.len()).collect(), nodes: Vec::new() };
        tree.build_node(0, points.len());
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let mut best = (0, -1.0f32);
        for d in 0..self.dim {
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.points[i * self.dim + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        if best.1 <= 0.0 {
            return id;
        }
        let dim = best.0;
        let mid = (start + end) / 2;
        let (pts, d) = (&self.points, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a * d + dim].total_cmp(&pts[b * d + dim]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] * self.dim + dim];
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    fn sq_dist(&self, i: usize, q: &[f32]) -> f64 {
        self.point(i).iter().zip(q).map(|(&a, &b)| (a as f64 - b as f64) * (a as f64 - b as f64)).sum()
    }

    /// The `k` nearest points to `query` among those accepted by `keep`.
    pub fn knn_filtered(&self, query: &[f32], k: usize, keep: impl Fn(usize) -> bool) -> Vec<Neighbor> {
        if k == 0 || query.len() != self.dim {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &keep, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| Neighbor { index: c.index, distance: libm::sqrt(c.sq) }).collect()
    }

    pub fn knn(&self, query: &[f32], k: usize) -> Vec<Neighbor> {
        self.knn_filtered(query, k, |_| true)
    }

    fn search(&self, node: usize, q: &[f32], k: usize, keep: &impl Fn(usize) -> bool, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if !keep(i) {
                        continue;
                    }
                    let c = Candidate { sq: self.sq_dist(i, q), index: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if heap.peek().is_some_and(|w| c < *w) {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] as f64 - value as f64;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, keep, heap);
                let bound = diff * diff;
                if heap.len() < k || heap.peek().is_some_and(|w| bound <= w.sq) {
                    self.search(far, q, k, keep, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::unit;
    use alloc::vec;
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;

    fn brute(points: &[Vec<f32>], q: &[f32], k: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        let mut all: Vec<Candidate> = (0..points.len())
            .filter(|&i| keep(i))
            .map(|i| Candidate {
                sq: points[i].iter().zip(q).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum(),
                index: i,
            })
            .collect();
        all.sort();
        all.into_iter().take(k).map(|c| c.index).collect()
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| unit(&mut rng) as f32).collect()).collect()
    }

    #[test]
    fn matches_brute_force() {
        let pts = random_points(200, 32, 1);
        let tree = KdTree::build(&pts).unwrap();
        let queries = random_points(50, 32, 2);
        for q in &queries {
            let got: Vec<usize> = tree.knn(q, 5).iter().map(|n| n.index).collect();
            assert_eq!(got, brute(&pts, q, 5, |_| true));
        }
    }

    #[test]
    fn filtered_matches_brute_force() {
        let pts = random_points(300, 8, 3);
        let tree = KdTree::build(&pts).unwrap();
        for (qi, q) in pts.iter().enumerate().take(40) {
            let keep = |i: usize| i % 3 != qi % 3;
            let got: Vec<usize> = tree.knn_filtered(q, 7, keep).iter().map(|n| n.index).collect();
            assert_eq!(got, brute(&pts, q, 7, keep));
        }
    }

    #[test]
    fn stored_vector_is_its_own_nearest() {
        let pts = random_points(100, 16, 4);
        let tree = KdTree::build(&pts).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let n = tree.knn(p, 1);
            assert_eq!(n[0].index, i);
            assert_eq!(n[0].distance, 0.0);
        }
    }

    #[test]
    fn single_element_and_duplicates() {
        let tree = KdTree::build(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(tree.knn(&[5.0, 5.0], 3)[0].index, 0);
        assert_eq!(tree.knn(&[5.0, 5.0], 3).len(), 1);
        let dup = vec![vec![0.5f32; 4]; 30];
        let tree = KdTree::build(&dup).unwrap();
        let got: Vec<usize> = tree.knn(&[0.5; 4], 4).iter().map(|n| n.index).collect();
        assert_eq!(got, vec![0, 1, 2, 3]);
    }

    #[test]
    fn empty_and_ragged_rejected() {
        assert!(KdTree::build(&[]).is_err());
        assert!(KdTree::build(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
