//! Exact radius neighbor search and connectivity graphs.

use std::sync::Arc;

use crate::error::{GnsError, Result};

/// Points per leaf before a node is split.
pub const LEAF_CAPACITY: usize = 16;

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

/// Static k-d tree over 2-D or 3-D points.
///
/// Points are referenced by their index in the input slice; leaves own
/// contiguous ranges of a permutation of those indices.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Builds a tree over `points`, a flat `N × dim` array.
    pub fn build(points: &[f64], dim: usize) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(GnsError::Data(format!(
                "k-d tree supports 2 or 3 dimensions, got {dim}"
            )));
        }
        if points.len() % dim != 0 {
            return Err(GnsError::Dimension {
                op: "kdtree build",
                lhs: vec![points.len()],
                rhs: vec![dim],
            });
        }
        let n = points.len() / dim;
        if let Some(bad) = points.iter().position(|v| !v.is_finite()) {
            return Err(GnsError::Data(format!(
                "non-finite coordinate for particle {}",
                bad / dim
            )));
        }
        let mut tree = KdTree {
            dim,
            points: points.to_vec(),
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build_node(0, n);
        }
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

    fn coord(&self, i: usize, axis: usize) -> f64 {
        self.points[i * self.dim + axis]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_CAPACITY {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split on the axis of largest extent, at the median
        let axis = (0..self.dim)
            .map(|a| {
                let (lo, hi) = self.order[start..end]
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                        let c = self.coord(i, a);
                        (lo.min(c), hi.max(c))
                    });
                (a, hi - lo)
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        let mid = start + (end - start) / 2;
        let (dim, points) = (self.dim, &self.points);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a * dim + axis].total_cmp(&points[b * dim + axis])
        });
        let value = self.coord(self.order[mid], axis);
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Indices of all points within distance `radius` (inclusive) of `query`,
    /// in ascending index order.
    pub fn within_radius(&self, query: &[f64], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.collect(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn collect(&self, node: usize, q: &[f64], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if squared_distance(&self.points[i * self.dim..(i + 1) * self.dim], q) <= r2 {
                        out.push(i);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                // Left holds coordinates <= value, right >= value.
                let diff = q[axis] - value;
                let near_prunable = diff * diff > r2;
                if diff <= 0.0 {
                    self.collect(left, q, r2, out);
                    if !near_prunable {
                        self.collect(right, q, r2, out);
                    }
                } else {
                    self.collect(right, q, r2, out);
                    if !near_prunable {
                        self.collect(left, q, r2, out);
                    }
                }
            }
        }
    }
}

/// Squared Euclidean distance, summed in axis order. Both the tree and any
/// brute-force check must use this exact expression for boundary ties to agree.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Directed edges as parallel sender/receiver lists, sorted by
/// `(receiver, sender)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeList {
    senders: Arc<[usize]>,
    receivers: Arc<[usize]>,
}

impl EdgeList {
    pub fn new(senders: Vec<usize>, receivers: Vec<usize>) -> Result<Self> {
        if senders.len() != receivers.len() {
            return Err(GnsError::Dimension {
                op: "edge list",
                lhs: vec![senders.len()],
                rhs: vec![receivers.len()],
            });
        }
        Ok(EdgeList {
            senders: senders.into(),
            receivers: receivers.into(),
        })
    }

    pub fn empty() -> Self {
        EdgeList::default()
    }

    pub fn len(&self) -> usize {
        self.senders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senders.is_empty()
    }

    pub fn senders(&self) -> &Arc<[usize]> {
        &self.senders
    }

    pub fn receivers(&self) -> &Arc<[usize]> {
        &self.receivers
    }

    /// `(sender, receiver)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.senders.iter().copied().zip(self.receivers.iter().copied())
    }

    /// Disjoint union: `other`'s node ids are shifted by `offset`.
    pub fn append(&self, other: &EdgeList, offset: usize) -> EdgeList {
        let senders: Vec<usize> = self
            .senders
            .iter()
            .copied()
            .chain(other.senders.iter().map(|s| s + offset))
            .collect();
        let receivers: Vec<usize> = self
            .receivers
            .iter()
            .copied()
            .chain(other.receivers.iter().map(|r| r + offset))
            .collect();
        EdgeList {
            senders: senders.into(),
            receivers: receivers.into(),
        }
    }
}

/// All pairs within `radius` (inclusive), both directions, optionally with
/// self-edges. `points` must be the array the tree was built from.
pub fn radius_edges(tree: &KdTree, points: &[f64], radius: f64, include_self: bool) -> Result<EdgeList> {
    if !(radius > 0.0) {
        return Err(GnsError::Config(format!("connectivity radius must be positive, got {radius}")));
    }
    let dim = tree.dim();
    if points.len() != tree.len() * dim {
        return Err(GnsError::Dimension {
            op: "radius_edges",
            lhs: vec![points.len()],
            rhs: vec![tree.len(), dim],
        });
    }
    let mut senders = Vec::new();
    let mut receivers = Vec::new();
    for receiver in 0..tree.len() {
        let query = &points[receiver * dim..(receiver + 1) * dim];
        for sender in tree.within_radius(query, radius) {
            if sender != receiver || include_self {
                senders.push(sender);
                receivers.push(receiver);
            }
        }
    }
    EdgeList::new(senders, receivers)
}

/// Builds a tree over `points` and returns its radius graph.
pub fn connectivity(points: &[f64], dim: usize, radius: f64, include_self: bool) -> Result<EdgeList> {
    let tree = KdTree::build(points, dim)?;
    radius_edges(&tree, points, radius, include_self)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn brute_force(points: &[f64], dim: usize, r: f64, include_self: bool) -> BTreeSet<(usize, usize)> {
        let n = points.len() / dim;
        let mut set = BTreeSet::new();
        for i in 0..n {
            for j in 0..n {
                let d2 = squared_distance(&points[i * dim..(i + 1) * dim], &points[j * dim..(j + 1) * dim]);
                if d2 <= r * r && (i != j || include_self) {
                    set.insert((j, i));
                }
            }
        }
        set
    }

    #[test]
    fn empty_and_single() {
        let tree = KdTree::build(&[], 2).unwrap();
        assert!(tree.within_radius(&[0.0, 0.0], 1.0).is_empty());
        let tree = KdTree::build(&[0.5, 0.5], 2).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.within_radius(&[0.5, 0.5], 0.1), vec![0]);
    }

    #[test]
    fn rejects_bad_input() {
        let err = KdTree::build(&[0.0, 1.0, f64::NAN, 2.0], 2).unwrap_err();
        assert!(err.to_string().contains("particle 1"), "{err}");
        assert!(KdTree::build(&[0.0; 4], 4).is_err());
    }

    #[test]
    fn matches_brute_force_500_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let tree = KdTree::build(&pts, 2).unwrap();
        for _ in 0..50 {
            let q = [rng.random::<f64>(), rng.random::<f64>()];
            let r = rng.random_range(0.01..0.2);
            let expected: Vec<usize> = (0..500)
                .filter(|&i| squared_distance(&pts[2 * i..2 * i + 2], &q) <= r * r)
                .collect();
            assert_eq!(tree.within_radius(&q, r), expected);
        }
    }

    #[test]
    fn two_particle_cases() {
        let e = connectivity(&[0.0, 0.0, 0.01, 0.0], 2, 0.015, false).unwrap();
        assert_eq!(e.pairs().collect::<Vec<_>>(), vec![(1, 0), (0, 1)]);
        // exactly at the radius: inclusive
        let e = connectivity(&[0.0, 0.0, 0.5, 0.0], 2, 0.5, false).unwrap();
        assert_eq!(e.len(), 2);
        let e = connectivity(&[0.0, 0.0, 0.5, 0.0], 2, 0.5, true).unwrap();
        assert_eq!(e.len(), 4);
    }

    #[test]
    fn isolated_particle_has_no_edges() {
        let pts = [0.0, 0.0, 0.01, 0.0, 0.9, 0.9];
        let e = connectivity(&pts, 2, 0.015, false).unwrap();
        assert!(e.pairs().all(|(s, r)| s != 2 && r != 2));
    }

    #[test]
    fn rejects_non_positive_radius() {
        assert!(connectivity(&[0.0, 0.0], 2, 0.0, false).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn radius_graph_equals_brute_force(
            seed in any::<u64>(),
            n in 0usize..120,
            dim in 2usize..=3,
            r in 0.02f64..0.4,
            include_self in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
            let e = connectivity(&pts, dim, r, include_self).unwrap();
            let got: Vec<(usize, usize)> = e.pairs().collect();
            let set: BTreeSet<_> = got.iter().copied().collect();
            prop_assert_eq!(set.len(), got.len(), "duplicates");
            prop_assert_eq!(&set, &brute_force(&pts, dim, r, include_self));
            // symmetric, sorted by (receiver, sender)
            for &(s, rcv) in &got {
                prop_assert!(set.contains(&(rcv, s)));
            }
            let keys: Vec<_> = got.iter().map(|&(s, r)| (r, s)).collect();
            let mut sorted = keys.clone();
            sorted.sort_unstable();
            prop_assert_eq!(keys, sorted);
            // deterministic
            prop_assert_eq!(e, connectivity(&pts, dim, r, include_self).unwrap());
        }
    }
}
