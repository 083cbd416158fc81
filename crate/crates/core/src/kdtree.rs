//! Classic k-d tree with recursive two-phase search.
//!
//! Splits cycle through the dimensions by depth. A subset of `s` points is
//! ordered by `(coordinate, original index)`; the first `s / 2` go left, the
//! rest go right, and the split value is the coordinate of the first right
//! point. Queries descend left iff `q[dim] < split`. On the way back up a far
//! subtree is skipped only when its hyperplane is strictly farther than the
//! current k-th candidate.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::neighbors::{NeighborList, SearchParams};
use crate::points::{sq_euclidean, PointMatrix};

pub const DEFAULT_LEAF_SIZE: usize = 32;

/// Partitions `idx` around its median in dimension `dim` and returns the split
/// position (`idx.len() / 2`) and the split value. Expected linear time.
pub(crate) fn median_split(points: &PointMatrix, idx: &mut [u32], dim: usize) -> (usize, f32) {
    let mid = idx.len() / 2;
    let key = |i: &u32| (points.row(*i as usize)[dim], *i);
    idx.select_nth_unstable_by(mid, |a, b| {
        let (ca, ia) = key(a);
        let (cb, ib) = key(b);
        ca.total_cmp(&cb).then(ia.cmp(&ib))
    });
    (mid, points.row(idx[mid] as usize)[dim])
}

/// Which side of a split `q` belongs to, and the squared distance to the
/// hyperplane.
#[inline]
pub(crate) fn split_side(q: f32, split: f32) -> (bool, f32) {
    let diff = q - split;
    (q < split, diff * diff)
}

/// Far subtrees are visited unless their hyperplane is strictly beyond the
/// k-th candidate (ties are visited).
#[inline]
pub(crate) fn must_visit(plane_sq_dist: f32, kth: f32) -> bool {
    plane_sq_dist.partial_cmp(&kth) != Some(Ordering::Greater)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Internal {
        split_dim: usize,
        split_value: f32,
        left: usize,
        right: usize,
    },
    Leaf {
        id: usize,
        start: usize,
        end: usize,
    },
}

/// When to stop splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Stop once a subset has at most this many points.
    LeafSize(usize),
    /// Split every subset down to exactly this depth.
    Height(usize),
}

#[derive(Debug, Clone)]
pub struct KdTree {
    nodes: Vec<Node>,
    root: usize,
    points: PointMatrix,
    ids: Vec<u32>,
    leaves: Vec<(usize, usize)>,
    stop: StopRule,
}

/// Result of a single-query search.
#[derive(Debug, Clone, PartialEq)]
pub struct KdQuery {
    pub neighbors: NeighborList,
    /// Leaf ids in the order their points were scanned.
    pub visited: Vec<u32>,
}

impl KdTree {
    /// Builds a tree whose leaves hold at most `leaf_size` points.
    pub fn build(refs: &PointMatrix, leaf_size: usize) -> Result<Self> {
        if leaf_size == 0 {
            return Err(Error::InvalidArgument("leaf_size must be >= 1".into()));
        }
        Ok(Self::build_with(refs, StopRule::LeafSize(leaf_size)))
    }

    /// Builds a complete tree of height `h` (2^h leaves), the same shape as the
    /// top tree of a buffer k-d tree.
    pub fn build_with_height(refs: &PointMatrix, h: usize) -> Result<Self> {
        if h >= usize::BITS as usize || (1usize << h) > refs.n() {
            return Err(Error::InvalidArgument(format!(
                "height {h} needs 2^h <= n = {}",
                refs.n()
            )));
        }
        Ok(Self::build_with(refs, StopRule::Height(h)))
    }

    fn build_with(refs: &PointMatrix, stop: StopRule) -> Self {
        let mut idx: Vec<u32> = (0..refs.n() as u32).collect();
        let mut b = Builder {
            refs,
            stop,
            nodes: Vec::new(),
            leaves: Vec::new(),
        };
        let root = b.build(&mut idx, 0, 0);
        let (nodes, leaves) = (b.nodes, b.leaves);
        Self {
            nodes,
            root,
            points: refs.gather(&idx),
            ids: idx,
            leaves,
            stop,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Reference points in leaf order.
    pub fn points(&self) -> &PointMatrix {
        &self.points
    }

    /// Original id of each row of [`KdTree::points`].
    pub fn original_ids(&self) -> &[u32] {
        &self.ids
    }

    /// `[start, end)` row range of every leaf, in left-to-right order.
    pub fn leaf_ranges(&self) -> &[(usize, usize)] {
        &self.leaves
    }

    pub fn stop_rule(&self) -> StopRule {
        self.stop
    }

    pub fn d(&self) -> usize {
        self.points.d()
    }

    pub fn query(&self, q: &[f32], params: SearchParams) -> KdQuery {
        self.query_impl(q, params, true)
    }

    /// Same traversal with pruning disabled; every leaf is scanned.
    pub fn query_unpruned(&self, q: &[f32], params: SearchParams) -> KdQuery {
        self.query_impl(q, params, false)
    }

    fn query_impl(&self, q: &[f32], params: SearchParams, prune: bool) -> KdQuery {
        assert_eq!(q.len(), self.d(), "query dimension mismatch");
        let mut s = Search {
            tree: self,
            q,
            prune,
            out: KdQuery {
                neighbors: NeighborList::new(params.k),
                visited: Vec::new(),
            },
        };
        s.visit(self.root);
        s.out
    }

    /// One query per task, on `threads` worker threads.
    pub fn query_parallel(
        &self,
        queries: &PointMatrix,
        params: SearchParams,
        threads: usize,
    ) -> Result<Vec<NeighborList>> {
        if queries.d() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                actual: queries.d(),
            });
        }
        params.validate(self.points.n())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(pool.install(|| {
            (0..queries.n())
                .into_par_iter()
                .map(|i| self.query(queries.row(i), params).neighbors)
                .collect()
        }))
    }
}

struct Builder<'a> {
    refs: &'a PointMatrix,
    stop: StopRule,
    nodes: Vec<Node>,
    leaves: Vec<(usize, usize)>,
}

impl Builder<'_> {
    /// `idx` is the slice of the global permutation starting at row `offset`.
    fn build(&mut self, idx: &mut [u32], offset: usize, depth: usize) -> usize {
        let is_leaf = match self.stop {
            StopRule::LeafSize(s) => idx.len() <= s,
            StopRule::Height(h) => depth == h,
        };
        if is_leaf {
            let id = self.leaves.len();
            self.leaves.push((offset, offset + idx.len()));
            self.nodes.push(Node::Leaf {
                id,
                start: offset,
                end: offset + idx.len(),
            });
            return self.nodes.len() - 1;
        }
        let split_dim = depth % self.refs.d();
        let (mid, split_value) = median_split(self.refs, idx, split_dim);
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf {
            id: usize::MAX,
            start: 0,
            end: 0,
        });
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(l, offset, depth + 1);
        let right = self.build(r, offset + mid, depth + 1);
        self.nodes[slot] = Node::Internal {
            split_dim,
            split_value,
            left,
            right,
        };
        slot
    }
}

struct Search<'a> {
    tree: &'a KdTree,
    q: &'a [f32],
    prune: bool,
    out: KdQuery,
}

impl Search<'_> {
    fn visit(&mut self, node: usize) {
        match self.tree.nodes[node] {
            Node::Leaf { id, start, end } => {
                self.out.visited.push(id as u32);
                for pos in start..end {
                    let d = sq_euclidean(self.q, self.tree.points.row(pos));
                    self.out.neighbors.insert(self.tree.ids[pos], d);
                }
            }
            Node::Internal {
                split_dim,
                split_value,
                left,
                right,
            } => {
                let (go_left, plane) = split_side(self.q[split_dim], split_value);
                let (near, far) = if go_left {
                    (left, right)
                } else {
                    (right, left)
                };
                self.visit(near);
                if !self.prune || must_visit(plane, self.out.neighbors.kth_sq_dist()) {
                    self.visit(far);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(vals: &[f32]) -> PointMatrix {
        PointMatrix::new(1, vals.to_vec()).unwrap()
    }

    fn leaf_sets(t: &KdTree) -> Vec<Vec<f32>> {
        t.leaf_ranges()
            .iter()
            .map(|&(s, e)| {
                let mut v: Vec<f32> = (s..e).map(|i| t.points().row(i)[0]).collect();
                v.sort_by(f32::total_cmp);
                v
            })
            .collect()
    }

    #[test]
    fn three_points_split_rule() {
        let t = KdTree::build(&line(&[3.0, 1.0, 2.0]), 1).unwrap();
        match t.nodes()[t.root()] {
            Node::Internal {
                split_dim,
                split_value,
                ..
            } => {
                assert_eq!(split_dim, 0);
                assert_eq!(split_value, 2.0);
            }
            _ => panic!("root should be internal"),
        }
        assert_eq!(leaf_sets(&t), vec![vec![1.0], vec![2.0], vec![3.0]]);
    }

    #[test]
    fn small_set_is_a_single_leaf() {
        let t = KdTree::build(&line(&[3.0, 1.0, 2.0]), 3).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.leaf_ranges(), &[(0, 3)]);
    }

    #[test]
    fn collinear_points_structure() {
        // 8 points on the diagonal; every split must alternate dims and halve.
        let rows: Vec<[f32; 2]> = (0..8).map(|i| [i as f32, i as f32]).collect();
        let t = KdTree::build(&PointMatrix::from_rows(&rows).unwrap(), 2).unwrap();
        let mut internal = vec![];
        fn walk(t: &KdTree, n: usize, depth: usize, out: &mut Vec<(usize, usize, f32)>) {
            if let Node::Internal {
                split_dim,
                split_value,
                left,
                right,
            } = t.nodes()[n]
            {
                out.push((depth, split_dim, split_value));
                walk(t, left, depth + 1, out);
                walk(t, right, depth + 1, out);
            }
        }
        walk(&t, t.root(), 0, &mut internal);
        assert_eq!(
            internal,
            vec![(0, 0, 4.0), (1, 1, 2.0), (1, 1, 6.0)],
            "expected depth-2 tree"
        );
        assert_eq!(t.leaf_ranges(), &[(0, 2), (2, 4), (4, 6), (6, 8)]);
        let sets = leaf_sets(&t);
        assert_eq!(sets[0], vec![0.0, 1.0]);
        assert_eq!(sets[3], vec![6.0, 7.0]);
    }

    #[test]
    fn duplicates_satisfy_split_predicates() {
        let vals = [5.0, 5.0, 5.0, 1.0, 5.0, 9.0, 5.0, 5.0];
        let t = KdTree::build(&line(&vals), 1).unwrap();
        fn check(t: &KdTree, n: usize) -> (f32, f32) {
            match t.nodes()[n] {
                Node::Leaf { start, end, .. } => {
                    let v: Vec<f32> = (start..end).map(|i| t.points().row(i)[0]).collect();
                    (
                        v.iter().cloned().fold(f32::INFINITY, f32::min),
                        v.iter().cloned().fold(f32::NEG_INFINITY, f32::max),
                    )
                }
                Node::Internal {
                    split_value,
                    left,
                    right,
                    ..
                } => {
                    let (lmin, lmax) = check(t, left);
                    let (rmin, rmax) = check(t, right);
                    assert!(lmax <= split_value && rmin >= split_value);
                    (lmin.min(rmin), lmax.max(rmax))
                }
            }
        }
        check(&t, t.root());
    }

    #[test]
    fn full_pruning_visits_one_leaf() {
        // four tight clusters of four points, one cluster per leaf
        let mut rows = vec![];
        for (cx, cy) in [(0.0, 0.0), (100.0, 0.0), (0.0, 100.0), (100.0, 100.0)] {
            for (dx, dy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                rows.push([cx + dx, cy + dy]);
            }
        }
        let t = KdTree::build(&PointMatrix::from_rows(&rows).unwrap(), 4).unwrap();
        assert_eq!(t.leaf_ranges().len(), 4);
        let r = t.query(&[0.9, -0.8], SearchParams::new(1));
        assert_eq!(r.visited.len(), 1);
        assert_eq!(r.neighbors.entries()[0].index, 1);
        assert_eq!(
            t.query_unpruned(&[0.9, -0.8], SearchParams::new(1))
                .visited
                .len(),
            4
        );
    }

    #[test]
    fn k_equal_n_visits_every_leaf() {
        let rows: Vec<[f32; 3]> = (0..40)
            .map(|i| [i as f32, (i * 7 % 13) as f32, (i * 3 % 5) as f32])
            .collect();
        let refs = PointMatrix::from_rows(&rows).unwrap();
        let t = KdTree::build(&refs, 4).unwrap();
        let r = t.query(&[3.0, 3.0, 3.0], SearchParams::new(40));
        let mut v = r.visited.clone();
        v.sort();
        assert_eq!(v, (0..t.leaf_ranges().len() as u32).collect::<Vec<_>>());
        assert_eq!(r.neighbors.len(), 40);
    }

    #[test]
    fn height_rule_gives_balanced_leaves() {
        let refs = line(&(0..37).map(|i| ((i * 17) % 37) as f32).collect::<Vec<_>>());
        let t = KdTree::build_with_height(&refs, 3).unwrap();
        let sizes: Vec<usize> = t.leaf_ranges().iter().map(|(s, e)| e - s).collect();
        assert_eq!(sizes.len(), 8);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(KdTree::build_with_height(&refs, 6).is_err());
    }
}
