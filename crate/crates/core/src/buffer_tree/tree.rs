use crate::device::{next_source_id, ChunkSource};
use crate::error::{Error, Result};
use crate::kdtree::{median_split, split_side};
use crate::points::PointMatrix;

/// Complete k-d tree of height `h` stored level by level: node `j` has
/// children `2j + 1` and `2j + 2`, and splits dimension `depth(j) mod d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopTree {
    height: usize,
    d: usize,
    splits: Vec<f32>,
}

impl TopTree {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_leaves(&self) -> usize {
        1 << self.height
    }

    pub fn num_internal(&self) -> usize {
        self.splits.len()
    }

    pub fn split_values(&self) -> &[f32] {
        &self.splits
    }

    #[inline]
    pub fn depth(node: usize) -> usize {
        (usize::BITS - 1 - (node + 1).leading_zeros()) as usize
    }

    #[inline]
    pub fn split_dim(&self, node: usize) -> usize {
        Self::depth(node) % self.d
    }

    #[inline]
    pub fn is_internal(&self, node: usize) -> bool {
        node < self.splits.len()
    }

    #[inline]
    pub fn leaf_id(&self, node: usize) -> u32 {
        (node - self.splits.len()) as u32
    }

    /// `(near, far, squared hyperplane distance)` of `q` at internal `node`.
    #[inline]
    pub fn children_for(&self, node: usize, q: &[f32]) -> (usize, usize, f32) {
        let (left, plane) = split_side(q[self.split_dim(node)], self.splits[node]);
        let (l, r) = (2 * node + 1, 2 * node + 2);
        if left {
            (l, r, plane)
        } else {
            (r, l, plane)
        }
    }

    /// Leaf cell containing `q`.
    pub fn locate(&self, q: &[f32]) -> u32 {
        let mut node = 0;
        while self.is_internal(node) {
            node = self.children_for(node, q).0;
        }
        self.leaf_id(node)
    }
}

/// Reference points permuted so that every leaf occupies a contiguous row range.
#[derive(Debug, Clone)]
pub struct LeafStructure {
    source_id: u64,
    rearranged: PointMatrix,
    original_index: Vec<u32>,
    leaf_bounds: Vec<(usize, usize)>,
}

impl LeafStructure {
    pub fn points(&self) -> &PointMatrix {
        &self.rearranged
    }

    pub fn original_index(&self) -> &[u32] {
        &self.original_index
    }

    /// Half-open `[l, r)` row range of every leaf, left to right.
    pub fn leaf_bounds(&self) -> &[(usize, usize)] {
        &self.leaf_bounds
    }

    pub fn bounds(&self, leaf: u32) -> (usize, usize) {
        self.leaf_bounds[leaf as usize]
    }
}

impl ChunkSource for LeafStructure {
    fn source_id(&self) -> u64 {
        self.source_id
    }

    fn len(&self) -> usize {
        self.rearranged.n()
    }

    fn dim(&self) -> usize {
        self.rearranged.d()
    }

    fn read_chunk(
        &self,
        lo: usize,
        hi: usize,
        points: &mut Vec<f32>,
        ids: &mut Vec<u32>,
    ) -> Result<()> {
        let d = self.rearranged.d();
        points.clear();
        points.extend_from_slice(&self.rearranged.as_slice()[lo * d..hi * d]);
        ids.clear();
        ids.extend_from_slice(&self.original_index[lo..hi]);
        Ok(())
    }
}

/// Top tree plus leaf structure. Buffers and queues live in the search.
#[derive(Debug, Clone)]
pub struct BufferKdTree {
    top: TopTree,
    leaves: LeafStructure,
}

impl BufferKdTree {
    /// Builds a top tree of height `h >= 1` over `refs` using expected
    /// linear-time median selection per split. Requires `2^h <= n`.
    pub fn build(refs: &PointMatrix, h: usize) -> Result<Self> {
        if h == 0 || h >= 32 || (1usize << h) > refs.n() {
            return Err(Error::InvalidArgument(format!(
                "tree height must satisfy 1 <= h and 2^h <= n (h={h}, n={})",
                refs.n()
            )));
        }
        let internal = (1usize << h) - 1;
        let mut b = Build {
            refs,
            h,
            splits: vec![0.0; internal],
            bounds: vec![(0, 0); 1 << h],
        };
        let mut idx: Vec<u32> = (0..refs.n() as u32).collect();
        b.split(0, 0, &mut idx, 0);
        let Build { splits, bounds, .. } = b;
        Ok(Self {
            top: TopTree {
                height: h,
                d: refs.d(),
                splits,
            },
            leaves: LeafStructure {
                source_id: next_source_id(),
                rearranged: refs.gather(&idx),
                original_index: idx,
                leaf_bounds: bounds,
            },
        })
    }

    pub fn top(&self) -> &TopTree {
        &self.top
    }

    pub fn leaves(&self) -> &LeafStructure {
        &self.leaves
    }

    pub fn height(&self) -> usize {
        self.top.height
    }

    pub fn n(&self) -> usize {
        self.leaves.rearranged.n()
    }

    pub fn d(&self) -> usize {
        self.top.d
    }
}

struct Build<'a> {
    refs: &'a PointMatrix,
    h: usize,
    splits: Vec<f32>,
    bounds: Vec<(usize, usize)>,
}

impl Build<'_> {
    fn split(&mut self, node: usize, depth: usize, idx: &mut [u32], offset: usize) {
        if depth == self.h {
            let leaf = node - self.splits.len();
            self.bounds[leaf] = (offset, offset + idx.len());
            return;
        }
        let (mid, value) = median_split(self.refs, idx, depth % self.refs.d());
        self.splits[node] = value;
        let (l, r) = idx.split_at_mut(mid);
        self.split(2 * node + 1, depth + 1, l, offset);
        self.split(2 * node + 2, depth + 1, r, offset + mid);
    }
}
