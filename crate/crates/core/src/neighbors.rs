//! Bounded, deterministically ordered k-best lists.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A reference point and its squared distance to some query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: u32,
    pub sq_dist: f32,
}

impl Neighbor {
    /// Total order used everywhere: by squared distance, ties by smaller index.
    #[inline]
    pub fn cmp_key(&self, other: &Self) -> Ordering {
        self.sq_dist
            .total_cmp(&other.sq_dist)
            .then(self.index.cmp(&other.index))
    }
}

/// The `k` best candidates seen so far, sorted ascending by `(sq_dist, index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborList {
    k: usize,
    entries: Vec<Neighbor>,
}

impl NeighborList {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            entries: Vec::with_capacity(k),
        }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn is_full(&self) -> bool {
        self.entries.len() == self.k
    }

    pub fn entries(&self) -> &[Neighbor] {
        &self.entries
    }

    /// Squared distance of the current k-th candidate, or infinity while fewer
    /// than `k` candidates have been seen.
    #[inline]
    pub fn kth_sq_dist(&self) -> f32 {
        if self.is_full() {
            self.entries[self.k - 1].sq_dist
        } else {
            f32::INFINITY
        }
    }

    /// Offers a candidate. Returns whether the list changed.
    ///
    /// The caller must not offer the same index twice.
    #[inline]
    pub fn insert(&mut self, index: u32, sq_dist: f32) -> bool {
        if self.k == 0 {
            return false;
        }
        let cand = Neighbor { index, sq_dist };
        if self.is_full() && cand.cmp_key(&self.entries[self.k - 1]) != Ordering::Less {
            return false;
        }
        let pos = self
            .entries
            .partition_point(|e| e.cmp_key(&cand) == Ordering::Less);
        if self.is_full() {
            self.entries.pop();
        }
        self.entries.insert(pos, cand);
        true
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.index)
    }
}

/// Query parameters shared by all engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    pub k: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self { k: 10 }
    }
}

impl SearchParams {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    /// Checks `1 <= k <= n` for a reference set of `n` points.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k > n {
            return Err(Error::InvalidArgument(format!(
                "k must satisfy 1 <= k <= n, got k={} with n={n}",
                self.k
            )));
        }
        Ok(())
    }
}
