//! Ranking points by their mean distance to their k nearest neighbors.

use crate::error::{Error, Result};
use crate::neighbors::{NeighborList, SearchParams};
use crate::points::PointMatrix;

/// k-NN of every reference point among the others. `search` answers a
/// k-NN query set against `refs`; it is called once with `k + 1`, and each
/// point's own index is removed from its list.
pub fn all_nearest_neighbors<F>(
    refs: &PointMatrix,
    k: usize,
    search: F,
) -> Result<Vec<NeighborList>>
where
    F: FnOnce(&PointMatrix, SearchParams) -> Result<Vec<NeighborList>>,
{
    if k == 0 || k + 1 > refs.n() {
        return Err(Error::InvalidArgument(format!(
            "all-nearest-neighbors needs 1 <= k < n, got k={k}, n={}",
            refs.n()
        )));
    }
    let lists = search(refs, SearchParams::new(k + 1))?;
    Ok(lists
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let mut out = NeighborList::new(k);
            for nb in l.entries().iter().filter(|nb| nb.index as usize != i) {
                out.insert(nb.index, nb.sq_dist);
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierRanking {
    /// Mean neighbor distance per point.
    pub scores: Vec<f64>,
    /// Point indices by descending score, ties by descending index.
    pub ranking: Vec<u32>,
}

impl OutlierRanking {
    pub fn top(&self, count: usize) -> &[u32] {
        &self.ranking[..count.min(self.ranking.len())]
    }
}

pub fn outlier_scores(lists: &[NeighborList]) -> OutlierRanking {
    let scores: Vec<f64> = lists
        .iter()
        .map(|l| {
            let sum: f64 = l
                .entries()
                .iter()
                .map(|nb| (nb.sq_dist as f64).sqrt())
                .sum();
            sum / l.len().max(1) as f64
        })
        .collect();
    let mut ranking: Vec<u32> = (0..lists.len() as u32).collect();
    ranking.sort_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(b.cmp(&a))
    });
    OutlierRanking { scores, ranking }
}
