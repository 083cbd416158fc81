//! Exact brute-force k-NN, on the host and through the device pipeline.

use std::sync::Arc;

use rayon::prelude::*;

use crate::device::{Assignment, Device, MatrixSource};
use crate::error::{Error, Result};
use crate::neighbors::{NeighborList, SearchParams};
use crate::points::{sq_euclidean, PointMatrix};
use crate::scheduler::ChunkPlan;

fn check_inputs(refs: &PointMatrix, queries: &PointMatrix, params: SearchParams) -> Result<()> {
    if refs.d() != queries.d() {
        return Err(Error::DimensionMismatch {
            expected: refs.d(),
            actual: queries.d(),
        });
    }
    params.validate(refs.n())
}

fn scan_all(refs: &PointMatrix, q: &[f32], k: usize) -> (NeighborList, u64) {
    let mut list = NeighborList::new(k);
    let mut evals = 0;
    for (i, p) in refs.rows().enumerate() {
        list.insert(i as u32, sq_euclidean(q, p));
        evals += 1;
    }
    (list, evals)
}

/// Every query against every reference, one task per query on `workers` threads.
pub fn brute_knn(
    refs: &PointMatrix,
    queries: &PointMatrix,
    params: SearchParams,
    workers: usize,
) -> Result<Vec<NeighborList>> {
    Ok(brute_knn_counted(refs, queries, params, workers)?.0)
}

/// [`brute_knn`] plus the number of distance evaluations performed.
pub fn brute_knn_counted(
    refs: &PointMatrix,
    queries: &PointMatrix,
    params: SearchParams,
    workers: usize,
) -> Result<(Vec<NeighborList>, u64)> {
    check_inputs(refs, queries, params)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let (lists, counts): (Vec<NeighborList>, Vec<u64>) = pool.install(|| {
        (0..queries.n())
            .into_par_iter()
            .map(|i| scan_all(refs, queries.row(i), params.k))
            .unzip()
    });
    Ok((lists, counts.iter().sum()))
}

/// Brute force streamed through `device`: every query is assigned the whole of
/// every chunk of `plan`.
pub fn brute_knn_chunked(
    refs: &PointMatrix,
    queries: &PointMatrix,
    params: SearchParams,
    device: &mut Device,
    plan: &ChunkPlan,
) -> Result<Vec<NeighborList>> {
    check_inputs(refs, queries, params)?;
    if plan.n() != refs.n() {
        return Err(Error::InvalidArgument(format!(
            "plan covers {} rows, reference set has {}",
            plan.n(),
            refs.n()
        )));
    }
    if queries.n() == 0 {
        return Ok(Vec::new());
    }
    let source = MatrixSource::new(refs);
    let work: Vec<Vec<Assignment>> = (0..plan.len())
        .map(|j| {
            let (lo, hi) = plan.bounds(j);
            (0..queries.n() as u32)
                .map(|query| Assignment { query, lo, hi })
                .collect()
        })
        .collect();
    let mut lists = vec![NeighborList::new(params.k); queries.n()];
    let queries = Arc::new(queries.clone());
    device.run_chunk_pipeline(&source, plan, &queries, work, &mut lists)?;
    Ok(lists)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_examples() {
        let refs = PointMatrix::from_rows(&[[0.0f32, 0.0], [1.0, 0.0], [5.0, 5.0]]).unwrap();
        let q = PointMatrix::from_rows(&[[0.9f32, 0.0]]).unwrap();
        let r = brute_knn(&refs, &q, SearchParams::new(1), 1).unwrap();
        assert_eq!(r[0].entries()[0].index, 1);
        assert_eq!(
            r[0].entries()[0].sq_dist,
            sq_euclidean(&[0.9, 0.0], &[1.0, 0.0])
        );
        assert!((r[0].entries()[0].sq_dist - 0.01).abs() < 1e-6);

        let q = PointMatrix::from_rows(&[[5.0f32, 5.0]]).unwrap();
        let r = brute_knn(&refs, &q, SearchParams::new(1), 2).unwrap();
        assert_eq!(
            (r[0].entries()[0].index, r[0].entries()[0].sq_dist),
            (2, 0.0)
        );
    }

    #[test]
    fn argument_errors() {
        let refs = PointMatrix::from_rows(&[[0.0f32, 0.0]]).unwrap();
        let q3 = PointMatrix::from_rows(&[[0.0f32, 0.0, 0.0]]).unwrap();
        let q2 = PointMatrix::from_rows(&[[0.0f32, 0.0]]).unwrap();
        assert!(matches!(
            brute_knn(&refs, &q3, SearchParams::new(1), 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            brute_knn(&refs, &q2, SearchParams::new(2), 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn counts_every_pair() {
        let refs = PointMatrix::new(2, (0..60).map(|v| v as f32).collect()).unwrap();
        let q = PointMatrix::new(2, (0..14).map(|v| v as f32 * 0.3).collect()).unwrap();
        let (_, evals) = brute_knn_counted(&refs, &q, SearchParams::new(3), 3).unwrap();
        assert_eq!(evals, 30 * 7);
    }
}
