use super::*;
use crate::brute::brute_knn;
use crate::device::{point_bytes, query_bytes, Device, DeviceSpec};
use crate::io::synth::uniform;
use crate::kdtree::KdTree;
use crate::neighbors::{NeighborList, SearchParams};
use crate::points::{sq_euclidean, PointMatrix};
use crate::scheduler::ChunkPlan;
use std::sync::Arc;

fn device_for(n: usize, d: usize, chunks: usize, m: usize, k: usize) -> (Device, ChunkPlan) {
    let chunk = n.div_ceil(chunks) as u64 * point_bytes(d);
    let qb = m.max(1) as u64 * query_bytes(d, k);
    let dev = Device::init(
        DeviceSpec {
            worker_lanes: 2,
            ..DeviceSpec::with_capacity(2 * chunk + qb)
        },
        chunk,
        qb,
    )
    .unwrap();
    (dev, ChunkPlan::new(n, chunks).unwrap())
}

#[test]
fn defaults_follow_height() {
    let c = BufferConfig::for_height(9);
    assert_eq!(c.buffer_capacity, 1 << 15);
    assert_eq!(c.fetch_size, 327_680);
    assert_eq!(c.half_full_threshold, 1 << 14);
    assert_eq!(BufferConfig::for_height(30).buffer_capacity, 1);
    let one = BufferConfig::with_capacity(1, 10);
    assert_eq!((one.fetch_size, one.half_full_threshold), (10, 1));
    assert!(one.validate().is_ok());
    assert!(BufferConfig::with_capacity(0, 10).validate().is_err());
}

#[test]
fn done_code() {
    assert_eq!(LeafStep::Done.code(), -1);
    assert_eq!(LeafStep::Leaf(3).code(), 3);
}

#[test]
fn buffer_fill_and_drain() {
    let mut b = QueryBuffers::new(4, 3, 2);
    b.insert(1, 7);
    assert_eq!(b.fill(1), 1);
    assert!(!b.any_half_full());
    b.insert(1, 8);
    assert!(b.any_half_full());
    b.insert(1, 9);
    assert!(!b.try_insert(1, 10));
    assert!(b.try_insert(2, 10));
    assert_eq!(b.total(), 4);
    assert_eq!(b.drain_all(), vec![(1, 7), (1, 8), (1, 9), (2, 10)]);
    assert!(b.is_empty() && !b.any_half_full());
}

#[test]
#[should_panic(expected = "buffer overflow")]
fn overflow_is_fatal() {
    let mut b = QueryBuffers::new(1, 2, 1);
    b.insert(0, 1);
    b.insert(0, 2);
    b.insert(0, 3);
}

#[test]
fn fetch_prefers_reinsert() {
    let mut q = QueryQueues::new(5);
    q.reinsert.extend([9, 8]);
    assert_eq!(q.fetch(3), vec![9, 8, 0]);
    assert_eq!(q.fetch(10), vec![1, 2, 3, 4]);
    assert!(q.is_empty());
}

fn grid_1d(n: usize) -> PointMatrix {
    PointMatrix::new(1, (0..n).map(|i| i as f32).collect()).unwrap()
}

#[test]
fn first_call_descends() {
    // 16 points 0..16, h=2: leaves {0..4}, {4..8}, {8..12}, {12..16}
    let tree = BufferKdTree::build(&grid_1d(16), 2).unwrap();
    let queries = PointMatrix::new(1, vec![13.2]).unwrap();
    let mut states = vec![QueryState::default()];
    let lists = vec![NeighborList::new(1)];
    let r = find_leaf_batch(&tree, &mut states, &lists, &queries, &[0]);
    assert_eq!(r, vec![LeafStep::Leaf(3)]);
    assert_eq!(states[0].stack, vec![0, 2]);
}

#[test]
fn second_call_done_when_pruned() {
    let tree = BufferKdTree::build(&grid_1d(16), 2).unwrap();
    let queries = PointMatrix::new(1, vec![13.2]).unwrap();
    let mut states = vec![QueryState::default()];
    let mut lists = vec![NeighborList::new(1)];
    find_leaf_batch(&tree, &mut states, &lists, &queries, &[0]);
    lists[0].insert(13, 0.04);
    let r = find_leaf_batch(&tree, &mut states, &lists, &queries, &[0]);
    assert_eq!(r, vec![LeafStep::Done]);
    assert!(states[0].done && states[0].stack.is_empty());
}

#[test]
fn whole_leaf_in_one_chunk() {
    let n = 64;
    let pts = uniform(n, 2, 1);
    let tree = BufferKdTree::build(&pts, 2).unwrap();
    let queries = Arc::new(uniform(1, 2, 2));
    let (mut dev, plan) = device_for(n, 2, 2, 1, 3);
    let mut buffers = QueryBuffers::new(4, 4, 2);
    let mut states = vec![QueryState::default()];
    let mut lists = vec![NeighborList::new(3)];
    find_leaf_batch(&tree, &mut states, &lists, &queries, &[0]);
    buffers.insert(0, 0);
    let out = process_all_buffers(
        &tree,
        &mut buffers,
        &mut states,
        &mut lists,
        &queries,
        &mut dev,
        &plan,
    )
    .unwrap();
    let (l, r) = tree.leaves().bounds(0);
    assert!(r <= plan.bounds(0).1);
    assert_eq!(dev.distance_evals(), (r - l) as u64);
    assert_eq!(out.leaf_scans, 1);
    assert_eq!(out.reinsert, vec![0]);
    assert!(buffers.is_empty());
}

#[test]
fn straddling_leaf_equals_whole_scan() {
    // 12 points, h=1: leaves [0, 6) and [6, 12); N=3 puts a boundary at 4
    let n = 12;
    let pts = uniform(n, 3, 3);
    let tree = BufferKdTree::build(&pts, 1).unwrap();
    let queries = Arc::new(uniform(1, 3, 4));
    let (mut dev, plan) = device_for(n, 3, 3, 1, 4);
    let mut buffers = QueryBuffers::new(2, 1, 1);
    let mut states = vec![QueryState::default()];
    let mut lists = vec![NeighborList::new(4)];
    buffers.insert(0, 0);
    states[0].started = true;
    process_all_buffers(
        &tree,
        &mut buffers,
        &mut states,
        &mut lists,
        &queries,
        &mut dev,
        &plan,
    )
    .unwrap();
    let mut expect = NeighborList::new(4);
    let leaves = tree.leaves();
    let (l, r) = leaves.bounds(0);
    for i in l..r {
        expect.insert(
            leaves.original_index()[i],
            sq_euclidean(queries.row(0), leaves.points().row(i)),
        );
    }
    assert_eq!(lists[0], expect);
    assert_eq!(dev.distance_evals(), 6);
    assert!(dev.hazard_violations().is_empty());
}

#[test]
#[cfg(debug_assertions)]
#[should_panic(expected = "empty buffers")]
fn processing_empty_buffers_is_a_bug() {
    let pts = uniform(8, 2, 5);
    let tree = BufferKdTree::build(&pts, 1).unwrap();
    let (mut dev, plan) = device_for(8, 2, 1, 1, 1);
    let queries = Arc::new(uniform(1, 2, 6));
    let mut buffers = QueryBuffers::new(2, 1, 1);
    let _ = process_all_buffers(
        &tree,
        &mut buffers,
        &mut [QueryState::default()],
        &mut [NeighborList::new(1)],
        &queries,
        &mut dev,
        &plan,
    );
}

#[test]
fn single_query_matches_kdtree() {
    let pts = uniform(500, 3, 7);
    let q = uniform(1, 3, 8);
    let params = SearchParams::new(5);
    let tree = BufferKdTree::build(&pts, 4).unwrap();
    let classic = KdTree::build_with_height(&pts, 4)
        .unwrap()
        .query(q.row(0), params);
    let (mut dev, plan) = device_for(500, 3, 2, 1, 5);
    let out = lazy_search(
        &tree,
        &q,
        params,
        BufferConfig::with_capacity(4, 10).recording_visits(),
        &mut dev,
        &plan,
    )
    .unwrap();
    assert_eq!(out.neighbors[0], classic.neighbors);
    assert_eq!(out.visits.unwrap()[0], classic.visited);
}

#[test]
fn exact_with_unit_buffers_and_census_holds() {
    let pts = uniform(2000, 4, 9);
    let queries = uniform(300, 4, 10);
    let params = SearchParams::new(6);
    let tree = BufferKdTree::build(&pts, 5).unwrap();
    let (mut dev, plan) = device_for(2000, 4, 3, 300, 6);
    let mut s = LazySearch::new(
        &tree,
        Arc::new(queries.clone()),
        params,
        BufferConfig::with_capacity(1, 3),
        &mut dev,
        &plan,
    )
    .unwrap();
    while !s.is_finished() {
        s.step().unwrap();
        let c = s.census();
        assert_eq!(c.accounted(), c.queries, "{c:?}");
    }
    let out = s.run().unwrap();
    assert!(out.stats.leaf_scans <= 300 * 32);
    assert_eq!(out.neighbors, brute_knn(&pts, &queries, params, 1).unwrap());
    assert!(dev.hazard_violations().is_empty());
}

#[test]
fn rejects_mismatched_inputs() {
    let pts = uniform(100, 3, 11);
    let tree = BufferKdTree::build(&pts, 2).unwrap();
    let (mut dev, plan) = device_for(100, 3, 1, 10, 2);
    let cfg = BufferConfig::with_capacity(4, 10);
    let wrong_d = uniform(5, 2, 12);
    assert!(lazy_search(&tree, &wrong_d, SearchParams::new(2), cfg, &mut dev, &plan).is_err());
    let too_many = uniform(11, 3, 13);
    assert!(lazy_search(&tree, &too_many, SearchParams::new(2), cfg, &mut dev, &plan).is_err());
    let ok = uniform(10, 3, 14);
    assert!(lazy_search(&tree, &ok, SearchParams::new(101), cfg, &mut dev, &plan).is_err());
    let other_plan = ChunkPlan::new(99, 1).unwrap();
    assert!(lazy_search(&tree, &ok, SearchParams::new(2), cfg, &mut dev, &other_plan).is_err());
}
