#![allow(dead_code)]

use std::sync::Arc;

use bufkd::buffer_tree::{lazy_search, BufferConfig, BufferKdTree, SearchOutput};
use bufkd::device::{point_bytes, query_bytes, Device, DeviceSpec};
use bufkd::{ChunkPlan, NeighborList, PointMatrix, SearchParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Points with coordinates on a 1/8 grid so that equal distances are common.
pub fn grid_points(n: usize, d: usize, seed: u64) -> PointMatrix {
    let mut r = rng(seed);
    let data = (0..n * d).map(|_| r.gen_range(0..8) as f32 / 8.0).collect();
    PointMatrix::new(d, data).unwrap()
}

/// Every distance computed, sorted by (distance, index), first k kept.
pub fn oracle_knn(refs: &PointMatrix, queries: &PointMatrix, k: usize) -> Vec<Vec<(u32, f32)>> {
    queries
        .rows()
        .map(|q| {
            let mut all: Vec<(u32, f32)> = refs
                .rows()
                .enumerate()
                .map(|(i, p)| {
                    let mut s = 0.0f32;
                    for j in 0..q.len() {
                        let t = q[j] - p[j];
                        s += t * t;
                    }
                    (i as u32, s)
                })
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.truncate(k);
            all
        })
        .collect()
}

pub fn pairs(lists: &[NeighborList]) -> Vec<Vec<(u32, f32)>> {
    lists
        .iter()
        .map(|l| l.entries().iter().map(|e| (e.index, e.sq_dist)).collect())
        .collect()
}

pub fn spec(lanes: usize, copy_rate: Option<f64>) -> DeviceSpec {
    DeviceSpec {
        worker_lanes: lanes,
        simulated_copy_rate: copy_rate,
        ..DeviceSpec::default()
    }
}

/// A device whose chunk buffers hold exactly `ceil(n / chunks)` rows and whose
/// query block holds `m` queries, plus the matching plan.
pub fn sized_device(
    base: &DeviceSpec,
    n: usize,
    d: usize,
    chunks: usize,
    m: usize,
    k: usize,
) -> (Device, ChunkPlan) {
    let chunk = n.div_ceil(chunks) as u64 * point_bytes(d);
    let qb = m.max(1) as u64 * query_bytes(d, k);
    let spec = DeviceSpec {
        memory_capacity: 2 * chunk + qb,
        ..base.clone()
    };
    (
        Device::init(spec, chunk, qb).unwrap(),
        ChunkPlan::new(n, chunks).unwrap(),
    )
}

pub struct LazyRun {
    pub out: SearchOutput,
    pub device: Device,
    pub tree: BufferKdTree,
}

pub fn run_lazy(
    refs: &PointMatrix,
    queries: &PointMatrix,
    k: usize,
    h: usize,
    chunks: usize,
    config: BufferConfig,
    base: &DeviceSpec,
) -> LazyRun {
    let tree = BufferKdTree::build(refs, h).unwrap();
    let (mut device, plan) = sized_device(base, refs.n(), refs.d(), chunks, queries.n(), k);
    let out = lazy_search(
        &tree,
        queries,
        SearchParams::new(k),
        config,
        &mut device,
        &plan,
    )
    .unwrap();
    LazyRun { out, device, tree }
}

pub fn arc(p: PointMatrix) -> Arc<PointMatrix> {
    Arc::new(p)
}
