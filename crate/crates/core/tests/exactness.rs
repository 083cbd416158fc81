mod common;

use bufkd::buffer_tree::{BufferConfig, BufferKdTree};
use bufkd::io::synth::uniform;
use bufkd::kdtree::{KdTree, Node};
use bufkd::{brute_knn, brute_knn_chunked, brute_knn_counted, Error, PointMatrix, SearchParams};
use common::*;
use proptest::prelude::*;

#[test]
fn brute_small_examples() {
    let refs = PointMatrix::new(2, vec![0.0, 0.0, 1.0, 0.0, 5.0, 5.0]).unwrap();
    let q = PointMatrix::new(2, vec![0.9, 0.0]).unwrap();
    let r = brute_knn(&refs, &q, SearchParams::new(1), 1).unwrap();
    assert_eq!(r[0].entries()[0].index, 1);
    assert!((r[0].entries()[0].sq_dist - 0.01).abs() < 1e-6);
    let r = brute_knn(&refs, &refs, SearchParams::new(1), 2).unwrap();
    for (j, l) in r.iter().enumerate() {
        assert_eq!(
            (l.entries()[0].index as usize, l.entries()[0].sq_dist),
            (j, 0.0)
        );
    }
    assert!(matches!(
        brute_knn(&refs, &q, SearchParams::new(4), 1),
        Err(Error::InvalidArgument(_))
    ));
    let wrong = PointMatrix::new(3, vec![0.0; 3]).unwrap();
    assert!(brute_knn(&refs, &wrong, SearchParams::new(1), 1).is_err());
}

#[test]
fn brute_matches_sort_oracle() {
    let refs = uniform(200, 5, 1);
    let q = uniform(50, 5, 2);
    let (r, evals) = brute_knn_counted(&refs, &q, SearchParams::new(10), 3).unwrap();
    assert_eq!(pairs(&r), oracle_knn(&refs, &q, 10));
    assert_eq!(evals, 200 * 50);
    for w in [1, 2, 8] {
        assert_eq!(brute_knn(&refs, &q, SearchParams::new(10), w).unwrap(), r);
    }
}

#[test]
fn chunked_brute_equals_host_brute() {
    let refs = uniform(1000, 10, 3);
    let q = uniform(100, 10, 4);
    let p = SearchParams::new(10);
    let expect = brute_knn(&refs, &q, p, 1).unwrap();
    for chunks in [1, 4] {
        let (mut dev, plan) = sized_device(&spec(2, None), 1000, 10, chunks, 100, 10);
        assert_eq!(
            brute_knn_chunked(&refs, &q, p, &mut dev, &plan).unwrap(),
            expect
        );
        assert_eq!(dev.distance_evals(), 1000 * 100);
        assert!(dev.hazard_violations().is_empty());
    }
    let (mut dev, plan) = sized_device(&spec(1, None), 1000, 10, 2, 1, 10);
    let empty = PointMatrix::empty(10);
    assert!(brute_knn_chunked(&refs, &empty, p, &mut dev, &plan)
        .unwrap()
        .is_empty());
}

#[test]
fn kdtree_matches_brute() {
    let refs = uniform(500, 3, 5);
    let q = uniform(100, 3, 6);
    let p = SearchParams::new(10);
    let tree = KdTree::build(&refs, 8).unwrap();
    let expect = brute_knn(&refs, &q, p, 1).unwrap();
    assert_eq!(tree.query_parallel(&q, p, 1).unwrap(), expect);
    assert_eq!(tree.query_parallel(&q, p, 8).unwrap(), expect);
    for i in 0..q.n() {
        let pruned = tree.query(q.row(i), p);
        let full = tree.query_unpruned(q.row(i), p);
        assert_eq!(pruned.neighbors, full.neighbors);
        assert!(pruned.visited.iter().all(|l| full.visited.contains(l)));
        assert_eq!(pruned.visited, tree.query(q.row(i), p).visited);
    }
}

#[test]
fn kdtree_structure_invariants() {
    let refs = grid_points(3000, 4, 7);
    let tree = KdTree::build(&refs, 16).unwrap();
    let pts = tree.points();
    // walk the tree checking dims by depth and split predicates
    fn walk(
        tree: &KdTree,
        pts: &PointMatrix,
        node: usize,
        depth: usize,
        d: usize,
        out: &mut Vec<(usize, usize)>,
    ) -> (usize, usize) {
        match tree.nodes()[node] {
            Node::Leaf { start, end, .. } => {
                out.push((start, end));
                (start, end)
            }
            Node::Internal {
                split_dim,
                split_value,
                left,
                right,
            } => {
                assert_eq!(split_dim, depth % d);
                let (ls, le) = walk(tree, pts, left, depth + 1, d, out);
                let (rs, re) = walk(tree, pts, right, depth + 1, d, out);
                assert_eq!(le, rs);
                let s = re - ls;
                assert_eq!(le - ls, s / 2);
                assert!((ls..le).all(|i| pts.row(i)[split_dim] <= split_value));
                assert!((rs..re).all(|i| pts.row(i)[split_dim] >= split_value));
                (ls, re)
            }
        }
    }
    let mut leaves = Vec::new();
    assert_eq!(walk(&tree, pts, tree.root(), 0, 4, &mut leaves), (0, 3000));
    assert!(leaves.iter().all(|&(s, e)| e - s <= 16 && e > s));
    let mut ids = tree.original_ids().to_vec();
    ids.sort_unstable();
    assert_eq!(ids, (0..3000).collect::<Vec<u32>>());
}

#[test]
fn buffer_tree_predicate_audit() {
    // reduced-size version of a 512-leaf build
    let refs = uniform(20_000, 10, 8);
    let tree = BufferKdTree::build(&refs, 9).unwrap();
    let top = tree.top();
    let leaves = tree.leaves();
    assert_eq!(top.num_leaves(), 512);
    let sizes: Vec<usize> = leaves.leaf_bounds().iter().map(|(l, r)| r - l).collect();
    assert!(
        sizes.iter().all(|&s| s == 39 || s == 40),
        "{:?}",
        (sizes.iter().min(), sizes.iter().max())
    );
    let mut next = 0;
    for (leaf, &(l, r)) in leaves.leaf_bounds().iter().enumerate() {
        assert_eq!(l, next);
        next = r;
        for i in l..r {
            let p = leaves.points().row(i);
            // every ancestor predicate, walking up from the leaf node
            let mut child = leaf + top.num_internal();
            while child > 0 {
                let parent = (child - 1) / 2;
                let dim = top.split_dim(parent);
                let v = top.split_values()[parent];
                if child == 2 * parent + 1 {
                    assert!(p[dim] <= v);
                } else {
                    assert!(p[dim] >= v);
                }
                child = parent;
            }
            assert_eq!(p, refs.row(leaves.original_index()[i] as usize));
        }
    }
    assert_eq!(next, 20_000);
    assert!(BufferKdTree::build(&refs, 15).is_err());
}

#[test]
fn lazy_search_mid_size() {
    let refs = uniform(20_000, 5, 9);
    let q = uniform(10_000, 5, 10);
    let run = run_lazy(
        &refs,
        &q,
        10,
        6,
        3,
        BufferConfig::with_capacity(256, 10),
        &spec(2, None),
    );
    assert_eq!(
        run.out.neighbors,
        brute_knn(&refs, &q, SearchParams::new(10), 1).unwrap()
    );
    assert!(run.out.stats.leaf_scans <= 10_000 * 64);
    assert!(run.device.hazard_violations().is_empty());
}

#[test]
fn lazy_search_with_ties() {
    let refs = grid_points(3000, 3, 11);
    let q = grid_points(500, 3, 12);
    for (h, b, chunks) in [(3, 1, 1), (5, 16, 4), (7, 64, 7)] {
        let run = run_lazy(
            &refs,
            &q,
            20,
            h,
            chunks,
            BufferConfig::with_capacity(b, 4),
            &spec(2, None),
        );
        assert_eq!(
            pairs(&run.out.neighbors),
            oracle_knn(&refs, &q, 20),
            "h={h} B={b} N={chunks}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lazy_search_exact(
        n in 16usize..1500,
        m in 1usize..200,
        d in 1usize..8,
        k in 1usize..16,
        h_frac in 0.0f64..1.0,
        chunks_frac in 0.0f64..1.0,
        b in 1usize..40,
        fetch in 1usize..12,
        grid in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let k = k.min(n);
        let h_max = (n as f64).log2().floor() as usize;
        let h = 1 + ((h_max - 1) as f64 * h_frac) as usize;
        let chunks = 1 + ((n.min(9) - 1) as f64 * chunks_frac) as usize;
        let (refs, q) = if grid {
            (grid_points(n, d, seed), grid_points(m, d, seed ^ 1))
        } else {
            (uniform(n, d, seed), uniform(m, d, seed ^ 1))
        };
        let run = run_lazy(&refs, &q, k, h, chunks, BufferConfig::with_capacity(b, fetch), &spec(1, None));
        prop_assert_eq!(pairs(&run.out.neighbors), oracle_knn(&refs, &q, k));
        prop_assert!(run.device.hazard_violations().is_empty());
    }

    #[test]
    fn kdtree_exact(
        n in 1usize..1500,
        m in 1usize..50,
        d in 1usize..16,
        k in 1usize..21,
        leaf in 1usize..40,
        grid in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let k = k.min(n);
        let (refs, q) = if grid {
            (grid_points(n, d, seed), grid_points(m, d, seed ^ 1))
        } else {
            (uniform(n, d, seed), uniform(m, d, seed ^ 1))
        };
        let tree = KdTree::build(&refs, leaf).unwrap();
        prop_assert_eq!(pairs(&tree.query_parallel(&q, SearchParams::new(k), 2).unwrap()), oracle_knn(&refs, &q, k));
    }
}
