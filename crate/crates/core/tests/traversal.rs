mod common;

use bufkd::buffer_tree::BufferConfig;
use bufkd::io::synth::uniform;
use bufkd::kdtree::KdTree;
use bufkd::SearchParams;
use common::*;
use rand::Rng;

#[test]
fn lazy_visits_equal_classic_visits() {
    let mut r = rng(77);
    for case in 0..20 {
        let n = r.gen_range(64..3000);
        let d = r.gen_range(2..9);
        let h = r.gen_range(1..=(n as f64).log2().floor() as usize).min(7);
        let k = r.gen_range(1..12).min(n);
        let m = r.gen_range(1..300);
        let grid = case % 3 == 0;
        let (refs, q) = if grid {
            (grid_points(n, d, case), grid_points(m, d, case + 1000))
        } else {
            (uniform(n, d, case), uniform(m, d, case + 1000))
        };
        let cfg =
            BufferConfig::with_capacity(r.gen_range(1..32), r.gen_range(1..8)).recording_visits();
        let run = run_lazy(&refs, &q, k, h, r.gen_range(1..5), cfg, &spec(2, None));
        let classic = KdTree::build_with_height(&refs, h).unwrap();
        let visits = run.out.visits.unwrap();
        for (i, v) in visits.iter().enumerate() {
            let c = classic.query(q.row(i), SearchParams::new(k));
            assert_eq!(*v, c.visited, "case {case} query {i}");
            assert_eq!(run.out.neighbors[i], c.neighbors);
        }
    }
}

#[test]
fn classic_tree_with_height_has_top_tree_shape() {
    let refs = uniform(1000, 3, 5);
    let buffered = bufkd::BufferKdTree::build(&refs, 4).unwrap();
    let classic = KdTree::build_with_height(&refs, 4).unwrap();
    assert_eq!(classic.leaf_ranges(), buffered.leaves().leaf_bounds());
    assert_eq!(classic.original_ids(), buffered.leaves().original_index());
}
