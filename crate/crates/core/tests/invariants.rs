//! Structural properties of the TreeFFN cell and the model.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treegpt::model::{BatchView, ModelConfig, TreeGPTModel};
use treegpt::treeffn::{build_edges, gate, treeffn_forward, Direction, MessageStats, TreeFFNConfig, TreeFFNWeights};
use treegpt::{Graph, Tensor};

fn cell_cfg(d: usize, t: usize, flags: (bool, bool, bool)) -> TreeFFNConfig {
    TreeFFNConfig {
        hidden_dim: d,
        edge_dim: 2,
        iterations: t,
        use_edge_projection: flags.0,
        use_gating: flags.1,
        use_residual: flags.2,
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn run_cell(h: &Tensor, cfg: &TreeFFNConfig, w: &TreeFFNWeights, dir: Direction, pad_mask: &[bool]) -> Tensor {
    let mut g = Graph::new();
    let hv = g.constant(h.clone()).unwrap();
    let bw = w.bind(&mut g).unwrap();
    let edges = build_edges(h.rows(), dir).unwrap();
    let out = treeffn_forward(&mut g, hv, &edges, pad_mask, &bw, cfg, &mut MessageStats::default()).unwrap();
    g.value(out).clone()
}

/// Rows of `a` and `b` that differ.
fn changed_rows(a: &Tensor, b: &Tensor) -> Vec<usize> {
    (0..a.rows()).filter(|&i| a.row(i) != b.row(i)).collect()
}

fn flags() -> impl Strategy<Value = (bool, bool, bool)> {
    (any::<bool>(), any::<bool>(), any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shape_is_preserved(n in 1usize..9, d in 1usize..5, t in 1usize..4, f in flags(), seed in any::<u64>()) {
        let cfg = cell_cfg(d, t, f);
        let w = TreeFFNWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let h = random(&[n, d], seed ^ 1);
        let out = run_cell(&h, &cfg, &w, Direction::Backward, &vec![true; n]);
        prop_assert_eq!(out.shape(), h.shape());
    }

    #[test]
    fn one_iteration_is_local(n in 2usize..9, j in 0usize..8, f in flags(), seed in any::<u64>()) {
        let j = j % n;
        let cfg = cell_cfg(3, 1, f);
        let w = TreeFFNWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let h = random(&[n, 3], seed ^ 2);
        let mut h2 = h.clone();
        h2.data_mut()[j * 3] += 0.75;
        let base = run_cell(&h, &cfg, &w, Direction::Forward, &vec![true; n]);
        let moved = run_cell(&h2, &cfg, &w, Direction::Forward, &vec![true; n]);
        for i in changed_rows(&base, &moved) {
            prop_assert!(i == j || i == j + 1, "perturbing {} changed {}", j, i);
        }
    }

    #[test]
    fn reach_is_bounded_by_iterations(n in 2usize..10, t in 1usize..5, f in flags(), seed in any::<u64>()) {
        let cfg = cell_cfg(3, t, f);
        let w = TreeFFNWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let h = random(&[n, 3], seed ^ 3);
        let mut h2 = h.clone();
        h2.data_mut()[1] -= 0.5;
        let base = run_cell(&h, &cfg, &w, Direction::Forward, &vec![true; n]);
        let moved = run_cell(&h2, &cfg, &w, Direction::Forward, &vec![true; n]);
        for i in changed_rows(&base, &moved) {
            prop_assert!(i <= t, "t={} reached {}", t, i);
        }
    }

    #[test]
    fn gates_lie_strictly_inside_unit_interval(m in 1usize..6, scale in 0.1f64..3.0, seed in any::<u64>()) {
        let cfg = cell_cfg(4, 1, (true, true, false));
        let w = TreeFFNWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut g = Graph::new();
        let big = |s| Tensor::new(vec![m, 4], random(&[m, 4], s).data().iter().map(|x| x * scale).collect()).unwrap();
        let dst = g.constant(big(seed ^ 4)).unwrap();
        let src = g.constant(big(seed ^ 5)).unwrap();
        let bw = w.bind(&mut g).unwrap();
        let gv = gate(&mut g, dst, src, &bw).unwrap();
        for &v in g.value(gv).data() {
            prop_assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn padding_leaves_real_rows_bit_identical(n in 1usize..8, pad in 1usize..5, f in flags(), seed in any::<u64>()) {
        let cfg = cell_cfg(3, 2, f);
        let w = TreeFFNWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let h = random(&[n, 3], seed ^ 6);
        let base = run_cell(&h, &cfg, &w, Direction::Forward, &vec![true; n]);
        let junk = random(&[pad, 3], seed ^ 7);
        let mut padded = h.data().to_vec();
        padded.extend_from_slice(junk.data());
        let padded = Tensor::new(vec![n + pad, 3], padded).unwrap();
        let mut mask = vec![true; n];
        mask.extend(vec![false; pad]);
        for dir in [Direction::Forward, Direction::Backward] {
            let base = if dir == Direction::Forward { base.clone() } else { run_cell(&h, &cfg, &w, dir, &vec![true; n]) };
            let out = run_cell(&padded, &cfg, &w, dir, &mask);
            prop_assert_eq!(&out.data()[..n * 3], base.data());
            prop_assert_eq!(&out.data()[n * 3..], junk.data());
        }
    }

    #[test]
    fn model_logits_ignore_padding(n in 1usize..10, pad in 1usize..6, seed in any::<u64>()) {
        let mut cfg = ModelConfig::new(4, 2, 2);
        cfg.treeffn.edge_dim = 2;
        cfg.max_seq_len = 16;
        let model = TreeGPTModel::from_seed(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..16)).collect();
        let base = model.forward(&tokens, &vec![true; n]).unwrap();
        let mut padded = tokens.clone();
        padded.extend(vec![10; pad]);
        let mut mask = vec![true; n];
        mask.extend(vec![false; pad]);
        let out = model.forward(&padded, &mask).unwrap();
        prop_assert_eq!(&out.data()[..n * 16], base.data());
    }
}

#[test]
fn batched_rows_match_single_sequences() {
    let mut cfg = ModelConfig::new(4, 1, 2);
    cfg.treeffn.edge_dim = 2;
    cfg.max_seq_len = 8;
    let model = TreeGPTModel::from_seed(&cfg, 9).unwrap();
    let a = [11, 1, 2, 13, 14, 15, 13, 12];
    let b = [11, 3, 13, 14, 15, 13, 12, 10];
    let mut tokens = a.to_vec();
    tokens.extend(b);
    let mut mask = vec![true; 15];
    mask.push(false);
    let (batched, _) =
        model.forward_with_stats(&BatchView { tokens: &tokens, pad_mask: &mask, batch: 2, seq_len: 8 }).unwrap();
    let single_a = model.forward(&a, &[true; 8]).unwrap();
    let single_b = model.forward(&b[..7], &[true; 7]).unwrap();
    assert_eq!(&batched.data()[..8 * 16], single_a.data());
    assert_eq!(&batched.data()[8 * 16..15 * 16], single_b.data());
}
