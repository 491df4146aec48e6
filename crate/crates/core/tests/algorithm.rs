//! The layered model against an independent plain-loop transcription of the
//! encoder/decoder pipeline, plus hand-evaluated cell examples.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{mat, transcription};
use treegpt::autodiff::sigmoid;
use treegpt::model::{count_messages, BatchView, ModelConfig, TreeGPTModel};
use treegpt::treeffn::{build_edges, message, treeffn_forward, Direction, MessageStats, TreeFFNConfig, TreeFFNWeights};
use treegpt::{Graph, Tensor};

#[test]
fn single_layer_model_matches_transcription_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for case in 0..20 {
        let flags = [case % 2 == 0, case % 3 != 0, case % 4 < 2];
        let mut cfg = ModelConfig::new(6, 1, 1 + case % 3);
        cfg.treeffn.edge_dim = 3;
        cfg.treeffn.use_edge_projection = flags[0];
        cfg.treeffn.use_gating = flags[1];
        cfg.treeffn.use_residual = flags[2];
        cfg.use_position_embedding = case % 5 != 4;
        cfg.max_seq_len = 12;
        let model = TreeGPTModel::from_seed(&cfg, case as u64).unwrap();
        let n = rng.random_range(1..=12);
        let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..16)).collect();
        let logits = model.forward(&tokens, &vec![true; n]).unwrap();
        let expected = transcription(&model, &tokens);
        assert_eq!(mat(&logits), expected, "case {case} flags {flags:?} n {n}");
    }
}

#[test]
fn instrumented_message_count_matches_closed_form() {
    let mut cfg = ModelConfig::new(4, 2, 2);
    cfg.treeffn.edge_dim = 2;
    for n in [1, 2, 5, 9] {
        let model = TreeGPTModel::from_seed(&cfg, 0).unwrap();
        let tokens = vec![3; n];
        let mask = vec![true; n];
        let (_, stats) = model.forward_with_stats(&BatchView::single(&tokens, &mask)).unwrap();
        assert_eq!(stats.messages, count_messages(&cfg, n));
        assert_eq!(stats.messages, 2 * 2 * 2 * (n - 1));
    }
}

fn scalar_cell(gating: bool) -> (TreeFFNConfig, TreeFFNWeights) {
    let cfg = TreeFFNConfig {
        hidden_dim: 1,
        edge_dim: 1,
        iterations: 1,
        use_edge_projection: false,
        use_gating: gating,
        use_residual: true,
    };
    let t = |v: &[f64], shape: &[usize]| Tensor::new(shape.to_vec(), v.to_vec()).unwrap();
    let mut w = TreeFFNWeights::zeros(&cfg);
    w.edge_embedding = t(&[0.5], &[1, 1]);
    // hidden = relu(2·src + 1·dst − 1·e + 0.25); m = 3·hidden − 0.5
    w.msg_w1 = t(&[2.0, 1.0, -1.0], &[3, 1]);
    w.msg_b1 = t(&[0.25], &[1]);
    w.msg_w2 = t(&[3.0], &[1, 1]);
    w.msg_b2 = t(&[-0.5], &[1]);
    if gating {
        // g = σ(1·dst − 1·src)
        w.gate_w = Some(t(&[1.0, -1.0], &[2, 1]));
        w.gate_b = Some(t(&[0.0], &[1]));
    }
    (cfg, w)
}

#[test]
fn hand_evaluated_three_node_chain() {
    for gating in [false, true] {
        let (cfg, w) = scalar_cell(gating);
        let h_in = [1.0, 2.0, -1.0];
        let mut g = Graph::new();
        let h = g.constant(Tensor::new(vec![3, 1], h_in.to_vec()).unwrap()).unwrap();
        let bw = w.bind(&mut g).unwrap();
        let edges = build_edges(3, Direction::Forward).unwrap();
        let out = treeffn_forward(&mut g, h, &edges, &[true; 3], &bw, &cfg, &mut MessageStats::default()).unwrap();
        let out = g.value(out).data().to_vec();

        // edge (0,1): hidden = relu(2·1 + 2 − 0.5 + 0.25) = 3.75, m = 10.75
        // edge (1,2): hidden = relu(2·2 − 1 − 0.5 + 0.25) = 2.75, m = 7.75
        let (m01, m12) = (10.75, 7.75);
        let (g01, g12) = if gating { (sigmoid(2.0 - 1.0), sigmoid(-1.0 - 2.0)) } else { (1.0, 1.0) };
        assert_eq!(out[0], 1.0, "node 0 has no incoming edge");
        assert!((out[1] - (2.0 + g01 * m01)).abs() < 1e-12);
        assert!((out[2] - (-1.0 + g12 * m12)).abs() < 1e-12);
    }
}

#[test]
fn message_concat_order_is_source_target_edge() {
    let cfg = TreeFFNConfig {
        hidden_dim: 2,
        edge_dim: 1,
        iterations: 1,
        use_edge_projection: false,
        use_gating: false,
        use_residual: false,
    };
    let mut w = TreeFFNWeights::zeros(&cfg);
    // the first hidden unit reads only source[0], the second only target[1]
    w.msg_w1 = Tensor::new(vec![5, 2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    w.msg_w2 = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 10.0]).unwrap();
    let run = |src: [f64; 2], dst: [f64; 2]| {
        let mut g = Graph::new();
        let s = g.constant(Tensor::new(vec![1, 2], src.to_vec()).unwrap()).unwrap();
        let d = g.constant(Tensor::new(vec![1, 2], dst.to_vec()).unwrap()).unwrap();
        let bw = w.bind(&mut g).unwrap();
        let m = message(&mut g, s, d, &bw, &cfg).unwrap();
        g.value(m).data().to_vec()
    };
    assert_eq!(run([3.0, 4.0], [5.0, 6.0]), vec![3.0, 60.0]);
    assert_eq!(run([5.0, 6.0], [3.0, 4.0]), vec![5.0, 40.0]);
}
