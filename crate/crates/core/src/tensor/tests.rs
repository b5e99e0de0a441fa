use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Runs `build` on a fresh graph with every tensor in `params` as a trainable leaf and reduces
/// the output with fixed random weights, so each output entry contributes distinctly.
fn check<B>(params: Vec<Tensor>, tol: f64, build: B) -> GradCheckReport
where
    B: Fn(&mut Graph, &[Var]) -> Var,
{
    let probe_seed = 99;
    let f = |ps: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let y = build(&mut g, &vars);
        let [r, c] = g.value(y).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
        let w = g.constant(rand_tensor(&mut rng, r, c));
        let prod = g.mul(y, w)?;
        let loss = g.sum(prod);
        let grads = g.backward(loss)?;
        let gs = vars
            .iter()
            .zip(ps)
            .map(|(v, p)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
            .collect();
        Ok((g.value(loss).data()[0], gs))
    };
    let report = grad_check(f, &params, tol).unwrap();
    assert!(report.passed, "{report:?}");
    report
}

#[test]
fn linear_identity_and_constant() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let w = g.param(Tensor::eye(3));
    let b = g.param(Tensor::zeros(1, 3));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[1., 2., 3., 4., 5., 6.]);

    let w0 = g.param(Tensor::zeros(2, 3));
    let c = g.param(Tensor::new(1, 2, vec![7., -1.]).unwrap());
    let y = g.linear(x, w0, Some(c)).unwrap();
    assert_eq!(g.value(y).data(), &[7., -1., 7., -1.]);
}

#[test]
fn linear_shape_mismatch() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(2, 3));
    let w = g.param(Tensor::zeros(4, 2));
    assert!(matches!(g.linear(x, w, None), Err(Error::Shape(_))));
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ps = vec![rand_tensor(&mut rng, 5, 3), rand_tensor(&mut rng, 4, 3), rand_tensor(&mut rng, 1, 4)];
    check(ps, 1e-6, |g, v| g.linear(v[0], v[1], Some(v[2])).unwrap());
}

#[test]
fn matmul_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, 3, 4);
    let b = rand_tensor(&mut rng, 4, 2);
    let c = matmul(&a, &b).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let want: f64 = (0..4).map(|k| a.get(i, k) * b.get(k, j)).sum();
            assert!((c.get(i, j) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn conv1d_lengths() {
    let mut g = Graph::new();
    let nodes = 2;
    let x = g.constant(Tensor::filled(nodes * 360, 4, 1.0));
    let w1 = g.param(Tensor::zeros(4, 12));
    let y1 = g.conv1d(x, 360, w1, None).unwrap();
    assert_eq!(g.value(y1).shape(), [nodes * 120, 4]);
    let w2 = g.param(Tensor::zeros(4, 12));
    let y2 = g.conv1d(y1, 120, w2, None).unwrap();
    assert_eq!(g.value(y2).shape(), [nodes * 40, 4]);
}

#[test]
fn conv1d_rejects_indivisible_length() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(10, 1));
    let w = g.param(Tensor::zeros(1, 3));
    assert!(matches!(g.conv1d(x, 10, w, None), Err(Error::InvalidArgument(_))));
}

#[test]
fn conv1d_averaging_kernel_preserves_constant() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::filled(9, 1, 4.5));
    let w = g.param(Tensor::filled(1, 3, 1.0 / 3.0));
    let y = g.conv1d(x, 9, w, None).unwrap();
    assert_eq!(g.value(y).shape(), [3, 1]);
    for v in g.value(y).data() {
        assert!((v - 4.5).abs() < 1e-12);
    }
}

#[test]
fn conv1d_taps_follow_time_order() {
    // One channel, taps (1, 10, 100): output = x0 + 10 x1 + 100 x2 per window.
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(6, 1, vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let w = g.param(Tensor::new(1, 3, vec![1., 10., 100.]).unwrap());
    let y = g.conv1d(x, 6, w, None).unwrap();
    assert_eq!(g.value(y).data(), &[321., 654.]);
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ps = vec![rand_tensor(&mut rng, 2 * 9, 2), rand_tensor(&mut rng, 3, 6), rand_tensor(&mut rng, 1, 3)];
    check(ps, 1e-6, |g, v| g.conv1d(v[0], 9, v[1], Some(v[2])).unwrap());
}

#[test]
fn lstm_zero_weights() {
    let z = |r, c| Tensor::zeros(r, c);
    let (w_ih, w_hh, b) = (z(8, 3), z(8, 2), z(1, 8));
    let w = LstmWeights { w_ih: &w_ih, w_hh: &w_hh, b_ih: &b, b_hh: &b };
    let x = Tensor::filled(1, 3, 0.7);
    let (h, c) = lstm_cell(&x, &z(1, 2), &z(1, 2), &w).unwrap();
    assert_eq!(h.data(), &[0.0, 0.0]);
    assert_eq!(c.data(), &[0.0, 0.0]);

    let (h, c) = lstm_cell(&x, &z(1, 2), &Tensor::filled(1, 2, 1.0), &w).unwrap();
    for j in 0..2 {
        assert!((c.data()[j] - 0.5).abs() < 1e-15);
        assert!((h.data()[j] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((h.data()[j] - 0.2311).abs() < 1e-4);
    }
}

#[test]
fn lstm_tape_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, fin, hid) = (3, 2, 4);
    let w_ih = rand_tensor(&mut rng, 4 * hid, fin);
    let w_hh = rand_tensor(&mut rng, 4 * hid, hid);
    let b_ih = rand_tensor(&mut rng, 1, 4 * hid);
    let b_hh = rand_tensor(&mut rng, 1, 4 * hid);
    let xs: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, n, fin)).collect();

    let w = LstmWeights { w_ih: &w_ih, w_hh: &w_hh, b_ih: &b_ih, b_hh: &b_hh };
    let mut h = Tensor::zeros(n, hid);
    let mut c = Tensor::zeros(n, hid);
    for x in &xs {
        (h, c) = lstm_cell(x, &h, &c, &w).unwrap();
    }

    let mut g = Graph::new();
    let (wi, wh, bi, bh) = (g.param(w_ih.clone()), g.param(w_hh.clone()), g.param(b_ih.clone()), g.param(b_hh.clone()));
    let mut state = None;
    for x in &xs {
        let xv = g.constant(x.clone());
        state = Some(g.lstm_cell(xv, state, wi, wh, bi, bh).unwrap());
    }
    let hc = g.value(state.unwrap());
    for r in 0..n {
        for j in 0..hid {
            assert!((hc.get(r, j) - h.get(r, j)).abs() < 1e-12);
            assert!((hc.get(r, hid + j) - c.get(r, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn lstm_bptt_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, fin, hid) = (2, 3, 3);
    let ps = vec![
        rand_tensor(&mut rng, n, fin),
        rand_tensor(&mut rng, n, fin),
        rand_tensor(&mut rng, 4 * hid, fin),
        rand_tensor(&mut rng, 4 * hid, hid),
        rand_tensor(&mut rng, 1, 4 * hid),
        rand_tensor(&mut rng, 1, 4 * hid),
    ];
    check(ps, 1e-5, |g, v| {
        let s1 = g.lstm_cell(v[0], None, v[2], v[3], v[4], v[5]).unwrap();
        g.lstm_cell(v[1], Some(s1), v[2], v[3], v[4], v[5]).unwrap()
    });
}

#[test]
fn lstm_rejects_bad_shapes() {
    let mut g = Graph::new();
    let gx = g.constant(Tensor::zeros(2, 7));
    let w = g.param(Tensor::zeros(8, 2));
    assert!(g.lstm_step(gx, None, w).is_err());
}

#[test]
fn gcn_two_nodes() {
    let adj = Arc::new(Sparse::gcn_normalized(&[vec![1], vec![0]]).unwrap());
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(2, 1, vec![1.0, 3.0]).unwrap());
    let w = g.param(Tensor::eye(1));
    let y = g.gcn_conv(adj, x, w).unwrap();
    for v in g.value(y).data() {
        assert!((v - 2.0).abs() < 1e-12);
    }
}

#[test]
fn gcn_isolated_node_is_identity() {
    let adj = Arc::new(Sparse::gcn_normalized(&[vec![]]).unwrap());
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(1, 2, vec![5.0, -2.0]).unwrap());
    let w = g.param(Tensor::eye(2));
    let y = g.gcn_conv(adj, x, w).unwrap();
    assert_eq!(g.value(y).data(), &[5.0, -2.0]);
}

#[test]
fn gcn_rejects_asymmetric_adjacency() {
    assert!(matches!(Sparse::gcn_normalized(&[vec![1], vec![]]), Err(Error::InvalidArgument(_))));
}

#[test]
fn gcn_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let adj = Arc::new(Sparse::gcn_normalized(&[vec![1, 2], vec![0], vec![0, 3], vec![2]]).unwrap());
    let ps = vec![rand_tensor(&mut rng, 4, 3), rand_tensor(&mut rng, 2, 3)];
    check(ps, 1e-6, move |g, v| g.gcn_conv(adj.clone(), v[0], v[1]).unwrap());
}

#[test]
fn layer_norm_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(2, 2, vec![3.0, 3.0, -1.0, 1.0]).unwrap());
    let gain = g.param(Tensor::filled(1, 2, 1.0));
    let bias = g.param(Tensor::zeros(1, 2));
    let y = g.layer_norm(x, gain, bias).unwrap();
    let v = g.value(y).data();
    assert_eq!(&v[..2], &[0.0, 0.0]);
    assert!((v[2] + 1.0).abs() < 1e-5 && (v[3] - 1.0).abs() < 1e-5);
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ps = vec![rand_tensor(&mut rng, 3, 5), rand_tensor(&mut rng, 1, 5), rand_tensor(&mut rng, 1, 5)];
    check(ps, 1e-5, |g, v| g.layer_norm(v[0], v[1], v[2]).unwrap());
}

#[test]
fn elementwise_and_structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ps = vec![rand_tensor(&mut rng, 4, 3), rand_tensor(&mut rng, 4, 3), rand_tensor(&mut rng, 1, 3)];
    check(ps, 1e-6, |g, v| {
        let s = g.sigmoid(v[0]);
        let t = g.tanh(v[1]);
        let m = g.mul(s, t).unwrap();
        let d = g.sub(m, v[1]).unwrap();
        let r = g.add_row(d, v[2]).unwrap();
        let c = g.concat_cols(&[r, v[0]]).unwrap();
        let sc = g.slice_cols(c, 1, 4).unwrap();
        let top = g.slice_rows(sc, 0, 2).unwrap();
        let cat = g.concat_rows(&[top, sc]).unwrap();
        let idx: Arc<[usize]> = Arc::from(vec![5, 0, 0, 2]);
        let gathered = g.gather_rows(cat, idx).unwrap();
        let rs = g.reshape(gathered, 2, 8).unwrap();
        let sum = g.add(rs, rs).unwrap();
        g.scale(sum, -0.7)
    });
}

#[test]
fn relu_gradient_off_kink() {
    let ps = vec![Tensor::new(1, 4, vec![-0.5, 0.3, 1.2, -2.0]).unwrap()];
    check(ps, 1e-8, |g, v| g.relu(v[0]));
}

#[test]
fn fill_missing_routes_gradient() {
    let present: Arc<[bool]> = Arc::from(vec![true, false, true]);
    let mut g = Graph::new();
    let x = g.param(Tensor::new(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let fill = g.param(Tensor::new(1, 2, vec![-9., -8.]).unwrap());
    let y = g.fill_missing(x, fill, present.clone()).unwrap();
    assert_eq!(g.value(y).data(), &[1., 2., -9., -8., 5., 6.]);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1., 1., 0., 0., 1., 1.]);
    assert_eq!(grads.get(fill).unwrap().data(), &[1., 1.]);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ps = vec![rand_tensor(&mut rng, 3, 2), rand_tensor(&mut rng, 1, 2)];
    check(ps, 1e-6, move |g, v| g.fill_missing(v[0], v[1], present.clone()).unwrap());
}

#[test]
fn masked_l1_ignores_nan_targets() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let target: Arc<[f64]> = Arc::from(vec![0.0, f64::NAN, 5.0, f64::NAN]);
    let l = g.masked_l1(x, target).unwrap();
    assert!((g.value(l).data()[0] - 1.5).abs() < 1e-15);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.5, 0.0, -0.5, 0.0]);

    let all_missing: Arc<[f64]> = Arc::from(vec![f64::NAN; 4]);
    let l = g.masked_l1(x, all_missing).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);
}

#[test]
fn spmm_group_mean() {
    let m = Arc::new(Sparse::group_mean(3, &[vec![0, 2], vec![1]]).unwrap());
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(3, 1, vec![2.0, 7.0, 4.0]).unwrap());
    let y = g.spmm(m, x).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 7.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(2, 2));
    assert!(g.backward(x).is_err());
}

#[test]
fn grad_check_square() {
    let f = |p: &[Tensor]| {
        let x = p[0].data()[0];
        Ok((x * x, vec![Tensor::scalar(2.0 * x)]))
    };
    let r = grad_check(f, &[Tensor::scalar(3.0)], 1e-8).unwrap();
    assert!(r.passed);
    assert!((r.numeric - 6.0).abs() < 1e-8);
    assert_eq!(r.analytic, 6.0);
}

#[test]
fn grad_check_reports_kink() {
    let abs = |p: &[Tensor]| {
        let x = p[0].data()[0];
        Ok((x.abs(), vec![Tensor::scalar(if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })]))
    };
    assert!(grad_check(abs, &[Tensor::scalar(0.4)], 1e-8).unwrap().passed);
    // Within one step of the kink the two sides mix and the mismatch is reported.
    let near = grad_check(abs, &[Tensor::scalar(2e-6)], 1e-3).unwrap();
    assert!(!near.passed);
    assert!((near.numeric - 0.2).abs() < 1e-9);
    assert_eq!(near.analytic, 1.0);
}

#[test]
fn adam_zero_gradient_is_noop() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::new(1, 2, vec![0.3, -0.2]).unwrap()).unwrap();
    let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
    adam_step(&mut store, &[Tensor::zeros(1, 2)], 1e-3, &cfg).unwrap();
    assert_eq!(store.value(0).data(), &[0.3, -0.2]);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::scalar(1.0)).unwrap();
    let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
    adam_step(&mut store, &[Tensor::scalar(1.0)], 1e-3, &cfg).unwrap();
    let moved = 1.0 - store.value(0).data()[0];
    assert!((moved - 1e-3 / (1.0 + 1e-8)).abs() < 1e-12);
    assert_eq!(store.step(), 1);
}

#[test]
fn adam_decoupled_decay() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::scalar(2.0)).unwrap();
    let cfg = AdamConfig { weight_decay: 0.5, ..AdamConfig::default() };
    adam_step(&mut store, &[Tensor::scalar(0.0)], 0.1, &cfg).unwrap();
    assert!((store.value(0).data()[0] - 1.9).abs() < 1e-15);
}

#[test]
fn adam_minimizes_quadratic() {
    let target = [1.5, -0.75, 3.0];
    let mut store = ParamStore::new();
    store.add("theta", Tensor::zeros(1, 3)).unwrap();
    let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
    for _ in 0..5000 {
        let g: Vec<f64> = store.value(0).data().iter().zip(&target).map(|(t, s)| 2.0 * (t - s)).collect();
        adam_step(&mut store, &[Tensor::new(1, 3, g).unwrap()], 0.01, &cfg).unwrap();
    }
    for (t, s) in store.value(0).data().iter().zip(&target) {
        assert!((t - s).abs() < 1e-3, "{t} vs {s}");
    }
}

#[test]
fn adam_rejects_nan() {
    let mut store = ParamStore::new();
    store.add("bias", Tensor::zeros(1, 2)).unwrap();
    let err = adam_step(&mut store, &[Tensor::new(1, 2, vec![0.0, f64::NAN]).unwrap()], 1e-3, &AdamConfig::default());
    match err {
        Err(Error::Diverged(msg)) => assert!(msg.contains("bias")),
        other => panic!("{other:?}"),
    }
    assert_eq!(store.step(), 0);
}

#[test]
fn param_names_unique() {
    let mut store = ParamStore::new();
    store.add("a", Tensor::zeros(1, 1)).unwrap();
    assert!(store.add("a", Tensor::zeros(1, 1)).is_err());
}

#[test]
fn lr_schedule_phases() {
    let s = LrSchedule { base_lr: 1e-3, total_steps: 100, warmup_steps: 10 };
    assert_eq!(s.lr(0), 0.0);
    assert!((s.lr(5) - 5e-4).abs() < 1e-15);
    assert_eq!(s.lr(40), 1e-3);
    assert!((s.lr(75) - 1e-4).abs() < 1e-15);
    assert!((s.lr(90) - 1e-5).abs() < 1e-15);
    assert!((s.lr(70) - 1e-4).abs() < 1e-15);
    assert!((s.lr(85) - 1e-5).abs() < 1e-15);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut store = ParamStore::new();
    store.add("a", Tensor::new(2, 2, vec![0.1, -2.5, 3.25, 1e-3]).unwrap()).unwrap();
    store.add("b", Tensor::scalar(7.0)).unwrap();
    write_checkpoint(&path, &store, serde_json::json!({"epoch": 3})).unwrap();
    let ck = read_checkpoint(&path).unwrap();
    assert_eq!(ck.header["epoch"], 3);
    assert_eq!(ck.tensors.len(), 2);
    assert_eq!(ck.tensors[0].0, "a");
    for (x, y) in ck.tensors[0].1.data().iter().zip(store.value(0).data()) {
        assert_eq!(*x, *y as f32 as f64);
    }
    let mut fresh = ParamStore::new();
    fresh.add("b", Tensor::zeros(1, 1)).unwrap();
    fresh.add("a", Tensor::zeros(2, 2)).unwrap();
    fresh.load_values(&ck.tensors).unwrap();
    assert_eq!(fresh.get("b").unwrap().data(), &[7.0]);
}

#[test]
fn checkpoint_missing_and_garbage() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_checkpoint(&dir.path().join("none")), Err(Error::MissingArtifact(_))));
    let p = dir.path().join("junk");
    std::fs::write(&p, b"not a checkpoint at all").unwrap();
    assert!(matches!(read_checkpoint(&p), Err(Error::Format(_))));
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut g = Graph::new();
        let x = g.constant(rand_tensor(&mut rng, 6, 9));
        let w = g.param(rand_tensor(&mut rng, 5, 9));
        let y = g.linear(x, w, None).unwrap();
        let y = g.tanh(y);
        g.value(y).clone()
    };
    assert_eq!(run(), run());
}

mod props {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// On a cycle every node has the same degree, so the propagation matrix is
        /// doubly stochastic and preserves the feature mean.
        #[test]
        fn gcn_regular_graph_preserves_mean(n in 3usize..12, vals in proptest::collection::vec(-5.0f64..5.0, 12)) {
            let nb: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + 1) % n, (i + n - 1) % n]).collect();
            let adj = Arc::new(Sparse::gcn_normalized(&nb).unwrap());
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(n, 1, vals[..n].to_vec()).unwrap());
            let w = g.param(Tensor::eye(1));
            let y = g.gcn_conv(adj, x, w).unwrap();
            let mean_in: f64 = vals[..n].iter().sum::<f64>() / n as f64;
            let mean_out: f64 = g.value(y).data().iter().sum::<f64>() / n as f64;
            prop_assert!((mean_in - mean_out).abs() < 1e-9);
        }

        #[test]
        fn linear_gradient_random(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rng.random_range(1..5);
            let i = rng.random_range(1..5);
            let o = rng.random_range(1..5);
            let ps = vec![rand_tensor(&mut rng, r, i), rand_tensor(&mut rng, o, i), rand_tensor(&mut rng, 1, o)];
            let rep = check(ps, 1e-4, |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
                g.tanh(y)
            });
            prop_assert!(rep.passed);
        }

        #[test]
        fn lr_schedule_bounded(step in 0u64..1000, warm in 0u64..100) {
            let s = LrSchedule { base_lr: 0.01, total_steps: 1000, warmup_steps: warm };
            let lr = s.lr(step);
            prop_assert!((0.0..=0.01).contains(&lr));
        }
    }
}
