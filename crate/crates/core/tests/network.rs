use freesdg::losses::{reconstruction_loss_grad, segmentation_loss_grad};
use freesdg::network::{CoupledNetwork, GateMode, ModelConfig};
use freesdg::nn::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(depth: usize, base: usize, size: usize, attention: bool) -> ModelConfig {
    ModelConfig {
        depth,
        base_channels: base,
        image_size: size,
        attention,
        ..ModelConfig::desk()
    }
}

fn random_batch(seed: u64, shape: [usize; 4], lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

// Layer-by-layer bookkeeping, written independently of the builder.
fn expected_param_count(c: &ModelConfig) -> usize {
    let ch = |l: usize| (c.base_channels * 2usize.pow(l as u32)).min(c.max_channels);
    let block = |cin: usize, cout: usize| 9 * cin * cout + 2 * cout + 9 * cout * cout + 2 * cout;
    let mut total = block(c.in_channels, ch(0));
    for l in 1..=c.depth {
        total += block(ch(l - 1), ch(l));
    }
    for l in 0..c.depth {
        let cin = ch(l + 1) + ch(l);
        total += 2 * block(cin, ch(l));
        if c.attention {
            let hidden = std::cmp::max(cin / c.reduction, 4);
            total += cin * hidden + hidden + hidden * cin + cin;
            total += 2 * c.spatial_kernel * c.spatial_kernel + 1;
        }
    }
    total + ch(0) * c.in_channels + c.in_channels + ch(0) + 1
}

#[test]
fn param_count_matches_bookkeeping() {
    for (depth, base, att) in [(4, 8, true), (4, 8, false), (2, 4, true), (3, 16, true)] {
        let c = cfg(depth, base, 64, att);
        let net = CoupledNetwork::new(c.clone(), 0).unwrap();
        assert_eq!(net.param_count(), expected_param_count(&c), "{c:?}");
    }
}

#[test]
fn desk_shapes() {
    let net = CoupledNetwork::new(ModelConfig::desk(), 1).unwrap();
    let mut g = Graph::new();
    let out = net.forward(&mut g, random_batch(2, [2, 3, 64, 64], 0.0, 1.0), GateMode::Learned).unwrap();
    assert_eq!(g.value(out.encoder[4]).shape(), [2, 128, 4, 4]);
    assert_eq!(g.value(out.recon).shape(), [2, 3, 64, 64]);
    assert_eq!(g.value(out.seg_prob).shape(), [2, 1, 64, 64]);
}

#[test]
fn shapes_across_depths() {
    for depth in 2..=4 {
        let c = cfg(depth, 4, 32, true);
        let net = CoupledNetwork::new(c.clone(), 3).unwrap();
        let mut g = Graph::new();
        let out = net.forward(&mut g, random_batch(4, [1, 3, 32, 32], -1.0, 1.0), GateMode::Learned).unwrap();
        for (l, e) in out.encoder.iter().enumerate() {
            assert_eq!(g.value(*e).shape(), [1, c.channels_at(l), 32 >> l, 32 >> l]);
        }
        for (i, f) in out.f_sel.iter().enumerate() {
            let step = i + 1;
            let s = 32 >> (depth - step);
            assert_eq!(g.value(*f).shape(), [1, c.channels_at(depth - step), s, s]);
            assert_eq!(g.value(out.f_seg[i]).shape(), g.value(*f).shape());
        }
        assert_eq!(g.value(out.recon).shape(), [1, 3, 32, 32]);
        let p = g.value(out.seg_prob);
        assert!(p.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(out.channel_gates.len(), depth);
        for (i, gate) in out.channel_gates.iter().enumerate() {
            let l = depth - i - 1;
            let cin = c.channels_at(l + 1) + c.channels_at(l);
            let gv = g.value(*gate);
            assert_eq!(gv.shape(), [1, cin, 1, 1]);
            assert!(gv.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }
}

#[test]
fn reconstruction_is_not_clamped() {
    let net = CoupledNetwork::new(cfg(2, 4, 16, true), 5).unwrap();
    let (recon, _) = net.infer(random_batch(6, [2, 3, 16, 16], -1.0, 1.0)).unwrap();
    assert!(recon.data().iter().any(|v| *v < 0.0));
    assert!(recon.data().iter().any(|v| *v > 0.0));
}

#[test]
fn zero_weights_give_zero_features() {
    let net = CoupledNetwork::zeroed(cfg(3, 4, 32, true)).unwrap();
    let mut g = Graph::new();
    let out = net.forward(&mut g, random_batch(7, [1, 3, 32, 32], -5.0, 5.0), GateMode::Learned).unwrap();
    for v in out.encoder.iter().chain(&out.f_sel).chain(&out.f_seg) {
        assert!(g.value(*v).data().iter().all(|x| *x == 0.0));
    }
    assert!(g.value(out.recon).data().iter().all(|x| *x == 0.0));
}

#[test]
fn inference_is_bitwise_deterministic() {
    let net = CoupledNetwork::new(ModelConfig::desk(), 8).unwrap();
    let x = random_batch(9, [2, 3, 64, 64], 0.0, 1.0);
    let a = net.infer(x.clone()).unwrap();
    let b = net.infer(x).unwrap();
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1.data(), b.1.data());
    let again = CoupledNetwork::new(ModelConfig::desk(), 8).unwrap();
    assert_eq!(again.params(), net.params());
}

#[test]
fn forced_open_gates_match_attention_free_network() {
    let with = CoupledNetwork::new(cfg(3, 4, 32, true), 11).unwrap();
    let mut without = CoupledNetwork::new(cfg(3, 4, 32, false), 99).unwrap();
    let copied = without.copy_matching_params(&with);
    assert_eq!(copied, without.params().len());
    let x = random_batch(12, [2, 3, 32, 32], -1.0, 1.0);

    let mut g1 = Graph::new();
    let o1 = with.forward(&mut g1, x.clone(), GateMode::ForcedOpen).unwrap();
    let mut g2 = Graph::new();
    let o2 = without.forward(&mut g2, x.clone(), GateMode::Learned).unwrap();
    assert_eq!(g1.value(o1.seg_prob).data(), g2.value(o2.seg_prob).data());
    assert_eq!(g1.value(o1.recon).data(), g2.value(o2.recon).data());

    let mut g3 = Graph::new();
    let o3 = with.forward(&mut g3, x, GateMode::Learned).unwrap();
    assert_ne!(g3.value(o3.seg_prob).data(), g2.value(o2.seg_prob).data());
}

#[test]
fn every_parameter_receives_gradient() {
    let net = CoupledNetwork::new(cfg(2, 4, 16, true), 13).unwrap();
    let x = random_batch(14, [2, 3, 16, 16], -1.0, 1.0);
    let target = random_batch(15, [2, 3, 16, 16], -0.5, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mask = Tensor::from_vec([2, 1, 16, 16], (0..512).map(|_| f64::from(rng.random_bool(0.3) as u8)).collect()).unwrap();

    let mut g = Graph::new();
    let out = net.forward(&mut g, x, GateMode::Learned).unwrap();
    let seeds = vec![
        (out.recon, reconstruction_loss_grad(g.value(out.recon), &target).unwrap()),
        (out.seg_prob, segmentation_loss_grad(g.value(out.seg_prob), &mask, 1e-7).unwrap()),
    ];
    let grads = g.backward(seeds, net.params().len());
    for (name, grad) in net.param_names().iter().zip(&grads) {
        let grad = grad.as_ref().unwrap_or_else(|| panic!("{name}: no gradient"));
        assert!(grad.data().iter().any(|v| *v != 0.0), "{name}: all-zero gradient");
    }
}

#[test]
fn segmentation_loss_reaches_encoder_through_reconstruction_decoder() {
    let net = CoupledNetwork::new(cfg(2, 4, 16, true), 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mask = Tensor::from_vec([1, 1, 16, 16], (0..256).map(|_| f64::from(rng.random_bool(0.3) as u8)).collect()).unwrap();
    let mut g = Graph::new();
    let out = net.forward(&mut g, random_batch(19, [1, 3, 16, 16], -1.0, 1.0), GateMode::Learned).unwrap();
    let seed = segmentation_loss_grad(g.value(out.seg_prob), &mask, 1e-7).unwrap();
    let grads = g.backward(vec![(out.seg_prob, seed)], net.params().len());
    for (name, grad) in net.param_names().iter().zip(&grads) {
        if name.starts_with("sel.head") {
            assert!(grad.is_none(), "{name}");
            continue;
        }
        let grad = grad.as_ref().unwrap_or_else(|| panic!("{name}: no gradient"));
        assert!(grad.l2_norm() > 0.0, "{name}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(CoupledNetwork::new(cfg(1, 8, 64, true), 0).is_err());
    assert!(CoupledNetwork::new(cfg(4, 2, 64, true), 0).is_err());
    assert!(CoupledNetwork::new(cfg(4, 8, 60, true), 0).is_err());
    assert!(CoupledNetwork::new(cfg(5, 8, 32, true), 0).is_err());
    let net = CoupledNetwork::new(ModelConfig::desk(), 0).unwrap();
    assert!(net.infer(Tensor::zeros([1, 3, 32, 32])).is_err());
}
