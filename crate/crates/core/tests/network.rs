//! Network assembly, head separation and head removal.

use confoundnet::network::{combined_loss, ConvSpec, Network, NetworkConfig, PoseMode};
use confoundnet::pose::{quat_from_azimuth, Azimuth, Quaternion};
use confoundnet::tensor::{conv2d_forward, fc_forward, maxpool2_forward, relu_forward, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_config(rng: &mut impl Rng) -> NetworkConfig {
    let size = 4 * rng.random_range(2..=5);
    let stages = rng.random_range(1..=2);
    let conv = (0..stages)
        .map(|_| {
            let kernel = [1, 3, 5][rng.random_range(0..3)];
            ConvSpec::new(rng.random_range(1..=6), kernel, kernel / 2)
        })
        .collect::<Vec<_>>();
    let mode = if rng.random_bool(0.5) { PoseMode::Azimuth } else { PoseMode::Quaternion };
    NetworkConfig {
        input: [rng.random_range(1..=2), size, size],
        pose_tap: rng.random_bool(0.3).then(|| rng.random_range(0..=stages)),
        conv,
        hidden: rng.random_range(2..=40),
        classes: rng.random_range(2..=10),
        pose_mode: mode,
        init_std: 0.1,
    }
}

fn batch(cfg: &NetworkConfig, n: usize, rng: &mut impl Rng) -> Tensor {
    let [c, h, w] = cfg.input;
    Tensor::randn(&[n, c, h, w], 1.0, rng)
}

fn azimuth_truth(n: usize, rng: &mut impl Rng) -> Vec<Quaternion> {
    (0..n)
        .map(|_| quat_from_azimuth(Azimuth::new(rng.random_range(0.0..6.28))))
        .collect()
}

#[test]
fn pose_head_adds_exactly_tap_width_plus_one_times_dim() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let cfg = random_config(&mut rng);
        let pose = Network::build(cfg.clone(), 1).unwrap();
        let base = Network::build(cfg.clone().with_pose(PoseMode::None), 1).unwrap();
        let width = cfg.hidden_width(cfg.tap_index()).unwrap();
        assert_eq!(
            pose.param_count() - base.param_count(),
            (width + 1) * cfg.pose_mode.dim(),
            "{cfg:?}"
        );
    }
    // the top hidden layer tap is the default
    let desk = NetworkConfig::desk_default().with_pose(PoseMode::Azimuth);
    let (p, b) = (Network::build(desk.clone(), 0).unwrap(), Network::build(NetworkConfig::desk_default(), 0).unwrap());
    assert_eq!(p.param_count() - b.param_count(), (desk.hidden + 1) * 2);
}

#[test]
fn forward_replays_the_kernels_in_order() {
    let cfg = NetworkConfig::desk_default().with_pose(PoseMode::Quaternion);
    let net = Network::build(cfg.clone(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let x = batch(&cfg, 3, &mut rng);
    let out = net.forward(&x).unwrap();

    let layers: Vec<_> = net.layers().collect();
    let mut a = x.clone();
    for (spec, p) in cfg.conv.iter().zip(&layers) {
        a = conv2d_forward(&a, p, spec.stride, spec.pad).unwrap().0;
        a = relu_forward(&a).unwrap().0;
        a = maxpool2_forward(&a).unwrap().0;
    }
    let k = cfg.conv.len();
    let hid = relu_forward(&fc_forward(&a, layers[k]).unwrap().0).unwrap().0;
    let logits = fc_forward(&hid, layers[k + 1]).unwrap().0;
    let pose = fc_forward(&hid, layers[k + 2]).unwrap().0;
    assert_eq!(out.logits.data, logits.data);
    assert_eq!(out.pose_raw.unwrap().data, pose.data);
    assert_eq!(net.trunk_evaluations(), 1);
}

#[test]
fn shared_parameters_start_identical() {
    let base = Network::build(NetworkConfig::desk_default(), 9).unwrap();
    let pose = Network::build(NetworkConfig::desk_default().with_pose(PoseMode::Azimuth), 9).unwrap();
    for (a, b) in base.shared_layers().zip(pose.shared_layers()) {
        assert_eq!(a, b);
    }
}

#[test]
fn lambda_zero_leaves_trunk_gradients_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..5 {
        let cfg = random_config(&mut rng);
        let mut pose = Network::build(cfg.clone(), 2).unwrap();
        let mut base = Network::build(cfg.clone().with_pose(PoseMode::None), 2).unwrap();
        let x = batch(&cfg, 4, &mut rng);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..cfg.classes)).collect();
        let truth = azimuth_truth(4, &mut rng);
        let truth: Vec<Quaternion> = if cfg.pose_mode == PoseMode::Quaternion {
            truth.iter().map(|q| Quaternion::new(q.w, 0.3, -0.2, q.z)).collect()
        } else {
            truth
        };

        let po = pose.forward(&x).unwrap();
        let pl = combined_loss(&po.logits, po.pose_raw.as_ref(), &labels, Some(&truth), 0.0).unwrap();
        pose.backward(&po.cache, &pl.grads).unwrap();
        let bo = base.forward(&x).unwrap();
        let bl = combined_loss(&bo.logits, None, &labels, None, 0.0).unwrap();
        base.backward(&bo.cache, &bl.grads).unwrap();

        assert_eq!(pl.total, bl.total);
        assert!(pl.pose.is_some(), "pose term is still reported");
        for (a, b) in pose.shared_layers().zip(base.shared_layers()) {
            assert_eq!(a.weights.grad, b.weights.grad);
            assert_eq!(a.bias.grad, b.bias.grad);
        }
        let head = pose.pose_head().unwrap();
        assert!(head.weights.grad.iter().chain(&head.bias.grad).all(|&g| g == 0.0));
    }
}

#[test]
fn lambda_scales_only_the_pose_gradient() {
    let cfg = NetworkConfig::gradcheck_small();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let x = batch(&cfg, 3, &mut rng);
    let labels = vec![0, 1, 2];
    let truth = azimuth_truth(3, &mut rng);
    let head_grad = |lambda: f64| {
        let mut net = Network::build(cfg.clone(), 4).unwrap();
        let out = net.forward(&x).unwrap();
        let loss = combined_loss(&out.logits, out.pose_raw.as_ref(), &labels, Some(&truth), lambda).unwrap();
        net.backward(&out.cache, &loss.grads).unwrap();
        let head = net.pose_head().unwrap().weights.grad.clone();
        let class = net.layers().nth(cfg.conv.len() + 1).unwrap().weights.grad.clone();
        (loss, head, class)
    };
    let (l1, g1, c1) = head_grad(1.0);
    let (l3, g3, c3) = head_grad(3.0);
    assert_eq!(c1, c3, "class head sees only the class term");
    for (a, b) in g1.iter().zip(&g3) {
        assert!((3.0 * a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
    assert!((l3.total - (l3.class + 3.0 * l3.pose.unwrap())).abs() <= 1e-12);
    assert_eq!(l1.class, l3.class);
}

#[test]
fn stripping_keeps_logits_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let cfg = NetworkConfig::desk_default().with_pose(PoseMode::Azimuth);
    let mut net = Network::build(cfg.clone(), 6).unwrap();
    for l in net.layers_mut() {
        l.bias.data.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    let stripped = net.strip_pose_head().unwrap();
    assert!(!stripped.has_pose_head());
    assert_eq!(net.param_count() - stripped.param_count(), net.pose_head_param_count());
    for _ in 0..10 {
        let x = batch(&cfg, 10, &mut rng);
        let a = net.logits(&x).unwrap();
        let b = stripped.logits(&x).unwrap();
        assert!(a.data.iter().zip(&b.data).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert!(stripped.strip_pose_head().is_err());
}

#[test]
fn identical_seed_builds_identical_networks() {
    let cfg = NetworkConfig::desk_default().with_pose(PoseMode::Quaternion);
    assert_eq!(Network::build(cfg.clone(), 42).unwrap(), Network::build(cfg.clone(), 42).unwrap());
    assert_ne!(Network::build(cfg.clone(), 42).unwrap(), Network::build(cfg, 43).unwrap());
}

#[test]
fn default_init_std_is_respected() {
    let net = Network::build(NetworkConfig::mstar_preset(), 7).unwrap();
    let big = net.layers().max_by_key(|l| l.weights.len()).unwrap();
    assert!(big.weights.len() >= 100_000);
    let n = big.weights.len() as f64;
    let mean = big.weights.data.iter().sum::<f64>() / n;
    let std = (big.weights.data.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std - 0.01).abs() <= 0.0005, "sample std {std}");
    assert!(big.bias.data.iter().all(|&b| b == 0.0));
}
