use latentseg::geometry::LatentAugmentation;
use latentseg::network::{argmax_channels, checkpoint, Network, NetworkConfig, Variant};
use latentseg::nnops::Mode;
use latentseg::tensor::{FeatureMap, Tensor4};
use latentseg::volume::Plane;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(variant: Variant) -> NetworkConfig {
    NetworkConfig {
        variant,
        depth: 2,
        channels: vec![4, 4],
        num_classes: 3,
        res_inner: 0.8,
        plane: Plane::Axial,
        in_channels: 1,
        convs_per_block: 2,
    }
}

fn random_input(shape: [usize; 4], res: f64, seed: u64) -> FeatureMap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::new(
        Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0)),
        res,
    )
    .unwrap()
}

fn random_labels(n: usize, classes: u16, seed: u64) -> Vec<u16> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

fn full_gradient_check(variant: Variant, aug: LatentAugmentation<f64>, res: f64) {
    full_gradient_check_with(tiny(variant), [2, 1, 8, 8], aug, res);
}

fn full_gradient_check_with(
    cfg: NetworkConfig,
    shape: [usize; 4],
    aug: LatentAugmentation<f64>,
    res: f64,
) {
    let variant = cfg.variant;
    let classes = cfg.num_classes as u16;
    let mut net = Network::<f64>::new(cfg, 3).unwrap();
    let x = random_input(shape, res, 11);
    let pixels = shape[0] * shape[2] * shape[3];
    let labels = random_labels(pixels, classes, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let weights: Vec<f64> = (0..pixels).map(|_| rng.random_range(0.5..2.0)).collect();
    let augs = [aug];
    net.loss_and_gradients(&x, &labels, &weights, &augs)
        .unwrap();
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();
    let trainable: Vec<bool> = net.params().iter().map(|p| p.trainable).collect();
    let h = 1e-6;
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for (pi, g) in analytic.iter().enumerate() {
        if !trainable[pi] {
            continue;
        }
        // every fourth entry keeps the runtime modest
        for k in (0..g.len()).step_by(4) {
            let orig = net.params()[pi].value[k];
            net.params_mut()[pi].value[k] = orig + h;
            let lp = net
                .loss_and_gradients(&x, &labels, &weights, &augs)
                .unwrap()
                .total;
            net.params_mut()[pi].value[k] = orig - h;
            let lm = net
                .loss_and_gradients(&x, &labels, &weights, &augs)
                .unwrap()
                .total;
            net.params_mut()[pi].value[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - g[k]).abs() / (fd.abs().max(g[k].abs()).max(1e-3));
            worst = worst.max(err);
            checked += 1;
        }
    }
    assert!(checked > 100);
    assert!(worst < 1e-2, "{variant}: worst relative error {worst}");
}

pub fn full_network_gradients_vinna() {
    full_gradient_check(
        Variant::Vinna,
        LatentAugmentation {
            theta: 0.3,
            t: [0.4, -0.2],
            alpha: 0.05,
        },
        0.7,
    );
}

pub fn full_network_gradients_cnn() {
    full_gradient_check(Variant::CnnStar, LatentAugmentation::identity(), 1.0);
}

/// Three levels: several decoder blocks and odd extents (5 → 3, 9 → 5) in
/// the pooling path.
fn deeper(variant: Variant) -> NetworkConfig {
    NetworkConfig {
        depth: 3,
        channels: vec![3, 4, 3],
        in_channels: 2,
        convs_per_block: 3,
        ..tiny(variant)
    }
}

pub fn deeper_network_gradients_vinna() {
    let aug = LatentAugmentation {
        theta: -0.5,
        t: [0.3, 0.1],
        alpha: -0.03,
    };
    full_gradient_check_with(deeper(Variant::Vinna), [2, 2, 10, 10], aug, 0.8);
}

pub fn deeper_network_gradients_cnn() {
    full_gradient_check_with(
        deeper(Variant::CnnStar),
        [2, 2, 18, 18],
        LatentAugmentation::identity(),
        1.0,
    );
}

pub fn shape_contract_across_variants() {
    for variant in [Variant::CnnStar, Variant::Vinn, Variant::Vinna] {
        let mut cfg = tiny(variant);
        cfg.depth = 3;
        cfg.channels = vec![4, 6, 5];
        let net = Network::<f32>::new(cfg, 1).unwrap();
        for (h, w, res) in [(16, 16, 1.0), (20, 18, 0.8), (32, 30, 0.5)] {
            let x = FeatureMap::new(Tensor4::<f32>::full([2, 1, h, w], 0.25), res).unwrap();
            let y = net.predict(&x, &[LatentAugmentation::identity()]).unwrap();
            assert_eq!(y.shape(), [2, 3, h, w]);
            assert_eq!(y.res, res);
            for s in 0..2 {
                for q in 0..h * w {
                    let sum: f32 = (0..3).map(|c| y.data.plane(s, c)[q]).sum();
                    assert!((sum - 1.0).abs() < 1e-5);
                }
            }
        }
    }
}

pub fn latent_extent_follows_resolution() {
    let mut cfg = NetworkConfig::default();
    cfg.channels = vec![2, 2, 2, 2, 2];
    cfg.convs_per_block = 2;
    let net = Network::<f32>::new(cfg, 0).unwrap();
    let x = FeatureMap::new(Tensor4::<f32>::zeros([1, 1, 64, 64]), 0.5).unwrap();
    assert_eq!(
        net.predict(&x, &[LatentAugmentation::identity()])
            .unwrap()
            .shape(),
        [1, 10, 64, 64]
    );
    // 40 x 40 latent grid is just above 2^5
    let small = FeatureMap::new(Tensor4::<f32>::zeros([1, 1, 36, 36]), 0.5).unwrap();
    assert!(net
        .predict(&small, &[LatentAugmentation::identity()])
        .is_err());
}

pub fn identity_collapse_vinna_equals_vinn() {
    let vinna = Network::<f32>::new(tiny(Variant::Vinna), 5).unwrap();
    let mut vinn = vinna.clone();
    vinn.config.variant = Variant::Vinn;
    let x = random_input([2, 1, 12, 12], 0.6, 1);
    let x = FeatureMap::new(x.data.cast::<f32>(), x.res).unwrap();
    let a = vinna
        .predict(&x, &[LatentAugmentation::identity()])
        .unwrap();
    let b = vinn.predict(&x, &[LatentAugmentation::identity()]).unwrap();
    assert_eq!(a.data.data(), b.data.data());
}

pub fn cnn_rejects_augmentation_and_vinn_rejects_rotation() {
    let cnn = Network::<f32>::new(tiny(Variant::CnnStar), 0).unwrap();
    let x = FeatureMap::new(Tensor4::<f32>::zeros([1, 1, 8, 8]), 1.0).unwrap();
    let rot = LatentAugmentation {
        theta: 0.1,
        t: [0.0, 0.0],
        alpha: 0.0,
    };
    assert!(cnn.predict(&x, &[rot]).is_err());
    let vinn = Network::<f32>::new(tiny(Variant::Vinn), 0).unwrap();
    assert!(vinn.predict(&x, &[rot]).is_err());
    assert!(vinn
        .predict(
            &x,
            &[LatentAugmentation {
                theta: 0.0,
                t: [0.0, 0.0],
                alpha: 0.05
            }]
        )
        .is_ok());
}

pub fn eval_is_deterministic_and_probe_identity_is_exact() {
    let net = Network::<f32>::new(tiny(Variant::Vinna), 9).unwrap();
    let x = FeatureMap::new(
        Tensor4::<f32>::from_fn([1, 1, 10, 10], |_, _, i, j| (i * j) as f32 / 50.0),
        0.8,
    )
    .unwrap();
    let a = net.predict(&x, &[LatentAugmentation::identity()]).unwrap();
    let b = net.predict(&x, &[LatentAugmentation::identity()]).unwrap();
    assert_eq!(a.data.data(), b.data.data());
    let (with, reference) = net
        .forward_equivariance_probe(&x, &LatentAugmentation::identity())
        .unwrap();
    assert_eq!(with.data.data(), reference.data.data());
}

pub fn probe_on_symmetric_input_with_quarter_turn() {
    // A rotationally symmetric input and a 90 degree latent turn sample the
    // same lattice points, so untrained weights still agree on the argmax.
    let net = Network::<f64>::new(tiny(Variant::Vinna), 21).unwrap();
    let n = 12;
    let x = FeatureMap::new(
        Tensor4::<f64>::from_fn([1, 1, n, n], |_, _, i, j| {
            let (y, x) = (i as f64 + 0.5 - 6.0, j as f64 + 0.5 - 6.0);
            (-(x * x + y * y) / 8.0).exp()
        }),
        0.8,
    )
    .unwrap();
    let turn = LatentAugmentation {
        theta: std::f64::consts::FRAC_PI_2,
        t: [0.0, 0.0],
        alpha: 0.0,
    };
    let (with, reference) = net.forward_equivariance_probe(&x, &turn).unwrap();
    let a = argmax_channels(&with.data);
    let b = argmax_channels(&reference.data);
    let agree = a.iter().zip(&b).filter(|(p, q)| p == q).count();
    assert!(
        agree as f64 / a.len() as f64 > 0.5,
        "agreement {agree}/{}",
        a.len()
    );
}

pub fn zeroed_latent_path_keeps_shapes() {
    let mut net = Network::<f32>::new(tiny(Variant::Vinna), 2).unwrap();
    let x = FeatureMap::new(Tensor4::<f32>::full([1, 1, 10, 10], 0.5), 0.5).unwrap();
    let y = net
        .forward_without_latent_path(&x, &[LatentAugmentation::identity()])
        .unwrap();
    assert_eq!(y.shape(), [1, 3, 10, 10]);
}

pub fn zero_weights_leave_the_dice_term() {
    let mut net = Network::<f64>::new(tiny(Variant::Vinna), 2).unwrap();
    let x = random_input([1, 1, 8, 8], 0.8, 4);
    let labels = random_labels(64, 3, 5);
    let v = net
        .loss_and_gradients(&x, &labels, &[0.0; 64], &[LatentAugmentation::identity()])
        .unwrap();
    assert_eq!(v.logistic_term, 0.0);
    assert_eq!(v.total, v.dice_term);
}

pub fn duplicated_sample_doubles_the_gradient_share() {
    // In eval mode the samples do not interact, so a batch of two copies has
    // the same mean loss and gradients as one copy; summing instead of
    // averaging doubles them.
    let mut net = Network::<f64>::new(tiny(Variant::Vinna), 6).unwrap();
    let x1 = random_input([1, 1, 8, 8], 0.8, 7);
    let labels = random_labels(64, 3, 8);
    let w = vec![1.0; 64];
    let id = [LatentAugmentation::identity()];
    let l1 = net
        .loss_and_gradients_mode(&x1, &labels, &w, &id, Mode::Eval)
        .unwrap();
    let g1: Vec<f64> = net.params().iter().flat_map(|p| p.grad.clone()).collect();
    let x2 = FeatureMap::new(Tensor4::stack(&[&x1.data, &x1.data]).unwrap(), 0.8).unwrap();
    let labels2: Vec<u16> = labels.iter().chain(&labels).copied().collect();
    let l2 = net
        .loss_and_gradients_mode(&x2, &labels2, &[w.clone(), w].concat(), &id, Mode::Eval)
        .unwrap();
    let g2: Vec<f64> = net.params().iter().flat_map(|p| p.grad.clone()).collect();
    assert!((l1.total - l2.total).abs() < 1e-9);
    // summed per-sample contributions: n * mean gradient
    for (a, b) in g1.iter().zip(&g2) {
        let (s1, s2) = (1.0 * a, 2.0 * b);
        assert!((s2 - 2.0 * s1).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

pub fn checkpoint_round_trip_is_bit_exact() {
    let net = Network::<f32>::new(tiny(Variant::Vinna), 17).unwrap();
    let bytes = checkpoint::to_bytes(&net);
    let back: Network<f32> = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, net);
    assert_eq!(checkpoint::to_bytes(&back), bytes);
    let mut corrupt = bytes.clone();
    corrupt[20] ^= 1;
    assert!(checkpoint::from_bytes::<f32>(&corrupt).is_err());
    assert!(checkpoint::from_bytes::<f32>(&bytes[..bytes.len() - 1]).is_err());
}
