use std::f64::consts::PI;
use std::time::Instant;

use latentseg::augment::{apply_external, ExternalParams};
use latentseg::geometry::LatentAugmentation;
use latentseg::phantom::{Modality, PhantomScene, Pose};
use latentseg::sampler::{transform_forward, transform_inverse};
use latentseg::tensor::{FeatureMap, Tensor4};
use latentseg::volume::{IntensitySlice, LabelSlice, Plane};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn identity_transition_reproduces_any_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    for _ in 0..20 {
        let shape = [
            rng.random_range(1..4),
            rng.random_range(1..9),
            rng.random_range(4..48),
            rng.random_range(4..48),
        ];
        let x = Tensor4::<f32>::from_fn(shape, |_, _, _, _| rng.random_range(-100.0..100.0));
        let u = FeatureMap::new(x.clone(), 0.8).unwrap();
        let (v, ctx) = transform_forward(&u, &[LatentAugmentation::identity()], 0.8).unwrap();
        assert!(v.data.max_abs_diff(&x) <= 1e-6);
        let back = transform_inverse(&v, &ctx).unwrap();
        assert!(back.data.max_abs_diff(&x) <= 1e-6);
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

fn blob(n: usize, sigma: f64, centre: [f64; 2]) -> Tensor4<f64> {
    Tensor4::from_fn([1, 1, n, n], |_, _, i, j| {
        let (y, x) = (i as f64 + 0.5 - centre[1], j as f64 + 0.5 - centre[0]);
        (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
    })
}

/// Interior RMSE (relative to the unit peak) of a forward-then-inverse
/// transition. Everything is measured in units of the blob width so the
/// same geometry can be replayed at a finer sampling.
fn round_trip_rmse(upsample: usize, theta: f64, t_sigma: [f64; 2]) -> f64 {
    let sigma = 4.0 * upsample as f64;
    let n = 64 * upsample;
    let c = n as f64 / 2.0;
    let x = blob(n, sigma, [c + 0.3 * sigma, c - 0.2 * sigma]);
    let aug = LatentAugmentation {
        theta,
        t: [t_sigma[0] * sigma, t_sigma[1] * sigma],
        alpha: 0.0,
    };
    let u = FeatureMap::new(x.clone(), 1.0).unwrap();
    let (v, ctx) = transform_forward(&u, &[aug], 1.0).unwrap();
    let back = transform_inverse(&v, &ctx).unwrap();
    let radius = 4.0 * sigma;
    let (mut se, mut count) = (0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            let (y, x0) = (i as f64 + 0.5 - c, j as f64 + 0.5 - c);
            if x0 * x0 + y * y <= radius * radius {
                se += (back.data.get(0, 0, i, j) - x.get(0, 0, i, j)).powi(2);
                count += 1;
            }
        }
    }
    (se / count as f64).sqrt()
}

pub fn blob_round_trip_error_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..40 {
        let theta = if k == 0 {
            PI / 4.0
        } else {
            rng.random_range(-PI / 4.0..=PI / 4.0)
        };
        let t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let coarse = round_trip_rmse(1, theta, t);
        worst = worst.max(coarse);
        assert!(coarse <= 0.01, "theta {theta}: rmse {coarse}");
        if k < 4 {
            // Same geometry sampled 4x finer: a pure interpolation error must
            // shrink roughly with the square of the pixel size.
            let fine = round_trip_rmse(4, theta, t);
            assert!(fine < coarse / 8.0, "coarse {coarse}, fine {fine}");
        }
    }
    println!(
        "worst interior RMSE over 40 round trips: {:.3}% of peak",
        100.0 * worst
    );
}

fn ribbon_dsc(a: &[u16], b: &[u16], members: &[u16]) -> f64 {
    let ina = |l: u16| members.contains(&l);
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for (&x, &y) in a.iter().zip(b) {
        na += ina(x) as usize;
        nb += ina(y) as usize;
        both += (ina(x) && ina(y)) as usize;
    }
    200.0 * both as f64 / (na + nb) as f64
}

fn nn_round_trip(labels: &LabelSlice, theta: f64) -> LabelSlice {
    let image = IntensitySlice::filled(labels.h, labels.w, labels.res, 0.0);
    let fwd = ExternalParams {
        theta,
        t: [0.0, 0.0],
        s: 1.0,
    };
    let back = ExternalParams {
        theta: -theta,
        ..fwd
    };
    let (_, l1) = apply_external(&image, labels, &fwd).unwrap();
    apply_external(&image, &l1, &back).unwrap().1
}

pub fn nearest_neighbour_round_trip_erodes_a_thin_ribbon() {
    // One-pixel ring.
    let n = 64;
    let ring: Vec<u16> = (0..n * n)
        .map(|k| {
            let (y, x) = ((k / n) as f64 + 0.5 - 32.0, (k % n) as f64 + 0.5 - 32.0);
            let r = (x * x + y * y).sqrt();
            (20.0..21.0).contains(&r) as u16
        })
        .collect();
    let ring = LabelSlice::new(n, n, 1.0, ring).unwrap();

    // Phantom cortex at 1 mm, where the ribbon is about one voxel thick.
    let scene = PhantomScene::canonical();
    let (_, vol) = scene.render(&Pose::identity(), 1.0, [16, 16, 16], Modality::T2);
    let cortex = vol.slice(Plane::Axial, 8);

    for theta in [PI / 4.0, -PI / 4.0] {
        let d_ring = ribbon_dsc(&ring.data, &nn_round_trip(&ring, theta).data, &[1]);
        let d_cortex = ribbon_dsc(&cortex.data, &nn_round_trip(&cortex, theta).data, &[2, 3]);
        println!(
            "theta {:+.0} deg: ring DSC {d_ring:.2}, phantom cortex DSC {d_cortex:.2}",
            theta.to_degrees()
        );
        assert!(d_ring < 95.0);
        assert!(d_cortex < 95.0);

        // The analytic path renders the moved scene directly and moving it
        // back composes to the identity pose: nothing is resampled.
        let pose = Pose { theta, t: [0.0; 3] };
        let moved = scene.transformed(&pose).transformed(&Pose {
            theta: -theta,
            t: [0.0; 3],
        });
        let (_, again) = moved.render(&Pose::identity(), 1.0, [16, 16, 16], Modality::T2);
        assert_eq!(
            ribbon_dsc(&cortex.data, &again.slice(Plane::Axial, 8).data, &[2, 3]),
            100.0
        );
    }
}
