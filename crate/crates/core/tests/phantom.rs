use latentseg::labels::{harmonize, HarmonizationMap, LabelTable};
use latentseg::phantom::*;
use latentseg::volume::{Plane, Volume};
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_2;

fn counts(labels: &[u16]) -> [usize; 10] {
    let mut c = [0; 10];
    for &l in labels {
        c[l as usize] += 1;
    }
    c
}

#[test]
fn concentric_scene_centre_is_innermost() {
    let ball = |r: f64, l: u16| Primitive {
        shape: Shape::Ellipsoid {
            center: [0.0; 3],
            semi_axes: [r; 3],
            mirrored: false,
        },
        label: LabelRule::Fixed(l),
    };
    let mut scene = PhantomScene::canonical();
    scene.primitives = vec![ball(6.0, 1), ball(4.0, 4), ball(2.0, 8)];
    let (_, l) = scene.render(&Pose::identity(), 1.0, [17, 17, 17], Modality::T1);
    assert_eq!(l.get(8, 8, 8), 8);
    assert_eq!(l.get(0, 0, 0), 0);
}

#[test]
fn quarter_turn_is_an_axis_permutation() {
    let scene = PhantomScene::sample(11);
    let n = 18;
    let (i0, l0) = scene.render(&Pose::identity(), 0.9, [n, n, n], Modality::T2);
    let (i90, l90) = scene.render(
        &Pose {
            theta: FRAC_PI_2,
            t: [0.0; 3],
        },
        0.9,
        [n, n, n],
        Modality::T2,
    );
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                assert_eq!(l90.get(z, y, x), l0.get(z, n - 1 - x, y));
                assert_eq!(
                    i90.get(z, y, x).to_bits(),
                    i0.get(z, n - 1 - x, y).to_bits()
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rendering_at_a_pose_equals_rendering_the_moved_scene(
        seed in 0u64..1000,
        theta in -3.2f64..3.2,
        tx in -1.0f64..1.0, ty in -1.0f64..1.0, tz in -1.0f64..1.0,
    ) {
        let scene = PhantomScene::sample(seed);
        let pose = Pose { theta, t: [tx, ty, tz] };
        let (ia, la) = scene.render(&pose, 1.0, [16, 16, 16], Modality::T1);
        let (ib, lb) = scene.transformed(&pose).render(&Pose::identity(), 1.0, [16, 16, 16], Modality::T1);
        prop_assert_eq!(la, lb);
        prop_assert!(ia.data.iter().zip(&ib.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn harmonisation_is_idempotent(seed in 0u64..1000) {
        let (_, l) = PhantomScene::sample(seed).render(&Pose::identity(), 1.0, [16, 16, 16], Modality::T2);
        let map = HarmonizationMap {
            merges: vec![(vec![2, 3], 2), (vec![6, 7, 8, 9], 6)],
            removals: vec![1],
            masks: vec![],
            keep: vec![4, 5],
        };
        let once = harmonize(&l, &map, None).unwrap();
        prop_assert!(!once.data.contains(&3) && !once.data.contains(&1));
        prop_assert_eq!(harmonize(&once, &map, None).unwrap(), once);
    }
}

// Label fractions of the canonical scene over a 16 mm field of view,
// measured once per resolution.
const FRACTIONS: [(f64, usize, [f64; 10]); 3] = [
    (
        0.5,
        32,
        [
            0.8001708984375,
            0.084228515625,
            0.0296630859375,
            0.0296630859375,
            0.022796630859375,
            0.022796630859375,
            0.003021240234375,
            0.003021240234375,
            0.0023193359375,
            0.0023193359375,
        ],
    ),
    (
        0.8,
        20,
        [
            0.7985, 0.068, 0.033, 0.033, 0.02875, 0.02875, 0.00275, 0.00275, 0.00225, 0.00225,
        ],
    ),
    (
        1.0,
        16,
        [
            0.7978515625,
            0.068359375,
            0.033203125,
            0.033203125,
            0.028564453125,
            0.028564453125,
            0.002685546875,
            0.002685546875,
            0.00244140625,
            0.00244140625,
        ],
    ),
];

#[test]
fn label_fractions_are_stable_across_resolutions() {
    let scene = PhantomScene::canonical();
    let mut measured = Vec::new();
    for (res, n, frozen) in FRACTIONS {
        let (_, l) = scene.render(&Pose::identity(), res, [n, n, n], Modality::T2);
        let f = counts(&l.data).map(|c| c as f64 / l.data.len() as f64);
        for k in 0..10 {
            assert!(
                (f[k] - frozen[k]).abs() < 1e-6,
                "res {res} label {k}: {} vs frozen {}",
                f[k],
                frozen[k]
            );
        }
        measured.push(f);
    }
    for a in &measured {
        for b in &measured {
            for k in 0..10 {
                assert!(
                    (a[k] - b[k]).abs() <= 0.02,
                    "label {k}: {} vs {}",
                    a[k],
                    b[k]
                );
            }
        }
    }
}

#[test]
fn mirrored_pose_swaps_hemisphere_volumes() {
    let scene = PhantomScene::canonical();
    for (theta, t) in [
        (0.0, [0.0; 3]),
        (0.4, [0.3, -0.2, 0.1]),
        (-1.3, [-0.5, 0.4, 0.0]),
    ] {
        let (_, a) = scene.render(&Pose { theta, t }, 0.5, [32; 3], Modality::T2);
        let (_, b) = scene.render(
            &Pose {
                theta: -theta,
                t: [-t[0], t[1], t[2]],
            },
            0.5,
            [32; 3],
            Modality::T2,
        );
        let (ca, cb) = (counts(&a.data), counts(&b.data));
        for left in [2, 4, 6, 8] {
            let (l, r) = (ca[left] as f64, cb[left + 1] as f64);
            assert!((l - r).abs() <= 0.01 * l.max(r), "label {left}: {l} vs {r}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn volume_file_round_trips_bit_exactly(
        dims in prop::array::uniform3(1usize..6),
        res in 0.01f64..5.0,
        seed in any::<u64>(),
        theta in any::<f64>(),
        t in prop::array::uniform3(any::<f64>()),
        words in prop::collection::vec(any::<u32>(), 125),
        labels_kind in any::<bool>(),
    ) {
        let n = dims.iter().product::<usize>();
        let header = VolumeHeader { dims, res, modality: 2, scene_seed: seed, pose: Pose { theta, t } };
        let data = if labels_kind {
            VolumeData::Labels(words[..n].iter().map(|&w| w as u16).collect())
        } else {
            VolumeData::Intensity(words[..n].iter().map(|&w| f32::from_bits(w)).collect())
        };
        let file = VolumeFile { header, data };
        let bytes = file.to_bytes();
        let back = VolumeFile::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.header.pose.theta.to_bits(), theta.to_bits());
    }
}

#[test]
fn volume_file_rejects_bad_payloads() {
    let v = Volume::new([2, 2, 2], 1.0, vec![1u16; 8]).unwrap();
    let mut bytes = VolumeFile::from_labels(&v, 3, Pose::identity()).to_bytes();
    bytes.pop();
    assert!(VolumeFile::from_bytes(&bytes).is_err());
    assert!(VolumeFile::from_bytes(b"nope").is_err());
}

fn counts3() -> SplitCounts {
    SplitCounts {
        train: 9,
        val: 3,
        test: 4,
    }
}

#[test]
fn manifest_is_deterministic_and_round_robin() {
    let policy = PosePolicy::default();
    let res = [0.5, 0.8, 1.0];
    let a = generate_split(
        counts3(),
        &policy,
        &res,
        &[Modality::T2, Modality::T1],
        16.0,
        5,
    )
    .unwrap();
    let b = generate_split(
        counts3(),
        &policy,
        &res,
        &[Modality::T2, Modality::T1],
        16.0,
        5,
    )
    .unwrap();
    assert_eq!(a.to_text(), b.to_text());
    let c = generate_split(
        counts3(),
        &policy,
        &res,
        &[Modality::T2, Modality::T1],
        16.0,
        6,
    )
    .unwrap();
    assert_ne!(a.to_text(), c.to_text());

    for r in res {
        assert_eq!(a.split(Split::Train).filter(|e| e.res == r).count(), 3);
    }
    let extents: Vec<usize> = a.split(Split::Train).take(3).map(|e| e.extent).collect();
    assert_eq!(extents, vec![32, 20, 16]);

    let mut seeds = std::collections::HashSet::new();
    for e in &a.entries {
        assert!(seeds.insert(e.scene_seed));
    }
    for e in a.split(Split::Train).chain(a.split(Split::Val)) {
        assert!(e.pose.theta.abs() <= 20f64.to_radians() + 1e-12);
    }
    for e in a.split(Split::Test) {
        let d = e.pose.theta.abs().to_degrees();
        assert!((60.0 - 1e-9..=120.0 + 1e-9).contains(&d), "{d}");
    }
    assert_eq!(Manifest::from_text(&a.to_text()).unwrap(), a);
}

#[test]
fn manifest_rejects_empty_splits() {
    let c = SplitCounts {
        train: 1,
        val: 0,
        test: 1,
    };
    assert!(generate_split(c, &PosePolicy::default(), &[1.0], &[Modality::T2], 16.0, 1).is_err());
}

#[test]
fn materialised_volumes_match_renders() {
    let dir = tempfile::tempdir().unwrap();
    let c = SplitCounts {
        train: 1,
        val: 1,
        test: 1,
    };
    let m = generate_split(c, &PosePolicy::default(), &[1.0], &[Modality::T2], 16.0, 2).unwrap();
    materialize(&m, dir.path()).unwrap();
    let back = Manifest::load(&dir.path().join("manifest.tsv")).unwrap();
    assert_eq!(back, m);
    for e in &m.entries {
        let (img, lab) = e.render();
        let fi = read_volume(&dir.path().join(&e.image)).unwrap();
        assert_eq!(fi.header.scene_seed, e.scene_seed);
        assert_eq!(fi.into_intensity().unwrap(), img);
        assert_eq!(
            read_volume(&dir.path().join(&e.labels))
                .unwrap()
                .into_labels()
                .unwrap(),
            lab
        );
    }
}

#[test]
fn slices_follow_plane_and_label_scheme() {
    let table = LabelTable::phantom_default();
    let (img, lab) =
        PhantomScene::canonical().render(&Pose::identity(), 1.0, [16; 3], Modality::T2);
    let axial = slice_iter(&img, &lab, Plane::Axial, false, &table).unwrap();
    assert_eq!(axial.len(), 16);
    assert!(axial
        .iter()
        .all(|s| s.image.h == 16 && s.image.w == 16 && s.labels.res == 1.0));

    let kept = slice_iter(&img, &lab, Plane::Axial, true, &table).unwrap();
    assert!(kept.len() < 16 && !kept.is_empty());
    assert!(kept.iter().all(|s| s.labels.data.iter().any(|&l| l != 0)));

    let sag = slice_iter(&img, &lab, Plane::Sagittal, true, &table).unwrap();
    assert!(sag.iter().all(|s| s
        .labels
        .data
        .iter()
        .all(|&l| (l as usize) < table.sagittal_len())));
    assert!(sag.iter().any(|s| s.labels.data.contains(&5)));

    let empty = Volume::filled([16; 3], 1.0, 0u16);
    let blank = Volume::filled([16; 3], 1.0, 0f32);
    assert!(slice_iter(&blank, &empty, Plane::Coronal, true, &table)
        .unwrap()
        .is_empty());
}
