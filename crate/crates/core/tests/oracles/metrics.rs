//! Metrics against brute-force references.

use std::collections::HashSet;
use std::time::Instant;

use latentseg::metrics::{asd, benjamini_hochberg, dsc, wilcoxon_signed_rank, WilcoxonMethod};
use latentseg::volume::{LabelVolume, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 16;

type Voxel = (i64, i64, i64);

/// A random label volume: a few ellipsoids of label 1, optional speckle.
fn random_volume(rng: &mut impl Rng) -> LabelVolume {
    let mut v = Volume::filled([N; 3], rng.random_range(0.5..1.5), 0u16);
    let blobs = rng.random_range(0..4);
    let centers: Vec<([f64; 3], [f64; 3])> = (0..blobs)
        .map(|_| {
            let c = [0; 3].map(|_: i32| rng.random_range(0.0..N as f64));
            let r = [0; 3].map(|_: i32| rng.random_range(1.0..6.0));
            (c, r)
        })
        .collect();
    let speckle = if rng.random_bool(0.3) {
        rng.random_range(0.0..0.03)
    } else {
        0.0
    };
    for z in 0..N {
        for y in 0..N {
            for x in 0..N {
                let p = [z as f64, y as f64, x as f64];
                let hit = centers.iter().any(|(c, r)| {
                    (0..3).map(|k| ((p[k] - c[k]) / r[k]).powi(2)).sum::<f64>() <= 1.0
                });
                if hit || rng.random_bool(speckle) {
                    let i = v.index(z, y, x);
                    v.data[i] = 1;
                }
            }
        }
    }
    v
}

fn mask(v: &LabelVolume) -> HashSet<Voxel> {
    let mut s = HashSet::new();
    for z in 0..N {
        for y in 0..N {
            for x in 0..N {
                if v.get(z, y, x) == 1 {
                    s.insert((z as i64, y as i64, x as i64));
                }
            }
        }
    }
    s
}

/// Mask voxels with a face neighbour outside the mask, in scan order.
fn border(m: &HashSet<Voxel>) -> Vec<Voxel> {
    let mut b: Vec<Voxel> = m
        .iter()
        .copied()
        .filter(|&(z, y, x)| {
            [
                (1, 0, 0),
                (-1, 0, 0),
                (0, 1, 0),
                (0, -1, 0),
                (0, 0, 1),
                (0, 0, -1),
            ]
            .iter()
            .any(|&(a, b, c)| !m.contains(&(z + a, y + b, x + c)))
        })
        .collect();
    b.sort();
    b
}

fn nearest(p: Voxel, set: &[Voxel]) -> f64 {
    set.iter()
        .map(|q| ((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2) + (p.2 - q.2).pow(2)) as f64)
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

pub fn dsc_and_asd_match_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut with_asd = 0;
    for _ in 0..1000 {
        let a = random_volume(&mut rng);
        let mut b = random_volume(&mut rng);
        b.res = a.res;
        let (ma, mb) = (mask(&a), mask(&b));

        let inter = ma.intersection(&mb).count();
        let expected = if ma.is_empty() && mb.is_empty() {
            100.0
        } else {
            100.0 * 2.0 * inter as f64 / (ma.len() + mb.len()) as f64
        };
        assert_eq!(dsc(&a, &b, 1).unwrap(), expected);

        let (ba, bb) = (border(&ma), border(&mb));
        let got = asd(&a, &b, 1).unwrap();
        if ba.is_empty() || bb.is_empty() {
            assert_eq!(got, None);
            continue;
        }
        let mut sum = 0.0;
        for &p in &ba {
            sum += nearest(p, &bb) * a.res;
        }
        for &p in &bb {
            sum += nearest(p, &ba) * a.res;
        }
        assert_eq!(got, Some(sum / (ba.len() + bb.len()) as f64));
        with_asd += 1;
    }
    assert!(with_asd > 500);
    println!(
        "1000 DSC/ASD instances ({with_asd} with ASD) in {:.2?}",
        start.elapsed()
    );
}

pub fn identical_masks_score_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_volume(&mut rng);
    assert_eq!(dsc(&a, &a, 1).unwrap(), 100.0);
    if !mask(&a).is_empty() {
        assert_eq!(asd(&a, &a, 1).unwrap(), Some(0.0));
    }
}

/// Two-sided p from all 2^n sign assignments of the average ranks.
fn wilcoxon_enumerated(x: &[f64], y: &[f64]) -> Option<f64> {
    let d: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|v| *v != 0.0)
        .collect();
    let n = d.len();
    if n == 0 {
        return None;
    }
    let rank = |v: f64| {
        let less = d.iter().filter(|u| u.abs() < v).count() as f64;
        let equal = d.iter().filter(|u| u.abs() == v).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = d.iter().map(|v| rank(v.abs())).collect();
    let observed: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for pattern in 0u64..1 << n {
        let w: f64 = (0..n)
            .filter(|k| pattern >> k & 1 == 1)
            .map(|k| ranks[k])
            .sum();
        le += (w <= observed + 1e-9) as u64;
        ge += (w >= observed - 1e-9) as u64;
    }
    let total = (1u64 << n) as f64;
    Some((2.0 * (le.min(ge) as f64) / total).min(1.0))
}

pub fn wilcoxon_exact_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..400 {
        let n = 1 + case % 10;
        // Small integer grids create ties and zero differences.
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let y: Vec<f64> = (0..n)
            .map(|_| {
                if case % 3 == 0 {
                    rng.random_range(0.0..5.0)
                } else {
                    rng.random_range(0..6) as f64
                }
            })
            .collect();
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        let expected = wilcoxon_enumerated(&x, &y);
        match (r.p, expected) {
            (None, None) => {}
            (Some(p), Some(e)) => {
                assert_eq!(r.method, WilcoxonMethod::Exact);
                assert!(
                    (p - e).abs() < 1e-12,
                    "case {case}: {p} vs {e} for {x:?} / {y:?}"
                );
            }
            other => panic!("case {case}: {other:?}"),
        }
    }
}

pub fn wilcoxon_normal_approximation_tracks_the_exact_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let x: Vec<f64> = (0..26).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| v - 0.15 + rng.random_range(-0.3..0.3))
        .collect();
    let big = wilcoxon_signed_rank(&x, &y).unwrap();
    let small = wilcoxon_signed_rank(&x[..25], &y[..25]).unwrap();
    assert_eq!(big.method, WilcoxonMethod::Normal);
    assert_eq!(small.method, WilcoxonMethod::Exact);
    let (pb, ps) = (big.p.unwrap(), small.p.unwrap());
    assert!(pb < 0.05 && ps < 0.05, "{pb} {ps}");
}

pub fn benjamini_hochberg_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..100 {
        let m = rng.random_range(1..30);
        let alpha = [0.05, 0.1, 0.2][case % 3];
        let p: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random_bool(0.2) {
                    (rng.random_range(0..5) as f64) / 100.0
                } else {
                    rng.random_range(0.0..1.0f64).powi(3)
                }
            })
            .collect();
        let r = benjamini_hochberg(&p, alpha).unwrap();
        // Rank of p_l: number of p-values not above it.
        let rank = |v: f64| p.iter().filter(|&&u| u <= v).count() as f64;
        let k = p
            .iter()
            .filter(|&&v| v <= rank(v) / m as f64 * alpha)
            .map(|&v| rank(v) as usize)
            .max()
            .unwrap_or(0);
        let threshold = {
            let mut s = p.clone();
            s.sort_by(f64::total_cmp);
            if k == 0 {
                -1.0
            } else {
                s[k - 1]
            }
        };
        for i in 0..m {
            let adj = p
                .iter()
                .filter(|&&u| u >= p[i])
                .map(|&u| (u * m as f64 / rank(u)).min(1.0))
                .fold(1.0f64, f64::min);
            assert!(
                (r.adjusted[i] - adj).abs() < 1e-12,
                "case {case}: {} vs {adj}",
                r.adjusted[i]
            );
            assert_eq!(r.rejected[i], p[i] <= threshold, "case {case} index {i}");
            assert_eq!(
                r.rejected[i],
                r.adjusted[i] <= alpha + 1e-15,
                "case {case} index {i}"
            );
        }
    }
}
