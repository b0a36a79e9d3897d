//! External (image/label-space) and internal (latent) spatial augmentation,
//! and intensity augmentation.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{
    build_transform, grid_center, sample_grid, AffineParams, LatentAugmentation,
};
use crate::sampler::sample_tensor;
use crate::tensor::Tensor4;
use crate::volume::{IntensitySlice, LabelSlice};

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return invalid(format!("{name} range {:?} is not ordered", r));
    }
    Ok(())
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Magnitude uniform in `r`, sign uniform.
fn signed(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    let m = uniform(rng, r);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalAugConfig {
    /// Degrees.
    pub rot_range: [f64; 2],
    /// Magnitude of each translation component, pixels.
    pub trans_range: [f64; 2],
    pub scale_range: [f64; 2],
    pub rotate: bool,
    pub translate: bool,
    pub scale: bool,
}

impl Default for ExternalAugConfig {
    fn default() -> Self {
        Self {
            rot_range: [-180.0, 180.0],
            trans_range: [0.0, 15.0],
            scale_range: [0.8, 1.15],
            rotate: true,
            translate: true,
            scale: false,
        }
    }
}

impl ExternalAugConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("rotation", self.rot_range)?;
        check_range("translation", self.trans_range)?;
        check_range("scale", self.scale_range)?;
        if self.trans_range[0] < 0.0 {
            return invalid("translation magnitudes must be non-negative");
        }
        if self.scale_range[0] <= 0.0 {
            return invalid("scale range must exclude zero");
        }
        Ok(())
    }
}

/// External spatial parameters: rotation (radians), translation (pixels) and
/// zoom `s` (`s > 1` enlarges content).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExternalParams {
    pub theta: f64,
    pub t: [f64; 2],
    pub s: f64,
}

impl ExternalParams {
    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            t: [0.0, 0.0],
            s: 1.0,
        }
    }
}

pub fn sample_external(cfg: &ExternalAugConfig, rng: &mut impl Rng) -> ExternalParams {
    let theta = if cfg.rotate {
        uniform(rng, cfg.rot_range).to_radians()
    } else {
        0.0
    };
    let t = if cfg.translate {
        [signed(rng, cfg.trans_range), signed(rng, cfg.trans_range)]
    } else {
        [0.0, 0.0]
    };
    let s = if cfg.scale {
        uniform(rng, cfg.scale_range)
    } else {
        1.0
    };
    ExternalParams { theta, t, s }
}

/// Resamples image (bilinear) and labels (nearest neighbour) with the same
/// matrix, pivoting on the slice centre. Outside the frame both are zero.
pub fn apply_external(
    image: &IntensitySlice,
    labels: &LabelSlice,
    p: &ExternalParams,
) -> Result<(IntensitySlice, LabelSlice)> {
    if (image.h, image.w) != (labels.h, labels.w) {
        return invalid("image and label slices differ in extent");
    }
    let (h, w) = (image.h, image.w);
    let params = AffineParams::new(p.theta, p.t, 1.0 / p.s)?;
    let grid = sample_grid(&build_transform(&params, grid_center(h, w)), h, w)?;
    let u = Tensor4::from_vec([1, 1, h, w], image.data.iter().map(|&v| v as f64).collect())?;
    let g = sample_tensor(&u, std::slice::from_ref(&grid))?;
    let img = IntensitySlice {
        h,
        w,
        res: image.res,
        data: g.data().iter().map(|&v| v as f32).collect(),
    };
    let lab = grid
        .coords
        .iter()
        .map(|&[x, y]| {
            let (j, i) = (x.floor(), y.floor());
            if i < 0.0 || j < 0.0 || i >= h as f64 || j >= w as f64 {
                0
            } else {
                labels.data[i as usize * w + j as usize]
            }
        })
        .collect();
    Ok((
        img,
        LabelSlice {
            h,
            w,
            res: labels.res,
            data: lab,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InternalAugConfig {
    /// Degrees.
    pub rot_range: [f64; 2],
    /// Magnitude of each translation component, inner-grid pixels.
    pub trans_range: [f64; 2],
    pub alpha_sigma: f64,
}

impl Default for InternalAugConfig {
    fn default() -> Self {
        Self {
            rot_range: [-180.0, 180.0],
            trans_range: [0.0, 15.0],
            alpha_sigma: 0.1,
        }
    }
}

impl InternalAugConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("rotation", self.rot_range)?;
        check_range("translation", self.trans_range)?;
        if self.trans_range[0] < 0.0 {
            return invalid("translation magnitudes must be non-negative");
        }
        if !(self.alpha_sigma >= 0.0 && self.alpha_sigma.is_finite()) {
            return invalid("alpha_sigma must be non-negative");
        }
        Ok(())
    }
}

pub fn sample_internal(cfg: &InternalAugConfig, rng: &mut impl Rng) -> LatentAugmentation<f64> {
    let theta = uniform(rng, cfg.rot_range).to_radians();
    let t = [signed(rng, cfg.trans_range), signed(rng, cfg.trans_range)];
    let alpha = if cfg.alpha_sigma > 0.0 {
        Normal::new(0.0, cfg.alpha_sigma)
            .expect("finite sigma")
            .sample(rng)
    } else {
        0.0
    };
    LatentAugmentation { theta, t, alpha }
}

/// Scale jitter only, for networks without a rotation/translation path.
pub fn sample_alpha_only(cfg: &InternalAugConfig, rng: &mut impl Rng) -> LatentAugmentation<f64> {
    let alpha = if cfg.alpha_sigma > 0.0 {
        Normal::new(0.0, cfg.alpha_sigma)
            .expect("finite sigma")
            .sample(rng)
    } else {
        0.0
    };
    LatentAugmentation {
        theta: 0.0,
        t: [0.0, 0.0],
        alpha,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntensityOp {
    BiasField,
    Gamma,
    Ghosting,
    Spiking,
    Blur,
    GaussianNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensityAugConfig {
    pub probability: f64,
    pub ops: Vec<IntensityOp>,
    /// Bound on each coefficient of the quadratic log-bias polynomial.
    pub bias_coeff: f64,
    pub gamma_range: [f64; 2],
    pub blur_sigma: [f64; 2],
    pub noise_sigma: [f64; 2],
    pub ghost_amplitude: [f64; 2],
    pub spike_amplitude: [f64; 2],
}

impl Default for IntensityAugConfig {
    fn default() -> Self {
        Self {
            probability: 0.4,
            ops: vec![
                IntensityOp::BiasField,
                IntensityOp::Gamma,
                IntensityOp::Ghosting,
                IntensityOp::Spiking,
                IntensityOp::Blur,
                IntensityOp::GaussianNoise,
            ],
            bias_coeff: 0.3,
            gamma_range: [0.7, 1.5],
            blur_sigma: [0.3, 1.0],
            noise_sigma: [0.01, 0.05],
            ghost_amplitude: [0.05, 0.2],
            spike_amplitude: [0.02, 0.08],
        }
    }
}

impl IntensityAugConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return invalid("intensity probability must lie in [0, 1]");
        }
        for (n, r) in [
            ("gamma", self.gamma_range),
            ("blur", self.blur_sigma),
            ("noise", self.noise_sigma),
            ("ghost", self.ghost_amplitude),
            ("spike", self.spike_amplitude),
        ] {
            check_range(n, r)?;
            if r[0] < 0.0 {
                return invalid(format!("{n} range must be non-negative"));
            }
        }
        if self.gamma_range[0] <= 0.0 {
            return invalid("gamma must be positive");
        }
        if !(self.bias_coeff >= 0.0) {
            return invalid("bias coefficient bound must be non-negative");
        }
        Ok(())
    }
}

/// One drawn intensity transformation.
#[derive(Debug, Clone, PartialEq)]
pub enum IntensityParams {
    /// `x · exp(Σ c_ab · u^a · v^b)` over `a + b ≤ 2`, with `u, v ∈ [-1, 1]`
    /// the normalised column/row coordinates. Coefficient order:
    /// 1, u, v, u², uv, v².
    BiasField { coeffs: [f64; 6] },
    /// `x^gamma`.
    Gamma { gamma: f64 },
    /// `x + a · x(shifted cyclically by h/copies rows or w/copies columns)`.
    Ghosting {
        amplitude: f64,
        copies: usize,
        along_rows: bool,
    },
    /// `x + a · cos(2π (k_r · i / h + k_c · j / w) + phase)`: the image-space
    /// trace of a single bright k-space point.
    Spiking {
        amplitude: f64,
        k_r: f64,
        k_c: f64,
        phase: f64,
    },
    /// Separable Gaussian, radius `ceil(3σ)`, edges replicated.
    Blur { sigma: f64 },
    /// Additive zero-mean Gaussian noise; the noise field is drawn from `seed`.
    GaussianNoise { sigma: f64, seed: u64 },
}

/// Decides whether to augment and, if so, draws one enabled op uniformly.
pub fn sample_intensity(
    cfg: &IntensityAugConfig,
    h: usize,
    w: usize,
    rng: &mut impl Rng,
) -> Option<IntensityParams> {
    if cfg.ops.is_empty() || !rng.random_bool(cfg.probability) {
        return None;
    }
    let op = *cfg.ops.choose(rng).expect("nonempty");
    Some(match op {
        IntensityOp::BiasField => {
            let b = cfg.bias_coeff;
            let mut c = [0.0; 6];
            for v in c.iter_mut().skip(1) {
                *v = uniform(rng, [-b, b]);
            }
            IntensityParams::BiasField { coeffs: c }
        }
        IntensityOp::Gamma => IntensityParams::Gamma {
            gamma: uniform(rng, cfg.gamma_range),
        },
        IntensityOp::Ghosting => IntensityParams::Ghosting {
            amplitude: uniform(rng, cfg.ghost_amplitude),
            copies: rng.random_range(2..=4),
            along_rows: rng.random_bool(0.5),
        },
        IntensityOp::Spiking => {
            let along_rows = rng.random_bool(0.5);
            let k = rng.random_range(1..=(h.max(w) / 2).max(1)) as f64;
            let (k_r, k_c) = if along_rows {
                (k, rng.random_range(0.0..2.0))
            } else {
                (rng.random_range(0.0..2.0), k)
            };
            IntensityParams::Spiking {
                amplitude: uniform(rng, cfg.spike_amplitude),
                k_r,
                k_c,
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        }
        IntensityOp::Blur => IntensityParams::Blur {
            sigma: uniform(rng, cfg.blur_sigma),
        },
        IntensityOp::GaussianNoise => IntensityParams::GaussianNoise {
            sigma: uniform(rng, cfg.noise_sigma),
            seed: rng.random(),
        },
    })
}

fn blur(data: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let conv = |src: &[f64], along_rows: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let d = k as isize - r;
                    let (ii, jj) = if along_rows {
                        (i, (j as isize + d).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((i as isize + d).clamp(0, h as isize - 1) as usize, j)
                    };
                    acc += kv * src[ii * w + jj];
                }
                out[i * w + j] = acc / norm;
            }
        }
        out
    };
    conv(&conv(data, true), false)
}

/// Applies `p` and clamps the result to `[0, 1]`.
pub fn apply_intensity_params(image: &IntensitySlice, p: &IntensityParams) -> IntensitySlice {
    let (h, w) = (image.h, image.w);
    let x: Vec<f64> = image.data.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = match p {
        IntensityParams::BiasField { coeffs: c } => {
            let norm = |k: usize, n: usize| {
                if n > 1 {
                    2.0 * k as f64 / (n - 1) as f64 - 1.0
                } else {
                    0.0
                }
            };
            (0..h * w)
                .map(|q| {
                    let (u, v) = (norm(q % w, w), norm(q / w, h));
                    let e = c[0] + c[1] * u + c[2] * v + c[3] * u * u + c[4] * u * v + c[5] * v * v;
                    x[q] * e.exp()
                })
                .collect()
        }
        IntensityParams::Gamma { gamma } => x.iter().map(|&v| v.max(0.0).powf(*gamma)).collect(),
        IntensityParams::Ghosting {
            amplitude,
            copies,
            along_rows,
        } => (0..h * w)
            .map(|q| {
                let (i, j) = (q / w, q % w);
                let src = if *along_rows {
                    ((i + h / copies) % h) * w + j
                } else {
                    i * w + (j + w / copies) % w
                };
                x[q] + amplitude * x[src]
            })
            .collect(),
        IntensityParams::Spiking {
            amplitude,
            k_r,
            k_c,
            phase,
        } => (0..h * w)
            .map(|q| {
                let (i, j) = ((q / w) as f64, (q % w) as f64);
                let arg = std::f64::consts::TAU * (k_r * i / h as f64 + k_c * j / w as f64) + phase;
                x[q] + amplitude * arg.cos()
            })
            .collect(),
        IntensityParams::Blur { sigma } => blur(&x, h, w, *sigma),
        IntensityParams::GaussianNoise { sigma, seed } => {
            let mut rng = crate::rng::stream(*seed, &[]);
            let normal = Normal::new(0.0, *sigma).expect("finite sigma");
            x.iter().map(|&v| v + normal.sample(&mut rng)).collect()
        }
    };
    IntensitySlice {
        h,
        w,
        res: image.res,
        data: y.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
    }
}

pub fn apply_intensity(
    image: &IntensitySlice,
    cfg: &IntensityAugConfig,
    rng: &mut impl Rng,
) -> IntensitySlice {
    match sample_intensity(cfg, image.h, image.w, rng) {
        Some(p) => apply_intensity_params(image, &p),
        None => image.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn ramp(h: usize, w: usize) -> IntensitySlice {
        IntensitySlice::new(
            h,
            w,
            1.0,
            (0..h * w).map(|k| k as f32 / (h * w) as f32).collect(),
        )
        .unwrap()
    }

    #[test]
    fn degenerate_ranges_give_identity() {
        let cfg = ExternalAugConfig {
            rot_range: [0.0, 0.0],
            trans_range: [0.0, 0.0],
            scale_range: [1.0, 1.0],
            scale: true,
            ..Default::default()
        };
        let p = sample_external(&cfg, &mut stream(1, &[]));
        assert_eq!(p.theta, 0.0);
        assert_eq!(p.t[0].abs(), 0.0);
        assert_eq!(p.s, 1.0);
        let icfg = InternalAugConfig {
            rot_range: [0.0, 0.0],
            trans_range: [0.0, 0.0],
            alpha_sigma: 0.0,
        };
        let a = sample_internal(&icfg, &mut stream(1, &[]));
        assert!(a.is_identity());
    }

    #[test]
    fn identity_external_keeps_both_slices() {
        let img = ramp(7, 5);
        let lab = LabelSlice::new(7, 5, 1.0, (0..35).map(|k| (k % 4) as u16).collect()).unwrap();
        let (i2, l2) = apply_external(&img, &lab, &ExternalParams::identity()).unwrap();
        assert_eq!(i2, img);
        assert_eq!(l2, lab);
    }

    #[test]
    fn quarter_turn_permutes_labels() {
        let n = 6;
        let lab = LabelSlice::new(n, n, 1.0, (0..36).map(|k| k as u16).collect()).unwrap();
        let img = ramp(n, n);
        let (_, l2) = apply_external(
            &img,
            &lab,
            &ExternalParams {
                theta: std::f64::consts::FRAC_PI_2,
                t: [0.0, 0.0],
                s: 1.0,
            },
        )
        .unwrap();
        let mut a = l2.data.clone();
        a.sort();
        assert_eq!(a, lab.data);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(l2.get(i, j), lab.get(n - 1 - j, i));
            }
        }
    }

    #[test]
    fn extent_mismatch_is_rejected() {
        let img = ramp(4, 4);
        let lab = LabelSlice::filled(4, 5, 1.0, 0);
        assert!(apply_external(&img, &lab, &ExternalParams::identity()).is_err());
    }

    #[test]
    fn external_draws_respect_ranges() {
        let cfg = ExternalAugConfig {
            scale: true,
            ..Default::default()
        };
        let mut rng = stream(5, &[]);
        for _ in 0..10_000 {
            let p = sample_external(&cfg, &mut rng);
            assert!(p.theta.to_degrees() >= -180.0 && p.theta.to_degrees() <= 180.0);
            assert!(p.t.iter().all(|t| t.abs() <= 15.0));
            assert!((0.8..=1.15).contains(&p.s));
        }
    }

    #[test]
    fn alpha_statistics() {
        let cfg = InternalAugConfig::default();
        let mut rng = stream(8, &[]);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_internal(&cfg, &mut rng).alpha)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(mean.abs() < 3.0 * 0.1 / (n as f64).sqrt());
        assert!((sd - 0.1).abs() < 0.005);
    }

    #[test]
    fn sampling_is_reproducible() {
        let cfg = InternalAugConfig::default();
        let a: Vec<_> = (0..20)
            .scan(stream(3, &[4]), |r, _| Some(sample_internal(&cfg, r)))
            .collect();
        let b: Vec<_> = (0..20)
            .scan(stream(3, &[4]), |r, _| Some(sample_internal(&cfg, r)))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn intensity_identities() {
        let img = ramp(8, 8);
        let cfg = IntensityAugConfig {
            probability: 0.0,
            ..Default::default()
        };
        assert_eq!(apply_intensity(&img, &cfg, &mut stream(0, &[])), img);
        assert_eq!(
            apply_intensity_params(&img, &IntensityParams::Gamma { gamma: 1.0 }),
            img
        );
    }

    #[test]
    fn noise_matches_drawn_sigma() {
        let img = IntensitySlice::filled(128, 128, 1.0, 0.5);
        let cfg = IntensityAugConfig {
            probability: 1.0,
            ops: vec![IntensityOp::GaussianNoise],
            ..Default::default()
        };
        for seed in 0..5 {
            let p = sample_intensity(&cfg, 128, 128, &mut stream(seed, &[])).unwrap();
            let IntensityParams::GaussianNoise { sigma, .. } = p else {
                panic!("wrong op")
            };
            let out = apply_intensity_params(&img, &p);
            let d: Vec<f64> = out
                .data
                .iter()
                .zip(&img.data)
                .map(|(a, b)| (*a - *b) as f64)
                .collect();
            let m = d.iter().sum::<f64>() / d.len() as f64;
            let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
            assert!((sd - sigma).abs() < 0.1 * sigma, "sd {sd} vs sigma {sigma}");
        }
    }

    #[test]
    fn every_op_stays_in_range() {
        let img = ramp(16, 12);
        for op in IntensityAugConfig::default().ops {
            let cfg = IntensityAugConfig {
                probability: 1.0,
                ops: vec![op],
                ..Default::default()
            };
            for seed in 0..10 {
                let out = apply_intensity(&img, &cfg, &mut stream(seed, &[op as u64]));
                assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
                assert_eq!((out.h, out.w), (16, 12));
            }
        }
    }
}
