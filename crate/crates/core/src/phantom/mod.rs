//! Analytic, lateralised brain-like phantom. Labels are evaluated exactly at
//! every voxel centre under any rigid pose and resolution, so ground truth
//! never passes through interpolation.
//!
//! Scene frame (mm): x runs left (negative) to right, y posterior to anterior,
//! z inferior to superior; the origin sits at the volume centre.

mod dataset;
mod file;

pub use dataset::{
    generate_split, materialize, slice_iter, Manifest, ManifestEntry, PosePolicy, SlicePair, Split,
    SplitCounts, MANIFEST_HEADER,
};
pub use file::{read_volume, write_volume, VolumeData, VolumeFile, VolumeHeader, VOLUME_MAGIC};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::sin_cos_snapped;
use crate::labels::LabelTable;
use crate::volume::{IntensityVolume, LabelVolume, Volume};

/// Rigid pose: rotation by `theta` (radians) about the z axis, then a 3D
/// translation `t` (mm). Maps scene coordinates to volume coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub theta: f64,
    pub t: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            t: [0.0; 3],
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = sin_cos_snapped(self.theta);
        [
            c * p[0] - s * p[1] + self.t[0],
            s * p[0] + c * p[1] + self.t[1],
            p[2] + self.t[2],
        ]
    }

    pub fn apply_inverse(&self, q: [f64; 3]) -> [f64; 3] {
        let (s, c) = sin_cos_snapped(self.theta);
        let d = [q[0] - self.t[0], q[1] - self.t[1], q[2] - self.t[2]];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]]
    }

    /// `outer ∘ self`.
    pub fn then(&self, outer: &Pose) -> Pose {
        let (s, c) = sin_cos_snapped(outer.theta);
        let [x, y, z] = self.t;
        Pose {
            theta: self.theta + outer.theta,
            t: [
                c * x - s * y + outer.t[0],
                s * x + c * y + outer.t[1],
                z + outer.t[2],
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    T1,
    T2,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::T1 => 1,
            Modality::T2 => 2,
        }
    }
}

/// Which label a primitive writes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LabelRule {
    Fixed(u16),
    /// Left label for x < 0, right label otherwise.
    Lateral {
        left: u16,
        right: u16,
    },
}

impl LabelRule {
    fn label(&self, x: f64) -> u16 {
        match *self {
            LabelRule::Fixed(l) => l,
            LabelRule::Lateral { left, right } => {
                if x < 0.0 {
                    left
                } else {
                    right
                }
            }
        }
    }
}

/// Folded sinusoidal relief of a shell surface in normalised radius units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relief {
    pub amplitude: f64,
    pub freq_azimuth: f64,
    pub freq_elevation: f64,
    pub phase: f64,
}

impl Relief {
    fn offset(&self, p: [f64; 3]) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        // |x| keeps the relief mirror-symmetric across the midline
        let az = p[1].atan2(p[0].abs());
        let el = p[2].atan2((p[0] * p[0] + p[1] * p[1]).sqrt());
        self.amplitude
            * (self.freq_azimuth * az + self.phase).sin()
            * (self.freq_elevation * el).cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Egg-shaped ellipsoid: the x semi-axis is scaled by `1 + taper · y / a_y`.
    /// Membership: normalised radius ≤ `level` + relief.
    Egg {
        center: [f64; 3],
        semi_axes: [f64; 3],
        taper: f64,
        level: f64,
        relief: Relief,
    },
    /// Plain ellipsoid, mirrored to both sides when `mirrored` (the center's x
    /// is then taken as |x| on the right and −|x| on the left).
    Ellipsoid {
        center: [f64; 3],
        semi_axes: [f64; 3],
        mirrored: bool,
    },
    /// Slab |x| < half_width, restricted to points inside `within`.
    MidlineGap { half_width: f64, within: Box<Shape> },
}

impl Shape {
    fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Shape::Egg {
                center,
                semi_axes,
                taper,
                level,
                relief,
            } => {
                let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                let ax = semi_axes[0] * (1.0 + taper * d[1] / semi_axes[1]);
                if ax <= 0.0 {
                    return false;
                }
                let rho = ((d[0] / ax).powi(2)
                    + (d[1] / semi_axes[1]).powi(2)
                    + (d[2] / semi_axes[2]).powi(2))
                .sqrt();
                rho <= level + relief.offset(d)
            }
            Shape::Ellipsoid {
                center,
                semi_axes,
                mirrored,
            } => {
                let cx = if *mirrored {
                    center[0].abs() * p[0].signum()
                } else {
                    center[0]
                };
                let cx = if *mirrored && p[0] == 0.0 {
                    center[0].abs()
                } else {
                    cx
                };
                let d = [p[0] - cx, p[1] - center[1], p[2] - center[2]];
                (d[0] / semi_axes[0]).powi(2)
                    + (d[1] / semi_axes[1]).powi(2)
                    + (d[2] / semi_axes[2]).powi(2)
                    <= 1.0
            }
            Shape::MidlineGap { half_width, within } => {
                p[0].abs() < *half_width && within.contains(p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub label: LabelRule,
}

/// Per-label mean intensities for both contrasts, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityMap {
    pub t1: Vec<f32>,
    pub t2: Vec<f32>,
}

impl IntensityMap {
    fn get(&self, modality: Modality, label: u16) -> f32 {
        let v = match modality {
            Modality::T1 => &self.t1,
            Modality::T2 => &self.t2,
        };
        v.get(label as usize).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomScene {
    /// Evaluated in order; the last primitive containing a point wins.
    pub primitives: Vec<Primitive>,
    pub intensity: IntensityMap,
    /// Pose of the scene relative to its own frame (identity unless the scene
    /// was moved with [`PhantomScene::transformed`]).
    pub frame: Pose,
    /// Relative amplitude of the linear bias field.
    pub bias: [f64; 3],
    pub noise_sigma: f64,
    pub seed: u64,
}

const CSF: u16 = 1;

impl PhantomScene {
    /// The canonical scene; `sample` jitters it per subject.
    pub fn canonical() -> Self {
        Self::build(&SceneGeometry::canonical(), 0)
    }

    /// Subject-specific scene: mirror-symmetric random jitter of every size,
    /// position and relief parameter.
    pub fn sample(seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, &[0x5ce9e]);
        let g = SceneGeometry::canonical().jitter(&mut rng);
        let mut s = Self::build(&g, seed);
        s.bias = [
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        ];
        s
    }

    fn build(g: &SceneGeometry, seed: u64) -> Self {
        let brain = |level: f64, relief: Relief| Shape::Egg {
            center: [0.0; 3],
            semi_axes: g.brain_axes,
            taper: g.taper,
            level,
            relief,
        };
        let flat = Relief {
            amplitude: 0.0,
            freq_azimuth: 0.0,
            freq_elevation: 0.0,
            phase: 0.0,
        };
        let primitives = vec![
            Primitive {
                shape: brain(g.csf_level, flat),
                label: LabelRule::Fixed(CSF),
            },
            Primitive {
                shape: brain(1.0, g.pial_relief),
                label: LabelRule::Lateral { left: 2, right: 3 },
            },
            Primitive {
                shape: brain(g.wm_level, g.wm_relief),
                label: LabelRule::Lateral { left: 4, right: 5 },
            },
            Primitive {
                shape: Shape::MidlineGap {
                    half_width: g.gap_half_width,
                    within: Box::new(brain(1.0, g.pial_relief)),
                },
                label: LabelRule::Fixed(CSF),
            },
            Primitive {
                shape: Shape::Ellipsoid {
                    center: g.nucleus_a.0,
                    semi_axes: g.nucleus_a.1,
                    mirrored: true,
                },
                label: LabelRule::Lateral { left: 6, right: 7 },
            },
            Primitive {
                shape: Shape::Ellipsoid {
                    center: g.nucleus_b.0,
                    semi_axes: g.nucleus_b.1,
                    mirrored: true,
                },
                label: LabelRule::Lateral { left: 8, right: 9 },
            },
        ];
        Self {
            primitives,
            intensity: IntensityMap {
                t1: vec![0.0, 0.15, 0.5, 0.5, 0.3, 0.3, 0.45, 0.45, 0.72, 0.72],
                t2: vec![0.0, 0.95, 0.45, 0.45, 0.7, 0.7, 0.55, 0.55, 0.28, 0.28],
            },
            frame: Pose::identity(),
            bias: [0.0; 3],
            noise_sigma: 0.03,
            seed,
        }
    }

    pub fn label_table(&self) -> LabelTable {
        LabelTable::phantom_default()
    }

    /// Label at a point given in the scene's own frame.
    pub fn label_at(&self, p: [f64; 3]) -> u16 {
        let mut label = 0;
        for prim in &self.primitives {
            if prim.shape.contains(p) {
                label = prim.label.label(p[0]);
            }
        }
        label
    }

    /// The same scene moved by `pose` (rendering it at identity equals
    /// rendering `self` at `pose`).
    pub fn transformed(&self, pose: &Pose) -> Self {
        let mut s = self.clone();
        s.frame = self.frame.then(pose);
        s
    }

    /// Renders labels and intensities on a cubic-voxel grid of `extent`
    /// voxels per axis (`[z, y, x]`) at `res` mm, with the scene placed at `pose`.
    pub fn render(
        &self,
        pose: &Pose,
        res: f64,
        extent: [usize; 3],
        modality: Modality,
    ) -> (IntensityVolume, LabelVolume) {
        let full = self.frame.then(pose);
        let [nz, ny, nx] = extent;
        let coord = |i: usize, n: usize| ((i as f64 + 0.5) - n as f64 / 2.0) * res;
        let mut labels = Vec::with_capacity(nz * ny * nx);
        let mut image = Vec::with_capacity(nz * ny * nx);
        let scale = self.primitives.first().map(|p| match &p.shape {
            Shape::Egg { semi_axes, .. } => semi_axes[1],
            _ => 1.0,
        });
        let scale = scale.unwrap_or(1.0);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let q = [coord(x, nx), coord(y, ny), coord(z, nz)];
                    let p = full.apply_inverse(q);
                    let l = self.label_at(p);
                    labels.push(l);
                    let mut v = self.intensity.get(modality, l) as f64;
                    if l != 0 {
                        let b = 1.0
                            + (self.bias[0] * p[0] + self.bias[1] * p[1] + self.bias[2] * p[2])
                                / scale;
                        v = v * b + self.noise_sigma * point_noise(self.seed, p);
                    }
                    image.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
        (
            Volume {
                dims: extent,
                res,
                data: image,
            },
            Volume {
                dims: extent,
                res,
                data: labels,
            },
        )
    }
}

/// Standard-normal value attached to a scene-frame point, so noise moves
/// with the anatomy and survives exact lattice rotations unchanged.
fn point_noise(seed: u64, p: [f64; 3]) -> f64 {
    let q = |v: f64| ((v * 1e6).round() as i64) as u64;
    let h1 = crate::rng::derive_seed(seed, &[q(p[0]), q(p[1]), q(p[2])]);
    let h2 = crate::rng::derive_seed(h1, &[1]);
    let u1 = ((h1 >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = (h2 >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Free parameters of a scene before it is turned into primitives.
#[derive(Debug, Clone, PartialEq)]
struct SceneGeometry {
    brain_axes: [f64; 3],
    taper: f64,
    csf_level: f64,
    wm_level: f64,
    pial_relief: Relief,
    wm_relief: Relief,
    gap_half_width: f64,
    nucleus_a: ([f64; 3], [f64; 3]),
    nucleus_b: ([f64; 3], [f64; 3]),
}

impl SceneGeometry {
    fn canonical() -> Self {
        Self {
            brain_axes: [5.0, 6.0, 4.4],
            taper: 0.15,
            csf_level: 1.14,
            wm_level: 0.8,
            pial_relief: Relief {
                amplitude: 0.05,
                freq_azimuth: 7.0,
                freq_elevation: 3.0,
                phase: 0.0,
            },
            wm_relief: Relief {
                amplitude: 0.07,
                freq_azimuth: 7.0,
                freq_elevation: 3.0,
                phase: 0.0,
            },
            gap_half_width: 0.35,
            nucleus_a: ([1.7, 1.4, 0.3], [1.3, 1.8, 1.2]),
            nucleus_b: ([1.5, -2.0, -0.3], [1.3, 1.2, 1.4]),
        }
    }

    fn jitter(mut self, rng: &mut impl Rng) -> Self {
        let mut j = |v: &mut f64, rel: f64| *v *= 1.0 + rng.random_range(-rel..rel);
        for a in self.brain_axes.iter_mut() {
            j(a, 0.08);
        }
        j(&mut self.taper, 0.3);
        j(&mut self.wm_level, 0.04);
        j(&mut self.pial_relief.amplitude, 0.3);
        j(&mut self.wm_relief.amplitude, 0.3);
        for n in [&mut self.nucleus_a, &mut self.nucleus_b] {
            for v in n.0.iter_mut() {
                j(v, 0.12);
            }
            for v in n.1.iter_mut() {
                j(v, 0.12);
            }
        }
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        self.pial_relief.phase = phase;
        self.wm_relief.phase = phase;
        let f = rng.random_range(6..=9) as f64;
        self.pial_relief.freq_azimuth = f;
        self.wm_relief.freq_azimuth = f;
        self
    }
}
