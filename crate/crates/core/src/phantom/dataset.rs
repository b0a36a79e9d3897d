//! Dataset manifests and slice extraction.
//!
//! Manifest format: a first line `# latentseg-manifest v1`, then a
//! tab-separated table with the header
//! `id split scene_seed modality res extent theta tx ty tz image labels`.
//! `theta` is in radians, translations in mm, paths relative to the
//! manifest's directory. Floats are written in shortest round-trip form.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::file::{write_volume, VolumeFile};
use super::{Modality, PhantomScene, Pose};
use crate::error::{invalid, Error, Result};
use crate::labels::LabelTable;
use crate::volume::{IntensitySlice, IntensityVolume, LabelSlice, LabelVolume, Plane};

pub const MANIFEST_HEADER: &str = "# latentseg-manifest v1";
const COLUMNS: &str =
    "id\tsplit\tscene_seed\tmodality\tres\textent\ttheta\ttx\tty\ttz\timage\tlabels";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Rotation magnitudes (degrees, sign drawn uniformly) and translation
/// bounds for each split. Validation volumes follow the training policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosePolicy {
    pub train_rot_deg: [f64; 2],
    pub test_rot_deg: [f64; 2],
    pub translation_mm: [f64; 3],
}

impl Default for PosePolicy {
    fn default() -> Self {
        Self {
            train_rot_deg: [0.0, 20.0],
            test_rot_deg: [60.0, 120.0],
            translation_mm: [0.75, 0.75, 0.75],
        }
    }
}

impl PosePolicy {
    fn sample(&self, split: Split, rng: &mut impl Rng) -> Pose {
        let [lo, hi] = match split {
            Split::Test => self.test_rot_deg,
            _ => self.train_rot_deg,
        };
        let mag = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut t = [0.0; 3];
        for (ti, &m) in t.iter_mut().zip(&self.translation_mm) {
            *ti = if m > 0.0 {
                rng.random_range(-m..=m)
            } else {
                0.0
            };
        }
        Pose {
            theta: (sign * mag).to_radians(),
            t,
        }
    }

    fn validate(&self) -> Result<()> {
        for r in [self.train_rot_deg, self.test_rot_deg] {
            if !(r[0] >= 0.0 && r[1] >= r[0] && r[1] <= 180.0) {
                return invalid(format!(
                    "rotation range {r:?} must satisfy 0 <= lo <= hi <= 180"
                ));
            }
        }
        if self.translation_mm.iter().any(|t| !(*t >= 0.0)) {
            return invalid("translation bounds must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub scene_seed: u64,
    pub modality: Modality,
    pub res: f64,
    pub extent: usize,
    pub pose: Pose,
    pub image: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == s)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n{COLUMNS}\n");
        for e in &self.entries {
            let m = match e.modality {
                Modality::T1 => "t1",
                Modality::T2 => "t2",
            };
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.id,
                e.split.name(),
                e.scene_seed,
                m,
                e.res,
                e.extent,
                e.pose.theta,
                e.pose.t[0],
                e.pose.t[1],
                e.pose.t[2],
                e.image,
                e.labels
            )
            .unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::Format(format!(
                "manifest must start with `{MANIFEST_HEADER}`"
            )));
        }
        if lines.next() != Some(COLUMNS) {
            return Err(Error::Format("unexpected manifest columns".into()));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 12 {
                return Err(Error::Format(format!(
                    "manifest row {}: expected 12 fields, got {}",
                    n + 1,
                    f.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Format(format!("manifest row {}: bad number `{s}`", n + 1)))
            };
            let int = |s: &str| -> Result<u64> {
                s.parse().map_err(|_| {
                    Error::Format(format!("manifest row {}: bad integer `{s}`", n + 1))
                })
            };
            let modality = match f[3] {
                "t1" => Modality::T1,
                "t2" => Modality::T2,
                m => {
                    return Err(Error::Format(format!(
                        "manifest row {}: unknown modality `{m}`",
                        n + 1
                    )))
                }
            };
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                split: Split::parse(f[1])?,
                scene_seed: int(f[2])?,
                modality,
                res: num(f[4])?,
                extent: int(f[5])? as usize,
                pose: Pose {
                    theta: num(f[6])?,
                    t: [num(f[7])?, num(f[8])?, num(f[9])?],
                },
                image: f[10].to_string(),
                labels: f[11].to_string(),
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

impl ManifestEntry {
    pub fn scene(&self) -> PhantomScene {
        PhantomScene::sample(self.scene_seed)
    }

    pub fn render(&self) -> (IntensityVolume, LabelVolume) {
        let n = self.extent;
        self.scene()
            .render(&self.pose, self.res, [n, n, n], self.modality)
    }
}

/// Builds a deterministic manifest. Resolutions cycle through `res_set`
/// within each split; modalities cycle once per full pass over `res_set`.
/// Each volume spans `fov_mm` per axis, so extent = round(fov / res).
pub fn generate_split(
    counts: SplitCounts,
    policy: &PosePolicy,
    res_set: &[f64],
    modalities: &[Modality],
    fov_mm: f64,
    seed: u64,
) -> Result<Manifest> {
    if counts.train == 0 || counts.val == 0 || counts.test == 0 {
        return invalid("every split needs at least one volume");
    }
    if res_set.is_empty() || res_set.iter().any(|r| !(*r > 0.0)) {
        return invalid("resolutions must be positive and non-empty");
    }
    if modalities.is_empty() {
        return invalid("at least one modality is required");
    }
    policy.validate()?;
    let mut used = HashSet::new();
    let mut entries = Vec::new();
    for (si, split) in Split::ALL.into_iter().enumerate() {
        for i in 0..counts.get(split) {
            let mut rng = crate::rng::stream(seed, &[si as u64, i as u64]);
            let mut scene_seed: u64 = rng.random();
            while !used.insert(scene_seed) {
                scene_seed = rng.random();
            }
            let res = res_set[i % res_set.len()];
            let extent = (fov_mm / res).round() as usize;
            if extent < 16 {
                return invalid(format!(
                    "field of view {fov_mm} mm at {res} mm gives extent {extent} < 16"
                ));
            }
            let modality = modalities[(i / res_set.len()) % modalities.len()];
            let pose = policy.sample(split, &mut rng);
            let id = format!("{}{:03}", split.name(), i);
            entries.push(ManifestEntry {
                image: format!("{}/{id}_image.vol", split.name()),
                labels: format!("{}/{id}_labels.vol", split.name()),
                id,
                split,
                scene_seed,
                modality,
                res,
                extent,
                pose,
            });
        }
    }
    Ok(Manifest { entries })
}

/// Renders every manifest entry into `dir` (which also receives the
/// manifest itself as `manifest.tsv`).
pub fn materialize(manifest: &Manifest, dir: &Path) -> Result<()> {
    for s in Split::ALL {
        std::fs::create_dir_all(dir.join(s.name()))?;
    }
    for e in &manifest.entries {
        let (img, lab) = e.render();
        write_volume(
            &dir.join(&e.image),
            &VolumeFile::from_intensity(&img, e.modality.code(), e.scene_seed, e.pose),
        )?;
        write_volume(
            &dir.join(&e.labels),
            &VolumeFile::from_labels(&lab, e.scene_seed, e.pose),
        )?;
    }
    manifest.save(&dir.join("manifest.tsv"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicePair {
    /// Index of the slice along the plane's normal.
    pub index: usize,
    pub image: IntensitySlice,
    pub labels: LabelSlice,
}

/// Extracts the 2D slices of a volume pair in `plane`. Sagittal labels are
/// reduced to the table's sagittal scheme.
pub fn slice_iter(
    image: &IntensityVolume,
    labels: &LabelVolume,
    plane: Plane,
    drop_empty: bool,
    table: &LabelTable,
) -> Result<Vec<SlicePair>> {
    if !image.same_grid(labels) {
        return invalid("image and label volumes are on different grids");
    }
    let mut out = Vec::new();
    for k in 0..labels.num_slices(plane) {
        let mut lab = labels.slice(plane, k);
        if drop_empty && lab.data.iter().all(|&l| l == 0) {
            continue;
        }
        if plane == Plane::Sagittal {
            for l in lab.data.iter_mut() {
                *l = table.sagittal(*l)?;
            }
        }
        out.push(SlicePair {
            index: k,
            image: image.slice(plane, k),
            labels: lab,
        });
    }
    Ok(out)
}
