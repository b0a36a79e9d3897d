//! Loading phantom splits and turning slices into training batches.

use std::path::Path;

use latentseg::augment::{
    apply_external, apply_intensity_params, sample_alpha_only, sample_external, sample_intensity,
    sample_internal, ExternalParams,
};
use latentseg::geometry::LatentAugmentation;
use latentseg::labels::LabelTable;
use latentseg::loss::build_weight_map;
use latentseg::network::Variant;
use latentseg::phantom::{read_volume, Manifest, ManifestEntry, Split};
use latentseg::rng::sample_stream;
use latentseg::tensor::{FeatureMap, Tensor4};
use latentseg::volume::{IntensitySlice, IntensityVolume, LabelSlice, LabelVolume, Plane};
use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};

const PURPOSE_EXTERNAL: u64 = 1;
const PURPOSE_INTENSITY: u64 = 2;
const PURPOSE_LATENT: u64 = 3;
const PURPOSE_SHUFFLE: u64 = 4;

/// One phantom volume pair with its manifest row.
#[derive(Debug, Clone)]
pub struct Subject {
    pub entry: ManifestEntry,
    pub image: IntensityVolume,
    pub labels: LabelVolume,
}

/// Reads every volume of `split`; paths are relative to the manifest.
pub fn load_split(manifest_path: &Path, split: Split) -> Result<Vec<Subject>> {
    let manifest = Manifest::load(manifest_path).map_err(|e| {
        HarnessError::Data(format!(
            "cannot load manifest {}: {e}",
            manifest_path.display()
        ))
    })?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let subjects = manifest
        .split(split)
        .map(|e| {
            let image = read_volume(&dir.join(&e.image))?.into_intensity()?;
            let labels = read_volume(&dir.join(&e.labels))?.into_labels()?;
            if !image.same_grid(&labels) {
                return Err(HarnessError::Data(format!(
                    "{}: image and labels are on different grids",
                    e.id
                )));
            }
            Ok(Subject {
                entry: e.clone(),
                image,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if subjects.is_empty() {
        return Err(HarnessError::Data(format!(
            "manifest has no {} volumes",
            split.name()
        )));
    }
    Ok(subjects)
}

/// Label table used by networks of `plane`.
pub fn plane_table(table: &LabelTable, plane: Plane) -> LabelTable {
    if plane == Plane::Sagittal {
        table.sagittal_table()
    } else {
        table.clone()
    }
}

/// The `2·context + 1` slices around `k`, edges replicated.
pub fn context_stack(
    image: &IntensityVolume,
    plane: Plane,
    k: usize,
    context: usize,
) -> Vec<IntensitySlice> {
    let n = image.num_slices(plane) as isize;
    (-(context as isize)..=context as isize)
        .map(|d| image.slice(plane, (k as isize + d).clamp(0, n - 1) as usize))
        .collect()
}

/// Labels of slice `k` in the scheme of `plane`.
pub fn plane_labels(
    labels: &LabelVolume,
    plane: Plane,
    k: usize,
    table: &LabelTable,
) -> Result<LabelSlice> {
    let mut s = labels.slice(plane, k);
    if plane == Plane::Sagittal {
        for l in s.data.iter_mut() {
            *l = table.sagittal(*l)?;
        }
    }
    Ok(s)
}

/// A slice reference into the loaded subjects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceRef {
    pub subject: usize,
    pub index: usize,
}

/// All slices of `plane`; with `drop_empty`, slices without foreground are skipped.
pub fn slice_refs(subjects: &[Subject], plane: Plane, drop_empty: bool) -> Vec<SliceRef> {
    let mut out = Vec::new();
    for (s, sub) in subjects.iter().enumerate() {
        for k in 0..sub.labels.num_slices(plane) {
            if drop_empty && sub.labels.slice(plane, k).data.iter().all(|&l| l == 0) {
                continue;
            }
            out.push(SliceRef {
                subject: s,
                index: k,
            });
        }
    }
    out
}

/// One prepared training example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub h: usize,
    pub w: usize,
    pub res: f64,
    /// `channels × h × w`.
    pub image: Vec<f32>,
    pub labels: Vec<u16>,
    pub weights: Vec<f64>,
    pub latent: LatentAugmentation<f64>,
}

/// Applies the configured augmentation chain to one slice. Every random
/// draw comes from a stream keyed by `(seed, epoch, id)`.
#[allow(clippy::too_many_arguments)]
pub fn prepare_sample(
    cfg: &RunConfig,
    seed: u64,
    subject: &Subject,
    plane: Plane,
    r: SliceRef,
    table: &LabelTable,
    epoch: u64,
    id: u64,
) -> Result<Sample> {
    let mut chans = context_stack(&subject.image, plane, r.index, cfg.network.context);
    let mut labels = plane_labels(&subject.labels, plane, r.index, table)?;
    if cfg.arm.external() {
        let mut rng = sample_stream(seed, epoch, id, PURPOSE_EXTERNAL);
        let p = sample_external(&cfg.augment.external, &mut rng);
        if p != ExternalParams::identity() {
            let mut new_labels = None;
            for c in chans.iter_mut() {
                let (img, lab) = apply_external(c, &labels, &p)?;
                *c = img;
                new_labels.get_or_insert(lab);
            }
            labels = new_labels.expect("at least one channel");
        }
    }
    let mut rng = sample_stream(seed, epoch, id, PURPOSE_INTENSITY);
    if let Some(p) = sample_intensity(&cfg.augment.intensity, labels.h, labels.w, &mut rng) {
        for c in chans.iter_mut() {
            *c = apply_intensity_params(c, &p);
        }
    }
    let wm = build_weight_map(&labels, &plane_table(table, plane), &cfg.loss)?;
    let mut rng = sample_stream(seed, epoch, id, PURPOSE_LATENT);
    let latent = match cfg.variant {
        Variant::CnnStar => LatentAugmentation::identity(),
        Variant::Vinna if cfg.arm.internal() => sample_internal(&cfg.augment.internal, &mut rng),
        _ => sample_alpha_only(&cfg.augment.internal, &mut rng),
    };
    Ok(Sample {
        h: labels.h,
        w: labels.w,
        res: labels.res,
        image: chans.into_iter().flat_map(|c| c.data).collect(),
        labels: labels.data,
        weights: wm.omega,
        latent,
    })
}

/// Un-augmented network input for slice `k`.
pub fn eval_input(image: &IntensityVolume, plane: Plane, k: usize, context: usize) -> Vec<f32> {
    context_stack(image, plane, k, context)
        .into_iter()
        .flat_map(|c| c.data)
        .collect()
}

/// Stacks samples of equal extent and resolution into a batch.
pub fn collate(
    samples: &[Sample],
) -> Result<(
    FeatureMap<f32>,
    Vec<u16>,
    Vec<f32>,
    Vec<LatentAugmentation<f32>>,
)> {
    let first = samples
        .first()
        .ok_or_else(|| HarnessError::Data("empty batch".into()))?;
    let (h, w, res) = (first.h, first.w, first.res);
    if samples.iter().any(|s| (s.h, s.w, s.res) != (h, w, res)) {
        return Err(HarnessError::Data(
            "batch mixes slice extents or resolutions".into(),
        ));
    }
    let c = first.image.len() / (h * w);
    let data: Vec<f32> = samples
        .iter()
        .flat_map(|s| s.image.iter().copied())
        .collect();
    let x = FeatureMap::new(Tensor4::from_vec([samples.len(), c, h, w], data)?, res)?;
    let labels = samples
        .iter()
        .flat_map(|s| s.labels.iter().copied())
        .collect();
    let weights = samples
        .iter()
        .flat_map(|s| s.weights.iter().map(|&v| v as f32))
        .collect();
    let augs = samples
        .iter()
        .map(|s| LatentAugmentation {
            theta: s.latent.theta as f32,
            t: [s.latent.t[0] as f32, s.latent.t[1] as f32],
            alpha: s.latent.alpha as f32,
        })
        .collect();
    Ok((x, labels, weights, augs))
}

/// Shuffled batches for one epoch. Slices are grouped by (extent,
/// resolution) so every batch is homogeneous; batch order is shuffled too.
pub fn epoch_batches(
    refs: &[SliceRef],
    subjects: &[Subject],
    plane: Plane,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    let mut rng = sample_stream(seed, epoch, u64::MAX, PURPOSE_SHUFFLE);
    let mut groups: Vec<((usize, usize, u64), Vec<usize>)> = Vec::new();
    for (i, r) in refs.iter().enumerate() {
        let s = &subjects[r.subject];
        let key = {
            let (h, w) = s.image.slice_extent(plane);
            (h, w, s.image.res.to_bits())
        };
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    let mut batches = Vec::new();
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        batches.extend(idx.chunks(batch_size).map(|c| c.to_vec()));
    }
    batches.shuffle(&mut rng);
    batches
}
