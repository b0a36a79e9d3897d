//! Slice-wise prediction and 2.5D view aggregation.

use latentseg::geometry::LatentAugmentation;
use latentseg::labels::LabelTable;
use latentseg::network::Network;
use latentseg::tensor::{FeatureMap, Tensor4};
use latentseg::volume::{IntensityVolume, LabelVolume, Plane, Volume};

use crate::config::AggregationSection;
use crate::data::eval_input;
use crate::error::{HarnessError, Result};

/// Slices predicted per network call.
const CHUNK: usize = 16;

/// Per-voxel class probabilities on a volume grid, classes innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    pub dims: [usize; 3],
    pub res: f64,
    pub classes: usize,
    pub data: Vec<f32>,
}

impl ProbVolume {
    pub fn zeros(dims: [usize; 3], res: f64, classes: usize) -> Self {
        Self {
            dims,
            res,
            classes,
            data: vec![0.0; dims.iter().product::<usize>() * classes],
        }
    }

    pub fn voxel(&self, v: usize) -> &[f32] {
        &self.data[v * self.classes..(v + 1) * self.classes]
    }

    pub fn argmax(&self) -> LabelVolume {
        let data = self
            .data
            .chunks(self.classes)
            .map(|p| {
                let mut best = 0;
                for k in 1..p.len() {
                    if p[k] > p[best] {
                        best = k;
                    }
                }
                best as u16
            })
            .collect();
        Volume {
            dims: self.dims,
            res: self.res,
            data,
        }
    }
}

fn voxel_index(dims: [usize; 3], plane: Plane, k: usize, i: usize, j: usize) -> usize {
    let [_, ny, nx] = dims;
    let (z, y, x) = match plane {
        Plane::Axial => (k, i, j),
        Plane::Coronal => (i, k, j),
        Plane::Sagittal => (i, j, k),
    };
    (z * ny + y) * nx + x
}

/// Softmax volume of one plane network, in that network's class scheme.
pub fn plane_probabilities(
    net: &Network<f32>,
    image: &IntensityVolume,
    context: usize,
) -> Result<ProbVolume> {
    if !(image.res > 0.0 && image.res.is_finite()) {
        return Err(latentseg::Error::InvalidArgument(format!(
            "volume resolution {} is not usable",
            image.res
        ))
        .into());
    }
    let plane = net.config.plane;
    let classes = net.config.num_classes;
    let (h, w) = image.slice_extent(plane);
    let n = image.num_slices(plane);
    let c = 2 * context + 1;
    let mut out = ProbVolume::zeros(image.dims, image.res, classes);
    let ks: Vec<usize> = (0..n).collect();
    for chunk in ks.chunks(CHUNK) {
        let data: Vec<f32> = chunk
            .iter()
            .flat_map(|&k| eval_input(image, plane, k, context))
            .collect();
        let x = FeatureMap::new(Tensor4::from_vec([chunk.len(), c, h, w], data)?, image.res)?;
        let probs = net.predict(&x, &[LatentAugmentation::identity()])?;
        for (b, &k) in chunk.iter().enumerate() {
            for i in 0..h {
                for j in 0..w {
                    let v = voxel_index(image.dims, plane, k, i, j);
                    for q in 0..classes {
                        out.data[v * classes + q] = probs.data.get(b, q, i, j);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// How per-plane probability maps are combined.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewAggregationSpec {
    pub axial: f64,
    pub coronal: f64,
    pub sagittal: f64,
    /// Merged sagittal id → full ids it stands for.
    pub sagittal_unmap: Vec<Vec<u16>>,
}

impl ViewAggregationSpec {
    pub fn new(weights: &AggregationSection, table: &LabelTable) -> Result<Self> {
        let spec = Self {
            axial: weights.axial,
            coronal: weights.coronal,
            sagittal: weights.sagittal,
            sagittal_unmap: table.sagittal_unmap(),
        };
        spec.validate(table.len())?;
        Ok(spec)
    }

    pub fn weight(&self, p: Plane) -> f64 {
        match p {
            Plane::Axial => self.axial,
            Plane::Coronal => self.coronal,
            Plane::Sagittal => self.sagittal,
        }
    }

    pub fn validate(&self, num_full: usize) -> Result<()> {
        if Plane::ALL
            .iter()
            .any(|&p| !(self.weight(p) > 0.0 && self.weight(p).is_finite()))
        {
            return Err(HarnessError::Config(
                "aggregation weights must be positive".into(),
            ));
        }
        let mut seen = vec![false; num_full];
        for &id in self.sagittal_unmap.iter().flatten() {
            match seen.get_mut(id as usize) {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(HarnessError::Config(format!(
                        "sagittal unmap lists id {id} twice or out of range"
                    )))
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(HarnessError::Config(
                "sagittal unmap does not cover every label".into(),
            ));
        }
        Ok(())
    }

    /// Expands merged sagittal probabilities to the full scheme by copying
    /// each merged value to every member.
    pub fn unmap(&self, p: &ProbVolume) -> Result<ProbVolume> {
        if p.classes != self.sagittal_unmap.len() {
            return Err(HarnessError::Data(format!(
                "sagittal map has {} classes, unmap expects {}",
                p.classes,
                self.sagittal_unmap.len()
            )));
        }
        let full = self.sagittal_unmap.iter().map(|m| m.len()).sum();
        let mut out = ProbVolume::zeros(p.dims, p.res, full);
        for v in 0..p.dims.iter().product() {
            for (s, members) in self.sagittal_unmap.iter().enumerate() {
                for &id in members {
                    out.data[v * full + id as usize] = p.data[v * p.classes + s];
                }
            }
        }
        Ok(out)
    }

    /// `Σ w_p · P_p / Σ w_p` over the given planes (full scheme; sagittal
    /// maps must already be unmapped).
    pub fn aggregate(&self, parts: &[(Plane, &ProbVolume)]) -> Result<ProbVolume> {
        let (_, first) = parts
            .first()
            .ok_or_else(|| HarnessError::Data("nothing to aggregate".into()))?;
        if parts
            .iter()
            .any(|(_, p)| (p.dims, p.classes) != (first.dims, first.classes) || p.res != first.res)
        {
            return Err(HarnessError::Data(
                "plane probability maps differ in grid or class count".into(),
            ));
        }
        let total: f64 = parts.iter().map(|(pl, _)| self.weight(*pl)).sum();
        let mut acc = vec![0.0f64; first.data.len()];
        for (pl, p) in parts {
            let w = self.weight(*pl);
            for (a, &v) in acc.iter_mut().zip(&p.data) {
                *a += w * v as f64;
            }
        }
        Ok(ProbVolume {
            dims: first.dims,
            res: first.res,
            classes: first.classes,
            data: acc.into_iter().map(|a| (a / total) as f32).collect(),
        })
    }
}

/// Result of running a set of plane networks on one volume.
#[derive(Debug, Clone)]
pub struct Inference {
    pub aggregated: LabelVolume,
    /// Single-plane segmentations in the full scheme, one per network.
    pub per_plane: Vec<(Plane, LabelVolume)>,
}

/// Runs every plane network, aggregates, and takes the per-voxel argmax.
pub fn infer_volume(
    nets: &[&Network<f32>],
    image: &IntensityVolume,
    spec: &ViewAggregationSpec,
    context: usize,
) -> Result<Inference> {
    let mut maps = Vec::with_capacity(nets.len());
    for net in nets {
        let plane = net.config.plane;
        let p = plane_probabilities(net, image, context)?;
        let p = if plane == Plane::Sagittal {
            spec.unmap(&p)?
        } else {
            p
        };
        maps.push((plane, p));
    }
    let parts: Vec<(Plane, &ProbVolume)> = maps.iter().map(|(pl, p)| (*pl, p)).collect();
    let aggregated = spec.aggregate(&parts)?.argmax();
    let per_plane = maps.iter().map(|(pl, p)| (*pl, p.argmax())).collect();
    Ok(Inference {
        aggregated,
        per_plane,
    })
}
