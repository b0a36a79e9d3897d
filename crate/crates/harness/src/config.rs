//! Run configuration, read from TOML. Every section and field is optional;
//! missing values take the defaults below.
//!
//! ```toml
//! seed = 7
//! variant = "vinna"
//! arm = "internal"
//! planes = ["axial", "coronal", "sagittal"]
//! manifest = "data/manifest.tsv"
//!
//! [network]
//! depth = 3
//! channels = [16, 16, 16]
//!
//! [training]
//! epochs = 30
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use latentseg::augment::{ExternalAugConfig, IntensityAugConfig, InternalAugConfig};
use latentseg::loss::WeightMapConfig;
use latentseg::network::{NetworkConfig, Variant};
use latentseg::phantom::{Modality, PosePolicy, SplitCounts};
use latentseg::volume::Plane;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Which spatial augmentation a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    None,
    Exa,
    Internal,
    InternalExa,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::None => "none",
            Arm::Exa => "exa",
            Arm::Internal => "internal",
            Arm::InternalExa => "internal-exa",
        }
    }

    pub fn external(self) -> bool {
        matches!(self, Arm::Exa | Arm::InternalExa)
    }

    pub fn internal(self) -> bool {
        matches!(self, Arm::Internal | Arm::InternalExa)
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        [Arm::None, Arm::Exa, Arm::Internal, Arm::InternalExa]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                HarnessError::Config(format!(
                    "unknown arm `{s}` (none|exa|internal|internal-exa)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub depth: usize,
    pub channels: Vec<usize>,
    pub res_inner: f64,
    pub convs_per_block: usize,
    /// Neighbouring slices stacked on each side of the centre slice.
    pub context: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            depth: 3,
            channels: vec![16, 16, 16],
            res_inner: 0.8,
            convs_per_block: 3,
            context: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// Length of the first cosine cycle, epochs.
    pub t0: usize,
    pub t_mult: usize,
    pub min_lr: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            t0: 10,
            t_mult: 2,
            min_lr: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub drop_empty: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            epochs: 70,
            batch_size: 16,
            drop_empty: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub external: ExternalAugConfig,
    pub internal: InternalAugConfig,
    pub intensity: IntensityAugConfig,
}

impl Default for AugmentSection {
    /// Translations are scaled down to the 16–32 px phantom slices.
    fn default() -> Self {
        Self {
            external: ExternalAugConfig {
                trans_range: [0.0, 2.0],
                ..Default::default()
            },
            internal: InternalAugConfig {
                trans_range: [0.0, 2.0],
                ..Default::default()
            },
            intensity: IntensityAugConfig::default(),
        }
    }
}

/// View-aggregation weights; planes without a trained network are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationSection {
    pub axial: f64,
    pub coronal: f64,
    pub sagittal: f64,
}

impl Default for AggregationSection {
    fn default() -> Self {
        Self {
            axial: 1.0,
            coronal: 1.0,
            sagittal: 0.5,
        }
    }
}

impl AggregationSection {
    pub fn weight(&self, p: Plane) -> f64 {
        match p {
            Plane::Axial => self.axial,
            Plane::Coronal => self.coronal,
            Plane::Sagittal => self.sagittal,
        }
    }
}

/// Phantom dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub res_set: Vec<f64>,
    pub modalities: Vec<Modality>,
    pub fov_mm: f64,
    pub pose: PosePolicy,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train: 15,
            val: 3,
            test: 24,
            res_set: vec![0.5, 0.8, 1.0],
            modalities: vec![Modality::T2],
            fov_mm: 16.0,
            pose: PosePolicy::default(),
        }
    }
}

impl DataSection {
    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.train,
            val: self.val,
            test: self.test,
        }
    }
}

/// Extra planes trained for the VINNA arm of the ablation, so that view
/// aggregation can be compared with single planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub plane: Plane,
    pub aggregate_planes: Vec<Plane>,
    pub alpha: f64,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            plane: Plane::Axial,
            aggregate_planes: Plane::ALL.to_vec(),
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    pub arm: Arm,
    pub planes: Vec<Plane>,
    /// Relative paths are resolved against the config file's directory.
    pub manifest: PathBuf,
    pub threads: usize,
    pub network: NetworkSection,
    pub optimizer: OptimizerSection,
    pub schedule: ScheduleSection,
    pub training: TrainingSection,
    pub loss: WeightMapConfig,
    pub augment: AugmentSection,
    pub aggregation: AggregationSection,
    pub data: DataSection,
    pub ablation: AblationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            variant: Variant::Vinna,
            arm: Arm::Internal,
            planes: Plane::ALL.to_vec(),
            manifest: PathBuf::from("data/manifest.tsv"),
            threads: 1,
            network: NetworkSection::default(),
            optimizer: OptimizerSection::default(),
            schedule: ScheduleSection::default(),
            training: TrainingSection::default(),
            loss: WeightMapConfig::default(),
            augment: AugmentSection::default(),
            aggregation: AggregationSection::default(),
            data: DataSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.manifest.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.manifest = dir.join(&cfg.manifest);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.arm.internal() && self.variant != Variant::Vinna {
            return bad(format!(
                "arm `{}` needs the internal transform module, which {} does not have",
                self.arm,
                self.variant.name()
            ));
        }
        if self.planes.is_empty() {
            return bad("at least one plane is required".into());
        }
        if self.training.batch_size == 0 || self.training.epochs == 0 {
            return bad("batch size and epoch count must be >= 1".into());
        }
        if self.schedule.t0 == 0 || self.schedule.t_mult == 0 {
            return bad("schedule period and multiplier must be >= 1".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0
            && o.weight_decay >= 0.0)
        {
            return bad("optimizer settings out of range".into());
        }
        if !(self.schedule.min_lr >= 0.0 && self.schedule.min_lr <= o.lr) {
            return bad("min_lr must lie in [0, lr]".into());
        }
        for p in Plane::ALL {
            if !(self.aggregation.weight(p) > 0.0) {
                return bad(format!("aggregation weight of {p} must be positive"));
            }
        }
        if !(self.ablation.alpha > 0.0 && self.ablation.alpha < 1.0) {
            return bad("ablation alpha must lie in (0, 1)".into());
        }
        self.augment.external.validate()?;
        self.augment.internal.validate()?;
        self.augment.intensity.validate()?;
        self.network_config(Plane::Axial, 10).validate()?;
        Ok(())
    }

    /// Network configuration for one plane with `num_classes` outputs.
    pub fn network_config(&self, plane: Plane, num_classes: usize) -> NetworkConfig {
        NetworkConfig {
            variant: self.variant,
            depth: self.network.depth,
            channels: self.network.channels.clone(),
            num_classes,
            res_inner: self.network.res_inner,
            plane,
            in_channels: 2 * self.network.context + 1,
            convs_per_block: self.network.convs_per_block,
        }
    }
}
