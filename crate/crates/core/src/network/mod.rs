//! CNN*, VINN and VINNA: one encoder–decoder built from competitive dense
//! blocks, differing only in the first/last scale transition.

mod block;
pub mod checkpoint;

pub use block::{BlockKind, BlockSpec, DenseBlock};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::LatentAugmentation;
use crate::loss::{composite_loss_with_grad, LossValue};
use crate::nnops::{
    conv2d, conv2d_backward, index_unpool2, index_unpool2_backward, maxout, maxout_backward,
    maxpool2, maxpool2_backward, softmax_channels, softmax_channels_backward, ConvKernel, Mode,
    Param, PoolIndices,
};
use crate::sampler::{
    transform_forward, transform_forward_backward, transform_inverse, transform_inverse_backward,
    LatentTransformContext,
};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, Tensor4};
use crate::volume::Plane;
use block::BlockTape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Pooling at every transition; resolution-ignorant.
    #[serde(rename = "cnn*")]
    CnnStar,
    /// First/last transition resamples to the inner resolution (scale only).
    #[serde(rename = "vinn")]
    Vinn,
    /// First/last transition is the full 4-DOF latent transform.
    #[serde(rename = "vinna")]
    Vinna,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::CnnStar => "cnn*",
            Variant::Vinn => "vinn",
            Variant::Vinna => "vinna",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn*" | "cnnstar" | "cnn" => Ok(Variant::CnnStar),
            "vinn" => Ok(Variant::Vinn),
            "vinna" => Ok(Variant::Vinna),
            _ => invalid(format!("unknown variant '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub variant: Variant,
    /// Number of encoder blocks (pre-IDB, IDB and `depth - 2` CDBs).
    pub depth: usize,
    /// Width of each encoder level; `channels.len() == depth`.
    pub channels: Vec<usize>,
    pub num_classes: usize,
    pub res_inner: f64,
    pub plane: Plane,
    pub in_channels: usize,
    pub convs_per_block: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Vinna,
            depth: 5,
            channels: vec![16, 32, 32, 32, 32],
            num_classes: 10,
            res_inner: 0.8,
            plane: Plane::Axial,
            in_channels: 1,
            convs_per_block: 4,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return invalid("depth must be at least 2");
        }
        if self.channels.len() != self.depth {
            return invalid(format!(
                "{} channel widths given for depth {}",
                self.channels.len(),
                self.depth
            ));
        }
        if self.channels.contains(&0) || self.in_channels == 0 {
            return invalid("channel widths must be >= 1");
        }
        if self.num_classes < 2 {
            return invalid("at least two classes are required");
        }
        if !(self.res_inner > 0.0 && self.res_inner.is_finite()) {
            return invalid("res_inner must be positive");
        }
        if self.convs_per_block < 2 {
            return invalid("convs_per_block must be at least 2");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network config serialises")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Transition<T> {
    Pool(PoolIndices),
    Latent(LatentTransformContext<T>),
}

/// Everything recorded by a training-mode forward pass.
pub struct Tape<T> {
    input_shape: [usize; 4],
    pre: BlockTape<T>,
    e0: Tensor4<T>,
    transition: Transition<T>,
    idb: BlockTape<T>,
    enc: Vec<BlockTape<T>>,
    /// Encoder outputs `e_1 .. e_{depth-1}`.
    skips: Vec<Tensor4<T>>,
    /// Pool after `e_l`, `l = 1 .. depth-1` (the last feeds the bottleneck).
    pools: Vec<PoolIndices>,
    bottleneck: BlockTape<T>,
    /// Per decoder level (deepest first): unpooled input and block tape.
    dec: Vec<(Tensor4<T>, BlockTape<T>)>,
    zero_latent: bool,
    post: BlockTape<T>,
    post_out: Tensor4<T>,
    probs: Tensor4<T>,
}

impl<T> Tape<T> {
    pub fn probs(&self) -> &Tensor4<T> {
        &self.probs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pre_idb: DenseBlock<T>,
    idb: DenseBlock<T>,
    enc: Vec<DenseBlock<T>>,
    bottleneck: DenseBlock<T>,
    /// Decoder blocks, deepest first; block `k` serves level `depth - 1 - k`.
    dec: Vec<DenseBlock<T>>,
    post: DenseBlock<T>,
    classifier: ConvKernel<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = &config.channels;
        let d = config.depth;
        let k = config.convs_per_block;
        let spec = |kind, c_in, channels| BlockSpec {
            kind,
            c_in,
            channels,
            convs_per_block: k,
        };
        let pre_idb = DenseBlock::new(
            "pre_idb",
            spec(BlockKind::PreIdb, config.in_channels, w[0]),
            &mut rng,
        )?;
        let idb = DenseBlock::new("idb", spec(BlockKind::Idb, w[0], w[1]), &mut rng)?;
        let mut enc = Vec::new();
        for l in 2..d {
            enc.push(DenseBlock::new(
                &format!("enc{l}"),
                spec(BlockKind::Cdb, w[l - 1], w[l]),
                &mut rng,
            )?);
        }
        let bottleneck = DenseBlock::new(
            "bottleneck",
            spec(BlockKind::Cdb, w[d - 1], w[d - 1]),
            &mut rng,
        )?;
        let mut dec = Vec::new();
        for l in (1..d).rev() {
            dec.push(DenseBlock::new(
                &format!("dec{l}"),
                spec(BlockKind::Cdb, w[l], w[l - 1]),
                &mut rng,
            )?);
        }
        let post = DenseBlock::new(
            "post_cdb",
            spec(BlockKind::PostCdb, 2 * w[0], w[0]),
            &mut rng,
        )?;
        let classifier = ConvKernel::new("classifier", w[0], config.num_classes, 1, &mut rng);
        Ok(Self {
            config,
            pre_idb,
            idb,
            enc,
            bottleneck,
            dec,
            post,
            classifier,
        })
    }

    fn blocks(&self) -> Vec<&DenseBlock<T>> {
        let mut b = vec![&self.pre_idb, &self.idb];
        b.extend(self.enc.iter());
        b.push(&self.bottleneck);
        b.extend(self.dec.iter());
        b.push(&self.post);
        b
    }

    /// All parameters in a fixed order (trainable and running statistics).
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.blocks().into_iter().flat_map(|b| b.params()).collect();
        out.extend([&self.classifier.weight, &self.classifier.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        out.extend(self.pre_idb.params_mut());
        out.extend(self.idb.params_mut());
        for b in &mut self.enc {
            out.extend(b.params_mut());
        }
        out.extend(self.bottleneck.params_mut());
        for b in &mut self.dec {
            out.extend(b.params_mut());
        }
        out.extend(self.post.params_mut());
        out.extend([&mut self.classifier.weight, &mut self.classifier.bias]);
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    fn check_input(
        &self,
        x: &FeatureMap<T>,
        augs: &[LatentAugmentation<T>],
    ) -> Result<(usize, usize)> {
        let [n, c, h, w] = x.shape();
        if c != self.config.in_channels {
            return invalid(format!(
                "network expects {} input channels, got {}",
                self.config.in_channels, c
            ));
        }
        if augs.len() != 1 && augs.len() != n {
            return invalid(format!(
                "{} augmentation entries for a batch of {}",
                augs.len(),
                n
            ));
        }
        match self.config.variant {
            Variant::CnnStar if augs.iter().any(|a| !a.is_identity()) => {
                return invalid("CNN* has no latent transform; augmentation must be identity")
            }
            Variant::Vinn if augs.iter().any(|a| !a.is_rigid_identity()) => {
                return invalid("VINN resamples scale only; rotation and translation must be zero")
            }
            _ => {}
        }
        let inner = match self.config.variant {
            Variant::CnnStar => (h.div_ceil(2), w.div_ceil(2)),
            _ => {
                let spec = crate::geometry::GridSpec::new(h, w, x.res, self.config.res_inner)?;
                (spec.h_inner, spec.w_inner)
            }
        };
        let need = 1usize << self.config.depth;
        if inner.0 < need || inner.1 < need {
            return invalid(format!(
                "latent extent {}x{} is smaller than 2^depth = {} (input {}x{})",
                inner.0, inner.1, need, h, w
            ));
        }
        Ok(inner)
    }

    /// Training-capable forward pass. In [`Mode::Train`] batch-norm running
    /// statistics are updated.
    pub fn forward(
        &mut self,
        x: &FeatureMap<T>,
        augs: &[LatentAugmentation<T>],
        mode: Mode,
    ) -> Result<Tape<T>> {
        self.run(x, augs, mode, false)
    }

    fn run(
        &mut self,
        x: &FeatureMap<T>,
        augs: &[LatentAugmentation<T>],
        mode: Mode,
        zero_latent: bool,
    ) -> Result<Tape<T>> {
        self.check_input(x, augs)?;
        let [_, _, h, w] = x.shape();
        let (e0, pre) = self.pre_idb.forward(&x.data, mode)?;
        let (z, transition) = match self.config.variant {
            Variant::CnnStar => {
                let (p, idx) = maxpool2(&e0)?;
                (p, Transition::Pool(idx))
            }
            _ => {
                let (v, ctx) = transform_forward(
                    &FeatureMap {
                        data: e0.clone(),
                        res: x.res,
                    },
                    augs,
                    self.config.res_inner,
                )?;
                (v.data, Transition::Latent(ctx))
            }
        };
        let (e1, idb) = self.idb.forward(&z, mode)?;
        let mut skips = vec![e1];
        let mut pools = Vec::new();
        let mut enc = Vec::new();
        for b in self.enc.iter_mut() {
            let (p, idx) = maxpool2(skips.last().expect("nonempty"))?;
            pools.push(idx);
            let (e, t) = b.forward(&p, mode)?;
            enc.push(t);
            skips.push(e);
        }
        let (p, idx) = maxpool2(skips.last().expect("nonempty"))?;
        pools.push(idx);
        let (mut cur, bottleneck) = self.bottleneck.forward(&p, mode)?;
        let d = self.config.depth;
        let mut dec = Vec::new();
        for (k, b) in self.dec.iter_mut().enumerate() {
            let l = d - 1 - k;
            let skip = &skips[l - 1];
            let up = index_unpool2(&cur, &pools[l - 1], (skip.h(), skip.w()))?;
            let merged = maxout(&up, skip)?;
            let (out, t) = b.forward(&merged, mode)?;
            dec.push((up, t));
            cur = out;
        }
        let mut back = match &transition {
            Transition::Pool(idx) => index_unpool2(&cur, idx, (h, w))?,
            Transition::Latent(ctx) => {
                transform_inverse(
                    &FeatureMap {
                        data: cur,
                        res: self.config.res_inner,
                    },
                    ctx,
                )?
                .data
            }
        };
        if zero_latent {
            back = Tensor4::zeros(back.shape());
        }
        let cat = Tensor4::concat_channels(&back, &e0)?;
        let (post_out, post) = self.post.forward(&cat, mode)?;
        let logits = conv2d(&post_out, &self.classifier)?;
        let probs = softmax_channels(&logits)?;
        Ok(Tape {
            input_shape: x.shape(),
            pre,
            e0,
            transition,
            idb,
            enc,
            skips,
            pools,
            bottleneck,
            dec,
            zero_latent,
            post,
            post_out,
            probs,
        })
    }

    /// Accumulates parameter gradients of a scalar loss given `dL/dprobs`.
    pub fn backward(&mut self, tape: &Tape<T>, dprobs: &Tensor4<T>) -> Result<()> {
        if dprobs.shape() != tape.probs.shape() {
            return invalid("upstream gradient does not match the network output");
        }
        let dlogits = softmax_channels_backward(&tape.probs, dprobs)?;
        let (dpost, dw, db) = conv2d_backward(&tape.post_out, &self.classifier, &dlogits)?;
        self.classifier.weight.accumulate(&dw);
        self.classifier.bias.accumulate(&db);
        let dcat = self.post.backward(&tape.post, &dpost)?;
        let (dback, mut de0) = dcat.split_channels(self.config.channels[0]);
        let d = self.config.depth;
        let dback = if tape.zero_latent {
            Tensor4::zeros(dback.shape())
        } else {
            dback
        };
        let mut dcur = match &tape.transition {
            Transition::Pool(idx) => index_unpool2_backward(idx, &dback)?,
            Transition::Latent(ctx) => transform_inverse_backward(ctx, &dback)?,
        };
        // Gradients flowing into the encoder outputs e_1 .. e_{d-1}.
        let mut dskips: Vec<Tensor4<T>> = tape
            .skips
            .iter()
            .map(|s| Tensor4::zeros(s.shape()))
            .collect();
        for (k, b) in self.dec.iter_mut().enumerate().rev() {
            let l = d - 1 - k;
            let (up, t) = &tape.dec[k];
            let dmerged = b.backward(t, &dcur)?;
            let (dup, dskip) = maxout_backward(up, &tape.skips[l - 1], &dmerged)?;
            dskips[l - 1].add_assign(&dskip);
            dcur = index_unpool2_backward(&tape.pools[l - 1], &dup)?;
        }
        let dp = self.bottleneck.backward(&tape.bottleneck, &dcur)?;
        dskips[d - 2].add_assign(&maxpool2_backward(&tape.pools[d - 2], &dp)?);
        for (k, b) in self.enc.iter_mut().enumerate().rev() {
            // enc[k] produced e_{k+2} from pool(e_{k+1})
            let dp = b.backward(&tape.enc[k], &dskips[k + 1])?;
            let de = maxpool2_backward(&tape.pools[k], &dp)?;
            dskips[k].add_assign(&de);
        }
        let dz = self.idb.backward(&tape.idb, &dskips[0])?;
        let de0_latent = match &tape.transition {
            Transition::Pool(idx) => maxpool2_backward(idx, &dz)?,
            Transition::Latent(ctx) => transform_forward_backward(ctx, &dz)?,
        };
        de0.add_assign(&de0_latent);
        debug_assert_eq!(de0.shape(), tape.e0.shape());
        self.pre_idb.backward(&tape.pre, &de0)?;
        debug_assert_eq!(tape.input_shape[0], de0.n());
        Ok(())
    }

    /// Evaluation-mode class probabilities; takes `&self` and never mutates.
    pub fn predict(
        &self,
        x: &FeatureMap<T>,
        augs: &[LatentAugmentation<T>],
    ) -> Result<FeatureMap<T>> {
        self.check_input(x, augs)?;
        let [_, _, h, w] = x.shape();
        let e0 = self.pre_idb.infer(&x.data)?;
        enum Tr<T> {
            Pool(PoolIndices),
            Latent(LatentTransformContext<T>),
        }
        let (z, tr) = match self.config.variant {
            Variant::CnnStar => {
                let (p, idx) = maxpool2(&e0)?;
                (p, Tr::Pool(idx))
            }
            _ => {
                let (v, ctx) = transform_forward(
                    &FeatureMap {
                        data: e0.clone(),
                        res: x.res,
                    },
                    augs,
                    self.config.res_inner,
                )?;
                (v.data, Tr::Latent(ctx))
            }
        };
        let mut skips = vec![self.idb.infer(&z)?];
        let mut pools = Vec::new();
        for b in &self.enc {
            let (p, idx) = maxpool2(skips.last().expect("nonempty"))?;
            pools.push(idx);
            skips.push(b.infer(&p)?);
        }
        let (p, idx) = maxpool2(skips.last().expect("nonempty"))?;
        pools.push(idx);
        let mut cur = self.bottleneck.infer(&p)?;
        let d = self.config.depth;
        for (k, b) in self.dec.iter().enumerate() {
            let l = d - 1 - k;
            let skip = &skips[l - 1];
            let up = index_unpool2(&cur, &pools[l - 1], (skip.h(), skip.w()))?;
            cur = b.infer(&maxout(&up, skip)?)?;
        }
        let back = match &tr {
            Tr::Pool(idx) => index_unpool2(&cur, idx, (h, w))?,
            Tr::Latent(ctx) => {
                transform_inverse(
                    &FeatureMap {
                        data: cur,
                        res: self.config.res_inner,
                    },
                    ctx,
                )?
                .data
            }
        };
        let post = self.post.infer(&Tensor4::concat_channels(&back, &e0)?)?;
        let probs = softmax_channels(&conv2d(&post, &self.classifier)?)?;
        Ok(FeatureMap {
            data: probs,
            res: x.res,
        })
    }

    /// Evaluation-mode segmentation with `params` applied inside the network,
    /// next to the reference segmentation with identity parameters.
    pub fn forward_equivariance_probe(
        &self,
        x: &FeatureMap<T>,
        params: &LatentAugmentation<T>,
    ) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
        let with = self.predict(x, std::slice::from_ref(params))?;
        let reference = self.predict(x, &[LatentAugmentation::identity()])?;
        Ok((with, reference))
    }

    /// Zeroes gradients, runs a training-mode forward/backward pass of the
    /// composite loss and leaves the gradients in the parameters.
    pub fn loss_and_gradients(
        &mut self,
        x: &FeatureMap<T>,
        labels: &[u16],
        weights: &[T],
        augs: &[LatentAugmentation<T>],
    ) -> Result<LossValue> {
        self.loss_and_gradients_mode(x, labels, weights, augs, Mode::Train)
    }

    pub fn loss_and_gradients_mode(
        &mut self,
        x: &FeatureMap<T>,
        labels: &[u16],
        weights: &[T],
        augs: &[LatentAugmentation<T>],
        mode: Mode,
    ) -> Result<LossValue> {
        self.zero_grad();
        let tape = self.forward(x, augs, mode)?;
        let (loss, dprobs) = composite_loss_with_grad(&tape.probs, labels, weights)?;
        if !loss.total.is_finite() {
            return Err(Error::Internal(format!("non-finite loss {}", loss.total)));
        }
        self.backward(&tape, &dprobs)?;
        Ok(loss)
    }

    /// Forward pass with the transformed latent path replaced by zeros just
    /// before the final merge.
    pub fn forward_without_latent_path(
        &mut self,
        x: &FeatureMap<T>,
        augs: &[LatentAugmentation<T>],
    ) -> Result<FeatureMap<T>> {
        let tape = self.run(x, augs, Mode::Eval, true)?;
        Ok(FeatureMap {
            data: tape.probs,
            res: x.res,
        })
    }
}

/// Per-pixel argmax over channels, `n × h × w` class indices.
pub fn argmax_channels<T: Scalar>(p: &Tensor4<T>) -> Vec<u16> {
    let [n, c, h, w] = p.shape();
    let hw = h * w;
    let d = p.data();
    let mut out = Vec::with_capacity(n * hw);
    for s in 0..n {
        for q in 0..hw {
            let mut best = 0;
            for l in 1..c {
                if d[(s * c + l) * hw + q] > d[(s * c + best) * hw + q] {
                    best = l;
                }
            }
            out.push(best as u16);
        }
    }
    out
}
