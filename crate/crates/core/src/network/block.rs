use rand::Rng;

use crate::error::{invalid, Result};
use crate::nnops::{
    batch_norm, batch_norm_backward, conv2d, conv2d_backward, maxout, maxout_backward, prelu,
    prelu_backward, BatchNormState, BnCache, ConvKernel, Mode, PReLUState, Param,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    PreIdb,
    Idb,
    Cdb,
    PostCdb,
}

/// Structural description of one dense block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub c_in: usize,
    pub channels: usize,
    pub convs_per_block: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum PreNorm<T> {
    Bn(BatchNormState<T>),
    Act(PReLUState<T>),
}

#[derive(Debug, Clone, PartialEq)]
struct Sequence<T> {
    pre: PreNorm<T>,
    conv: ConvKernel<T>,
    bn: BatchNormState<T>,
}

enum PreCache<T> {
    Bn(BnCache<T>),
    Act,
}

struct SeqTape<T> {
    x: Tensor4<T>,
    pre: PreCache<T>,
    conv_in: Tensor4<T>,
    bn: BnCache<T>,
}

pub(crate) struct BlockTape<T> {
    x: Tensor4<T>,
    seqs: Vec<SeqTape<T>>,
    /// Running maxout value after each sequence.
    merged: Vec<Tensor4<T>>,
    /// Output of each sequence before merging.
    outs: Vec<Tensor4<T>>,
}

/// Competitive dense block: a chain of normalisation/convolution sequences
/// whose outputs are merged with maxout instead of concatenation.
///
/// Input blocks (pre-IDB, IDB) open with BN → Conv → BN on the raw input;
/// every other sequence is PReLU → Conv → BN. A CDB whose input width equals
/// its output width also maxouts its first sequence against the input.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock<T> {
    pub spec: BlockSpec,
    seqs: Vec<Sequence<T>>,
}

impl<T: Scalar> DenseBlock<T> {
    pub fn new(name: &str, spec: BlockSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.channels == 0 || spec.c_in == 0 {
            return invalid(format!("{name}: channel counts must be >= 1"));
        }
        if spec.convs_per_block < 2 {
            return invalid(format!(
                "{name}: a dense block needs at least two convolutions"
            ));
        }
        let input_block = matches!(spec.kind, BlockKind::PreIdb | BlockKind::Idb);
        let mut seqs = Vec::with_capacity(spec.convs_per_block);
        for k in 0..spec.convs_per_block {
            let c_in = if k == 0 { spec.c_in } else { spec.channels };
            let pre = if k == 0 && input_block {
                PreNorm::Bn(BatchNormState::new(&format!("{name}.seq{k}.bn_in"), c_in))
            } else {
                PreNorm::Act(PReLUState::new(&format!("{name}.seq{k}.prelu"), c_in))
            };
            seqs.push(Sequence {
                pre,
                conv: ConvKernel::new(&format!("{name}.seq{k}.conv"), c_in, spec.channels, 3, rng),
                bn: BatchNormState::new(&format!("{name}.seq{k}.bn"), spec.channels),
            });
        }
        Ok(Self { spec, seqs })
    }

    fn input_maxout(&self) -> bool {
        matches!(self.spec.kind, BlockKind::Cdb | BlockKind::PostCdb)
            && self.spec.c_in == self.spec.channels
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for s in &self.seqs {
            match &s.pre {
                PreNorm::Bn(b) => out.extend([&b.gamma, &b.beta, &b.running_mean, &b.running_var]),
                PreNorm::Act(a) => out.push(&a.a),
            }
            out.extend([&s.conv.weight, &s.conv.bias]);
            out.extend([
                &s.bn.gamma,
                &s.bn.beta,
                &s.bn.running_mean,
                &s.bn.running_var,
            ]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for s in &mut self.seqs {
            match &mut s.pre {
                PreNorm::Bn(b) => out.extend([
                    &mut b.gamma,
                    &mut b.beta,
                    &mut b.running_mean,
                    &mut b.running_var,
                ]),
                PreNorm::Act(a) => out.push(&mut a.a),
            }
            out.extend([&mut s.conv.weight, &mut s.conv.bias]);
            out.extend([
                &mut s.bn.gamma,
                &mut s.bn.beta,
                &mut s.bn.running_mean,
                &mut s.bn.running_var,
            ]);
        }
        out
    }

    /// Evaluation-mode forward without a tape.
    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut merged: Option<Tensor4<T>> = None;
        for (k, s) in self.seqs.iter().enumerate() {
            let input = merged.as_ref().unwrap_or(x);
            let a = match &s.pre {
                PreNorm::Bn(b) => batch_norm(input, b, Mode::Eval)?.0,
                PreNorm::Act(p) => prelu(input, p)?,
            };
            let y = batch_norm(&conv2d(&a, &s.conv)?, &s.bn, Mode::Eval)?.0;
            merged = Some(match merged {
                Some(m) => maxout(&m, &y)?,
                None if k == 0 && self.input_maxout() => maxout(x, &y)?,
                None => y,
            });
        }
        Ok(merged.expect("block has sequences"))
    }

    /// Forward pass recording what the backward pass needs. In training mode
    /// the batch statistics are folded into the running estimates.
    pub(crate) fn forward(
        &mut self,
        x: &Tensor4<T>,
        mode: Mode,
    ) -> Result<(Tensor4<T>, BlockTape<T>)> {
        let input_maxout = self.input_maxout();
        let mut tape = BlockTape {
            x: x.clone(),
            seqs: Vec::new(),
            merged: Vec::new(),
            outs: Vec::new(),
        };
        for k in 0..self.seqs.len() {
            let input = if k == 0 {
                x.clone()
            } else {
                tape.merged[k - 1].clone()
            };
            let s = &mut self.seqs[k];
            let (conv_in, pre) = match &mut s.pre {
                PreNorm::Bn(b) => {
                    let (y, c) = batch_norm(&input, b, mode)?;
                    if mode == Mode::Train {
                        b.update_running(&c);
                    }
                    (y, PreCache::Bn(c))
                }
                PreNorm::Act(p) => (prelu(&input, p)?, PreCache::Act),
            };
            let z = conv2d(&conv_in, &s.conv)?;
            let (y, bn) = batch_norm(&z, &s.bn, mode)?;
            if mode == Mode::Train {
                s.bn.update_running(&bn);
            }
            let m = if k > 0 {
                maxout(&tape.merged[k - 1], &y)?
            } else if input_maxout {
                maxout(x, &y)?
            } else {
                y.clone()
            };
            tape.seqs.push(SeqTape {
                x: input,
                pre,
                conv_in,
                bn,
            });
            tape.outs.push(y);
            tape.merged.push(m);
        }
        let out = tape.merged.last().expect("block has sequences").clone();
        Ok((out, tape))
    }

    fn seq_backward(&mut self, k: usize, st: &SeqTape<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let s = &mut self.seqs[k];
        let (dz, dgamma, dbeta) = batch_norm_backward(&s.bn, &st.bn, dy)?;
        s.bn.gamma.accumulate(&dgamma);
        s.bn.beta.accumulate(&dbeta);
        let (da, dw, db) = conv2d_backward(&st.conv_in, &s.conv, &dz)?;
        s.conv.weight.accumulate(&dw);
        s.conv.bias.accumulate(&db);
        match (&mut s.pre, &st.pre) {
            (PreNorm::Bn(b), PreCache::Bn(c)) => {
                let (dx, dg, dbt) = batch_norm_backward(b, c, &da)?;
                b.gamma.accumulate(&dg);
                b.beta.accumulate(&dbt);
                Ok(dx)
            }
            (PreNorm::Act(p), PreCache::Act) => {
                let (dx, dslope) = prelu_backward(&st.x, p, &da)?;
                p.a.accumulate(&dslope);
                Ok(dx)
            }
            _ => Err(crate::Error::Internal(
                "block tape does not match block".into(),
            )),
        }
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub(crate) fn backward(
        &mut self,
        tape: &BlockTape<T>,
        dout: &Tensor4<T>,
    ) -> Result<Tensor4<T>> {
        let n = self.seqs.len();
        if tape.seqs.len() != n {
            return invalid("block tape length mismatch");
        }
        let mut dm = dout.clone();
        for k in (1..n).rev() {
            let (mut dprev, dy) = maxout_backward(&tape.merged[k - 1], &tape.outs[k], &dm)?;
            let dseq_in = self.seq_backward(k, &tape.seqs[k], &dy)?;
            dprev.add_assign(&dseq_in);
            dm = dprev;
        }
        if self.input_maxout() {
            let (mut dx, dy) = maxout_backward(&tape.x, &tape.outs[0], &dm)?;
            dx.add_assign(&self.seq_backward(0, &tape.seqs[0], &dy)?);
            Ok(dx)
        } else {
            self.seq_backward(0, &tape.seqs[0], &dm)
        }
    }
}
