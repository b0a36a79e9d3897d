//! Differentiable layers with explicit forward/backward pairs.
//!
//! Every backward function returns gradients for its inputs and parameters;
//! nothing is accumulated implicitly. Batch-parallel loops reduce partial
//! results in sample order, so results do not depend on the thread count.

mod batchnorm;
mod conv;
mod maxout;
mod pool;
mod prelu;
mod softmax;

pub use batchnorm::{batch_norm, batch_norm_backward, BatchNormState, BnCache};
pub use conv::{conv2d, conv2d_backward, conv2d_reference, ConvKernel};
pub use maxout::{maxout, maxout_backward};
pub use pool::{index_unpool2, index_unpool2_backward, maxpool2, maxpool2_backward, PoolIndices};
pub use prelu::{prelu, prelu_backward, PReLUState, PRELU_INIT_SLOPE};
pub use softmax::{softmax_channels, softmax_channels_backward};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named parameter tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Running statistics are stored as non-trainable parameters so that they
    /// travel with checkpoints.
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>, trainable: bool) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            value.len(),
            "param shape/value mismatch"
        );
        let grad = vec![T::zero(); value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
            trainable,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn accumulate(&mut self, g: &[T]) {
        assert_eq!(
            g.len(),
            self.grad.len(),
            "gradient length mismatch for {}",
            self.name
        );
        for (a, &b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }
}
