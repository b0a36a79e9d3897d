//! Adaptive-moment optimiser with decoupled weight decay.

use latentseg::network::Network;
use latentseg::Scalar;

use crate::config::OptimizerSection;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: OptimizerSection,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Scalar>(cfg: OptimizerSection, net: &Network<T>) -> Self {
        let sizes: Vec<usize> = net.params().iter().map(|p| p.value.len()).collect();
        Self {
            cfg,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter from its accumulated gradient.
    pub fn step<T: Scalar>(&mut self, net: &mut Network<T>, lr: f64) {
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, p) in net.params_mut().into_iter().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i].as_f64();
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mut w = p.value[i].as_f64();
                w -= lr * c.weight_decay * w;
                w -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                p.value[i] = T::lit(w);
            }
        }
    }
}
