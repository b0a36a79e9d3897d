use super::{Mode, Param};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(
                format!("{name}.gamma"),
                vec![channels],
                vec![T::one(); channels],
                true,
            ),
            beta: Param::new(
                format!("{name}.beta"),
                vec![channels],
                vec![T::zero(); channels],
                true,
            ),
            running_mean: Param::new(
                format!("{name}.running_mean"),
                vec![channels],
                vec![T::zero(); channels],
                false,
            ),
            running_var: Param::new(
                format!("{name}.running_var"),
                vec![channels],
                vec![T::one(); channels],
                false,
            ),
            eps: T::lit(BN_EPS),
            momentum: T::lit(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// estimates (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        let BnCache::Train {
            mean, var, count, ..
        } = cache
        else {
            return;
        };
        let m = self.momentum;
        let unbias = if *count > 1 {
            T::lit(*count as f64 / (*count as f64 - 1.0))
        } else {
            T::one()
        };
        for c in 0..mean.len() {
            let rm = &mut self.running_mean.value[c];
            *rm = (T::one() - m) * *rm + m * mean[c];
            let rv = &mut self.running_var.value[c];
            *rv = (T::one() - m) * *rv + m * var[c] * unbias;
        }
    }
}

/// Values retained by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum BnCache<T> {
    Train {
        xhat: Tensor4<T>,
        inv_std: Vec<T>,
        mean: Vec<T>,
        var: Vec<T>,
        count: usize,
    },
    Eval {
        xhat: Tensor4<T>,
        inv_std: Vec<T>,
    },
}

/// Normalises each channel. Training mode uses the (biased) batch statistics
/// over `n × h × w`; evaluation mode uses the running estimates. The running
/// estimates are not touched here, see [`BatchNormState::update_running`].
pub fn batch_norm<T: Scalar>(
    x: &Tensor4<T>,
    state: &BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    let [n, c, h, w] = x.shape();
    if c != state.channels() {
        return invalid(format!(
            "batch norm expects {} channels, got {}",
            state.channels(),
            c
        ));
    }
    let hw = h * w;
    let count = n * hw;
    let (gamma, beta) = (&state.gamma.value, &state.beta.value);
    let mut y = Tensor4::zeros(x.shape());
    match mode {
        Mode::Eval => {
            let mut inv_std = Vec::with_capacity(c);
            let mut xhat = Tensor4::zeros(x.shape());
            for ch in 0..c {
                let mu = state.running_mean.value[ch];
                let sd = (state.running_var.value[ch] + state.eps).sqrt();
                inv_std.push(T::one() / sd);
                for s in 0..n {
                    let src = x.plane(s, ch);
                    for (d, &v) in xhat.plane_mut(s, ch).iter_mut().zip(src) {
                        *d = (v - mu) / sd;
                    }
                    let xh = xhat.plane(s, ch).to_vec();
                    for (d, v) in y.plane_mut(s, ch).iter_mut().zip(xh) {
                        *d = v * gamma[ch] + beta[ch];
                    }
                }
            }
            Ok((y, BnCache::Eval { xhat, inv_std }))
        }
        Mode::Train => {
            if count < 2 {
                return invalid("training-mode batch norm needs at least two values per channel");
            }
            let mut xhat = Tensor4::zeros(x.shape());
            let (mut means, mut vars, mut inv_stds) = (Vec::new(), Vec::new(), Vec::new());
            let cnt = T::lit(count as f64);
            for ch in 0..c {
                // Shifted two-pass statistics: a constant channel centres to exactly zero.
                let shift = x.plane(0, ch)[0];
                let mut sum = T::zero();
                for s in 0..n {
                    sum += x.plane(s, ch).iter().map(|&v| v - shift).sum::<T>();
                }
                let mean_d = sum / cnt;
                let mut sq = T::zero();
                for s in 0..n {
                    sq += x
                        .plane(s, ch)
                        .iter()
                        .map(|&v| (v - shift - mean_d) * (v - shift - mean_d))
                        .sum::<T>();
                }
                let var = sq / cnt;
                let inv_std = T::one() / (var + state.eps).sqrt();
                for s in 0..n {
                    let src = x.plane(s, ch);
                    let xh = xhat.plane_mut(s, ch);
                    for (d, &v) in xh.iter_mut().zip(src) {
                        *d = (v - shift - mean_d) * inv_std;
                    }
                    let xh = xhat.plane(s, ch).to_vec();
                    for (d, v) in y.plane_mut(s, ch).iter_mut().zip(xh) {
                        *d = v * gamma[ch] + beta[ch];
                    }
                }
                means.push(shift + mean_d);
                vars.push(var);
                inv_stds.push(inv_std);
            }
            Ok((
                y,
                BnCache::Train {
                    xhat,
                    inv_std: inv_stds,
                    mean: means,
                    var: vars,
                    count,
                },
            ))
        }
    }
}

/// Returns `(dL/dx, dL/dgamma, dL/dbeta)`.
pub fn batch_norm_backward<T: Scalar>(
    state: &BatchNormState<T>,
    cache: &BnCache<T>,
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let [n, c, _, _] = dy.shape();
    if c != state.channels() {
        return invalid("batch norm upstream channel mismatch");
    }
    let gamma = &state.gamma.value;
    let mut dx = Tensor4::zeros(dy.shape());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    match cache {
        BnCache::Train {
            xhat,
            inv_std,
            count,
            ..
        } => {
            if xhat.shape() != dy.shape() {
                return invalid("batch norm upstream shape mismatch");
            }
            let m = T::lit(*count as f64);
            for ch in 0..c {
                let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
                for s in 0..n {
                    for (&g, &xh) in dy.plane(s, ch).iter().zip(xhat.plane(s, ch)) {
                        sum_dy += g;
                        sum_dy_xh += g * xh;
                    }
                }
                dgamma[ch] = sum_dy_xh;
                dbeta[ch] = sum_dy;
                let k = gamma[ch] * inv_std[ch] / m;
                for s in 0..n {
                    let g = dy.plane(s, ch).to_vec();
                    let xh = xhat.plane(s, ch).to_vec();
                    for ((d, gv), xv) in dx.plane_mut(s, ch).iter_mut().zip(g).zip(xh) {
                        *d = k * (m * gv - sum_dy - xv * sum_dy_xh);
                    }
                }
            }
        }
        BnCache::Eval { xhat, inv_std } => {
            if xhat.shape() != dy.shape() {
                return invalid("batch norm upstream shape mismatch");
            }
            for ch in 0..c {
                let k = gamma[ch] * inv_std[ch];
                for s in 0..n {
                    let g = dy.plane(s, ch).to_vec();
                    dbeta[ch] += g.iter().copied().sum::<T>();
                    dgamma[ch] += g
                        .iter()
                        .zip(xhat.plane(s, ch))
                        .map(|(&a, &b)| a * b)
                        .sum::<T>();
                    for (d, gv) in dx.plane_mut(s, ch).iter_mut().zip(g) {
                        *d = k * gv;
                    }
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}
