use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Per-pixel softmax across channels, max-subtracted.
pub fn softmax_channels<T: Scalar>(u: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, c, h, w] = u.shape();
    if c < 2 {
        return invalid("softmax needs at least two channels");
    }
    let hw = h * w;
    let mut out = Tensor4::zeros(u.shape());
    let src = u.data();
    let dst = out.data_mut();
    for s in 0..n {
        let base = s * c * hw;
        for p in 0..hw {
            let mut mx = T::neg_infinity();
            for ch in 0..c {
                mx = mx.max(src[base + ch * hw + p]);
            }
            let mut sum = T::zero();
            for ch in 0..c {
                let e = (src[base + ch * hw + p] - mx).exp();
                dst[base + ch * hw + p] = e;
                sum += e;
            }
            for ch in 0..c {
                dst[base + ch * hw + p] /= sum;
            }
        }
    }
    Ok(out)
}

/// Gradient of [`softmax_channels`] given its output `y`.
pub fn softmax_channels_backward<T: Scalar>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    if y.shape() != dy.shape() {
        return invalid("softmax backward shape mismatch");
    }
    let [n, c, h, w] = y.shape();
    let hw = h * w;
    let mut dx = Tensor4::zeros(y.shape());
    let (ys, gs) = (y.data(), dy.data());
    let d = dx.data_mut();
    for s in 0..n {
        let base = s * c * hw;
        for p in 0..hw {
            let dot: T = (0..c)
                .map(|ch| ys[base + ch * hw + p] * gs[base + ch * hw + p])
                .sum();
            for ch in 0..c {
                let k = base + ch * hw + p;
                d[k] = ys[k] * (gs[k] - dot);
            }
        }
    }
    Ok(dx)
}
