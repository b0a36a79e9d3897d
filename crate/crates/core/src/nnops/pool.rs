use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Argmax record of a 2×2 stride-2 max-pool.
///
/// Offsets are flat row-major positions in the (zero-padded) input plane.
/// The unpadded input extent is kept so that the unpool can crop back and
/// detect indices that belong to another pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub argmax: Vec<usize>,
    pub shape: [usize; 4],
    pub input_h: usize,
    pub input_w: usize,
}

impl PoolIndices {
    pub fn padded_extent(&self) -> (usize, usize) {
        (self.shape[2] * 2, self.shape[3] * 2)
    }
}

/// 2×2 max-pool with stride 2. Odd extents are padded with zeros on the
/// bottom/right edge before pooling. Ties pick the first window position in
/// row-major order.
pub fn maxpool2<T: Scalar>(u: &Tensor4<T>) -> Result<(Tensor4<T>, PoolIndices)> {
    let [n, c, h, w] = u.shape();
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let pw = wo * 2;
    let mut out = Tensor4::zeros([n, c, ho, wo]);
    let mut argmax = vec![0usize; n * c * ho * wo];
    let plane_out = ho * wo;
    for s in 0..n {
        for ch in 0..c {
            let src = u.plane(s, ch);
            let base = (s * c + ch) * plane_out;
            let dst = out.plane_mut(s, ch);
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut best_off = 0;
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let (y, x) = (2 * i + di, 2 * j + dj);
                        let v = if y < h && x < w {
                            src[y * w + x]
                        } else {
                            T::zero()
                        };
                        if v > best {
                            best = v;
                            best_off = y * pw + x;
                        }
                    }
                    dst[i * wo + j] = best;
                    argmax[base + i * wo + j] = best_off;
                }
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            argmax,
            shape: [n, c, ho, wo],
            input_h: h,
            input_w: w,
        },
    ))
}

fn check_indices<T: Scalar>(
    v: &Tensor4<T>,
    idx: &PoolIndices,
    target: (usize, usize),
) -> Result<()> {
    if v.shape() != idx.shape {
        return invalid(format!(
            "pool indices recorded for {:?}, got {:?}",
            idx.shape,
            v.shape()
        ));
    }
    if target != (idx.input_h, idx.input_w) {
        return invalid(format!(
            "pool indices recorded for extent {}x{}, unpool target is {}x{}",
            idx.input_h, idx.input_w, target.0, target.1
        ));
    }
    Ok(())
}

/// Scatters `v` to the positions stored in `idx`, zeros elsewhere, and crops
/// to `target` (h, w).
pub fn index_unpool2<T: Scalar>(
    v: &Tensor4<T>,
    idx: &PoolIndices,
    target: (usize, usize),
) -> Result<Tensor4<T>> {
    check_indices(v, idx, target)?;
    let [n, c, ho, wo] = v.shape();
    let (h, w) = target;
    let pw = wo * 2;
    let mut out = Tensor4::zeros([n, c, h, w]);
    let plane_in = ho * wo;
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane_in;
            let src = v.plane(s, ch).to_vec();
            let dst = out.plane_mut(s, ch);
            for (k, val) in src.into_iter().enumerate() {
                let off = idx.argmax[base + k];
                let (y, x) = (off / pw, off % pw);
                if y < h && x < w {
                    dst[y * w + x] = val;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`maxpool2`]: routes each upstream value to its argmax.
pub fn maxpool2_backward<T: Scalar>(idx: &PoolIndices, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    index_unpool2(dy, idx, (idx.input_h, idx.input_w))
}

/// Gradient of [`index_unpool2`]: gathers upstream values at the stored
/// positions (padding positions contribute zero).
pub fn index_unpool2_backward<T: Scalar>(idx: &PoolIndices, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, c, h, w] = dy.shape();
    if [n, c] != [idx.shape[0], idx.shape[1]] || (h, w) != (idx.input_h, idx.input_w) {
        return invalid("unpool upstream does not match the recorded indices");
    }
    let [_, _, ho, wo] = idx.shape;
    let pw = wo * 2;
    let mut out = Tensor4::zeros(idx.shape);
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * ho * wo;
            let src = dy.plane(s, ch).to_vec();
            for (k, d) in out.plane_mut(s, ch).iter_mut().enumerate() {
                let off = idx.argmax[base + k];
                let (y, x) = (off / pw, off % pw);
                if y < h && x < w {
                    *d = src[y * w + x];
                }
            }
        }
    }
    Ok(out)
}
