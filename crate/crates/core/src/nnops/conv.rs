use rand::Rng;
use rayon::prelude::*;

use super::Param;
use crate::error::{invalid, Result};
use crate::scalar::{gemm, Op, Scalar};
use crate::tensor::Tensor4;

/// Same-extent 2D cross-correlation with zero padding `(k - 1) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    /// `c_out × c_in × k × k`
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl<T: Scalar> ConvKernel<T> {
    /// Kaiming-uniform weights for PReLU slope 0.25, zero bias.
    pub fn new(name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut impl Rng) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let fan_in = (c_in * k * k) as f64;
        let gain = (2.0 / (1.0 + 0.25f64 * 0.25)).sqrt();
        let bound = gain * (3.0 / fan_in).sqrt();
        let w = (0..c_out * c_in * k * k)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Self::from_parts(name, c_in, c_out, k, w, vec![T::zero(); c_out])
    }

    pub fn from_parts(
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        weight: Vec<T>,
        bias: Vec<T>,
    ) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                vec![c_out, c_in, k, k],
                weight,
                true,
            ),
            bias: Param::new(format!("{name}.bias"), vec![c_out], bias, true),
            c_in,
            c_out,
            k,
        }
    }
}

/// Unrolls one `c × h × w` sample into a `(c·k·k) × (h·w)` patch matrix.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let r = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let (dy, dx) = (ky as isize - r, kx as isize - r);
                for i in 0..h {
                    let si = i as isize + dy;
                    let dst = &mut col[row + i * w..row + (i + 1) * w];
                    if si < 0 || si >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let sj = j as isize + dx;
                        *d = if sj < 0 || sj >= w as isize {
                            T::zero()
                        } else {
                            src[sj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back onto the sample.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let r = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let (dy, dx) = (ky as isize - r, kx as isize - r);
                for i in 0..h {
                    let si = i as isize + dy;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src = &col[row + i * w..row + (i + 1) * w];
                    let dst = &mut plane[si as usize * w..(si as usize + 1) * w];
                    for (j, &v) in src.iter().enumerate() {
                        let sj = j as isize + dx;
                        if sj >= 0 && sj < w as isize {
                            dst[sj as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check<T: Scalar>(x: &Tensor4<T>, kernel: &ConvKernel<T>) -> Result<()> {
    if x.c() != kernel.c_in {
        return invalid(format!(
            "conv expects {} input channels, got {}",
            kernel.c_in,
            x.c()
        ));
    }
    Ok(())
}

pub fn conv2d<T: Scalar>(x: &Tensor4<T>, kernel: &ConvKernel<T>) -> Result<Tensor4<T>> {
    check(x, kernel)?;
    let [n, c, h, w] = x.shape();
    let (co, k) = (kernel.c_out, kernel.k);
    let hw = h * w;
    let mut y = Tensor4::zeros([n, co, h, w]);
    let wt = &kernel.weight.value;
    let b = &kernel.bias.value;
    y.data_mut()
        .par_chunks_mut(co * hw)
        .enumerate()
        .for_each(|(s, ys)| {
            for (o, plane) in ys.chunks_mut(hw).enumerate() {
                plane.iter_mut().for_each(|v| *v = b[o]);
            }
            let xs = x.sample(s);
            if k == 1 {
                gemm(Op::N, Op::N, co, c, hw, T::one(), wt, xs, T::one(), ys);
            } else {
                let mut col = vec![T::zero(); c * k * k * hw];
                im2col(xs, c, h, w, k, &mut col);
                gemm(
                    Op::N,
                    Op::N,
                    co,
                    c * k * k,
                    hw,
                    T::one(),
                    wt,
                    &col,
                    T::one(),
                    ys,
                );
            }
        });
    Ok(y)
}

/// Returns `(dL/dx, dL/dweight, dL/dbias)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    kernel: &ConvKernel<T>,
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    check(x, kernel)?;
    let [n, c, h, w] = x.shape();
    let (co, k) = (kernel.c_out, kernel.k);
    if dy.shape() != [n, co, h, w] {
        return invalid(format!(
            "conv upstream shape {:?} != {:?}",
            dy.shape(),
            [n, co, h, w]
        ));
    }
    let hw = h * w;
    let ck = c * k * k;
    let wt = &kernel.weight.value;
    let mut dx = Tensor4::zeros([n, c, h, w]);
    let partial: Vec<(Vec<T>, Vec<T>)> = dx
        .data_mut()
        .par_chunks_mut(c * hw)
        .enumerate()
        .map(|(s, dxs)| {
            let xs = x.sample(s);
            let dys = dy.sample(s);
            let mut dw = vec![T::zero(); co * ck];
            let db: Vec<T> = dys.chunks(hw).map(|p| p.iter().copied().sum()).collect();
            if k == 1 {
                gemm(
                    Op::N,
                    Op::T,
                    co,
                    hw,
                    c,
                    T::one(),
                    dys,
                    xs,
                    T::zero(),
                    &mut dw,
                );
                gemm(Op::T, Op::N, c, co, hw, T::one(), wt, dys, T::zero(), dxs);
            } else {
                let mut col = vec![T::zero(); ck * hw];
                im2col(xs, c, h, w, k, &mut col);
                gemm(
                    Op::N,
                    Op::T,
                    co,
                    hw,
                    ck,
                    T::one(),
                    dys,
                    &col,
                    T::zero(),
                    &mut dw,
                );
                gemm(
                    Op::T,
                    Op::N,
                    ck,
                    co,
                    hw,
                    T::one(),
                    wt,
                    dys,
                    T::zero(),
                    &mut col,
                );
                col2im(&col, c, h, w, k, dxs);
            }
            (dw, db)
        })
        .collect();
    let mut dw = vec![T::zero(); co * ck];
    let mut db = vec![T::zero(); co];
    for (pw, pb) in partial {
        dw.iter_mut().zip(&pw).for_each(|(a, &b)| *a += b);
        db.iter_mut().zip(&pb).for_each(|(a, &b)| *a += b);
    }
    Ok((dx, dw, db))
}

/// Direct nested-loop convolution. Slow; used to cross-check [`conv2d`].
pub fn conv2d_reference<T: Scalar>(x: &Tensor4<T>, kernel: &ConvKernel<T>) -> Result<Tensor4<T>> {
    check(x, kernel)?;
    let [n, c, h, w] = x.shape();
    let (co, k) = (kernel.c_out, kernel.k);
    let r = (k / 2) as isize;
    let wt = &kernel.weight.value;
    let mut y = Tensor4::zeros([n, co, h, w]);
    for s in 0..n {
        for o in 0..co {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = kernel.bias.value[o];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (si, sj) =
                                    (i as isize + ky as isize - r, j as isize + kx as isize - r);
                                if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                    continue;
                                }
                                acc += wt[((o * c + ci) * k + ky) * k + kx]
                                    * x.get(s, ci, si as usize, sj as usize);
                            }
                        }
                    }
                    y.set(s, o, i, j, acc);
                }
            }
        }
    }
    Ok(y)
}
