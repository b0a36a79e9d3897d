//! Per-channel bilinear resampling of feature maps along a pull-back grid,
//! its adjoint, and the latent transform transition built on both.
//!
//! Source values outside the map are zero. One grid is shared by every
//! channel of a sample; a batch takes either one grid for all samples or one
//! grid per sample.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::geometry::{
    build_transform_between, invert, sample_grid, scale_factor, AffineParams, AffineTransform2D,
    GridSpec, LatentAugmentation, SampleGrid,
};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, Tensor4};

/// Up to four in-bounds source taps of one output pixel.
#[derive(Debug, Clone, Copy)]
struct Taps<T> {
    idx: [u32; 4],
    w: [T; 4],
    len: u8,
}

fn taps_for<T: Scalar>(grid: &SampleGrid<T>, h: usize, w: usize) -> Vec<Taps<T>> {
    let half = T::lit(0.5);
    grid.coords
        .iter()
        .map(|&[x, y]| {
            let mut t = Taps {
                idx: [0; 4],
                w: [T::zero(); 4],
                len: 0,
            };
            let (u, v) = (x - half, y - half);
            let (x0f, y0f) = (u.floor(), v.floor());
            let (fx, fy) = (u - x0f, v - y0f);
            let (Some(x0), Some(y0)) = (x0f.to_i64(), y0f.to_i64()) else {
                return t;
            };
            let one = T::one();
            let cand = [
                (y0, x0, (one - fx) * (one - fy)),
                (y0, x0 + 1, fx * (one - fy)),
                (y0 + 1, x0, (one - fx) * fy),
                (y0 + 1, x0 + 1, fx * fy),
            ];
            for (yy, xx, wt) in cand {
                if wt == T::zero() || yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                    continue;
                }
                let k = t.len as usize;
                t.idx[k] = (yy as usize * w + xx as usize) as u32;
                t.w[k] = wt;
                t.len += 1;
            }
            t
        })
        .collect()
}

fn check_grids<T: Scalar>(n: usize, grids: &[SampleGrid<T>]) -> Result<(usize, usize)> {
    let Some(g0) = grids.first() else {
        return invalid("at least one sampling grid is required");
    };
    if grids.len() != 1 && grids.len() != n {
        return invalid(format!("{} grids for a batch of {}", grids.len(), n));
    }
    if grids
        .iter()
        .any(|g| g.h != g0.h || g.w != g0.w || g.coords.len() != g.h * g.w)
    {
        return invalid("sampling grids disagree in extent");
    }
    if g0.h == 0 || g0.w == 0 {
        return invalid("sampling grid extent must be >= 1");
    }
    if grids.iter().any(|g| {
        g.coords
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
    }) {
        return invalid("sampling grid has non-finite coordinates");
    }
    Ok((g0.h, g0.w))
}

/// Bilinear interpolation of `u` at the grid positions.
pub fn bilinear_sample<T: Scalar>(
    u: &FeatureMap<T>,
    grids: &[SampleGrid<T>],
) -> Result<FeatureMap<T>> {
    let out = sample_tensor(&u.data, grids)?;
    Ok(FeatureMap {
        data: out,
        res: u.res,
    })
}

pub(crate) fn sample_tensor<T: Scalar>(
    u: &Tensor4<T>,
    grids: &[SampleGrid<T>],
) -> Result<Tensor4<T>> {
    let [n, c, h, w] = u.shape();
    let (ho, wo) = check_grids(n, grids)?;
    let taps: Vec<Vec<Taps<T>>> = grids.iter().map(|g| taps_for(g, h, w)).collect();
    let mut out = Tensor4::zeros([n, c, ho, wo]);
    let plane_out = ho * wo;
    let src = u.data();
    out.data_mut()
        .par_chunks_mut(plane_out)
        .enumerate()
        .for_each(|(nc, dst)| {
            let s = nc / c;
            let tp = &taps[if taps.len() == 1 { 0 } else { s }];
            let plane = &src[nc * h * w..(nc + 1) * h * w];
            for (o, t) in dst.iter_mut().zip(tp) {
                let mut acc = T::zero();
                for k in 0..t.len as usize {
                    acc += t.w[k] * plane[t.idx[k] as usize];
                }
                *o = acc;
            }
        });
    Ok(out)
}

/// Gradient of [`bilinear_sample`] with respect to `u`: each upstream value is
/// scattered to its source taps with the bilinear weights. Only the shape of
/// `u` is used; the operation is linear in `u`.
pub fn bilinear_sample_backward<T: Scalar>(
    u: &FeatureMap<T>,
    grids: &[SampleGrid<T>],
    upstream: &FeatureMap<T>,
) -> Result<FeatureMap<T>> {
    let g = sample_backward_tensor(u.shape(), grids, &upstream.data)?;
    Ok(FeatureMap {
        data: g,
        res: u.res,
    })
}

pub(crate) fn sample_backward_tensor<T: Scalar>(
    src_shape: [usize; 4],
    grids: &[SampleGrid<T>],
    upstream: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let [n, c, h, w] = src_shape;
    let (ho, wo) = check_grids(n, grids)?;
    if upstream.shape() != [n, c, ho, wo] {
        return invalid(format!(
            "upstream shape {:?} does not match sampled shape {:?}",
            upstream.shape(),
            [n, c, ho, wo]
        ));
    }
    let taps: Vec<Vec<Taps<T>>> = grids.iter().map(|g| taps_for(g, h, w)).collect();
    let mut grad = Tensor4::zeros(src_shape);
    let up = upstream.data();
    let plane_out = ho * wo;
    grad.data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(nc, dst)| {
            let s = nc / c;
            let tp = &taps[if taps.len() == 1 { 0 } else { s }];
            let g = &up[nc * plane_out..(nc + 1) * plane_out];
            for (&gv, t) in g.iter().zip(tp) {
                for k in 0..t.len as usize {
                    dst[t.idx[k] as usize] += t.w[k] * gv;
                }
            }
        });
    Ok(grad)
}

/// Everything the decoder needs to undo a forward latent transition.
#[derive(Debug, Clone)]
pub struct LatentTransformContext<T> {
    /// Forward (native → inner) transform of each sample.
    pub transforms: Vec<AffineTransform2D<T>>,
    pub native_extent: (usize, usize),
    pub native_res: f64,
    pub inner_extent: (usize, usize),
    pub inner_res: f64,
    forward_grids: Vec<SampleGrid<T>>,
    inverse_grids: Vec<SampleGrid<T>>,
}

impl<T: Scalar> LatentTransformContext<T> {
    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            h_native: self.native_extent.0,
            w_native: self.native_extent.1,
            h_inner: self.inner_extent.0,
            w_inner: self.inner_extent.1,
            res_native: self.native_res,
            res_inner: self.inner_res,
        }
    }
}

/// Forward matrix of one sample's transition from `spec`'s native grid to its
/// inner grid, with the scale factor derived from the resolutions and `aug.alpha`.
pub fn transition_transform<T: Scalar>(
    spec: &GridSpec,
    aug: &LatentAugmentation<T>,
) -> Result<AffineTransform2D<T>> {
    let sf = scale_factor(spec.res_inner, spec.res_native, aug.alpha.as_f64())?;
    let params = AffineParams::new(aug.theta, aug.t, T::lit(sf))?;
    Ok(build_transform_between(
        &params,
        spec.native_center(),
        spec.inner_center(),
    ))
}

/// Native → inner transition: resamples `u` onto the `res_inner` grid under
/// each sample's rotation, translation and scale jitter. `augs` holds one
/// entry for the whole batch or one per sample.
pub fn transform_forward<T: Scalar>(
    u: &FeatureMap<T>,
    augs: &[LatentAugmentation<T>],
    res_inner: f64,
) -> Result<(FeatureMap<T>, LatentTransformContext<T>)> {
    let [n, _, h, w] = u.shape();
    if augs.is_empty() || (augs.len() != 1 && augs.len() != n) {
        return invalid(format!(
            "{} augmentation entries for a batch of {}",
            augs.len(),
            n
        ));
    }
    let spec = GridSpec::new(h, w, u.res, res_inner)?;
    let transforms = augs
        .iter()
        .map(|a| transition_transform(&spec, a))
        .collect::<Result<Vec<_>>>()?;
    let forward_grids = transforms
        .iter()
        .map(|t| sample_grid(t, spec.h_inner, spec.w_inner))
        .collect::<Result<Vec<_>>>()?;
    let inverse_grids = transforms
        .iter()
        .map(|t| sample_grid(&invert(t)?, h, w))
        .collect::<Result<Vec<_>>>()?;
    let v = sample_tensor(&u.data, &forward_grids)?;
    let ctx = LatentTransformContext {
        transforms,
        native_extent: (h, w),
        native_res: u.res,
        inner_extent: (spec.h_inner, spec.w_inner),
        inner_res: res_inner,
        forward_grids,
        inverse_grids,
    };
    Ok((
        FeatureMap {
            data: v,
            res: res_inner,
        },
        ctx,
    ))
}

/// Inner → native transition with the exact inverse matrices of `ctx`.
/// Fails when `v` does not live on the grid `ctx` was recorded for.
pub fn transform_inverse<T: Scalar>(
    v: &FeatureMap<T>,
    ctx: &LatentTransformContext<T>,
) -> Result<FeatureMap<T>> {
    let [n, _, h, w] = v.shape();
    if (h, w) != ctx.inner_extent || v.res != ctx.inner_res {
        return invalid(format!(
            "stale transform context: map is {}x{} at {} mm, context expects {}x{} at {} mm",
            h, w, v.res, ctx.inner_extent.0, ctx.inner_extent.1, ctx.inner_res
        ));
    }
    if ctx.inverse_grids.len() != 1 && ctx.inverse_grids.len() != n {
        return invalid("stale transform context: batch size changed");
    }
    let out = sample_tensor(&v.data, &ctx.inverse_grids)?;
    Ok(FeatureMap {
        data: out,
        res: ctx.native_res,
    })
}

/// Gradient of [`transform_forward`] with respect to its input.
pub fn transform_forward_backward<T: Scalar>(
    ctx: &LatentTransformContext<T>,
    upstream: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let [n, c, _, _] = upstream.shape();
    sample_backward_tensor(
        [n, c, ctx.native_extent.0, ctx.native_extent.1],
        &ctx.forward_grids,
        upstream,
    )
}

/// Gradient of [`transform_inverse`] with respect to its input.
pub fn transform_inverse_backward<T: Scalar>(
    ctx: &LatentTransformContext<T>,
    upstream: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let [n, c, _, _] = upstream.shape();
    sample_backward_tensor(
        [n, c, ctx.inner_extent.0, ctx.inner_extent.1],
        &ctx.inverse_grids,
        upstream,
    )
}
