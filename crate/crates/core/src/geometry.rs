//! Four-degree-of-freedom planar transforms (rotation, 2D translation and
//! isotropic scale) and the sampling grids they induce.
//!
//! Pixel convention: pixel `p` covers `[p, p + 1)` and its centre sits at
//! `p + 0.5`; points are `(x, y) = (column, row)`.
//!
//! [`AffineTransform2D::m`] is the *forward* map from source-grid to
//! target-grid coordinates,
//!
//! ```text
//! M = Translate(c_dst) · Translate(t) · Rotate(θ) · Scale(1/sf) · Translate(−c_src)
//! ```
//!
//! so `sf > 1` shrinks content onto a coarser target grid and `t` is measured
//! in target pixels. Sampling grids pull back: every target pixel centre is
//! mapped through `M⁻¹` into the source grid.

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Rotation angle (radians), translation (target-grid pixels) and scale factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams<T> {
    pub theta: T,
    pub t: [T; 2],
    pub sf: T,
}

impl<T: Scalar> AffineParams<T> {
    pub fn new(theta: T, t: [T; 2], sf: T) -> Result<Self> {
        if !theta.is_finite() || !t[0].is_finite() || !t[1].is_finite() {
            return invalid("rotation and translation must be finite");
        }
        if !(sf > T::zero()) || !sf.is_finite() {
            return Err(Error::DegenerateScale(sf.as_f64()));
        }
        Ok(Self { theta, t, sf })
    }

    pub fn identity() -> Self {
        Self {
            theta: T::zero(),
            t: [T::zero(); 2],
            sf: T::one(),
        }
    }

    /// Parameters of `outer ∘ inner` when both share the same pivot.
    pub fn then(self, outer: Self) -> Self {
        let (s, c) = sin_cos_snapped(outer.theta);
        let k = T::one() / outer.sf;
        let [tx, ty] = self.t;
        Self {
            theta: self.theta + outer.theta,
            t: [
                outer.t[0] + k * (c * tx - s * ty),
                outer.t[1] + k * (s * tx + c * ty),
            ],
            sf: self.sf * outer.sf,
        }
    }
}

/// Rotation, translation and resolution jitter drawn for one pass through the
/// latent transform. The scale factor itself follows from the resolutions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentAugmentation<T> {
    pub theta: T,
    pub t: [T; 2],
    pub alpha: T,
}

impl<T: Scalar> LatentAugmentation<T> {
    pub fn identity() -> Self {
        Self {
            theta: T::zero(),
            t: [T::zero(); 2],
            alpha: T::zero(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.theta == T::zero() && self.t == [T::zero(); 2] && self.alpha == T::zero()
    }

    /// Rotation and translation only; the resolution jitter is kept at zero.
    pub fn is_rigid_identity(&self) -> bool {
        self.theta == T::zero() && self.t == [T::zero(); 2]
    }
}

/// `SF = res_inner / res_native + alpha`.
pub fn scale_factor(res_inner: f64, res_native: f64, alpha: f64) -> Result<f64> {
    if !(res_inner > 0.0 && res_inner.is_finite()) || !(res_native > 0.0 && res_native.is_finite())
    {
        return invalid(format!(
            "resolutions must be positive, got inner {res_inner} native {res_native}"
        ));
    }
    let sf = res_inner / res_native + alpha;
    if !(sf > 0.0) || !sf.is_finite() {
        return Err(Error::DegenerateScale(sf));
    }
    Ok(sf)
}

/// `sin`/`cos` with quarter-turn values snapped to exact `0` and `±1`, so that
/// rotations by multiples of 90° map pixel centres exactly onto pixel centres.
pub fn sin_cos_snapped<T: Scalar>(theta: T) -> (T, T) {
    let (s, c) = theta.sin_cos();
    let tol = T::epsilon() * T::lit(4.0);
    let snap = |v: T| {
        if v.abs() < tol {
            T::zero()
        } else if (v.abs() - T::one()).abs() < tol {
            v.signum()
        } else {
            v
        }
    };
    (snap(s), snap(c))
}

/// Geometric centre of an `h × w` pixel grid, `(w/2, h/2)`.
pub fn grid_center<T: Scalar>(h: usize, w: usize) -> [T; 2] {
    [T::lit(w as f64 / 2.0), T::lit(h as f64 / 2.0)]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform2D<T> {
    m: [[T; 3]; 3],
    center: [T; 2],
    target_center: [T; 2],
}

impl<T: Scalar> AffineTransform2D<T> {
    pub fn identity(center: [T; 2]) -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            m: [[o, z, z], [z, o, z], [z, z, o]],
            center,
            target_center: center,
        }
    }

    /// Homogeneous forward matrix (source → target).
    pub fn m(&self) -> &[[T; 3]; 3] {
        &self.m
    }
    /// Pivot in source-grid pixels.
    pub fn center(&self) -> [T; 2] {
        self.center
    }
    /// Image of the pivot in target-grid pixels (equals `center` unless the
    /// transform moves between grids of different extent).
    pub fn target_center(&self) -> [T; 2] {
        self.target_center
    }

    pub fn det2(&self) -> T {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    #[inline]
    pub fn apply(&self, p: [T; 2]) -> [T; 2] {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ]
    }

    pub fn cast<U: Scalar>(&self) -> AffineTransform2D<U> {
        let c = |v: T| U::lit(v.as_f64());
        AffineTransform2D {
            m: self.m.map(|r| r.map(c)),
            center: self.center.map(c),
            target_center: self.target_center.map(c),
        }
    }
}

/// Transform pivoting about `center` on equally sized grids.
pub fn build_transform<T: Scalar>(
    params: &AffineParams<T>,
    center: [T; 2],
) -> AffineTransform2D<T> {
    build_transform_between(params, center, center)
}

/// Transform from a source grid pivoting about `src_center` to a target grid
/// whose pivot is `dst_center`.
pub fn build_transform_between<T: Scalar>(
    params: &AffineParams<T>,
    src_center: [T; 2],
    dst_center: [T; 2],
) -> AffineTransform2D<T> {
    let (s, c) = sin_cos_snapped(params.theta);
    let k = T::one() / params.sf;
    let a = [[c * k, -s * k], [s * k, c * k]];
    let b0 = dst_center[0] + params.t[0] - (a[0][0] * src_center[0] + a[0][1] * src_center[1]);
    let b1 = dst_center[1] + params.t[1] - (a[1][0] * src_center[0] + a[1][1] * src_center[1]);
    let (z, o) = (T::zero(), T::one());
    AffineTransform2D {
        m: [[a[0][0], a[0][1], b0], [a[1][0], a[1][1], b1], [z, z, o]],
        center: src_center,
        target_center: dst_center,
    }
}

/// Exact inverse; source and target pivots swap roles.
pub fn invert<T: Scalar>(t: &AffineTransform2D<T>) -> Result<AffineTransform2D<T>> {
    let m = &t.m;
    let det = t.det2();
    if det == T::zero() || !det.is_finite() {
        return Err(Error::Internal("singular transform matrix".into()));
    }
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let b0 = -(inv[0][0] * m[0][2] + inv[0][1] * m[1][2]);
    let b1 = -(inv[1][0] * m[0][2] + inv[1][1] * m[1][2]);
    let (z, o) = (T::zero(), T::one());
    Ok(AffineTransform2D {
        m: [
            [inv[0][0], inv[0][1], b0],
            [inv[1][0], inv[1][1], b1],
            [z, z, o],
        ],
        center: t.target_center,
        target_center: t.center,
    })
}

/// `outer ∘ inner`: applies `inner` first.
pub fn compose<T: Scalar>(
    outer: &AffineTransform2D<T>,
    inner: &AffineTransform2D<T>,
) -> AffineTransform2D<T> {
    let (a, b) = (&outer.m, &inner.m);
    let mut m = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    AffineTransform2D {
        m,
        center: inner.center,
        target_center: outer.target_center,
    }
}

/// Source and target extents of a resolution-normalising transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub h_native: usize,
    pub w_native: usize,
    pub h_inner: usize,
    pub w_inner: usize,
    pub res_native: f64,
    pub res_inner: f64,
}

impl GridSpec {
    /// Target extent `round(extent · res_native / res_inner)`; the resolution
    /// jitter never changes it.
    pub fn new(h_native: usize, w_native: usize, res_native: f64, res_inner: f64) -> Result<Self> {
        if h_native == 0 || w_native == 0 {
            return invalid("grid extents must be >= 1");
        }
        scale_factor(res_inner, res_native, 0.0)?;
        let ratio = res_native / res_inner;
        let h_inner = ((h_native as f64 * ratio).round() as usize).max(1);
        let w_inner = ((w_native as f64 * ratio).round() as usize).max(1);
        Ok(Self {
            h_native,
            w_native,
            h_inner,
            w_inner,
            res_native,
            res_inner,
        })
    }

    pub fn native_center<T: Scalar>(&self) -> [T; 2] {
        grid_center(self.h_native, self.w_native)
    }
    pub fn inner_center<T: Scalar>(&self) -> [T; 2] {
        grid_center(self.h_inner, self.w_inner)
    }
}

/// Source-space sampling positions for each target pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid<T> {
    pub h: usize,
    pub w: usize,
    pub coords: Vec<[T; 2]>,
}

impl<T: Scalar> SampleGrid<T> {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> [T; 2] {
        self.coords[i * self.w + j]
    }

    /// Applies `t` to every coordinate.
    pub fn mapped(&self, t: &AffineTransform2D<T>) -> Self {
        Self {
            h: self.h,
            w: self.w,
            coords: self.coords.iter().map(|&p| t.apply(p)).collect(),
        }
    }
}

/// Pull-back grid for the inner extent of `spec`.
pub fn generate_grid<T: Scalar>(
    t: &AffineTransform2D<T>,
    spec: &GridSpec,
) -> Result<SampleGrid<T>> {
    sample_grid(t, spec.h_inner, spec.w_inner)
}

/// Pull-back grid of an arbitrary `h_out × w_out` target.
pub fn sample_grid<T: Scalar>(
    t: &AffineTransform2D<T>,
    h_out: usize,
    w_out: usize,
) -> Result<SampleGrid<T>> {
    let back = invert(t)?;
    let half = T::lit(0.5);
    let mut coords = Vec::with_capacity(h_out * w_out);
    for i in 0..h_out {
        let y = T::lit(i as f64) + half;
        for j in 0..w_out {
            let x = T::lit(j as f64) + half;
            coords.push(back.apply([x, y]));
        }
    }
    Ok(SampleGrid {
        h: h_out,
        w: w_out,
        coords,
    })
}
