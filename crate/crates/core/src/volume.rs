//! Dense 3D volumes, 2D slices and anatomical planes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Slicing plane. Volumes are stored `[z][y][x]` with x running left to right:
/// axial slices fix z, coronal slices fix y, sagittal slices fix x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Plane {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axial" => Ok(Plane::Axial),
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            _ => invalid(format!("unknown plane '{s}'")),
        }
    }
}

/// Isotropic volume, row-major `[z][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    pub dims: [usize; 3],
    pub res: f64,
    pub data: Vec<T>,
}

pub type LabelVolume = Volume<u16>;
pub type IntensityVolume = Volume<f32>;

/// One 2D slice, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2<T> {
    pub h: usize,
    pub w: usize,
    pub res: f64,
    pub data: Vec<T>,
}

pub type LabelSlice = Slice2<u16>;
pub type IntensitySlice = Slice2<f32>;

impl<T: Copy> Slice2<T> {
    pub fn new(h: usize, w: usize, res: f64, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w {
            return invalid(format!("slice {}x{} given {} values", h, w, data.len()));
        }
        if h == 0 || w == 0 || !(res > 0.0) {
            return invalid("slice extents and resolution must be positive");
        }
        Ok(Self { h, w, res, data })
    }

    pub fn filled(h: usize, w: usize, res: f64, v: T) -> Self {
        Self {
            h,
            w,
            res,
            data: vec![v; h * w],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.w + j]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Slice2<U> {
        Slice2 {
            h: self.h,
            w: self.w,
            res: self.res,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T: Copy + Default> Volume<T> {
    pub fn new(dims: [usize; 3], res: f64, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return invalid(format!("volume {:?} given {} values", dims, data.len()));
        }
        if dims.contains(&0) || !(res > 0.0 && res.is_finite()) {
            return invalid("volume extents and resolution must be positive");
        }
        Ok(Self { dims, res, data })
    }

    pub fn filled(dims: [usize; 3], res: f64, v: T) -> Self {
        Self {
            dims,
            res,
            data: vec![v; dims.iter().product()],
        }
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.index(z, y, x)]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn num_slices(&self, plane: Plane) -> usize {
        match plane {
            Plane::Axial => self.dims[0],
            Plane::Coronal => self.dims[1],
            Plane::Sagittal => self.dims[2],
        }
    }

    /// In-plane (rows, cols) of slices along `plane`.
    pub fn slice_extent(&self, plane: Plane) -> (usize, usize) {
        let [z, y, x] = self.dims;
        match plane {
            Plane::Axial => (y, x),
            Plane::Coronal => (z, x),
            Plane::Sagittal => (z, y),
        }
    }

    fn slice_index(&self, plane: Plane, k: usize, i: usize, j: usize) -> usize {
        match plane {
            Plane::Axial => self.index(k, i, j),
            Plane::Coronal => self.index(i, k, j),
            Plane::Sagittal => self.index(i, j, k),
        }
    }

    pub fn slice(&self, plane: Plane, k: usize) -> Slice2<T> {
        let (h, w) = self.slice_extent(plane);
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                data.push(self.data[self.slice_index(plane, k, i, j)]);
            }
        }
        Slice2 {
            h,
            w,
            res: self.res,
            data,
        }
    }

    pub fn set_slice(&mut self, plane: Plane, k: usize, s: &Slice2<T>) -> Result<()> {
        if (s.h, s.w) != self.slice_extent(plane) {
            return invalid("slice extent does not match the volume");
        }
        for i in 0..s.h {
            for j in 0..s.w {
                let idx = self.slice_index(plane, k, i, j);
                self.data[idx] = s.data[i * s.w + j];
            }
        }
        Ok(())
    }

    pub fn same_grid<U>(&self, other: &Volume<U>) -> bool {
        self.dims == other.dims && self.res == other.res
    }
}
