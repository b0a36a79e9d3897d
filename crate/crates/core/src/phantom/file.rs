//! Raw volume files.
//!
//! Layout (all little-endian):
//!
//! | bytes | field |
//! |---|---|
//! | 8 | magic `LSEGVOL1` |
//! | 1 | kind: 0 = intensity f32, 1 = labels u16 |
//! | 1 | modality code (0 none, 1 T1, 2 T2) |
//! | 12 | extent `[z, y, x]` as u32 |
//! | 8 | voxel size mm, f64 |
//! | 8 | scene seed, u64 |
//! | 32 | pose: theta (rad) then t_x, t_y, t_z (mm), f64 |
//! | n | payload, row-major `[z][y][x]` |

use std::io::{Read, Write};
use std::path::Path;

use super::Pose;
use crate::error::{Error, Result};
use crate::volume::{IntensityVolume, LabelVolume, Volume};

pub const VOLUME_MAGIC: &[u8; 8] = b"LSEGVOL1";
const HEADER_LEN: usize = 8 + 1 + 1 + 12 + 8 + 8 + 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub res: f64,
    pub modality: u8,
    pub scene_seed: u64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    Intensity(Vec<f32>),
    Labels(Vec<u16>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFile {
    pub header: VolumeHeader,
    pub data: VolumeData,
}

impl VolumeFile {
    pub fn from_intensity(v: &IntensityVolume, modality: u8, scene_seed: u64, pose: Pose) -> Self {
        Self {
            header: VolumeHeader {
                dims: v.dims,
                res: v.res,
                modality,
                scene_seed,
                pose,
            },
            data: VolumeData::Intensity(v.data.clone()),
        }
    }

    pub fn from_labels(v: &LabelVolume, scene_seed: u64, pose: Pose) -> Self {
        Self {
            header: VolumeHeader {
                dims: v.dims,
                res: v.res,
                modality: 0,
                scene_seed,
                pose,
            },
            data: VolumeData::Labels(v.data.clone()),
        }
    }

    pub fn into_intensity(self) -> Result<IntensityVolume> {
        match self.data {
            VolumeData::Intensity(d) => Ok(Volume {
                dims: self.header.dims,
                res: self.header.res,
                data: d,
            }),
            VolumeData::Labels(_) => Err(Error::Format(
                "expected an intensity volume, found labels".into(),
            )),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self.data {
            VolumeData::Labels(d) => Ok(Volume {
                dims: self.header.dims,
                res: self.header.res,
                data: d,
            }),
            VolumeData::Intensity(_) => Err(Error::Format(
                "expected a label volume, found intensities".into(),
            )),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let (kind, elem) = match &self.data {
            VolumeData::Intensity(d) => (0u8, d.len() * 4),
            VolumeData::Labels(d) => (1u8, d.len() * 2),
        };
        let mut out = Vec::with_capacity(HEADER_LEN + elem);
        out.extend_from_slice(VOLUME_MAGIC);
        out.push(kind);
        out.push(h.modality);
        for d in h.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&h.res.to_le_bytes());
        out.extend_from_slice(&h.scene_seed.to_le_bytes());
        for v in [h.pose.theta, h.pose.t[0], h.pose.t[1], h.pose.t[2]] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.data {
            VolumeData::Intensity(d) => d
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            VolumeData::Labels(d) => d
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != VOLUME_MAGIC {
            return Err(Error::Format("not a volume file".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_bits(u64_at(o));
        let kind = bytes[8];
        let modality = bytes[9];
        let dims = [u32_at(10), u32_at(14), u32_at(18)];
        let header = VolumeHeader {
            dims,
            res: f64_at(22),
            modality,
            scene_seed: u64_at(30),
            pose: Pose {
                theta: f64_at(38),
                t: [f64_at(46), f64_at(54), f64_at(62)],
            },
        };
        let n = dims.iter().product::<usize>();
        let payload = &bytes[HEADER_LEN..];
        let data = match kind {
            0 if payload.len() == n * 4 => VolumeData::Intensity(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 if payload.len() == n * 2 => VolumeData::Labels(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            0 | 1 => {
                return Err(Error::Format(format!(
                    "payload of {} bytes does not match extent {:?}",
                    payload.len(),
                    dims
                )))
            }
            k => return Err(Error::Format(format!("unknown data kind {k}"))),
        };
        Ok(Self { header, data })
    }
}

pub fn write_volume(path: &Path, file: &VolumeFile) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&file.to_bytes())?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<VolumeFile> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    VolumeFile::from_bytes(&bytes)
}
