//! In-memory volume kinds and format dispatch by file extension.
//!
//! `.nii` files use the single-file NIfTI-1 subset in [`crate::nifti`];
//! `.raw` / `.json` pairs use the raw-plus-sidecar layout in [`crate::raw`].

use std::path::{Path, PathBuf};

use forge_core::volume::{Grid, LabelVolume, Mask3, ScalarField3, Shape3, Spacing3, VectorField3};

use crate::error::{Error, Result};
use crate::{nifti, raw};

/// On-disk sample type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Float32,
    Int16,
    Uint8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Int16 => 2,
            DType::Uint8 => 1,
        }
    }
}

/// Typed voxel values in row-major order (axis 2 fastest), component-major
/// for vector data.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Payload {
    F32(Vec<f32>),
    I16(Vec<i16>),
    U8(Vec<u8>),
}

impl Payload {
    pub(crate) fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::Float32,
            Payload::I16(_) => DType::Int16,
            Payload::U8(_) => DType::Uint8,
        }
    }

    pub(crate) fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::I16(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }

    pub(crate) fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            Payload::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Payload::I16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Payload::U8(v) => v.clone(),
        }
    }

    pub(crate) fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Payload {
        match dtype {
            DType::Float32 => Payload::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
            DType::Int16 => Payload::I16(bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect()),
            DType::Uint8 => Payload::U8(bytes.to_vec()),
        }
    }

    /// Reorders voxels with `map(dst) = src` for each of `components` blocks.
    pub(crate) fn permuted(&self, block: usize, map: impl Fn(usize) -> usize) -> Payload {
        fn go<T: Copy>(v: &[T], block: usize, map: &dyn Fn(usize) -> usize) -> Vec<T> {
            let mut out = Vec::with_capacity(v.len());
            for b in 0..v.len() / block.max(1) {
                let base = b * block;
                out.extend((0..block).map(|i| v[base + map(i)]));
            }
            out
        }
        match self {
            Payload::F32(v) => Payload::F32(go(v, block, &map)),
            Payload::I16(v) => Payload::I16(go(v, block, &map)),
            Payload::U8(v) => Payload::U8(go(v, block, &map)),
        }
    }
}

/// What a file holds semantically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Scalar,
    Label,
    Mask,
    Vector,
}

/// A volume in storage form: geometry plus typed payload.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Stored {
    pub shape: Shape3,
    pub spacing: Spacing3,
    pub kind: Kind,
    pub payload: Payload,
}

impl Stored {
    pub(crate) fn components(&self) -> usize {
        if self.kind == Kind::Vector {
            3
        } else {
            1
        }
    }
}

/// A volume read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Scalar(ScalarField3),
    Label(LabelVolume),
    Mask(Mask3),
    Vector(VectorField3),
}

/// A volume to be written.
#[derive(Debug, Clone, Copy)]
pub enum VolumeRef<'a> {
    Scalar(&'a ScalarField3),
    Label(&'a LabelVolume),
    Mask(&'a Mask3),
    Vector(&'a VectorField3),
}

impl Volume {
    pub fn kind(&self) -> Kind {
        match self {
            Volume::Scalar(_) => Kind::Scalar,
            Volume::Label(_) => Kind::Label,
            Volume::Mask(_) => Kind::Mask,
            Volume::Vector(_) => Kind::Vector,
        }
    }

    pub fn shape(&self) -> Shape3 {
        match self {
            Volume::Scalar(v) => v.shape(),
            Volume::Label(v) => v.shape(),
            Volume::Mask(v) => v.shape(),
            Volume::Vector(v) => v.shape(),
        }
    }

    pub fn as_ref(&self) -> VolumeRef<'_> {
        match self {
            Volume::Scalar(v) => VolumeRef::Scalar(v),
            Volume::Label(v) => VolumeRef::Label(v),
            Volume::Mask(v) => VolumeRef::Mask(v),
            Volume::Vector(v) => VolumeRef::Vector(v),
        }
    }

    /// Any scalar view: intensities as-is, labels and masks as numbers.
    pub fn into_scalar(self) -> Option<ScalarField3> {
        match self {
            Volume::Scalar(v) => Some(v),
            Volume::Label(v) => Some(v.grid().map(|l| l as f64)),
            Volume::Mask(v) => Some(v.to_field()),
            Volume::Vector(_) => None,
        }
    }

    /// Nonzero voxels as a mask.
    pub fn into_mask(self) -> Option<Mask3> {
        match self {
            Volume::Scalar(v) => Some(v.map(|x| x != 0.0)),
            Volume::Label(v) => Some(v.grid().map(|l| l != 0)),
            Volume::Mask(v) => Some(v),
            Volume::Vector(_) => None,
        }
    }

    pub fn into_labels(self) -> Option<LabelVolume> {
        match self {
            Volume::Label(v) => Some(v),
            Volume::Mask(m) => Some(LabelVolume::with_freesurfer_roles(m.map(u32::from))),
            _ => None,
        }
    }

    pub fn into_vector(self) -> Option<VectorField3> {
        match self {
            Volume::Vector(v) => Some(v),
            _ => None,
        }
    }
}

impl<'a> VolumeRef<'a> {
    pub(crate) fn to_stored(self, path: &Path) -> Result<Stored> {
        let (shape, spacing, kind, payload) = match self {
            VolumeRef::Scalar(f) => (f.shape(), f.spacing(), Kind::Scalar, Payload::F32(f.data().iter().map(|v| *v as f32).collect())),
            VolumeRef::Mask(m) => (m.shape(), m.spacing(), Kind::Mask, Payload::U8(m.data().iter().map(|b| *b as u8).collect())),
            VolumeRef::Label(l) => {
                let max = l.data().iter().copied().max().unwrap_or(0);
                let payload = if max <= u8::MAX as u32 {
                    Payload::U8(l.data().iter().map(|v| *v as u8).collect())
                } else if max <= i16::MAX as u32 {
                    Payload::I16(l.data().iter().map(|v| *v as i16).collect())
                } else {
                    return Err(Error::unsupported(path, format!("label {max} does not fit a 16-bit signed integer")));
                };
                (l.shape(), l.spacing(), Kind::Label, payload)
            }
            VolumeRef::Vector(v) => {
                let data = v.components().iter().flat_map(|c| c.data().iter().map(|x| *x as f32)).collect();
                (v.shape(), v.spacing(), Kind::Vector, Payload::F32(data))
            }
        };
        Ok(Stored { shape, spacing, kind, payload })
    }
}

impl Stored {
    pub(crate) fn into_volume(self, path: &Path) -> Result<Volume> {
        let n = self.shape.len();
        let expected = n * self.components();
        if self.payload.len() != expected {
            return Err(Error::format(path, "data", format!("expected {expected} values, found {}", self.payload.len())));
        }
        let Stored { shape, spacing, kind, payload } = self;
        let integers = |payload: Payload| -> Result<Vec<u32>> {
            match payload {
                Payload::U8(v) => Ok(v.into_iter().map(u32::from).collect()),
                Payload::I16(v) => v
                    .into_iter()
                    .map(|x| u32::try_from(x).map_err(|_| Error::format(path, "data", format!("negative label {x}"))))
                    .collect(),
                Payload::F32(_) => Err(Error::format(path, "datatype", "label data must be integer-typed")),
            }
        };
        Ok(match (kind, payload) {
            (Kind::Scalar, Payload::F32(v)) => Volume::Scalar(Grid::new(shape, spacing, v.into_iter().map(f64::from).collect())?),
            (Kind::Vector, Payload::F32(v)) => {
                let comp = |c: usize| Grid::new(shape, spacing, v[c * n..(c + 1) * n].iter().map(|x| f64::from(*x)).collect());
                Volume::Vector(VectorField3::new(comp(0)?, comp(1)?, comp(2)?)?)
            }
            (Kind::Mask, payload) => Volume::Mask(Grid::new(shape, spacing, integers(payload)?.into_iter().map(|l| l != 0).collect())?),
            (Kind::Label | Kind::Scalar, payload) => {
                Volume::Label(LabelVolume::with_freesurfer_roles(Grid::new(shape, spacing, integers(payload)?)?))
            }
            (Kind::Vector, _) => return Err(Error::format(path, "datatype", "vector data must be float32")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Nifti,
    Raw,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("nii") => Ok(Format::Nifti),
        Some("raw") | Some("json") => Ok(Format::Raw),
        Some("gz") => Err(Error::unsupported(path, "compressed NIfTI is not supported")),
        _ => Err(Error::unsupported(path, "expected a .nii, .raw or .json path")),
    }
}

/// Reads any supported volume file.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let stored = match format_of(path)? {
        Format::Nifti => nifti::read(path)?,
        Format::Raw => raw::read(path)?,
    };
    stored.into_volume(path)
}

/// Writes a volume; the format follows the extension of `path`.
pub fn write_volume(volume: VolumeRef<'_>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stored = volume.to_stored(path)?;
    match format_of(path)? {
        Format::Nifti => nifti::write(&stored, path),
        Format::Raw => raw::write(&stored, path),
    }
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarField3> {
    let path = path.as_ref();
    read_volume(path)?
        .into_scalar()
        .ok_or_else(|| Error::unsupported(path, "expected a scalar volume, found a vector field"))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask3> {
    let path = path.as_ref();
    read_volume(path)?
        .into_mask()
        .ok_or_else(|| Error::unsupported(path, "expected a mask, found a vector field"))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let v = read_volume(path)?;
    let kind = v.kind();
    v.into_labels()
        .ok_or_else(|| Error::unsupported(path, format!("expected an integer label volume, found {kind:?} data")))
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<VectorField3> {
    let path = path.as_ref();
    let v = read_volume(path)?;
    let kind = v.kind();
    v.into_vector()
        .ok_or_else(|| Error::unsupported(path, format!("expected a vector field, found {kind:?} data")))
}

/// Writes bytes, creating parent directories first.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// `path` with its extension replaced.
pub(crate) fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}
