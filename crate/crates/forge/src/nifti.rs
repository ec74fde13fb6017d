//! Single-file NIfTI-1 (`.nii`), little-endian, uncompressed.
//!
//! Supported: float32, int16 and uint8 data; 3D volumes and 3-component
//! vector fields (`dim = [5, nx, ny, nz, 1, 3]`). On read, spacing comes from
//! `pixdim[1..=3]` and the orientation matrices are ignored; on write, an
//! axis-aligned `sform` with the voxel spacing is recorded.
//!
//! NIfTI stores the first index fastest, while in memory the last axis is
//! fastest, so voxel order is transposed in both directions.

use std::path::Path;

use forge_core::volume::{Shape3, Spacing3};

use crate::error::{Error, Result};
use crate::io::{read_bytes, write_bytes, DType, Kind, Payload, Stored};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
const INTENT_VECTOR: i16 = 1007;
const UNITS_MM: u8 = 2;

fn code(dtype: DType) -> i16 {
    match dtype {
        DType::Uint8 => 2,
        DType::Int16 => 4,
        DType::Float32 => 16,
    }
}

fn from_code(c: i16) -> Option<DType> {
    match c {
        2 => Some(DType::Uint8),
        4 => Some(DType::Int16),
        16 => Some(DType::Float32),
        _ => None,
    }
}

struct Header<'a>(&'a [u8]);

impl Header<'_> {
    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes([self.0[off], self.0[off + 1]])
    }
    fn i32(&self, off: usize) -> i32 {
        i32::from_le_bytes(self.0[off..off + 4].try_into().unwrap())
    }
    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.0[off..off + 4].try_into().unwrap())
    }
}

struct HeaderWriter(Vec<u8>);

impl HeaderWriter {
    fn i16(&mut self, off: usize, v: i16) {
        self.0[off..off + 2].copy_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, off: usize, v: i32) {
        self.0[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, off: usize, v: f32) {
        self.0[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }
}

/// File index (x fastest) of the voxel at memory index `idx` (z fastest).
fn file_order(shape: Shape3) -> impl Fn(usize) -> usize {
    let [nx, ny, _] = shape.0;
    move |idx| {
        let [i, j, k] = shape.coords(idx);
        i + nx * (j + ny * k)
    }
}

/// Memory index of the voxel stored at file index `f`.
fn memory_order(shape: Shape3) -> impl Fn(usize) -> usize {
    let [nx, ny, _] = shape.0;
    move |f| {
        let i = f % nx;
        let j = (f / nx) % ny;
        let k = f / (nx * ny);
        shape.index(i, j, k)
    }
}

pub(crate) fn write(stored: &Stored, path: &Path) -> Result<()> {
    let [nx, ny, nz] = stored.shape.0;
    for n in stored.shape.0 {
        if n > i16::MAX as usize {
            return Err(Error::unsupported(path, format!("axis length {n} exceeds the NIfTI-1 limit")));
        }
    }
    let dtype = stored.payload.dtype();
    let mut h = HeaderWriter(vec![0u8; DATA_OFFSET]);
    h.i32(0, HEADER_SIZE as i32);
    h.0[38] = b'r';
    let vector = stored.kind == Kind::Vector;
    let dims: [i16; 8] = if vector {
        [5, nx as i16, ny as i16, nz as i16, 1, 3, 1, 1]
    } else {
        [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1]
    };
    for (i, d) in dims.iter().enumerate() {
        h.i16(40 + 2 * i, *d);
    }
    if vector {
        h.i16(68, INTENT_VECTOR);
    }
    h.i16(70, code(dtype));
    h.i16(72, (dtype.size() * 8) as i16);
    let sp = stored.spacing.0;
    let pixdim = [1.0, sp[0] as f32, sp[1] as f32, sp[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        h.f32(76 + 4 * i, *p);
    }
    h.f32(108, DATA_OFFSET as f32);
    h.f32(112, 1.0);
    h.0[123] = UNITS_MM;
    let descrip = match stored.kind {
        Kind::Scalar => &b"forge scalar"[..],
        Kind::Label => b"forge label",
        Kind::Mask => b"forge mask",
        Kind::Vector => b"forge vector",
    };
    h.0[148..148 + descrip.len()].copy_from_slice(descrip);
    h.i16(254, 1);
    for (row, off) in [280usize, 296, 312].into_iter().enumerate() {
        h.f32(off + 4 * row, sp[row] as f32);
    }
    h.0[344..348].copy_from_slice(MAGIC);

    let block = stored.shape.len();
    let to_file = memory_order(stored.shape);
    let payload = stored.payload.permuted(block, to_file);
    let mut bytes = h.0;
    bytes.extend_from_slice(&payload.to_le_bytes());
    write_bytes(path, &bytes)
}

pub(crate) fn read(path: &Path) -> Result<Stored> {
    let bytes = read_bytes(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(path, "sizeof_hdr", format!("file holds only {} bytes", bytes.len())));
    }
    let h = Header(&bytes);
    let sizeof_hdr = h.i32(0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
            return Err(Error::unsupported(path, "big-endian NIfTI"));
        }
        return Err(Error::format(path, "sizeof_hdr", format!("expected 348, found {sizeof_hdr}")));
    }
    if &bytes[344..348] != MAGIC {
        if &bytes[344..348] == b"ni1\0" {
            return Err(Error::unsupported(path, "two-file (.hdr/.img) NIfTI"));
        }
        return Err(Error::format(path, "magic", format!("expected \"n+1\\0\", found {:?}", &bytes[344..348])));
    }
    let dim: Vec<i16> = (0..8).map(|i| h.i16(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(path, "dim[0]", format!("expected 1..=7, found {ndim}")));
    }
    let extent = |i: usize| -> Result<usize> {
        if i as i16 > ndim {
            return Ok(1);
        }
        let d = dim[i];
        if d < 1 {
            return Err(Error::format(path, "dim", format!("dim[{i}] = {d} must be >= 1")));
        }
        Ok(d as usize)
    };
    let shape = Shape3([extent(1)?, extent(2)?, extent(3)?]);
    let (t, comps) = (extent(4)?, extent(5)?);
    if t != 1 || dim.iter().skip(6).take((ndim as usize).saturating_sub(5)).any(|d| *d != 1) {
        return Err(Error::unsupported(path, "time series and higher-dimensional data"));
    }
    let kind = match comps {
        1 => None,
        3 => Some(Kind::Vector),
        c => return Err(Error::unsupported(path, format!("{c}-component data"))),
    };
    let dt_code = h.i16(70);
    let dtype = from_code(dt_code).ok_or_else(|| Error::unsupported(path, format!("datatype code {dt_code}")))?;
    let bitpix = h.i16(72);
    if bitpix as usize != dtype.size() * 8 {
        return Err(Error::format(path, "bitpix", format!("{bitpix} does not match datatype code {dt_code}")));
    }
    let pixdim: Vec<f32> = (0..4).map(|i| h.f32(76 + 4 * i)).collect();
    let spacing = Spacing3([pixdim[1].abs() as f64, pixdim[2].abs() as f64, pixdim[3].abs() as f64]);
    if spacing.validate().is_err() {
        return Err(Error::format(path, "pixdim", format!("spacing {:?} must be positive and finite", &pixdim[1..4])));
    }
    let vox_offset = h.f32(108);
    if !(vox_offset >= DATA_OFFSET as f32 && vox_offset.fract() == 0.0) {
        return Err(Error::format(path, "vox_offset", format!("{vox_offset} must be an integer >= 352")));
    }
    let offset = vox_offset as usize;
    let block = shape.len();
    let need = block * comps * dtype.size();
    if bytes.len() < offset + need {
        return Err(Error::format(path, "data", format!("need {need} bytes after offset {offset}, file has {}", bytes.len().saturating_sub(offset))));
    }
    let mut payload = Payload::from_le_bytes(dtype, &bytes[offset..offset + need]);
    let (slope, inter) = (h.f32(112), h.f32(116));
    if let Payload::F32(v) = &mut payload {
        if slope != 0.0 && (slope != 1.0 || inter != 0.0) {
            for x in v.iter_mut() {
                *x = *x * slope + inter;
            }
        }
    }
    let payload = payload.permuted(block, file_order(shape));
    let kind = kind.unwrap_or(if dtype == DType::Float32 { Kind::Scalar } else { Kind::Label });
    Ok(Stored { shape, spacing, kind, payload })
}
